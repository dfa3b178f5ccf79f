//! Tabletop rearrangement benchmark: task generation, a rule-based solver,
//! success checking and metric aggregation.
//!
//! Tracks and levels:
//! - Position 0: Left / Right / Front / Behind / Top of one reference.
//! - Position 1: Between two references, Center of two or three.
//! - Rotation 0: upright or upside down (the "top" part along +-z).
//! - Rotation 1: one non-top part pointed in a horizontal direction.
//! - Rotation 2: upright plus a perpendicular part pointed horizontally.
//! - SixDoF 0: a level-0 position goal plus upright.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;

use log::{info, warn};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::align::{kabsch_rotation, minimal_rotation, PoseDelta};
use crate::error::{Error, Result};
use crate::geo::{self, angular_error, PointCloud, Rotation, UnitVec3, Vec3};
use crate::pointso::{self, ModelParams};
use crate::rng;
use crate::scenegraph::{
    build_graph, relation_holds_with, Margins, Orientation, Relation, SceneGraph, SceneObject,
};
use crate::synthgen::{self, generate_object_with_pose, Family};
use crate::taskdsl::{parse_instruction, resolve, GoalSpec, ResolvedGoal};

/// Default rotation tolerance in degrees.
pub const TAU_ROT: f64 = 22.5;
/// Clearance between subject and reference boxes when placing.
pub const GAP: f64 = 0.05;
/// Collision-repair step length and budget.
pub const REPAIR_STEP: f64 = 0.02;
pub const REPAIR_STEPS: usize = 100;
/// Scene rejection-sampling budget per task.
pub const MAX_ATTEMPTS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Track {
    Position,
    Rotation,
    #[serde(rename = "sixdof")]
    SixDoF,
}

impl Track {
    pub fn name(self) -> &'static str {
        match self {
            Track::Position => "position",
            Track::Rotation => "rotation",
            Track::SixDoF => "sixdof",
        }
    }
}

/// Every (track, level) pair the generator emits, in round-robin order.
pub const GROUPS: [(Track, u8); 6] = [
    (Track::Position, 0),
    (Track::Position, 1),
    (Track::Rotation, 0),
    (Track::Rotation, 1),
    (Track::Rotation, 2),
    (Track::SixDoF, 0),
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    pub delta: f64,
    pub delta_between: f64,
    pub tau_rot: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        let m = Margins::default();
        Tolerances {
            delta: m.delta,
            delta_between: m.delta_between,
            tau_rot: TAU_ROT,
        }
    }
}

impl Tolerances {
    pub fn margins(&self) -> Margins {
        Margins {
            delta: self.delta,
            delta_between: self.delta_between,
        }
    }

    fn validate(&self) -> Result<()> {
        if [self.delta, self.delta_between, self.tau_rot].iter().all(|v| *v > 0.0) {
            Ok(())
        } else {
            Err(Error::invalid("tolerances must be positive"))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub id: String,
    pub track: Track,
    pub level: u8,
    /// Scene file, relative to the suite directory.
    pub scene: String,
    pub instruction: String,
    pub tolerances: Tolerances,
}

/// One object of a scene: a synthetic shape scaled, rotated about its
/// centroid and placed with its centroid at `position`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneObjectSpec {
    pub phrase: String,
    pub family: Family,
    pub seed: u64,
    pub scale: f64,
    pub rotation: Rotation,
    pub position: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    /// Table extent in x and y, meters; the table top is z = 0.
    pub table: [f64; 2],
    pub n_points: usize,
    pub objects: Vec<SceneObjectSpec>,
}

/// A scene object with its world-frame cloud and true directions.
#[derive(Debug, Clone)]
pub struct PlacedObject {
    pub spec: SceneObjectSpec,
    pub cloud: PointCloud,
    pub truth: Vec<(String, UnitVec3)>,
}

impl SceneObjectSpec {
    pub fn materialize(&self, n_points: usize) -> Result<PlacedObject> {
        let obj = generate_object_with_pose(self.family, self.seed, n_points, self.rotation)?;
        let p = Vec3::from(self.position);
        let cloud = obj.cloud.map(|q| *q * self.scale + p);
        Ok(PlacedObject {
            spec: self.clone(),
            cloud,
            truth: obj.labels,
        })
    }
}

impl SceneSpec {
    pub fn materialize(&self) -> Result<Vec<PlacedObject>> {
        self.objects.iter().map(|o| o.materialize(self.n_points)).collect()
    }
}

/// Source of the current-orientation estimates the solver starts from.
#[derive(Debug, Clone)]
pub enum Predictor {
    /// Ground-truth directions of the synthetic objects.
    Oracle,
    /// The principal-axis heuristic baseline.
    Pca,
    /// A trained regressor.
    Model(Box<ModelParams>),
}

impl Predictor {
    pub fn name(&self) -> &'static str {
        match self {
            Predictor::Oracle => "oracle",
            Predictor::Pca => "pca",
            Predictor::Model(_) => "model",
        }
    }

    /// Predicted directions for every phrase of the object's family.
    pub fn orientations(&self, obj: &PlacedObject) -> Result<Vec<Orientation>> {
        obj.spec
            .family
            .vocabulary()
            .iter()
            .map(|&phrase| {
                let dir = match self {
                    Predictor::Oracle => obj
                        .truth
                        .iter()
                        .find(|(p, _)| p == phrase)
                        .map(|(_, d)| *d)
                        .ok_or_else(|| Error::UnknownPhrase {
                            family: obj.spec.family.name().into(),
                            phrase: phrase.into(),
                        })?,
                    Predictor::Pca => synthgen::pca_baseline(&obj.cloud, phrase)?,
                    Predictor::Model(p) => pointso::predict(p, &obj.cloud, phrase)?,
                };
                Ok(Orientation {
                    text: phrase.to_string(),
                    dir,
                })
            })
            .collect()
    }
}

/// Graph of placed objects with the given orientation sets.
pub fn scene_graph(objects: &[PlacedObject], orientations: Vec<Vec<Orientation>>) -> Result<SceneGraph> {
    let objs: Vec<SceneObject> = objects
        .iter()
        .zip(orientations)
        .map(|(o, orientations)| SceneObject {
            phrase: o.spec.phrase.clone(),
            cloud: o.cloud.clone(),
            orientations,
        })
        .collect();
    build_graph(&objs)
}

fn truth_orientations(o: &PlacedObject) -> Vec<Orientation> {
    o.truth
        .iter()
        .map(|(t, d)| Orientation {
            text: t.clone(),
            dir: *d,
        })
        .collect()
}

/// Half extents of a box with half extents `h` after rotation by `r`
/// (the bound `|R| h`).
fn rotated_half(r: &Rotation, h: &Vec3) -> Vec3 {
    r.matrix().abs() * h
}

fn boxes_overlap(c1: &Vec3, h1: &Vec3, c2: &Vec3, h2: &Vec3) -> bool {
    (0..3).all(|k| (c1[k] - c2[k]).abs() < h1[k] + h2[k])
}

/// Plans the subject's pose change. Rotation aligns the node's current
/// orientation estimates with the goal directions; the target centroid sits
/// beside / above / between the references with clearance [`GAP`] and is
/// pushed along the placement axis in [`REPAIR_STEP`]s while its box
/// (centered on the centroid) overlaps another object's box. Between /
/// Center repair stops once it would leave the `margins.delta_between` band.
pub fn solve(resolved: &ResolvedGoal, graph: &SceneGraph, margins: &Margins) -> Result<PoseDelta> {
    let rotation = match resolved.orientation.as_slice() {
        [] => Rotation::identity(),
        [p] => minimal_rotation(&p.current, &p.target),
        pairs => kabsch_rotation(pairs)?,
    };
    let s = graph.node(resolved.subject)?;
    let Some(rel) = resolved.relation else {
        return Ok(PoseDelta {
            rotation,
            translation: Vec3::zeros(),
        });
    };
    rel.check_arity(resolved.refs.len())?;
    let hs = rotated_half(&rotation, &(s.bbox_size * 0.5));
    let refs = resolved
        .refs
        .iter()
        .map(|&id| graph.node(id))
        .collect::<Result<Vec<_>>>()?;
    let r0 = refs[0];
    let hr = r0.bbox_size * 0.5;
    let lateral = |k: usize, sign: f64| {
        let mut t = r0.centroid;
        t[k] += sign * (hs[k] + hr[k] + GAP);
        t.z = s.centroid.z;
        let mut axis = Vec3::zeros();
        axis[k] = sign;
        (t, axis)
    };
    let (mut target, axis) = match rel {
        Relation::Left => lateral(0, -1.0),
        Relation::Right => lateral(0, 1.0),
        Relation::Front => lateral(1, -1.0),
        Relation::Behind => lateral(1, 1.0),
        Relation::Top => {
            let mut t = r0.centroid;
            t.z += hs.z + hr.z + GAP;
            (t, Vec3::z())
        }
        Relation::Between | Relation::Center => {
            let mean = refs.iter().map(|n| n.centroid).sum::<Vec3>() / refs.len() as f64;
            (mean, Vec3::z())
        }
    };
    let budget = match rel {
        Relation::Between | Relation::Center => {
            ((margins.delta_between / REPAIR_STEP).floor() as usize).min(REPAIR_STEPS)
        }
        _ => REPAIR_STEPS,
    };
    let others: Vec<_> = graph.nodes.iter().filter(|n| n.id != s.id).collect();
    for _ in 0..=budget {
        let hit = others
            .iter()
            .any(|n| boxes_overlap(&target, &hs, &n.centroid, &(n.bbox_size * 0.5)));
        if !hit {
            return Ok(PoseDelta {
                rotation,
                translation: target - s.centroid,
            });
        }
        target += axis * REPAIR_STEP;
    }
    Err(Error::Placement(format!(
        "no collision-free spot for {:?} within {budget} repair steps",
        s.phrase
    )))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Reason {
    Parse,
    Resolve,
    Predictor,
    Placement,
    PositionCheck,
    RotationCheck,
}

impl fmt::Display for Reason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).expect("reason serializes");
        f.write_str(s.as_str().expect("reason is a string"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackResult {
    pub task_id: String,
    pub track: Track,
    pub level: u8,
    pub position_pass: bool,
    pub rotation_pass: bool,
    pub overall_pass: bool,
    /// Largest angle between an achieved and a goal direction, degrees.
    pub angular_deviation_deg: Option<f64>,
    /// Whether the goal relation holds after the move.
    pub relation_holds: Option<bool>,
    pub reason: Option<Reason>,
}

impl TrackResult {
    fn failed(task: &TaskSpec, reason: Reason) -> TrackResult {
        TrackResult {
            task_id: task.id.clone(),
            track: task.track,
            level: task.level,
            position_pass: false,
            rotation_pass: false,
            overall_pass: false,
            angular_deviation_deg: None,
            relation_holds: None,
            reason: Some(reason),
        }
    }
}

/// Scores a task against the scene after the move. `graph_after` must carry
/// the true orientation sets. Constraints absent from the goal count as
/// passed.
pub fn check(task: &TaskSpec, graph_after: &SceneGraph) -> Result<TrackResult> {
    task.tolerances.validate()?;
    let goal = parse_instruction(&task.instruction)?;
    let resolved = resolve(&goal, graph_after)
        .map_err(|e| Error::invalid(format!("task {}: cannot bind goal after the move: {e}", task.id)))?;
    let relation_holds = match resolved.relation {
        Some(rel) => Some(relation_holds_with(
            graph_after,
            rel,
            resolved.subject,
            &resolved.refs,
            &task.tolerances.margins(),
        )?),
        None => None,
    };
    let deviation = resolved
        .orientation
        .iter()
        .map(|p| angular_error(&p.current, &p.target))
        .reduce(f64::max);
    let position_pass = relation_holds.unwrap_or(true);
    let rotation_pass = deviation.is_none_or(|d| d <= task.tolerances.tau_rot);
    let reason = if !position_pass {
        Some(Reason::PositionCheck)
    } else if !rotation_pass {
        Some(Reason::RotationCheck)
    } else {
        None
    };
    Ok(TrackResult {
        task_id: task.id.clone(),
        track: task.track,
        level: task.level,
        position_pass,
        rotation_pass,
        overall_pass: position_pass && rotation_pass,
        angular_deviation_deg: deviation,
        relation_holds,
        reason,
    })
}

/// Applies `delta` to node `subject` of the scene (about its centroid) and
/// returns the moved objects.
pub fn apply_delta(objects: &[PlacedObject], subject: usize, delta: &PoseDelta) -> Vec<PlacedObject> {
    let mut out = objects.to_vec();
    let o = &mut out[subject - 1];
    let pivot = o.cloud.centroid();
    o.cloud = o.cloud.transformed_about(&delta.rotation, &pivot, &delta.translation);
    for (_, d) in &mut o.truth {
        *d = delta.rotation.rotate(d);
    }
    out
}

/// parse, resolve, solve, apply, check; errors become reason-coded failures.
pub fn run_task(task: &TaskSpec, scene: &SceneSpec, predictor: &Predictor) -> TrackResult {
    let goal = match parse_instruction(&task.instruction) {
        Ok(g) => g,
        Err(_) => return TrackResult::failed(task, Reason::Parse),
    };
    let objects = match scene.materialize() {
        Ok(o) => o,
        Err(e) => {
            warn!("task {}: scene failed to load: {e}", task.id);
            return TrackResult::failed(task, Reason::Resolve);
        }
    };
    let predicted: Result<Vec<_>> = objects.iter().map(|o| predictor.orientations(o)).collect();
    let Ok(predicted) = predicted else {
        return TrackResult::failed(task, Reason::Predictor);
    };
    let graph = match scene_graph(&objects, predicted) {
        Ok(g) => g,
        Err(_) => return TrackResult::failed(task, Reason::Resolve),
    };
    let resolved = match resolve(&goal, &graph) {
        Ok(r) => r,
        Err(_) => return TrackResult::failed(task, Reason::Resolve),
    };
    let delta = match solve(&resolved, &graph, &task.tolerances.margins()) {
        Ok(d) => d,
        Err(Error::Placement(msg)) => {
            info!("task {}: {msg}", task.id);
            return TrackResult::failed(task, Reason::Placement);
        }
        Err(_) => return TrackResult::failed(task, Reason::Resolve),
    };
    let moved = apply_delta(&objects, resolved.subject, &delta);
    let truth = moved.iter().map(truth_orientations).collect();
    match scene_graph(&moved, truth).and_then(|g| check(task, &g)) {
        Ok(r) => r,
        Err(_) => TrackResult::failed(task, Reason::Resolve),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SuiteConfig {
    /// Total task count, spread round-robin over [`GROUPS`].
    pub n_tasks: usize,
    pub seed: u64,
    pub n_points: usize,
    pub tolerances: Tolerances,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        SuiteConfig {
            n_tasks: 200,
            seed: 0,
            n_points: 1024,
            tolerances: Tolerances::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteStats {
    pub n_tasks: usize,
    /// Fraction of tasks whose goal already holds in the initial scene.
    pub satisfied_at_spawn: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Suite {
    pub config: SuiteConfig,
    pub tasks: Vec<TaskSpec>,
    pub scenes: BTreeMap<String, SceneSpec>,
    pub stats: SuiteStats,
}

#[derive(Serialize, Deserialize)]
struct SuiteFile {
    config: SuiteConfig,
    stats: SuiteStats,
    tasks: Vec<TaskSpec>,
}

impl Suite {
    /// Writes `suite.json` and one `scenes/<task id>.json` per task.
    pub fn write(&self, dir: &Path) -> Result<()> {
        let scenes = dir.join("scenes");
        fs::create_dir_all(&scenes).map_err(|e| Error::io(&scenes, e))?;
        for (name, scene) in &self.scenes {
            let p = dir.join(name);
            let text = serde_json::to_string_pretty(scene).expect("scene serializes");
            fs::write(&p, text + "\n").map_err(|e| Error::io(&p, e))?;
        }
        let file = SuiteFile {
            config: self.config.clone(),
            stats: self.stats.clone(),
            tasks: self.tasks.clone(),
        };
        let p = dir.join("suite.json");
        let text = serde_json::to_string_pretty(&file).expect("suite serializes");
        fs::write(&p, text + "\n").map_err(|e| Error::io(&p, e))
    }

    pub fn read(dir: &Path) -> Result<Suite> {
        let p = dir.join("suite.json");
        let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
        let file: SuiteFile =
            serde_json::from_str(&text).map_err(|e| Error::format(p.display().to_string(), e.to_string()))?;
        let mut scenes = BTreeMap::new();
        for t in &file.tasks {
            if scenes.contains_key(&t.scene) {
                continue;
            }
            let sp = dir.join(&t.scene);
            let text = fs::read_to_string(&sp).map_err(|e| Error::io(&sp, e))?;
            let scene: SceneSpec = serde_json::from_str(&text)
                .map_err(|e| Error::format(sp.display().to_string(), e.to_string()))?;
            scenes.insert(t.scene.clone(), scene);
        }
        Ok(Suite {
            config: file.config,
            tasks: file.tasks,
            scenes,
            stats: file.stats,
        })
    }
}

struct Draft {
    scene: SceneSpec,
    instruction: String,
}

fn rot_parts(family: Family) -> Vec<&'static str> {
    family.vocabulary().iter().copied().filter(|p| *p != "top").collect()
}

/// Non-top parts perpendicular to "top" in the canonical frame.
fn perpendicular_parts(family: Family) -> Result<Vec<String>> {
    let obj = generate_object_with_pose(family, 0, synthgen::MIN_POINTS, Rotation::identity())?;
    let top = obj.canonical.iter().find(|(p, _)| p == "top").map(|(_, d)| *d);
    Ok(match top {
        Some(top) => obj
            .canonical
            .iter()
            .filter(|(p, d)| p != "top" && d.dot(&top).abs() < 1e-9)
            .map(|(p, _)| p.clone())
            .collect(),
        None => Vec::new(),
    })
}

fn place_objects(
    families: &[Family],
    config: &SuiteConfig,
    r: &mut rng::Rng,
    attempts: &mut usize,
) -> Result<Vec<SceneObjectSpec>> {
    let mut placed: Vec<(SceneObjectSpec, Vec3, Vec3)> = Vec::new();
    for &family in families {
        loop {
            *attempts += 1;
            if *attempts > MAX_ATTEMPTS {
                return Err(Error::Generation(format!(
                    "scene placement exceeded {MAX_ATTEMPTS} attempts"
                )));
            }
            let seed: u64 = r.random();
            let rotation = geo::sample_rotation_uniform(r.random());
            let scale = r.random_range(0.08..0.12);
            let obj = generate_object_with_pose(family, seed, config.n_points, rotation)?;
            let (lo, hi) = obj.cloud.aabb();
            let (lo, hi) = (lo * scale, hi * scale);
            let half = (hi - lo) * 0.5;
            let x = r.random_range(-lo.x..1.0 - hi.x);
            let y = r.random_range(-lo.y..1.0 - hi.y);
            let pos = Vec3::new(x, y, -lo.z);
            let center = pos + (lo + hi) * 0.5;
            let margin = Vec3::repeat(0.01);
            if placed
                .iter()
                .any(|(_, c, h)| boxes_overlap(&center, &(half + margin), c, h))
            {
                continue;
            }
            let spec = SceneObjectSpec {
                phrase: family.name().to_string(),
                family,
                seed,
                scale,
                rotation,
                position: [pos.x, pos.y, pos.z],
            };
            placed.push((spec, center, half));
            break;
        }
    }
    Ok(placed.into_iter().map(|(s, _, _)| s).collect())
}

fn draft_task(track: Track, level: u8, config: &SuiteConfig, r: &mut rng::Rng) -> Result<Draft> {
    let horizontal = ["left", "right", "front", "back"];
    let perp: Vec<(Family, Vec<String>)> = [Family::Mug, Family::Plug]
        .into_iter()
        .map(|f| Ok((f, perpendicular_parts(f)?)))
        .collect::<Result<_>>()?;
    let mut attempts = 0;
    loop {
        let n_obj = r.random_range(3..=6);
        let mut fams = Family::ALL.to_vec();
        fams.shuffle(r);
        fams.truncate(n_obj);
        // Upright goals need a subject with a "top" part.
        let needs_top = matches!((track, level), (Track::Rotation, 0) | (Track::Rotation, 2) | (Track::SixDoF, _));
        let subject = if track == Track::Rotation && level == 2 {
            Some(perp.choose(r).expect("nonempty").0)
        } else if needs_top && !fams[0].vocabulary().contains(&"top") {
            Some(*fams.iter().find(|f| f.vocabulary().contains(&"top")).unwrap_or(&Family::Bottle))
        } else {
            None
        };
        if let Some(f) = subject {
            if let Some(i) = fams.iter().position(|x| *x == f) {
                fams.swap(0, i);
            } else {
                fams[0] = f;
            }
        }
        let objects = place_objects(&fams, config, r, &mut attempts)?;
        let scene = SceneSpec {
            table: [1.0, 1.0],
            n_points: config.n_points,
            objects,
        };
        let names: Vec<&str> = scene.objects.iter().map(|o| o.phrase.as_str()).collect();
        let subj = names[0];
        let l0 = [
            ("to the left of", Relation::Left),
            ("to the right of", Relation::Right),
            ("in front of", Relation::Front),
            ("behind", Relation::Behind),
            ("on top of", Relation::Top),
        ];
        let instruction = match (track, level) {
            (Track::Position, 0) | (Track::SixDoF, 0) => {
                let (words, rel) = *l0.choose(r).expect("nonempty");
                if !ideal_spot_ok(&scene, rel, &[1])? {
                    continue;
                }
                let pos = format!("move {{{subj}}} {words} {{{}}}", names[1]);
                if track == Track::SixDoF {
                    format!("{pos} and upright {{{subj}}}")
                } else {
                    pos
                }
            }
            (Track::Position, 1) => {
                let center = r.random_bool(0.5);
                let n_refs = if center { r.random_range(2..=(names.len() - 1).min(3)) } else { 2 };
                let refs: Vec<usize> = (1..=n_refs).collect();
                let rel = if center { Relation::Center } else { Relation::Between };
                if !ideal_spot_ok(&scene, rel, &refs)? {
                    continue;
                }
                let braced: Vec<String> = refs.iter().map(|&i| format!("{{{}}}", names[i])).collect();
                if center {
                    format!("move {{{subj}}} in the center of {}", braced.join(" and "))
                } else {
                    format!("move {{{subj}}} between {} and {}", braced[0], braced[1])
                }
            }
            (Track::Rotation, 0) => {
                if r.random_bool(0.5) {
                    format!("upright {{{subj}}}")
                } else {
                    format!("flip {{{subj}}} upside down")
                }
            }
            (Track::Rotation, 1) => {
                let part = *rot_parts(scene.objects[0].family).choose(r).expect("nonempty");
                let verb = *["point", "turn", "rotate"].choose(r).expect("nonempty");
                let dir = horizontal.choose(r).expect("nonempty");
                format!("{verb} the {{{part}}} of {{{subj}}} to the {dir}")
            }
            (Track::Rotation, 2) => {
                let fam = scene.objects[0].family;
                let parts = &perp.iter().find(|(f, _)| *f == fam).expect("perpendicular family").1;
                let part = parts.choose(r).expect("nonempty");
                let dir = horizontal.choose(r).expect("nonempty");
                format!("upright {{{subj}}} and point the {{{part}}} of {{{subj}}} to the {dir}")
            }
            _ => return Err(Error::invalid(format!("no generator for {track:?} level {level}"))),
        };
        return Ok(Draft { scene, instruction });
    }
}

/// Checks that the subject, placed at the relation's ideal spot, lies on the
/// table (lateral relations) or overlaps nothing (Between / Center).
fn ideal_spot_ok(scene: &SceneSpec, rel: Relation, refs: &[usize]) -> Result<bool> {
    let objs = scene.materialize()?;
    let graph = scene_graph(&objs, objs.iter().map(|_| Vec::new()).collect())?;
    let resolved = ResolvedGoal {
        subject: 1,
        relation: Some(rel),
        refs: refs.iter().map(|i| i + 1).collect(),
        orientation: Vec::new(),
    };
    let s = graph.node(1)?;
    let target = match solve(&resolved, &graph, &Margins::default()) {
        Ok(d) => s.centroid + d.translation,
        Err(Error::Placement(_)) => return Ok(false),
        Err(e) => return Err(e),
    };
    let h = s.bbox_size * 0.5;
    let on_table = (0..2).all(|k| target[k] - h[k] >= 0.0 && target[k] + h[k] <= scene.table[k]);
    Ok(match rel {
        // Repair moves the subject off the ideal spot; require none was needed.
        Relation::Between | Relation::Center => {
            let ideal = refs.iter().map(|&i| objs[i].cloud.centroid()).sum::<Vec3>() / refs.len() as f64;
            on_table && (target - ideal).norm() < 1e-12
        }
        Relation::Top => true,
        _ => on_table,
    })
}

/// Generates `config.n_tasks` tasks, each with its own scene.
pub fn generate_suite(config: &SuiteConfig) -> Result<Suite> {
    if config.n_tasks == 0 {
        return Err(Error::invalid("n_tasks must be at least 1"));
    }
    config.tolerances.validate()?;
    let mut tasks = Vec::with_capacity(config.n_tasks);
    let mut scenes = BTreeMap::new();
    let mut satisfied = 0;
    for i in 0..config.n_tasks {
        let (track, level) = GROUPS[i % GROUPS.len()];
        let mut r = rng::stream("bench", rng::derive_seed(config.seed, "task", i as u64));
        let draft = draft_task(track, level, config, &mut r)?;
        let goal: GoalSpec = parse_instruction(&draft.instruction)?;
        let id = format!("task-{i:04}");
        let scene_name = format!("scenes/{id}.json");
        let task = TaskSpec {
            id,
            track,
            level,
            scene: scene_name.clone(),
            instruction: goal.pretty(),
            tolerances: config.tolerances,
        };
        let objs = draft.scene.materialize()?;
        let graph = scene_graph(&objs, objs.iter().map(truth_orientations).collect())?;
        if check(&task, &graph)?.overall_pass {
            satisfied += 1;
        }
        scenes.insert(scene_name, draft.scene);
        tasks.push(task);
    }
    let stats = SuiteStats {
        n_tasks: tasks.len(),
        satisfied_at_spawn: satisfied as f64 / tasks.len() as f64,
    };
    Ok(Suite {
        config: config.clone(),
        tasks,
        scenes,
        stats,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub predictor: String,
    /// Success rate per track: `levelN` keys plus `all`.
    pub per_track: BTreeMap<String, BTreeMap<String, f64>>,
    pub per_task: Vec<TrackResult>,
}

impl Report {
    pub fn rate(&self, track: Track, key: &str) -> Option<f64> {
        self.per_track.get(track.name()).and_then(|m| m.get(key)).copied()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "task_id,track,level,position_pass,rotation_pass,overall_pass,angular_deviation_deg,relation_holds,reason\n",
        );
        let opt = |v: Option<String>| v.unwrap_or_default();
        for r in &self.per_task {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                r.task_id,
                r.track.name(),
                r.level,
                r.position_pass,
                r.rotation_pass,
                r.overall_pass,
                opt(r.angular_deviation_deg.map(|d| d.to_string())),
                opt(r.relation_holds.map(|b| b.to_string())),
                opt(r.reason.map(|x| x.to_string())),
            ));
        }
        out
    }

    /// Writes `report.json` and `report.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let p = dir.join("report.json");
        let text = serde_json::to_string_pretty(self).expect("report serializes");
        fs::write(&p, text + "\n").map_err(|e| Error::io(&p, e))?;
        let p = dir.join("report.csv");
        fs::write(&p, self.to_csv()).map_err(|e| Error::io(&p, e))
    }
}

/// Runs every task; per-task errors are recorded, never fatal.
pub fn run_suite(suite: &Suite, predictor: &Predictor) -> Result<Report> {
    if suite.tasks.is_empty() {
        return Err(Error::invalid("empty suite"));
    }
    let mut per_task = Vec::with_capacity(suite.tasks.len());
    for task in &suite.tasks {
        let result = match suite.scenes.get(&task.scene) {
            Some(scene) => run_task(task, scene, predictor),
            None => TrackResult::failed(task, Reason::Resolve),
        };
        per_task.push(result);
    }
    per_task.sort_by(|a, b| a.task_id.cmp(&b.task_id));
    let mut counts: BTreeMap<(&str, String), (usize, usize)> = BTreeMap::new();
    for r in &per_task {
        for key in [format!("level{}", r.level), "all".to_string()] {
            let c = counts.entry((r.track.name(), key)).or_default();
            c.1 += 1;
            c.0 += usize::from(r.overall_pass);
        }
    }
    let mut per_track: BTreeMap<String, BTreeMap<String, f64>> = BTreeMap::new();
    for ((track, key), (pass, n)) in counts {
        per_track
            .entry(track.to_string())
            .or_default()
            .insert(key, pass as f64 / n as f64);
    }
    Ok(Report {
        predictor: predictor.name().to_string(),
        per_track,
        per_task,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenegraph::{relation_holds, ObjectNode};
    use proptest::prelude::*;

    fn node(id: usize, phrase: &str, c: [f64; 3], size: [f64; 3], top: [f64; 3]) -> ObjectNode {
        ObjectNode {
            id,
            phrase: phrase.into(),
            centroid: Vec3::from(c),
            bbox_size: Vec3::from(size),
            orientations: vec![Orientation {
                text: "top".into(),
                dir: UnitVec3::normalize(Vec3::from(top)).unwrap(),
            }],
        }
    }

    fn task(instruction: &str, tolerances: Tolerances) -> TaskSpec {
        TaskSpec {
            id: "t".into(),
            track: Track::SixDoF,
            level: 0,
            scene: "scenes/t.json".into(),
            instruction: instruction.into(),
            tolerances,
        }
    }

    fn solve_text(instruction: &str, graph: &SceneGraph) -> Result<PoseDelta> {
        solve(&resolve(&parse_instruction(instruction)?, graph)?, graph, &Margins::default())
    }

    #[test]
    fn right_of_target_clears_both_boxes() {
        let g = SceneGraph::from_nodes(vec![
            node(1, "mug", [0.2, 0.3, 0.05], [0.1, 0.1, 0.1], [0.0, 0.0, 1.0]),
            node(2, "cone", [0.5, 0.6, 0.1], [0.2, 0.1, 0.2], [0.0, 0.0, 1.0]),
        ]);
        let d = solve_text("move {mug} to the right of {cone}", &g).unwrap();
        let target = Vec3::new(0.2, 0.3, 0.05) + d.translation;
        assert!((target - Vec3::new(0.5 + 0.1 + 0.05 + GAP, 0.6, 0.05)).norm() < 1e-12);
        assert_eq!(d.rotation, Rotation::identity());
    }

    #[test]
    fn rotation_widens_the_placement_box() {
        // A mug lying on its side: upright swaps its x and z extents.
        let g = SceneGraph::from_nodes(vec![
            node(1, "mug", [0.2, 0.3, 0.05], [0.3, 0.1, 0.1], [1.0, 0.0, 0.0]),
            node(2, "cone", [0.5, 0.6, 0.1], [0.2, 0.2, 0.2], [0.0, 0.0, 1.0]),
        ]);
        let d = solve_text("move {mug} to the left of {cone} and upright {mug}", &g).unwrap();
        let target = Vec3::new(0.2, 0.3, 0.05) + d.translation;
        assert!((target.x - (0.5 - 0.05 - 0.1 - GAP)).abs() < 1e-12);
    }

    #[test]
    fn collisions_are_repaired_along_the_relation_axis() {
        let g = SceneGraph::from_nodes(vec![
            node(1, "mug", [0.2, 0.3, 0.05], [0.1, 0.1, 0.1], [0.0, 0.0, 1.0]),
            node(2, "cone", [0.5, 0.5, 0.05], [0.1, 0.1, 0.1], [0.0, 0.0, 1.0]),
            node(3, "plug", [0.7, 0.5, 0.05], [0.1, 0.1, 0.1], [0.0, 0.0, 1.0]),
        ]);
        let d = solve_text("move {mug} to the right of {cone}", &g).unwrap();
        let target = Vec3::new(0.2, 0.3, 0.05) + d.translation;
        // Ideal x = 0.65; the boxes overlap while |x - 0.7| < 0.1.
        assert!(target.x >= 0.8 && target.x < 0.8 + REPAIR_STEP, "{}", target.x);
        assert_eq!(target.y, 0.5);
    }

    #[test]
    fn placement_fails_when_the_axis_is_blocked() {
        let g = SceneGraph::from_nodes(vec![
            node(1, "mug", [0.2, 0.3, 0.05], [0.1, 0.1, 0.1], [0.0, 0.0, 1.0]),
            node(2, "cone", [0.5, 0.5, 0.05], [0.1, 0.1, 0.1], [0.0, 0.0, 1.0]),
            node(3, "plug", [5.0, 0.5, 0.05], [9.0, 0.1, 0.1], [0.0, 0.0, 1.0]),
        ]);
        let err = solve_text("move {mug} to the right of {cone}", &g).unwrap_err();
        assert!(matches!(err, Error::Placement(_)), "{err}");
    }

    #[test]
    fn upright_bottle_is_remeasured_exactly() {
        let tilt = Rotation::from_euler_zyx(0.4, 1.1, -0.3);
        let scene = SceneSpec {
            table: [1.0, 1.0],
            n_points: 512,
            objects: vec![
                SceneObjectSpec {
                    phrase: "bottle".into(),
                    family: Family::Bottle,
                    seed: 7,
                    scale: 0.1,
                    rotation: tilt,
                    position: [0.3, 0.3, 0.1],
                },
                SceneObjectSpec {
                    phrase: "cone".into(),
                    family: Family::Cone,
                    seed: 8,
                    scale: 0.1,
                    rotation: Rotation::identity(),
                    position: [0.7, 0.7, 0.1],
                },
            ],
        };
        let t = TaskSpec {
            track: Track::Rotation,
            ..task("upright {bottle}", Tolerances::default())
        };
        let r = run_task(&t, &scene, &Predictor::Oracle);
        assert!(r.overall_pass && r.reason.is_none(), "{r:?}");
        assert!(r.angular_deviation_deg.unwrap() < 1e-6);
        assert_eq!(r.relation_holds, None);
    }

    #[test]
    fn missing_parts_and_bad_text_get_reason_codes() {
        let scene = SceneSpec {
            table: [1.0, 1.0],
            n_points: 256,
            objects: vec![SceneObjectSpec {
                phrase: "cone".into(),
                family: Family::Cone,
                seed: 1,
                scale: 0.1,
                rotation: Rotation::identity(),
                position: [0.5, 0.5, 0.1],
            }],
        };
        let t = task("point the {handle} of {cone} to the left", Tolerances::default());
        assert_eq!(run_task(&t, &scene, &Predictor::Oracle).reason, Some(Reason::Resolve));
        let t = task("move {cone} near {cone}", Tolerances::default());
        assert_eq!(run_task(&t, &scene, &Predictor::Oracle).reason, Some(Reason::Parse));
    }

    #[test]
    fn suites_are_deterministic_and_round_trip() {
        let config = SuiteConfig {
            n_tasks: 12,
            seed: 3,
            n_points: 256,
            ..Default::default()
        };
        let a = generate_suite(&config).unwrap();
        let b = generate_suite(&config).unwrap();
        assert_eq!(a, b);
        let (d1, d2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        a.write(d1.path()).unwrap();
        b.write(d2.path()).unwrap();
        for t in &a.tasks {
            let f = |d: &Path| fs::read(d.join(&t.scene)).unwrap();
            assert_eq!(f(d1.path()), f(d2.path()));
        }
        assert_eq!(
            fs::read(d1.path().join("suite.json")).unwrap(),
            fs::read(d2.path().join("suite.json")).unwrap()
        );
        assert_eq!(Suite::read(d1.path()).unwrap(), a);
        let groups: Vec<_> = a.tasks.iter().map(|t| (t.track, t.level)).collect();
        assert_eq!(&groups[..6], &GROUPS[..]);
        let other = generate_suite(&SuiteConfig { seed: 4, ..config }).unwrap();
        assert_ne!(other.tasks, a.tasks);
    }

    #[test]
    fn oracle_solves_a_generated_suite() {
        let suite = generate_suite(&SuiteConfig {
            n_tasks: 30,
            n_points: 256,
            ..Default::default()
        })
        .unwrap();
        let report = run_suite(&suite, &Predictor::Oracle).unwrap();
        for t in [Track::Position, Track::Rotation, Track::SixDoF] {
            assert_eq!(report.rate(t, "all"), Some(1.0), "{:?}", report.per_track);
        }
        let csv = report.to_csv();
        assert_eq!(csv.lines().count(), 31);
        let dir = tempfile::tempdir().unwrap();
        report.write(dir.path()).unwrap();
        let back: Report =
            serde_json::from_str(&fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
        assert_eq!(back, report);
    }

    #[test]
    fn satisfied_goal_moves_only_along_the_axis() {
        let g = SceneGraph::from_nodes(vec![
            node(1, "mug", [0.3, 0.6, 0.05], [0.1, 0.1, 0.1], [0.0, 0.0, 1.0]),
            node(2, "cone", [0.5, 0.6, 0.05], [0.1, 0.1, 0.1], [0.0, 0.0, 1.0]),
        ]);
        assert!(relation_holds(&g, Relation::Left, 1, &[2]).unwrap());
        let d = solve_text("move {mug} to the left of {cone}", &g).unwrap();
        assert_eq!(d.rotation, Rotation::identity());
        assert!((d.translation - Vec3::new(0.05, 0.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn checker_thresholds_and_conjunction() {
        let a = 30f64.to_radians();
        let g = SceneGraph::from_nodes(vec![
            node(1, "mug", [0.3, 0.6, 0.05], [0.1, 0.1, 0.1], [a.sin(), 0.0, a.cos()]),
            node(2, "cone", [0.5, 0.6, 0.05], [0.1, 0.1, 0.1], [0.0, 0.0, 1.0]),
        ]);
        let r = check(&task("move {mug} to the left of {cone} and upright {mug}", Tolerances::default()), &g).unwrap();
        assert!(r.position_pass && !r.rotation_pass && !r.overall_pass);
        assert_eq!(r.reason, Some(Reason::RotationCheck));
        assert!((r.angular_deviation_deg.unwrap() - 30.0).abs() < 1e-9);
        let r = check(&task("move {mug} to the left of {cone}", Tolerances::default()), &g).unwrap();
        assert!(r.overall_pass && r.reason.is_none());
        let err = check(&task("upright {bottle}", Tolerances::default()), &g).unwrap_err();
        assert!(matches!(err, Error::InvalidArgument(_)));
    }

    #[test]
    fn empty_suite_is_rejected() {
        let suite = Suite {
            config: SuiteConfig::default(),
            tasks: Vec::new(),
            scenes: BTreeMap::new(),
            stats: SuiteStats { n_tasks: 0, satisfied_at_spawn: 0.0 },
        };
        assert!(matches!(run_suite(&suite, &Predictor::Oracle), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn invalid_configs_are_rejected() {
        assert!(generate_suite(&SuiteConfig { n_tasks: 0, ..Default::default() }).is_err());
        let mut c = SuiteConfig::default();
        c.tolerances.tau_rot = 0.0;
        assert!(generate_suite(&c).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn raising_tau_rot_never_fails_a_passing_rotation(
            tilt in 0.0f64..1.2,
            dx in -0.3f64..0.3,
            dy in -0.3f64..0.3,
            extra_rot in 0.0f64..60.0,
        ) {
            let g = SceneGraph::from_nodes(vec![
                node(1, "mug", [0.5 + dx, 0.5 + dy, 0.05], [0.1, 0.1, 0.1], [tilt.sin(), 0.0, tilt.cos()]),
                node(2, "cone", [0.5, 0.5, 0.05], [0.1, 0.1, 0.1], [0.0, 0.0, 1.0]),
            ]);
            for text in ["move {mug} to the left of {cone} and upright {mug}", "flip {mug} upside down"] {
                let tight = Tolerances::default();
                let loose = Tolerances { tau_rot: tight.tau_rot + extra_rot, ..tight };
                let a = check(&task(text, tight), &g).unwrap();
                let b = check(&task(text, loose), &g).unwrap();
                prop_assert!(!a.rotation_pass || b.rotation_pass);
                prop_assert_eq!(a.position_pass, b.position_pass);
                prop_assert_eq!(a.angular_deviation_deg, b.angular_deviation_deg);
                prop_assert_eq!(a.overall_pass, a.position_pass && a.rotation_pass);
                prop_assert_eq!(a.reason.is_some(), !a.overall_pass);
            }
        }

        #[test]
        fn applying_the_plan_satisfies_the_relation(seed in 0u64..1_000_000, pick in 0usize..4) {
            let suite = generate_suite(&SuiteConfig {
                n_tasks: 6,
                seed,
                n_points: 256,
                ..Default::default()
            }).unwrap();
            // Position and 6-DoF groups.
            let t = &suite.tasks[[0, 1, 5, 0][pick]];
            let r = run_task(t, &suite.scenes[&t.scene], &Predictor::Oracle);
            prop_assert!(r.reason == Some(Reason::Placement) || r.position_pass, "{:?}", r);
        }
    }
}
