//! Object-level scene graphs with pose, size and orientation attributes.
//!
//! World frame: right-handed, z up, x to the right, y away from the viewer;
//! "front" means toward the viewer (-y).

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::geo::{PointCloud, UnitVec3, Vec3};

/// Default lateral / vertical margin in meters.
pub const DELTA: f64 = 0.02;
/// Default tolerance for `Between` and `Center`, in meters.
pub const DELTA_BETWEEN: f64 = 0.10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Relation {
    Left,
    Right,
    Front,
    Behind,
    Top,
    Between,
    Center,
}

impl Relation {
    pub const ALL: [Relation; 7] = [
        Relation::Left,
        Relation::Right,
        Relation::Front,
        Relation::Behind,
        Relation::Top,
        Relation::Between,
        Relation::Center,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Relation::Left => "Left",
            Relation::Right => "Right",
            Relation::Front => "Front",
            Relation::Behind => "Behind",
            Relation::Top => "Top",
            Relation::Between => "Between",
            Relation::Center => "Center",
        }
    }

    /// Checks the number of reference objects.
    pub fn check_arity(self, n_refs: usize) -> Result<()> {
        let ok = match self {
            Relation::Between => n_refs == 2,
            Relation::Center => n_refs >= 2,
            _ => n_refs == 1,
        };
        if ok {
            Ok(())
        } else {
            let want = match self {
                Relation::Between => "exactly 2",
                Relation::Center => "at least 2",
                _ => "exactly 1",
            };
            Err(Error::invalid(format!(
                "{} needs {want} reference objects, got {n_refs}",
                self.name()
            )))
        }
    }
}

impl fmt::Display for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Relation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Relation::ALL
            .into_iter()
            .find(|r| r.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::invalid(format!("unknown relation {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Margins {
    pub delta: f64,
    pub delta_between: f64,
}

impl Default for Margins {
    fn default() -> Self {
        Margins {
            delta: DELTA,
            delta_between: DELTA_BETWEEN,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Orientation {
    pub text: String,
    pub dir: UnitVec3,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectNode {
    pub id: usize,
    pub phrase: String,
    pub centroid: Vec3,
    /// Axis-aligned extents along x, y, z.
    pub bbox_size: Vec3,
    pub orientations: Vec<Orientation>,
}

impl ObjectNode {
    pub fn orientation(&self, text: &str) -> Option<UnitVec3> {
        self.orientations.iter().find(|o| o.text == text).map(|o| o.dir)
    }

    pub fn volume(&self) -> f64 {
        self.bbox_size.x * self.bbox_size.y * self.bbox_size.z
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneEdge {
    pub a: usize,
    pub b: usize,
    /// `c_b - c_a`.
    pub rel_translation: Vec3,
    /// `vol(a) / vol(b)` of the bounding boxes.
    pub size_ratio: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneGraph {
    pub nodes: Vec<ObjectNode>,
    pub edges: Vec<SceneEdge>,
}

/// One segmented object handed to [`build_graph`].
#[derive(Debug, Clone)]
pub struct SceneObject {
    pub phrase: String,
    pub cloud: PointCloud,
    pub orientations: Vec<Orientation>,
}

fn edges_for(nodes: &[ObjectNode]) -> Vec<SceneEdge> {
    let mut edges = Vec::with_capacity(nodes.len() * nodes.len().saturating_sub(1));
    for a in nodes {
        for b in nodes {
            if a.id != b.id {
                edges.push(SceneEdge {
                    a: a.id,
                    b: b.id,
                    rel_translation: b.centroid - a.centroid,
                    size_ratio: a.volume() / b.volume(),
                });
            }
        }
    }
    edges
}

/// Nodes get ids 1..=M in input order; every ordered pair gets an edge.
pub fn build_graph(objects: &[SceneObject]) -> Result<SceneGraph> {
    if objects.is_empty() {
        return Err(Error::invalid("a scene graph needs at least one object"));
    }
    let nodes = objects
        .iter()
        .enumerate()
        .map(|(i, o)| {
            let (lo, hi) = o.cloud.aabb();
            let size = hi - lo;
            if size.iter().any(|&e| !(e > 0.0)) {
                return Err(Error::DegenerateGeometry(format!(
                    "object {:?} has a flat bounding box {:?}",
                    o.phrase,
                    [size.x, size.y, size.z]
                )));
            }
            Ok(ObjectNode {
                id: i + 1,
                phrase: o.phrase.clone(),
                centroid: o.cloud.centroid(),
                bbox_size: size,
                orientations: o.orientations.clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SceneGraph::from_nodes(nodes))
}

impl SceneGraph {
    /// Builds the complete edge set for already-constructed nodes.
    pub fn from_nodes(nodes: Vec<ObjectNode>) -> SceneGraph {
        let edges = edges_for(&nodes);
        SceneGraph { nodes, edges }
    }

    pub fn node(&self, id: usize) -> Result<&ObjectNode> {
        self.nodes
            .iter()
            .find(|n| n.id == id)
            .ok_or_else(|| Error::invalid(format!("no node with id {id}")))
    }

    pub fn edge(&self, a: usize, b: usize) -> Option<&SceneEdge> {
        self.edges.iter().find(|e| e.a == a && e.b == b)
    }

    /// Ids of nodes whose phrase equals `phrase`.
    pub fn find(&self, phrase: &str) -> Vec<usize> {
        self.nodes.iter().filter(|n| n.phrase == phrase).map(|n| n.id).collect()
    }
}

/// `relation_holds` with default margins.
pub fn relation_holds(graph: &SceneGraph, relation: Relation, subject: usize, refs: &[usize]) -> Result<bool> {
    relation_holds_with(graph, relation, subject, refs, &Margins::default())
}

pub fn relation_holds_with(
    graph: &SceneGraph,
    relation: Relation,
    subject: usize,
    refs: &[usize],
    margins: &Margins,
) -> Result<bool> {
    relation.check_arity(refs.len())?;
    let s = graph.node(subject)?;
    let refs = refs
        .iter()
        .map(|&id| graph.node(id).map(|n| (n.centroid, n.bbox_size)))
        .collect::<Result<Vec<_>>>()?;
    holds(relation, &s.centroid, &refs, margins)
}

/// The relation predicate on raw geometry: subject centroid against
/// reference `(centroid, bbox_size)` pairs.
pub fn holds(relation: Relation, subject: &Vec3, refs: &[(Vec3, Vec3)], m: &Margins) -> Result<bool> {
    relation.check_arity(refs.len())?;
    let lateral = |r: &Vec3| {
        let d = subject - r;
        (d, d.x.abs() >= d.y.abs(), d.y.abs() >= d.x.abs())
    };
    Ok(match relation {
        Relation::Left => {
            let (d, x_dom, _) = lateral(&refs[0].0);
            d.x < -m.delta && x_dom
        }
        Relation::Right => {
            let (d, x_dom, _) = lateral(&refs[0].0);
            d.x > m.delta && x_dom
        }
        Relation::Front => {
            let (d, _, y_dom) = lateral(&refs[0].0);
            d.y < -m.delta && y_dom
        }
        Relation::Behind => {
            let (d, _, y_dom) = lateral(&refs[0].0);
            d.y > m.delta && y_dom
        }
        Relation::Top => {
            let (c, size) = &refs[0];
            let d = subject - c;
            let reach = 0.5 * size.x.max(size.y);
            d.z > m.delta && d.x.hypot(d.y) <= reach
        }
        Relation::Between => {
            let (a, b) = (refs[0].0, refs[1].0);
            let ab = b - a;
            let len2 = ab.norm_squared();
            if len2 < 1e-24 {
                return Ok(false);
            }
            let t = (subject - a).dot(&ab) / len2;
            let dist = (subject - (a + ab * t)).norm();
            dist <= m.delta_between && (0.2..=0.8).contains(&t)
        }
        Relation::Center => {
            let mean = refs.iter().map(|r| r.0).sum::<Vec3>() / refs.len() as f64;
            (subject - mean).norm() <= m.delta_between
        }
    })
}

fn arr(v: &Vec3) -> Value {
    json!([v.x, v.y, v.z])
}

/// Serializes to the scene JSON schema (pretty-printed).
pub fn to_json(graph: &SceneGraph) -> String {
    let objects: Vec<Value> = graph
        .nodes
        .iter()
        .map(|n| {
            json!({
                "id": n.id,
                "phrase": n.phrase,
                "centroid": arr(&n.centroid),
                "bbox_size": arr(&n.bbox_size),
                "orientations": n.orientations.iter().map(|o| json!({"text": o.text, "dir": o.dir.to_array()})).collect::<Vec<_>>(),
            })
        })
        .collect();
    let edges: Vec<Value> = graph
        .edges
        .iter()
        .map(|e| {
            json!({
                "a": e.a,
                "b": e.b,
                "rel_translation": arr(&e.rel_translation),
                "size_ratio": e.size_ratio,
            })
        })
        .collect();
    let v = json!({
        "frame": {"up": "z", "right": "x", "forward": "y"},
        "objects": objects,
        "edges": edges,
    });
    serde_json::to_string_pretty(&v).expect("scene graph serializes")
}

fn err(path: &str, msg: impl Into<String>) -> Error {
    Error::format(path, msg)
}

fn field<'a>(v: &'a Value, key: &str, path: &str) -> Result<&'a Value> {
    let obj = v.as_object().ok_or_else(|| err(path, "expected an object"))?;
    obj.get(key).ok_or_else(|| err(&format!("{path}.{key}"), "missing key"))
}

fn num(v: &Value, path: &str) -> Result<f64> {
    v.as_f64().filter(|x| x.is_finite()).ok_or_else(|| err(path, "expected a finite number"))
}

fn id(v: &Value, path: &str) -> Result<usize> {
    v.as_u64()
        .filter(|&x| x > 0)
        .map(|x| x as usize)
        .ok_or_else(|| err(path, "expected a positive integer"))
}

fn vec3(v: &Value, path: &str) -> Result<Vec3> {
    let a = v.as_array().ok_or_else(|| err(path, "expected an array of 3 numbers"))?;
    if a.len() != 3 {
        return Err(err(path, format!("expected 3 numbers, found {}", a.len())));
    }
    Ok(Vec3::new(
        num(&a[0], &format!("{path}[0]"))?,
        num(&a[1], &format!("{path}[1]"))?,
        num(&a[2], &format!("{path}[2]"))?,
    ))
}

fn string(v: &Value, path: &str) -> Result<String> {
    v.as_str().map(str::to_string).ok_or_else(|| err(path, "expected a string"))
}

fn array<'a>(v: &'a Value, path: &str) -> Result<&'a Vec<Value>> {
    v.as_array().ok_or_else(|| err(path, "expected an array"))
}

/// Parses the scene JSON schema. Errors carry a JSON path such as
/// `$.objects[2].bbox_size`.
pub fn from_json(text: &str) -> Result<SceneGraph> {
    let root: Value = serde_json::from_str(text).map_err(|e| err("$", format!("invalid JSON: {e}")))?;
    let frame = field(&root, "frame", "$")?;
    for (k, want) in [("up", "z"), ("right", "x"), ("forward", "y")] {
        let p = format!("$.frame.{k}");
        let got = string(field(frame, k, "$.frame")?, &p)?;
        if got != want {
            return Err(err(&p, format!("unsupported frame axis {got:?}, expected {want:?}")));
        }
    }
    let mut nodes = Vec::new();
    let mut seen = BTreeSet::new();
    for (i, o) in array(field(&root, "objects", "$")?, "$.objects")?.iter().enumerate() {
        let p = format!("$.objects[{i}]");
        let nid = id(field(o, "id", &p)?, &format!("{p}.id"))?;
        if !seen.insert(nid) {
            return Err(err(&format!("{p}.id"), format!("duplicate id {nid}")));
        }
        let bbox_size = vec3(field(o, "bbox_size", &p)?, &format!("{p}.bbox_size"))?;
        if bbox_size.iter().any(|&e| !(e > 0.0)) {
            return Err(err(&format!("{p}.bbox_size"), "extents must be positive"));
        }
        let mut orientations = Vec::new();
        let op = format!("{p}.orientations");
        for (j, ov) in array(field(o, "orientations", &p)?, &op)?.iter().enumerate() {
            let q = format!("{op}[{j}]");
            let text = string(field(ov, "text", &q)?, &format!("{q}.text"))?;
            let d = vec3(field(ov, "dir", &q)?, &format!("{q}.dir"))?;
            let dir = UnitVec3::try_from([d.x, d.y, d.z]).map_err(|e| err(&format!("{q}.dir"), e.to_string()))?;
            orientations.push(Orientation { text, dir });
        }
        nodes.push(ObjectNode {
            id: nid,
            phrase: string(field(o, "phrase", &p)?, &format!("{p}.phrase"))?,
            centroid: vec3(field(o, "centroid", &p)?, &format!("{p}.centroid"))?,
            bbox_size,
            orientations,
        });
    }
    if nodes.is_empty() {
        return Err(err("$.objects", "a scene graph needs at least one object"));
    }
    if let Some((i, _)) = seen.iter().enumerate().find(|(i, &nid)| nid != i + 1) {
        return Err(err("$.objects", format!("ids must be 1..{}, missing {}", nodes.len(), i + 1)));
    }
    let mut edges = Vec::new();
    let mut pairs = BTreeSet::new();
    for (i, e) in array(field(&root, "edges", "$")?, "$.edges")?.iter().enumerate() {
        let p = format!("$.edges[{i}]");
        let a = id(field(e, "a", &p)?, &format!("{p}.a"))?;
        let b = id(field(e, "b", &p)?, &format!("{p}.b"))?;
        if a == b || !seen.contains(&a) || !seen.contains(&b) {
            return Err(err(&p, format!("edge ({a}, {b}) must join two distinct existing nodes")));
        }
        if !pairs.insert((a, b)) {
            return Err(err(&p, format!("duplicate edge ({a}, {b})")));
        }
        let size_ratio = num(field(e, "size_ratio", &p)?, &format!("{p}.size_ratio"))?;
        if !(size_ratio > 0.0) {
            return Err(err(&format!("{p}.size_ratio"), "must be positive"));
        }
        edges.push(SceneEdge {
            a,
            b,
            rel_translation: vec3(field(e, "rel_translation", &p)?, &format!("{p}.rel_translation"))?,
            size_ratio,
        });
    }
    let m = nodes.len();
    if edges.len() != m * (m - 1) {
        return Err(err("$.edges", format!("expected {} edges for {m} nodes, found {}", m * (m - 1), edges.len())));
    }
    Ok(SceneGraph { nodes, edges })
}
