//! Python bindings. Structured results cross the boundary as JSON text and
//! are decoded by the `sofarkit` Python package.

use std::path::Path;

use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use sofarkit::align::{self, OrientationPair};
use sofarkit::bench::{self, Predictor, SceneSpec, Suite, SuiteConfig};
use sofarkit::geo;
use sofarkit::pointso::{self, ModelConfig, ModelParams, TrainConfig};
use sofarkit::scenegraph::{self, Orientation, Relation, SceneObject};
use sofarkit::synthgen::{self, DatasetConfig, Family};
use sofarkit::taskdsl;
use sofarkit::{Error, PointCloud, UnitVec3, Vec3};

fn err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyOSError::new_err(e.to_string()),
        Error::Parse { .. }
        | Error::Format { .. }
        | Error::ConfigMismatch(_)
        | Error::InvalidArgument(_)
        | Error::UnknownPhrase { .. }
        | Error::UnknownObject { .. }
        | Error::Ambiguous { .. }
        | Error::UnknownPart { .. }
        | Error::DegenerateGeometry(_)
        | Error::DegeneratePrediction(_) => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn json_err(e: serde_json::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn cloud(points: Vec<[f64; 3]>) -> PyResult<PointCloud> {
    PointCloud::new(points.into_iter().map(Vec3::from).collect()).map_err(err)
}

fn unit(v: [f64; 3]) -> PyResult<UnitVec3> {
    UnitVec3::normalize(Vec3::from(v)).map_err(err)
}

fn family(name: &str) -> PyResult<Family> {
    name.parse().map_err(err)
}

fn to_json<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_string(v).expect("serializable")
}

fn predictor(spec: &str) -> PyResult<Predictor> {
    match spec {
        "oracle" => Ok(Predictor::Oracle),
        "pca" => Ok(Predictor::Pca),
        _ => match spec.strip_prefix("model:") {
            Some(p) => Ok(Predictor::Model(Box::new(pointso::load_params(Path::new(p), None).map_err(err)?))),
            None => Err(PyValueError::new_err(format!(
                "unknown predictor {spec:?}; expected oracle, pca or model:PATH"
            ))),
        },
    }
}

/// Trained or freshly initialized orientation regressor.
#[pyclass(module = "sofarkit._sofarkit")]
struct Model {
    params: ModelParams,
}

#[pymethods]
impl Model {
    /// New randomly initialized model; `config` is ModelConfig JSON.
    #[staticmethod]
    #[pyo3(signature = (config = None, seed = 0))]
    fn init(config: Option<&str>, seed: u64) -> PyResult<Model> {
        let config: ModelConfig = match config {
            Some(c) => serde_json::from_str(c).map_err(json_err)?,
            None => ModelConfig::default(),
        };
        Ok(Model {
            params: pointso::init_params(&config, seed).map_err(err)?,
        })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Model> {
        Ok(Model {
            params: pointso::load_params(Path::new(path), None).map_err(err)?,
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        pointso::save_params(&self.params, Path::new(path)).map_err(err)
    }

    /// ModelConfig as JSON.
    fn config_json(&self) -> String {
        to_json(self.params.config())
    }

    fn num_parameters(&self) -> usize {
        self.params.len()
    }

    /// Unit direction for `phrase` on a point cloud (any scale or position).
    fn predict(&self, points: Vec<[f64; 3]>, phrase: &str) -> PyResult<[f64; 3]> {
        Ok(pointso::predict(&self.params, &cloud(points)?, phrase).map_err(err)?.to_array())
    }
}

/// Synthetic object as JSON: id, family, points, labels, pose.
#[pyfunction]
#[pyo3(signature = (family_name, seed, n_points = 1024))]
fn generate_object(family_name: &str, seed: u64, n_points: usize) -> PyResult<String> {
    let o = synthgen::generate_object(family(family_name)?, seed, n_points).map_err(err)?;
    let points: Vec<[f64; 3]> = o.cloud.points().iter().map(|p| [p.x, p.y, p.z]).collect();
    Ok(to_json(&serde_json::json!({
        "id": o.id,
        "family": o.family,
        "seed": o.seed,
        "points": points,
        "labels": o.labels,
        "pose": o.pose,
    })))
}

#[pyfunction]
fn vocabulary(family_name: &str) -> PyResult<Vec<&'static str>> {
    Ok(family(family_name)?.vocabulary().to_vec())
}

#[pyfunction]
fn pca_baseline(points: Vec<[f64; 3]>, phrase: &str) -> PyResult<[f64; 3]> {
    Ok(synthgen::pca_baseline(&cloud(points)?, phrase).map_err(err)?.to_array())
}

/// Angle in degrees between two directions.
#[pyfunction]
fn angular_error(u: [f64; 3], v: [f64; 3]) -> PyResult<f64> {
    Ok(geo::angular_error(&unit(u)?, &unit(v)?))
}

/// Proper rotation (row-major 3x3) best aligning `current[i]` to `target[i]`.
#[pyfunction]
#[pyo3(signature = (current, target, weights = None))]
fn kabsch_rotation(current: Vec<[f64; 3]>, target: Vec<[f64; 3]>, weights: Option<Vec<f64>>) -> PyResult<[f64; 9]> {
    if current.len() != target.len() || weights.as_ref().is_some_and(|w| w.len() != current.len()) {
        return Err(PyValueError::new_err("current, target and weights must have equal lengths"));
    }
    let pairs = current
        .into_iter()
        .zip(target)
        .enumerate()
        .map(|(i, (c, t))| {
            let p = OrientationPair::new(format!("pair{i}"), unit(c)?, unit(t)?);
            match &weights {
                Some(w) => p.weighted(w[i]).map_err(err),
                None => Ok(p),
            }
        })
        .collect::<PyResult<Vec<_>>>()?;
    Ok(align::kabsch_rotation(&pairs).map_err(err)?.to_rows())
}

/// Writes a dataset; returns the manifest as JSON.
#[pyfunction]
#[pyo3(signature = (out_dir, count = 1280, n_points = 1024, val_fraction = 0.2, seed = 0))]
fn generate_dataset(out_dir: &str, count: usize, n_points: usize, val_fraction: f64, seed: u64) -> PyResult<String> {
    let config = DatasetConfig {
        count,
        n_points,
        val_fraction,
        seed,
        ..Default::default()
    };
    Ok(to_json(&synthgen::generate_dataset(&config, Path::new(out_dir)).map_err(err)?))
}

/// Trains on a dataset directory; returns the model and its history JSON.
#[pyfunction]
#[pyo3(signature = (data_dir, model_config = None, train_config = None))]
fn train(data_dir: &str, model_config: Option<&str>, train_config: Option<&str>) -> PyResult<(Model, String)> {
    let model: ModelConfig = match model_config {
        Some(c) => serde_json::from_str(c).map_err(json_err)?,
        None => ModelConfig::default(),
    };
    let config: TrainConfig = match train_config {
        Some(c) => serde_json::from_str(c).map_err(json_err)?,
        None => TrainConfig::default(),
    };
    let data = synthgen::load_dataset(Path::new(data_dir)).map_err(err)?;
    let out = pointso::train(&model, &config, &data).map_err(err)?;
    Ok((Model { params: out.params }, to_json(&out.history)))
}

/// Validation-split accuracy report as JSON.
#[pyfunction]
fn evaluate(model: &Model, data_dir: &str) -> PyResult<String> {
    let data = synthgen::load_dataset(Path::new(data_dir)).map_err(err)?;
    let val: Vec<_> = data.split(synthgen::Split::Val).cloned().collect();
    Ok(to_json(&pointso::evaluate(&model.params, &val, None).map_err(err)?))
}

/// GoalSpec JSON for an instruction.
#[pyfunction]
fn parse_instruction(text: &str) -> PyResult<String> {
    Ok(to_json(&taskdsl::parse_instruction(text).map_err(err)?))
}

/// Canonical text for a GoalSpec JSON.
#[pyfunction]
fn pretty_instruction(goal_json: &str) -> PyResult<String> {
    let goal: taskdsl::GoalSpec = serde_json::from_str(goal_json).map_err(json_err)?;
    goal.validate().map_err(err)?;
    Ok(goal.pretty())
}

/// Scene-graph JSON from `(phrase, points, {part: dir})` triples.
#[pyfunction]
#[allow(clippy::type_complexity)]
fn build_scene_graph(objects: Vec<(String, Vec<[f64; 3]>, Vec<(String, [f64; 3])>)>) -> PyResult<String> {
    let objs = objects
        .into_iter()
        .map(|(phrase, points, parts)| {
            let orientations = parts
                .into_iter()
                .map(|(text, d)| Ok(Orientation { text, dir: unit(d)? }))
                .collect::<PyResult<Vec<_>>>()?;
            Ok(SceneObject {
                phrase,
                cloud: cloud(points)?,
                orientations,
            })
        })
        .collect::<PyResult<Vec<_>>>()?;
    Ok(scenegraph::to_json(&scenegraph::build_graph(&objs).map_err(err)?))
}

#[pyfunction]
fn relation_holds(graph_json: &str, relation: &str, subject: usize, refs: Vec<usize>) -> PyResult<bool> {
    let graph = scenegraph::from_json(graph_json).map_err(err)?;
    let rel: Relation = relation.parse().map_err(err)?;
    scenegraph::relation_holds(&graph, rel, subject, &refs).map_err(err)
}

/// PoseDelta JSON for an instruction in a bench scene file.
#[pyfunction]
#[pyo3(signature = (scene_path, instruction, predictor_spec = "oracle"))]
fn plan(scene_path: &str, instruction: &str, predictor_spec: &str) -> PyResult<String> {
    let goal = taskdsl::parse_instruction(instruction).map_err(err)?;
    let text = std::fs::read_to_string(scene_path).map_err(|e| PyOSError::new_err(e.to_string()))?;
    let scene: SceneSpec = serde_json::from_str(&text).map_err(json_err)?;
    let p = predictor(predictor_spec)?;
    let objects = scene.materialize().map_err(err)?;
    let orientations = objects
        .iter()
        .map(|o| p.orientations(o))
        .collect::<Result<Vec<_>, _>>()
        .map_err(err)?;
    let graph = bench::scene_graph(&objects, orientations).map_err(err)?;
    let resolved = taskdsl::resolve(&goal, &graph).map_err(err)?;
    Ok(to_json(&bench::solve(&resolved, &graph, &Default::default()).map_err(err)?))
}

/// Writes a task suite; returns its statistics as JSON.
#[pyfunction]
#[pyo3(signature = (out_dir, n_tasks = 200, seed = 0, n_points = 1024))]
fn generate_suite(out_dir: &str, n_tasks: usize, seed: u64, n_points: usize) -> PyResult<String> {
    let suite = bench::generate_suite(&SuiteConfig {
        n_tasks,
        seed,
        n_points,
        ..Default::default()
    })
    .map_err(err)?;
    suite.write(Path::new(out_dir)).map_err(err)?;
    Ok(to_json(&suite.stats))
}

/// Runs a suite; writes report files when `out_dir` is given and returns
/// the report JSON.
#[pyfunction]
#[pyo3(signature = (suite_dir, predictor_spec = "oracle", out_dir = None))]
fn run_suite(suite_dir: &str, predictor_spec: &str, out_dir: Option<&str>) -> PyResult<String> {
    let suite = Suite::read(Path::new(suite_dir)).map_err(err)?;
    let report = bench::run_suite(&suite, &predictor(predictor_spec)?).map_err(err)?;
    if let Some(d) = out_dir {
        report.write(Path::new(d)).map_err(err)?;
    }
    Ok(to_json(&report))
}

#[pymodule]
fn _sofarkit(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Model>()?;
    m.add_function(wrap_pyfunction!(generate_object, m)?)?;
    m.add_function(wrap_pyfunction!(vocabulary, m)?)?;
    m.add_function(wrap_pyfunction!(pca_baseline, m)?)?;
    m.add_function(wrap_pyfunction!(angular_error, m)?)?;
    m.add_function(wrap_pyfunction!(kabsch_rotation, m)?)?;
    m.add_function(wrap_pyfunction!(generate_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(parse_instruction, m)?)?;
    m.add_function(wrap_pyfunction!(pretty_instruction, m)?)?;
    m.add_function(wrap_pyfunction!(build_scene_graph, m)?)?;
    m.add_function(wrap_pyfunction!(relation_holds, m)?)?;
    m.add_function(wrap_pyfunction!(plan, m)?)?;
    m.add_function(wrap_pyfunction!(generate_suite, m)?)?;
    m.add_function(wrap_pyfunction!(run_suite, m)?)?;
    Ok(())
}
