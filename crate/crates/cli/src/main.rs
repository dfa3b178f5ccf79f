//! `sofarkit` command-line tool. Results go to stdout (or `--out`) as JSON;
//! logs go to stderr.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};

use sofarkit::bench::{self, Predictor, SceneSpec, Suite, SuiteConfig};
use sofarkit::corrupt::{CorruptionKind, CorruptionSpec};
use sofarkit::pointso::{self, accuracy_at, angular_errors, ModelConfig, TrainConfig};
use sofarkit::scenegraph::{self, Orientation, SceneObject};
use sofarkit::synthgen::{self, generate_dataset, load_dataset, DatasetConfig, Family, Split};
use sofarkit::taskdsl::{parse_instruction, resolve};
use sofarkit::Error;

const EXIT_RUNTIME: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_DATA: u8 = 3;

#[derive(Parser)]
#[command(name = "sofarkit", version, about = "Language-grounded object orientation toolkit")]
struct Cli {
    /// Worker threads for training.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    /// Increase log verbosity (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct SeedArg {
    /// Random seed; overrides SOFARKIT_SEED.
    #[arg(long, env = "SOFARKIT_SEED", default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct OutArg {
    /// Write the JSON result here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainingArgs {
    /// Model configuration JSON (defaults for missing fields).
    #[arg(long)]
    model_config: Option<PathBuf>,
    /// Training configuration JSON (defaults for missing fields).
    #[arg(long)]
    train_config: Option<PathBuf>,
    /// Override the epoch count.
    #[arg(long)]
    epochs: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Corruption {
    None,
    Jitter,
    Rotate,
    SingleView,
    All,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic labeled dataset.
    GenData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1280)]
        count: usize,
        #[arg(long, default_value_t = 1024)]
        points: usize,
        #[arg(long, default_value_t = 0.2)]
        val_fraction: f64,
        #[command(flatten)]
        seed: SeedArg,
    },
    /// Train the orientation regressor.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        training: TrainingArgs,
        /// Model output directory.
        #[arg(long)]
        out: PathBuf,
        /// Training seed; overrides SOFARKIT_SEED and the config file.
        #[arg(long, env = "SOFARKIT_SEED")]
        seed: Option<u64>,
    },
    /// Evaluate a model on the validation split.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "45,30,15,5")]
        thresholds: Vec<f64>,
        #[arg(long, value_enum, default_value = "none")]
        corruption: Corruption,
        #[command(flatten)]
        seed: SeedArg,
        #[command(flatten)]
        out: OutArg,
    },
    /// Train once per fusion mode and compare.
    AblateFusion {
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        training: TrainingArgs,
        #[command(flatten)]
        out: OutArg,
    },
    /// Train on growing subsets of the training split.
    Scaling {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "64,256,1024")]
        data_sizes: Vec<usize>,
        #[command(flatten)]
        training: TrainingArgs,
        #[command(flatten)]
        out: OutArg,
    },
    /// Plan the pose change for one instruction in a scene.
    Plan {
        /// Scene JSON as written by `bench gen`.
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        instruction: String,
        /// oracle, pca or model:PATH.
        #[arg(long, default_value = "oracle")]
        predictor: String,
    },
    /// Benchmark suite generation and evaluation.
    Bench {
        #[command(subcommand)]
        action: BenchAction,
    },
    /// Build a scene graph from a directory of `<phrase>.ply` object clouds.
    Graph {
        #[arg(long)]
        scene_dir: PathBuf,
        /// none, pca or model:PATH; phrases naming a shape family get its vocabulary.
        #[arg(long, default_value = "none")]
        predictor: String,
        #[command(flatten)]
        out: OutArg,
    },
}

#[derive(Subcommand)]
enum BenchAction {
    /// Generate a task suite.
    Gen {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 200)]
        n_tasks: usize,
        #[arg(long, default_value_t = 1024)]
        points: usize,
        #[command(flatten)]
        seed: SeedArg,
    },
    /// Run a suite and write report.json / report.csv.
    Run {
        #[arg(long)]
        suite: PathBuf,
        #[arg(long, default_value = "oracle")]
        predictor: String,
        /// Report directory.
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .target(env_logger::Target::Stderr)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Parse { .. } | Error::Format { .. } | Error::ConfigMismatch(_) | Error::Io { .. } => EXIT_DATA,
        Error::UnknownObject { .. } | Error::Ambiguous { .. } | Error::UnknownPart { .. } => EXIT_DATA,
        _ => EXIT_RUNTIME,
    }
}

fn emit(value: &impl Serialize, out: Option<&Path>) -> Result<(), Error> {
    let text = serde_json::to_string_pretty(value).expect("result serializes") + "\n";
    match out {
        Some(p) => fs::write(p, text).map_err(|e| Error::Io {
            path: p.to_path_buf(),
            source: e,
        }),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, Error> {
    let text = fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    serde_json::from_str(&text).map_err(|e| Error::Format {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

fn configs(args: &TrainingArgs, threads: usize) -> Result<(ModelConfig, TrainConfig), Error> {
    let model = match &args.model_config {
        Some(p) => read_json(p)?,
        None => ModelConfig::default(),
    };
    let mut train: TrainConfig = match &args.train_config {
        Some(p) => read_json(p)?,
        None => TrainConfig::default(),
    };
    if let Some(e) = args.epochs {
        train.epochs = e;
    }
    train.threads = threads;
    Ok((model, train))
}

fn predictor(spec: &str) -> Result<Predictor, Error> {
    match spec {
        "oracle" => Ok(Predictor::Oracle),
        "pca" => Ok(Predictor::Pca),
        _ => match spec.strip_prefix("model:") {
            Some(path) => Ok(Predictor::Model(Box::new(pointso::load_params(Path::new(path), None)?))),
            None => Err(Error::InvalidArgument(format!(
                "unknown predictor {spec:?}; expected oracle, pca or model:PATH"
            ))),
        },
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::GenData {
            out,
            count,
            points,
            val_fraction,
            seed,
        } => {
            let config = DatasetConfig {
                count,
                n_points: points,
                val_fraction,
                seed: seed.seed,
                ..Default::default()
            };
            let m = generate_dataset(&config, &out)?;
            emit(
                &json!({"out": out, "count": m.count, "train": m.train.len(), "val": m.val.len(), "config": m.config}),
                None,
            )
        }
        Command::Train {
            data,
            training,
            out,
            seed,
        } => {
            let (model, mut config) = configs(&training, cli.threads)?;
            if let Some(s) = seed {
                config.seed = s;
            }
            let ds = load_dataset(&data)?;
            let outcome = pointso::train(&model, &config, &ds)?;
            pointso::save_params(&outcome.params, &out)?;
            emit(
                &json!({"model": out, "model_config": model, "train_config": config, "history": outcome.history}),
                None,
            )
        }
        Command::Eval {
            model,
            data,
            thresholds,
            corruption,
            seed,
            out,
        } => {
            let params = pointso::load_params(&model, None)?;
            let ds = load_dataset(&data)?;
            let val: Vec<_> = ds.split(Split::Val).cloned().collect();
            let kind = match corruption {
                Corruption::None => None,
                Corruption::Jitter => Some(CorruptionKind::Jitter),
                Corruption::Rotate => Some(CorruptionKind::Rotate),
                Corruption::SingleView => Some(CorruptionKind::SingleView),
                Corruption::All => Some(CorruptionKind::All),
            };
            let spec = kind.map(|k| CorruptionSpec::new(k, seed.seed));
            let errors = angular_errors(&params, &val, spec.as_ref())?;
            let acc: serde_json::Map<String, Value> = thresholds
                .iter()
                .map(|t| (format!("acc@{t}"), json!(accuracy_at(&errors, *t))))
                .collect();
            let mean = errors.iter().sum::<f64>() / errors.len().max(1) as f64;
            emit(
                &json!({"n": errors.len(), "corruption": spec.map(|s| s.kind), "accuracy": acc, "mean_error_deg": mean}),
                out.out.as_deref(),
            )
        }
        Command::AblateFusion { data, training, out } => {
            let (model, config) = configs(&training, cli.threads)?;
            let ds = load_dataset(&data)?;
            let rows = pointso::fusion_ablation(&model, &config, &ds)?;
            emit(&json!({"train_config": config, "rows": rows}), out.out.as_deref())
        }
        Command::Scaling {
            data,
            data_sizes,
            training,
            out,
        } => {
            let (model, config) = configs(&training, cli.threads)?;
            let ds = load_dataset(&data)?;
            let rows = pointso::scaling_study(&model, &config, &ds, &data_sizes)?;
            let avgs: Vec<f64> = rows.iter().map(|r| r.average).collect();
            emit(
                &json!({"rows": rows, "monotone": pointso::monotone_with_tolerance(&avgs, 0.02)}),
                out.out.as_deref(),
            )
        }
        Command::Plan {
            scene,
            instruction,
            predictor: p,
        } => {
            let goal = parse_instruction(&instruction)?;
            let scene: SceneSpec = read_json(&scene)?;
            let p = predictor(&p)?;
            let objects = scene.materialize()?;
            let orientations = objects.iter().map(|o| p.orientations(o)).collect::<Result<Vec<_>, _>>()?;
            let graph = bench::scene_graph(&objects, orientations)?;
            let resolved = resolve(&goal, &graph)?;
            let delta = bench::solve(&resolved, &graph, &Default::default())?;
            emit(&delta, None)
        }
        Command::Bench { action } => match action {
            BenchAction::Gen {
                out,
                n_tasks,
                points,
                seed,
            } => {
                let suite = bench::generate_suite(&SuiteConfig {
                    n_tasks,
                    seed: seed.seed,
                    n_points: points,
                    ..Default::default()
                })?;
                suite.write(&out)?;
                emit(&json!({"out": out, "stats": suite.stats}), None)
            }
            BenchAction::Run {
                suite,
                predictor: p,
                out,
            } => {
                let suite = Suite::read(&suite)?;
                let report = bench::run_suite(&suite, &predictor(&p)?)?;
                report.write(&out)?;
                emit(&json!({"predictor": report.predictor, "per_track": report.per_track}), None)
            }
        },
        Command::Graph {
            scene_dir,
            predictor: p,
            out,
        } => {
            let p = match p.as_str() {
                "none" => None,
                "oracle" => {
                    return Err(Error::InvalidArgument(
                        "the oracle needs ground truth; use none, pca or model:PATH".into(),
                    ))
                }
                other => Some(predictor(other)?),
            };
            let objects = graph_objects(&scene_dir, p.as_ref())?;
            let graph = scenegraph::build_graph(&objects)?;
            let value: Value = serde_json::from_str(&scenegraph::to_json(&graph)).expect("graph JSON");
            emit(&value, out.out.as_deref())
        }
    }
}

fn graph_objects(dir: &Path, p: Option<&Predictor>) -> Result<Vec<SceneObject>, Error> {
    let io = |e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    };
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io)?
        .map(|e| e.map(|e| e.path()).map_err(io))
        .collect::<Result<_, _>>()?;
    paths.retain(|p| p.extension().is_some_and(|x| x == "ply"));
    paths.sort();
    paths
        .iter()
        .map(|path| {
            let phrase = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
            let cloud = synthgen::ply::read(path)?;
            let family = Family::ALL.iter().find(|f| f.name() == phrase);
            let orientations = match (p, family) {
                (Some(p), Some(f)) => f
                    .vocabulary()
                    .iter()
                    .map(|&text| {
                        let dir = match p {
                            Predictor::Model(m) => pointso::predict(m, &cloud, text)?,
                            _ => synthgen::pca_baseline(&cloud, text)?,
                        };
                        Ok(Orientation {
                            text: text.to_string(),
                            dir,
                        })
                    })
                    .collect::<Result<Vec<_>, Error>>()?,
                _ => Vec::new(),
            };
            Ok(SceneObject {
                phrase,
                cloud,
                orientations,
            })
        })
        .collect()
}
