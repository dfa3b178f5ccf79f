//! On-disk synthetic datasets: one PLY per object plus `annotations.jsonl`.

use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::{PointCloud, UnitVec3};
use crate::rng;

use super::{generate_object, ply, Family};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    pub families: Vec<Family>,
    pub count: usize,
    pub n_points: usize,
    pub val_fraction: f64,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            families: Family::ALL.to_vec(),
            count: 1280,
            n_points: 1024,
            val_fraction: 0.2,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    #[serde(skip)]
    pub root: PathBuf,
    pub count: usize,
    pub config: DatasetConfig,
    pub train: Vec<String>,
    pub val: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct PhraseRecord {
    text: String,
    dir: UnitVec3,
}

#[derive(Debug, Serialize, Deserialize)]
struct Annotation {
    id: String,
    family: Family,
    n_points: usize,
    split: Split,
    phrases: Vec<PhraseRecord>,
}

/// An object as seen by training: cloud and labels, no generation internals.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledObject {
    pub id: String,
    pub family: Family,
    pub split: Split,
    pub cloud: PointCloud,
    pub labels: Vec<(String, UnitVec3)>,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub objects: Vec<LabeledObject>,
}

impl Dataset {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &LabeledObject> {
        self.objects.iter().filter(move |o| o.split == split)
    }

    /// Keeps the first `n` training objects (in id order) and all validation objects.
    pub fn with_train_limit(&self, n: usize) -> Dataset {
        let keep: Vec<String> = self.manifest.train.iter().take(n).cloned().collect();
        let objects = self
            .objects
            .iter()
            .filter(|o| o.split == Split::Val || keep.contains(&o.id))
            .cloned()
            .collect();
        let mut manifest = self.manifest.clone();
        manifest.train = keep;
        Dataset { manifest, objects }
    }
}

fn object_id(family: Family, index: usize) -> String {
    format!("{}-{index:05}", family.name())
}

/// Validation ids: the `round(count * val_fraction)` ids with the smallest
/// mixed FNV-1a hash. Depends only on the id set, not on generation order.
/// Raw FNV-1a orders ids sharing a prefix in clumps, hence the mixing.
fn assign_splits(ids: &[String], val_fraction: f64) -> (Vec<String>, Vec<String>) {
    let n_val = (ids.len() as f64 * val_fraction).round() as usize;
    let mut ranked: Vec<&String> = ids.iter().collect();
    ranked.sort_by_key(|id| (rng::derive_seed(0, "split", rng::fnv1a64(id.as_bytes())), (*id).clone()));
    let mut val: Vec<String> = ranked[..n_val].iter().map(|s| (*s).clone()).collect();
    let mut train: Vec<String> = ranked[n_val..].iter().map(|s| (*s).clone()).collect();
    val.sort();
    train.sort();
    (train, val)
}

fn validate(config: &DatasetConfig) -> Result<()> {
    if config.count < 8 {
        return Err(Error::invalid(format!("count = {} must be at least 8", config.count)));
    }
    if config.families.is_empty() {
        return Err(Error::invalid("no families selected"));
    }
    if !(0.0..1.0).contains(&config.val_fraction) {
        return Err(Error::invalid("val_fraction must be in [0, 1)"));
    }
    Ok(())
}

/// Writes `objects/<id>.ply`, `annotations.jsonl` and `manifest.json` under `out_dir`.
pub fn generate_dataset(config: &DatasetConfig, out_dir: &Path) -> Result<DatasetManifest> {
    validate(config)?;
    let obj_dir = out_dir.join("objects");
    fs::create_dir_all(&obj_dir).map_err(|e| Error::io(&obj_dir, e))?;

    let ids: Vec<String> = (0..config.count)
        .map(|i| object_id(config.families[i % config.families.len()], i))
        .collect();
    let (train, val) = assign_splits(&ids, config.val_fraction);

    let mut annotations = String::new();
    for (i, id) in ids.iter().enumerate() {
        let family = config.families[i % config.families.len()];
        let obj = generate_object(family, rng::derive_seed(config.seed, "object", i as u64), config.n_points)?;
        ply::write(&obj_dir.join(format!("{id}.ply")), &obj.cloud)?;
        let split = if val.binary_search(id).is_ok() { Split::Val } else { Split::Train };
        let ann = Annotation {
            id: id.clone(),
            family,
            n_points: config.n_points,
            split,
            phrases: obj
                .labels
                .iter()
                .map(|(t, d)| PhraseRecord { text: t.clone(), dir: *d })
                .collect(),
        };
        annotations.push_str(&serde_json::to_string(&ann).expect("annotation serializes"));
        annotations.push('\n');
    }
    let ann_path = out_dir.join("annotations.jsonl");
    fs::write(&ann_path, annotations).map_err(|e| Error::io(&ann_path, e))?;

    let manifest = DatasetManifest {
        root: out_dir.to_path_buf(),
        count: config.count,
        config: config.clone(),
        train,
        val,
    };
    let man_path = out_dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&man_path, text + "\n").map_err(|e| Error::io(&man_path, e))?;
    Ok(manifest)
}

pub fn load_dataset(root: &Path) -> Result<Dataset> {
    let man_path = root.join("manifest.json");
    let text = fs::read_to_string(&man_path).map_err(|e| Error::io(&man_path, e))?;
    let mut manifest: DatasetManifest = serde_json::from_str(&text)
        .map_err(|e| Error::format(man_path.display().to_string(), e.to_string()))?;
    manifest.root = root.to_path_buf();

    let ann_path = root.join("annotations.jsonl");
    let file = fs::File::open(&ann_path).map_err(|e| Error::io(&ann_path, e))?;
    let mut objects = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(&ann_path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let ann: Annotation = serde_json::from_str(&line).map_err(|e| {
            Error::format(format!("{}:{}", ann_path.display(), lineno + 1), e.to_string())
        })?;
        let cloud = ply::read(&root.join("objects").join(format!("{}.ply", ann.id)))?;
        if cloud.len() != ann.n_points {
            return Err(Error::format(
                format!("{}:{}", ann_path.display(), lineno + 1),
                format!("n_points {} but PLY has {}", ann.n_points, cloud.len()),
            ));
        }
        objects.push(LabeledObject {
            id: ann.id,
            family: ann.family,
            split: ann.split,
            cloud,
            labels: ann.phrases.into_iter().map(|p| (p.text, p.dir)).collect(),
        });
    }
    Ok(Dataset { manifest, objects })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(count: usize) -> DatasetConfig {
        DatasetConfig {
            count,
            n_points: 256,
            val_fraction: 0.25,
            ..DatasetConfig::default()
        }
    }

    #[test]
    fn split_sizes_and_disjointness() {
        let dir = tempfile::tempdir().unwrap();
        let m = generate_dataset(&small(64), dir.path()).unwrap();
        assert!((m.val.len() as i64 - 16).abs() <= 1);
        assert!((m.train.len() as i64 - 48).abs() <= 1);
        assert!(m.train.iter().all(|t| !m.val.contains(t)));
        assert_eq!(m.train.len() + m.val.len(), 64);
    }

    #[test]
    fn val_split_covers_every_family() {
        let ids: Vec<String> = (0..1280).map(|i| object_id(Family::ALL[i % 6], i)).collect();
        let (_, val) = assign_splits(&ids, 0.2);
        for f in Family::ALL {
            let n = val.iter().filter(|v| v.starts_with(f.name())).count();
            assert!((25..=60).contains(&n), "{f:?}: {n}");
        }
    }

    #[test]
    fn regeneration_is_byte_identical() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        generate_dataset(&small(12), a.path()).unwrap();
        generate_dataset(&small(12), b.path()).unwrap();
        for name in ["annotations.jsonl", "manifest.json", "objects/mug-00001.ply"] {
            assert_eq!(
                fs::read(a.path().join(name)).unwrap(),
                fs::read(b.path().join(name)).unwrap(),
                "{name}"
            );
        }
    }

    #[test]
    fn load_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let m = generate_dataset(&small(12), dir.path()).unwrap();
        let d = load_dataset(dir.path()).unwrap();
        assert_eq!(d.manifest, m);
        assert_eq!(d.objects.len(), 12);
        let first = &d.objects[0];
        let regen = generate_object(Family::Arrow, rng::derive_seed(0, "object", 0), 256).unwrap();
        assert_eq!(first.cloud, regen.cloud);
        assert_eq!(first.labels, regen.labels);
    }

    #[test]
    fn annotation_line_schema() {
        let dir = tempfile::tempdir().unwrap();
        generate_dataset(&small(8), dir.path()).unwrap();
        let text = fs::read_to_string(dir.path().join("annotations.jsonl")).unwrap();
        let v: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        let keys: Vec<&str> = v.as_object().unwrap().keys().map(|k| k.as_str()).collect();
        for k in ["id", "family", "n_points", "split", "phrases"] {
            assert!(keys.contains(&k));
        }
        assert_eq!(v["phrases"][0]["dir"].as_array().unwrap().len(), 3);
        assert!(matches!(v["split"].as_str(), Some("train" | "val")));
    }

    #[test]
    fn too_small_count_rejected() {
        let dir = tempfile::tempdir().unwrap();
        assert!(generate_dataset(&small(4), dir.path()).is_err());
    }
}
