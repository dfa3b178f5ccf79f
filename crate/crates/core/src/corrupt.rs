//! Point-cloud corruptions: Gaussian jitter, random rotation, single-view
//! visibility culling, and their composition. Used as evaluation stressors
//! and as training augmentations.

use std::collections::HashMap;
use std::f64::consts::TAU;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::{self, PointCloud, Rotation, UnitVec3, Vec3};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CorruptionKind {
    Jitter,
    Rotate,
    SingleView,
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorruptionSpec {
    pub kind: CorruptionKind,
    pub sigma: f64,
    pub seed: u64,
    pub view_bins: usize,
}

impl CorruptionSpec {
    pub fn new(kind: CorruptionKind, seed: u64) -> Self {
        CorruptionSpec {
            kind,
            sigma: 0.01,
            seed,
            view_bins: 64,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma >= 0.0) {
            return Err(Error::invalid(format!("sigma = {} must be >= 0", self.sigma)));
        }
        if self.view_bins < MIN_VIEW_BINS {
            return Err(Error::invalid(format!(
                "view_bins = {} must be >= {MIN_VIEW_BINS}",
                self.view_bins
            )));
        }
        Ok(())
    }
}

pub const MIN_VIEW_BINS: usize = 8;
pub const MIN_VIEW_POINTS: usize = 16;
const CAMERA_RADIUS: f64 = 2.0;
const DEPTH_TOLERANCE: f64 = 0.02;

/// Adds independent `N(0, sigma^2)` noise to every coordinate.
pub fn jitter(cloud: &PointCloud, sigma: f64, seed: u64) -> Result<PointCloud> {
    if !(sigma >= 0.0) {
        return Err(Error::invalid(format!("sigma = {sigma} must be >= 0")));
    }
    if sigma == 0.0 {
        return Ok(cloud.clone());
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::invalid(e.to_string()))?;
    let mut r = rng::stream("jitter", seed);
    let pts = cloud
        .points()
        .iter()
        .map(|p| {
            let dx = normal.sample(&mut r);
            let dy = normal.sample(&mut r);
            let dz = normal.sample(&mut r);
            p + Vec3::new(dx, dy, dz)
        })
        .collect();
    PointCloud::new(pts)
}

/// Rotates the cloud and its label directions by the same random rotation.
pub fn rotate_with_labels(
    cloud: &PointCloud,
    dirs: &[UnitVec3],
    seed: u64,
) -> (PointCloud, Vec<UnitVec3>, Rotation) {
    rotate_with_labels_by(cloud, dirs, geo::sample_rotation_uniform(seed))
}

/// [`rotate_with_labels`] with an explicit rotation.
pub fn rotate_with_labels_by(
    cloud: &PointCloud,
    dirs: &[UnitVec3],
    r: Rotation,
) -> (PointCloud, Vec<UnitVec3>, Rotation) {
    let dirs = dirs.iter().map(|d| r.rotate(d)).collect();
    (cloud.rotated(&r), dirs, r)
}

/// Indices of points visible from a random camera on the radius-2 sphere.
///
/// Points are binned by their two view angles around the camera-to-centroid
/// axis into `view_bins x view_bins` cells spanning the field of view of the
/// unit ball; a point survives if its depth is within 0.02 of the nearest
/// depth in its cell. Retained indices keep their input order.
pub fn single_view(cloud: &PointCloud, seed: u64, view_bins: usize) -> Result<Vec<usize>> {
    if cloud.len() < MIN_VIEW_POINTS {
        return Err(Error::invalid(format!(
            "single view needs at least {MIN_VIEW_POINTS} points, got {}",
            cloud.len()
        )));
    }
    if view_bins == 0 {
        return Err(Error::invalid("view_bins must be positive"));
    }
    let mut r = rng::stream("single-view", seed);
    let cos_polar: f64 = r.random_range(-1.0..1.0);
    let azimuth: f64 = r.random_range(0.0..TAU);
    let sin_polar = (1.0 - cos_polar * cos_polar).sqrt();
    let dir = Vec3::new(sin_polar * azimuth.cos(), sin_polar * azimuth.sin(), cos_polar);
    let centroid = cloud.centroid();
    let camera = centroid + dir * CAMERA_RADIUS;
    let axis = -dir;
    let helper = if axis.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
    let u = axis.cross(&helper).normalize();
    let v = axis.cross(&u);

    // The unit ball seen from distance 2 subtends +-30 degrees.
    let half_fov = (1.0 / CAMERA_RADIUS).asin() * 1.0001;
    let bin_of = |a: f64| -> usize {
        let t = ((a + half_fov) / (2.0 * half_fov)).clamp(0.0, 1.0 - 1e-12);
        (t * view_bins as f64) as usize
    };
    let cells: Vec<(u64, f64)> = cloud
        .points()
        .iter()
        .map(|p| {
            let w = p - camera;
            let depth = w.dot(&axis);
            let cell = bin_of(w.dot(&u).atan2(depth)) as u64 * view_bins as u64
                + bin_of(w.dot(&v).atan2(depth)) as u64;
            (cell, depth)
        })
        .collect();
    let mut nearest: HashMap<u64, f64> = HashMap::new();
    for &(cell, depth) in &cells {
        let d = nearest.entry(cell).or_insert(f64::INFINITY);
        *d = d.min(depth);
    }
    let kept: Vec<usize> = cells
        .iter()
        .enumerate()
        .filter(|(_, (cell, depth))| *depth <= nearest[cell] + DEPTH_TOLERANCE)
        .map(|(i, _)| i)
        .collect();
    assert!(!kept.is_empty(), "the nearest point of a nonempty cell is always kept");
    Ok(kept)
}

/// Applies single-view culling, then rotation, then jitter, each with its own
/// seed derived from `spec.seed`. Directions change only under the rotation.
pub fn corrupt_all(
    cloud: &PointCloud,
    dirs: &[UnitVec3],
    spec: &CorruptionSpec,
) -> Result<(PointCloud, Vec<UnitVec3>)> {
    let r = geo::sample_rotation_uniform(rng::derive_seed(spec.seed, "corrupt-rotate", 0));
    corrupt_all_with_rotation(cloud, dirs, spec, r)
}

/// [`corrupt_all`] with the rotation step supplied.
pub fn corrupt_all_with_rotation(
    cloud: &PointCloud,
    dirs: &[UnitVec3],
    spec: &CorruptionSpec,
    rotation: Rotation,
) -> Result<(PointCloud, Vec<UnitVec3>)> {
    spec.validate()?;
    let kept = single_view(
        cloud,
        rng::derive_seed(spec.seed, "corrupt-view", 0),
        spec.view_bins,
    )?;
    let partial = cloud.subset(&kept)?;
    let (rotated, dirs, _) = rotate_with_labels_by(&partial, dirs, rotation);
    let noisy = jitter(&rotated, spec.sigma, rng::derive_seed(spec.seed, "corrupt-jitter", 0))?;
    Ok((noisy, dirs))
}

/// Applies the corruption named by `spec.kind`.
pub fn apply(
    cloud: &PointCloud,
    dirs: &[UnitVec3],
    spec: &CorruptionSpec,
) -> Result<(PointCloud, Vec<UnitVec3>)> {
    spec.validate()?;
    match spec.kind {
        CorruptionKind::Jitter => Ok((jitter(cloud, spec.sigma, spec.seed)?, dirs.to_vec())),
        CorruptionKind::Rotate => {
            let (c, d, _) = rotate_with_labels(cloud, dirs, spec.seed);
            Ok((c, d))
        }
        CorruptionKind::SingleView => {
            let kept = single_view(cloud, spec.seed, spec.view_bins)?;
            Ok((cloud.subset(&kept)?, dirs.to_vec()))
        }
        CorruptionKind::All => corrupt_all(cloud, dirs, spec),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::StandardNormal;

    fn sphere_surface(n: usize, seed: u64) -> PointCloud {
        let mut r = rng::stream("sphere-surface", seed);
        PointCloud::new(
            (0..n)
                .map(|_| {
                    let mut g = || -> f64 { StandardNormal.sample(&mut r) };
                    Vec3::new(g(), g(), g()).normalize()
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn jitter_zero_sigma_is_identity() {
        let c = sphere_surface(100, 0);
        assert_eq!(jitter(&c, 0.0, 3).unwrap(), c);
        assert!(jitter(&c, -0.1, 3).is_err());
    }

    #[test]
    fn jitter_deterministic() {
        let c = sphere_surface(100, 0);
        assert_eq!(jitter(&c, 0.01, 3).unwrap(), jitter(&c, 0.01, 3).unwrap());
    }

    #[test]
    fn jitter_sample_std() {
        let c = PointCloud::new(vec![Vec3::zeros(); 100_000]).unwrap();
        let j = jitter(&c, 0.01, 42).unwrap();
        for axis in 0..3 {
            let vals: Vec<f64> = j.points().iter().map(|p| p[axis]).collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (vals.len() - 1) as f64;
            let std = var.sqrt();
            assert!((0.0095..=0.0105).contains(&std), "axis {axis}: {std}");
        }
    }

    #[test]
    fn rotation_is_isometry_on_points_and_labels() {
        let c = sphere_surface(50, 1);
        let dirs = vec![UnitVec3::X, UnitVec3::new(1.0, 2.0, 3.0).unwrap()];
        let (rc, rd, r) = rotate_with_labels(&c, &dirs, 9);
        for (d, e) in dirs.iter().zip(&rd) {
            assert!(geo::angular_error(&r.rotate(d), e) < 1e-9);
        }
        for i in 0..50 {
            for j in 0..50 {
                let a = (c.points()[i] - c.points()[j]).norm();
                let b = (rc.points()[i] - rc.points()[j]).norm();
                assert!((a - b).abs() < 1e-9);
            }
        }
        let (ic, id, _) = rotate_with_labels_by(&c, &dirs, Rotation::identity());
        assert_eq!(ic, c);
        assert_eq!(id, dirs);
    }

    #[test]
    fn single_view_dense_sphere_fraction() {
        let c = sphere_surface(8192, 5);
        for seed in 0..5 {
            let kept = single_view(&c, seed, 64).unwrap();
            let frac = kept.len() as f64 / c.len() as f64;
            eprintln!("seed {seed}: retained {frac:.3}");
            assert!((0.35..=0.65).contains(&frac), "seed {seed}: {frac}");
        }
    }

    #[test]
    fn single_view_indices_are_ordered_subset() {
        let c = sphere_surface(500, 2);
        let kept = single_view(&c, 1, 16).unwrap();
        assert!(kept.windows(2).all(|w| w[0] < w[1]));
        assert!(kept.iter().all(|&i| i < 500));
    }

    #[test]
    fn single_view_minimum_bins_keeps_nearest() {
        let c = sphere_surface(64, 3);
        let kept = single_view(&c, 4, MIN_VIEW_BINS).unwrap();
        assert!(!kept.is_empty());
        assert!(single_view(&sphere_surface(15, 0), 0, 64).is_err());
    }

    #[test]
    fn corrupt_all_degenerate_composition() {
        let c = sphere_surface(300, 7);
        let dirs = vec![UnitVec3::Z];
        let spec = CorruptionSpec {
            kind: CorruptionKind::All,
            sigma: 0.0,
            seed: 1,
            view_bins: 100_000,
        };
        let (out, d) = corrupt_all_with_rotation(&c, &dirs, &spec, Rotation::identity()).unwrap();
        assert_eq!(d, dirs);
        assert!(out.points().iter().all(|p| c.points().contains(p)));
    }

    #[test]
    fn corrupt_all_deterministic_and_unit() {
        let c = sphere_surface(300, 7);
        let dirs = vec![UnitVec3::Z, UnitVec3::X];
        let spec = CorruptionSpec::new(CorruptionKind::All, 11);
        let a = corrupt_all(&c, &dirs, &spec).unwrap();
        let b = corrupt_all(&c, &dirs, &spec).unwrap();
        assert_eq!(a, b);
        assert!(a.1.iter().all(|d| (d.as_vec().norm() - 1.0).abs() < 1e-12));
    }

    #[test]
    fn spec_json_keys() {
        let s = serde_json::to_value(CorruptionSpec::new(CorruptionKind::SingleView, 3)).unwrap();
        assert_eq!(
            s,
            serde_json::json!({"kind": "single-view", "sigma": 0.01, "seed": 3, "view_bins": 64})
        );
    }
}
