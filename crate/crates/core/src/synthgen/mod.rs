//! Procedural objects with analytically known semantic orientations, plus the
//! analytic oracle and a PCA baseline predictor.

mod dataset;
pub mod ply;
mod shapes;

use std::fmt;
use std::str::FromStr;

use nalgebra::{Matrix3, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::{self, normalize_unit_sphere, PointCloud, Rotation, UnitVec3, Vec3};
use crate::rng;
use crate::textenc::normalize_phrase;

pub use dataset::{
    generate_dataset, load_dataset, Dataset, DatasetConfig, DatasetManifest, LabeledObject, Split,
};

pub const MIN_POINTS: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Arrow,
    Mug,
    Bottle,
    Knife,
    Cone,
    Plug,
}

impl Family {
    pub const ALL: [Family; 6] = [
        Family::Arrow,
        Family::Mug,
        Family::Bottle,
        Family::Knife,
        Family::Cone,
        Family::Plug,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Family::Arrow => "arrow",
            Family::Mug => "mug",
            Family::Bottle => "bottle",
            Family::Knife => "knife",
            Family::Cone => "cone",
            Family::Plug => "plug",
        }
    }

    /// Phrases every instance of this family is labelled with.
    pub fn vocabulary(self) -> &'static [&'static str] {
        match self {
            Family::Arrow => &["pointing direction", "tail", "top"],
            Family::Mug => &["top", "opening", "handle", "pour out"],
            Family::Bottle => &["cap", "bottom", "upright direction", "top"],
            Family::Knife => &["blade", "handle", "cutting direction"],
            Family::Cone => &["tip", "top", "base"],
            Family::Plug => &["plug-in", "top", "cable"],
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Family::ALL
            .into_iter()
            .find(|f| f.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::invalid(format!("unknown family {s:?}")))
    }
}

/// A generated object: normalized cloud plus labelled directions in its posed frame.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthObject {
    pub id: String,
    pub family: Family,
    pub cloud: PointCloud,
    pub labels: Vec<(String, UnitVec3)>,
    pub canonical: Vec<(String, UnitVec3)>,
    pub pose: Rotation,
    pub seed: u64,
}

impl SynthObject {
    /// The same object rotated by `r` about the origin (its centroid).
    pub fn rotated(&self, r: &Rotation) -> SynthObject {
        let pose = r.compose(&self.pose);
        SynthObject {
            id: self.id.clone(),
            family: self.family,
            cloud: self.cloud.rotated(r),
            labels: self
                .canonical
                .iter()
                .map(|(p, d)| (p.clone(), pose.rotate(d)))
                .collect(),
            canonical: self.canonical.clone(),
            pose,
            seed: self.seed,
        }
    }

    pub fn phrases(&self) -> impl Iterator<Item = &str> {
        self.labels.iter().map(|(p, _)| p.as_str())
    }
}

pub fn generate_object(family: Family, seed: u64, n_points: usize) -> Result<SynthObject> {
    let pose = geo::sample_rotation_uniform(rng::derive_seed(seed, "pose", 0));
    generate_object_with_pose(family, seed, n_points, pose)
}

/// [`generate_object`] with the pose supplied instead of sampled.
pub fn generate_object_with_pose(
    family: Family,
    seed: u64,
    n_points: usize,
    pose: Rotation,
) -> Result<SynthObject> {
    if n_points < MIN_POINTS {
        return Err(Error::invalid(format!(
            "n_points = {n_points} is below the minimum of {MIN_POINTS}"
        )));
    }
    let mut r = rng::stream("shape", seed);
    let shape = shapes::build(family, &mut r);
    let raw = PointCloud::new(shape.sample_points(n_points, &mut r))?;
    let cloud = normalize_unit_sphere(&raw.rotated(&pose))?.cloud;
    let labels = shape
        .labels
        .iter()
        .map(|(p, d)| (p.clone(), pose.rotate(d)))
        .collect();
    Ok(SynthObject {
        id: format!("{}-{seed:016x}", family.name()),
        family,
        cloud,
        labels,
        canonical: shape.labels,
        pose,
        seed,
    })
}

/// Ground-truth direction for `phrase`: the posed canonical direction.
pub fn oracle_orientation(obj: &SynthObject, phrase: &str) -> Result<UnitVec3> {
    let want = normalize_phrase(phrase);
    obj.canonical
        .iter()
        .find(|(p, _)| *p == want)
        .map(|(_, d)| obj.pose.rotate(d))
        .ok_or_else(|| Error::UnknownPhrase {
            family: obj.family.name().into(),
            phrase: want,
        })
}

fn is_up_phrase(phrase: &str) -> bool {
    matches!(phrase, "top" | "up" | "upright direction")
}

/// Relative eigenvalue gap below which principal axes count as tied.
const EIGEN_TIE: f64 = 0.05;

/// Principal-axis guess for `phrase`.
///
/// Up-like phrases take the sign whose half-space holds fewer points (the
/// heavier end is assumed to be the base); other phrases make the largest
/// component positive. When the leading eigenvalues tie, the axis is the
/// direction in the tied eigenspace closest to +z.
pub fn pca_baseline(cloud: &PointCloud, phrase: &str) -> Result<UnitVec3> {
    let c = cloud.centroid();
    let mut cov = Matrix3::zeros();
    for p in cloud.points() {
        let d = p - c;
        cov += d * d.transpose();
    }
    cov /= cloud.len() as f64;
    if cov.trace() <= 1e-12 {
        return Err(Error::DegenerateGeometry("covariance is numerically zero".into()));
    }
    let eig = SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let top = eig.eigenvalues[order[0]];
    let tied: Vec<Vec3> = order
        .iter()
        .filter(|&&i| eig.eigenvalues[i] >= top * (1.0 - EIGEN_TIE))
        .map(|&i| eig.eigenvectors.column(i).into_owned())
        .collect();
    let mut axis = if tied.len() > 1 {
        let z = Vec3::z();
        let proj = tied.iter().fold(Vec3::zeros(), |acc, e| acc + e * e.dot(&z));
        if proj.norm() > 1e-9 {
            proj.normalize()
        } else {
            tied[0]
        }
    } else {
        tied[0]
    };
    if is_up_phrase(&normalize_phrase(phrase)) {
        let (above, below) = cloud.points().iter().fold((0usize, 0usize), |(a, b), p| {
            let s = (p - c).dot(&axis);
            (a + usize::from(s > 0.0), b + usize::from(s < 0.0))
        });
        if above > below {
            axis = -axis;
        }
    } else {
        let k = axis.iamax();
        if axis[k] < 0.0 {
            axis = -axis;
        }
    }
    UnitVec3::normalize(axis)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::angular_error;
    use rand::Rng as _;

    #[test]
    fn arrow_identity_pose_points_up() {
        let o = generate_object_with_pose(Family::Arrow, 1, 512, Rotation::identity()).unwrap();
        assert_eq!(oracle_orientation(&o, "pointing direction").unwrap(), UnitVec3::Z);
    }

    #[test]
    fn point_count_exact() {
        let o = generate_object(Family::Mug, 5, 4096).unwrap();
        assert_eq!(o.cloud.len(), 4096);
        assert!(generate_object(Family::Mug, 5, 100).is_err());
    }

    #[test]
    fn mug_handle_orthogonal_to_top() {
        for seed in 0..20 {
            let o = generate_object_with_pose(Family::Mug, seed, 512, Rotation::identity()).unwrap();
            let h = oracle_orientation(&o, "handle").unwrap();
            let t = oracle_orientation(&o, "top").unwrap();
            assert!(h.dot(&t).abs() < 1e-9);
            // The handle really is on that side: the far points lean toward it.
            let far = o.cloud.points().iter().map(|p| p.dot(h.as_vec())).fold(f64::MIN, f64::max);
            let near = o.cloud.points().iter().map(|p| -p.dot(h.as_vec())).fold(f64::MIN, f64::max);
            assert!(far > near, "seed {seed}");
        }
    }

    #[test]
    fn oracle_cases() {
        let b = generate_object_with_pose(Family::Bottle, 2, 512, Rotation::identity()).unwrap();
        assert_eq!(oracle_orientation(&b, "cap").unwrap(), UnitVec3::Z);
        let rz = Rotation::from_axis_angle(&UnitVec3::Z, 90f64.to_radians());
        let p = generate_object_with_pose(Family::Plug, 2, 512, rz).unwrap();
        let d = oracle_orientation(&p, "plug-in").unwrap();
        assert!((d.as_vec() - Vec3::new(-1.0, 0.0, 0.0)).norm() < 1e-12);
        let c = generate_object(Family::Cone, 2, 512).unwrap();
        assert!(matches!(
            oracle_orientation(&c, "handle"),
            Err(Error::UnknownPhrase { .. })
        ));
    }

    #[test]
    fn labels_consistent_with_pose() {
        for fam in Family::ALL {
            for seed in 0..5 {
                let o = generate_object(fam, seed, 256).unwrap();
                assert!(o.labels.len() >= 3);
                for ((p, d), (q, c)) in o.labels.iter().zip(&o.canonical) {
                    assert_eq!(p, q);
                    assert!((d.as_vec() - o.pose.apply(c.as_vec())).norm() < 1e-9);
                    assert!((d.as_vec().norm() - 1.0).abs() < 1e-9);
                }
                let c = o.cloud.centroid();
                assert!(c.norm() < 1e-9);
            }
        }
    }

    #[test]
    fn oracle_equivariance() {
        for fam in Family::ALL {
            let o = generate_object(fam, 11, 256).unwrap();
            for s in 0..10 {
                let r = geo::sample_rotation_uniform(s);
                let ro = o.rotated(&r);
                for p in fam.vocabulary() {
                    let a = oracle_orientation(&ro, p).unwrap();
                    let b = r.rotate(&oracle_orientation(&o, p).unwrap());
                    assert!((a.as_vec() - b.as_vec()).norm() < 1e-9);
                }
            }
        }
    }

    fn cylinder(axis: &Rotation, seed: u64) -> PointCloud {
        let mut r = rng::stream("cyl", seed);
        // Radius 0.25, length 2: aspect 4:1.
        PointCloud::new(
            (0..4000)
                .map(|_| {
                    let th = r.random_range(0.0..std::f64::consts::TAU);
                    let p = Vec3::new(0.25 * th.cos(), 0.25 * th.sin(), r.random_range(-1.0..1.0));
                    axis.apply(&p)
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn pca_recovers_cylinder_axis() {
        // Axis variance 1/3 vs radial 1/32: the principal axis is unambiguous.
        let c = cylinder(&Rotation::identity(), 0);
        let a = pca_baseline(&c, "blade").unwrap();
        assert!(angular_error(&a, &UnitVec3::Z).min(angular_error(&a, &UnitVec3::Z.neg())) < 5.0);
    }

    #[test]
    fn pca_rotates_with_cloud() {
        let base = pca_baseline(&cylinder(&Rotation::identity(), 1), "handle").unwrap();
        for s in 0..10 {
            let r = geo::sample_rotation_uniform(s);
            let out = pca_baseline(&cylinder(&r, 1), "handle").unwrap();
            let want = r.rotate(&base);
            let err = angular_error(&out, &want).min(angular_error(&out, &want.neg()));
            assert!(err < 5.0, "seed {s}: {err}");
        }
    }

    #[test]
    fn pca_sphere_tie_goes_to_z() {
        use rand_distr::{Distribution, StandardNormal};
        let mut r = rng::stream("sphere", 3);
        let pts = (0..20000)
            .map(|_| {
                let mut g = || -> f64 { StandardNormal.sample(&mut r) };
                Vec3::new(g(), g(), g()).normalize()
            })
            .collect();
        let a = pca_baseline(&PointCloud::new(pts).unwrap(), "tip").unwrap();
        assert!(angular_error(&a, &UnitVec3::Z) < 1e-6);
    }

    #[test]
    fn pca_up_sign_points_away_from_heavy_base() {
        let o = generate_object_with_pose(Family::Cone, 4, 2048, Rotation::identity()).unwrap();
        let a = pca_baseline(&o.cloud, "top").unwrap();
        assert!(a.dot(&UnitVec3::Z) > 0.0);
    }

    #[test]
    fn pca_degenerate() {
        let c = PointCloud::new(vec![Vec3::new(1.0, 1.0, 1.0); 5]).unwrap();
        assert!(matches!(pca_baseline(&c, "top"), Err(Error::DegenerateGeometry(_))));
    }
}
