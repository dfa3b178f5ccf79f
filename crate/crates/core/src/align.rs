//! Rigid-transform planning from pairs of current/target orientations.
//!
//! Rotation comes from the weighted Kabsch-Umeyama solution (SVD of the
//! cross-covariance with determinant correction); translation is the centroid
//! difference. Poses act about the object centroid: rotate about it, then
//! translate.

use nalgebra::{Matrix3, SVD};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::{Rotation, UnitVec3, Vec3};

/// Directions closer than this (in sine of the angle) count as parallel.
const PARALLEL_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct OrientationPair {
    pub phrase: String,
    pub current: UnitVec3,
    pub target: UnitVec3,
    pub weight: f64,
}

impl OrientationPair {
    pub fn new(phrase: impl Into<String>, current: UnitVec3, target: UnitVec3) -> Self {
        OrientationPair {
            phrase: phrase.into(),
            current,
            target,
            weight: 1.0,
        }
    }

    pub fn weighted(mut self, weight: f64) -> Result<Self> {
        if !(weight > 0.0 && weight.is_finite()) {
            return Err(Error::invalid(format!("weight {weight} must be positive")));
        }
        self.weight = weight;
        Ok(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseDelta {
    pub rotation: Rotation,
    #[serde(with = "vec3_array")]
    pub translation: Vec3,
}

impl PoseDelta {
    pub fn identity() -> Self {
        PoseDelta {
            rotation: Rotation::identity(),
            translation: Vec3::zeros(),
        }
    }

    /// Rotates `p` about `pivot`, then translates.
    pub fn apply_about(&self, p: &Vec3, pivot: &Vec3) -> Vec3 {
        self.rotation.apply(&(p - pivot)) + pivot + self.translation
    }
}

pub(crate) mod vec3_array {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use crate::geo::Vec3;

    pub fn serialize<S: Serializer>(v: &Vec3, s: S) -> Result<S::Ok, S::Error> {
        [v.x, v.y, v.z].serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec3, D::Error> {
        let a = <[f64; 3]>::deserialize(d)?;
        Ok(Vec3::new(a[0], a[1], a[2]))
    }
}

/// Shortest-arc rotation taking `u` onto `v`.
///
/// Antipodal inputs turn 180 degrees about the part of +z orthogonal to `u`,
/// or about the part of +x when `u` is (nearly) parallel to z.
pub fn minimal_rotation(u: &UnitVec3, v: &UnitVec3) -> Rotation {
    let cross = u.as_vec().cross(v.as_vec());
    let sin = cross.norm();
    let cos = u.dot(v);
    if sin <= PARALLEL_EPS {
        if cos > 0.0 {
            return Rotation::identity();
        }
        let uz = u.as_vec().z;
        let seed = if uz.abs() > 1.0 - 1e-6 { Vec3::x() } else { Vec3::z() };
        let axis = seed - u.as_vec() * seed.dot(u.as_vec());
        let axis = UnitVec3::normalize(axis).expect("seed axis is not parallel to u");
        return Rotation::from_axis_angle(&axis, std::f64::consts::PI);
    }
    let axis = UnitVec3::normalize(cross).expect("nonzero cross product");
    Rotation::from_axis_angle(&axis, sin.atan2(cos))
}

/// Proper rotation minimizing `sum w_i |R c_i - t_i|^2`.
pub fn kabsch_rotation(pairs: &[OrientationPair]) -> Result<Rotation> {
    let first = pairs
        .first()
        .ok_or_else(|| Error::invalid("kabsch needs at least one orientation pair"))?;
    if pairs.len() == 1 {
        return Ok(minimal_rotation(&first.current, &first.target));
    }
    let axis = *first.current.as_vec();
    let collinear = pairs
        .iter()
        .all(|p| p.current.as_vec().cross(&axis).norm() <= PARALLEL_EPS);
    if collinear {
        // Only the image of the shared axis is constrained; it should point
        // along the weighted, sign-aligned sum of targets.
        let pull = pairs.iter().fold(Vec3::zeros(), |acc, p| {
            acc + p.target.as_vec() * (p.weight * p.current.as_vec().dot(&axis).signum())
        });
        let goal = UnitVec3::normalize(pull).unwrap_or(first.target);
        return Ok(minimal_rotation(&first.current, &goal));
    }
    let mut h = Matrix3::zeros();
    for p in pairs {
        h += p.current.as_vec() * p.target.as_vec().transpose() * p.weight;
    }
    let svd = SVD::new(h, true, true);
    let u = svd.u.expect("requested U");
    let v_t = svd.v_t.expect("requested V^T");
    let v = v_t.transpose();
    let d = (v * u.transpose()).determinant().signum();
    let r = v * Matrix3::from_diagonal(&Vec3::new(1.0, 1.0, d)) * u.transpose();
    Ok(Rotation::from_matrix_unchecked(r))
}

/// Weighted residual `sum w_i |R c_i - t_i|^2`.
pub fn residual(r: &Rotation, pairs: &[OrientationPair]) -> f64 {
    pairs
        .iter()
        .map(|p| p.weight * (r.apply(p.current.as_vec()) - p.target.as_vec()).norm_squared())
        .sum()
}

pub fn plan_pose_delta(
    current_centroid: &Vec3,
    target_centroid: &Vec3,
    pairs: &[OrientationPair],
) -> Result<PoseDelta> {
    let rotation = if pairs.is_empty() {
        Rotation::identity()
    } else {
        kabsch_rotation(pairs)?
    };
    Ok(PoseDelta {
        rotation,
        translation: target_centroid - current_centroid,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::{angular_error, sample_rotation_uniform};
    use crate::rng;
    use rand::Rng as _;

    fn pairs_from(r: &Rotation, dirs: &[UnitVec3]) -> Vec<OrientationPair> {
        dirs.iter()
            .map(|d| OrientationPair::new("p", *d, r.rotate(d)))
            .collect()
    }

    fn random_dir(r: &mut crate::rng::Rng) -> UnitVec3 {
        loop {
            let v = Vec3::new(
                r.random_range(-1.0..1.0),
                r.random_range(-1.0..1.0),
                r.random_range(-1.0..1.0),
            );
            if v.norm() > 0.1 && v.norm() <= 1.0 {
                return UnitVec3::normalize(v).unwrap();
            }
        }
    }

    #[test]
    fn basis_to_itself_is_identity() {
        let r = kabsch_rotation(&pairs_from(
            &Rotation::identity(),
            &[UnitVec3::X, UnitVec3::Y, UnitVec3::Z],
        ))
        .unwrap();
        assert!(r.angle_to(&Rotation::identity()) < 1e-9);
    }

    #[test]
    fn quarter_turn_about_z() {
        let pairs = vec![
            OrientationPair::new("x", UnitVec3::X, UnitVec3::Y),
            OrientationPair::new("y", UnitVec3::Y, UnitVec3::X.neg()),
            OrientationPair::new("z", UnitVec3::Z, UnitVec3::Z),
        ];
        let want = Rotation::from_axis_angle(&UnitVec3::Z, std::f64::consts::FRAC_PI_2);
        assert!(kabsch_rotation(&pairs).unwrap().angle_to(&want) < 1e-9);
    }

    #[test]
    fn empty_pairs_rejected() {
        assert!(kabsch_rotation(&[]).is_err());
    }

    #[test]
    fn minimal_rotation_cases() {
        let id = minimal_rotation(&UnitVec3::X, &UnitVec3::X);
        assert_eq!(id, Rotation::identity());
        let q = minimal_rotation(&UnitVec3::X, &UnitVec3::Y);
        let want = Rotation::from_axis_angle(&UnitVec3::Z, std::f64::consts::FRAC_PI_2);
        assert!(q.angle_to(&want) < 1e-9);
        let flip = minimal_rotation(&UnitVec3::Z, &UnitVec3::Z.neg());
        let want = Rotation::from_axis_angle(&UnitVec3::X, std::f64::consts::PI);
        assert!((flip.matrix() - want.matrix()).abs().max() < 1e-12);
        // Antipodal off-axis: turns about the z component orthogonal to u.
        let u = UnitVec3::X;
        let f = minimal_rotation(&u, &u.neg());
        assert!((f.apply(&Vec3::z()) - Vec3::z()).norm() < 1e-12);
        assert!(angular_error(&f.rotate(&u), &u.neg()) < 1e-9);
    }

    #[test]
    fn minimal_rotation_maps_exactly() {
        let mut r = rng::stream("minrot", 0);
        for _ in 0..1000 {
            let (u, v) = (random_dir(&mut r), random_dir(&mut r));
            let m = minimal_rotation(&u, &v);
            assert!(angular_error(&m.rotate(&u), &v) < 1e-6);
            // Shortest arc: the rotation angle equals the angle between u and v.
            assert!((m.angle_to(&Rotation::identity()) - angular_error(&u, &v)).abs() < 1e-6);
        }
    }

    #[test]
    fn exact_recovery_and_properness() {
        let mut r = rng::stream("kabsch", 1);
        for s in 0..2000 {
            let truth = sample_rotation_uniform(s);
            let dirs = [random_dir(&mut r), random_dir(&mut r)];
            let est = kabsch_rotation(&pairs_from(&truth, &dirs)).unwrap();
            assert!(est.angle_to(&truth) < 1e-6, "trial {s}");
            assert!((est.matrix().determinant() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn reflection_trap_stays_proper() {
        // Antipodal pairs: the unconstrained optimum would be a reflection.
        let pairs = vec![
            OrientationPair::new("a", UnitVec3::X, UnitVec3::X.neg()),
            OrientationPair::new("b", UnitVec3::Y, UnitVec3::Y.neg()),
            OrientationPair::new("c", UnitVec3::Z, UnitVec3::Z.neg()),
        ];
        let r = kabsch_rotation(&pairs).unwrap();
        assert!((r.matrix().determinant() - 1.0).abs() < 1e-9);
        assert!(r.orthogonality_error() < 1e-9);
    }

    #[test]
    fn collinear_currents_use_common_axis() {
        let pairs = vec![
            OrientationPair::new("top", UnitVec3::Z, UnitVec3::X),
            OrientationPair::new("bottom", UnitVec3::Z.neg(), UnitVec3::X.neg()),
        ];
        let r = kabsch_rotation(&pairs).unwrap();
        assert!(residual(&r, &pairs) < 1e-18);
        assert!(r.angle_to(&minimal_rotation(&UnitVec3::Z, &UnitVec3::X)) < 1e-9);
    }

    #[test]
    fn optimal_against_perturbations() {
        let mut r = rng::stream("kabsch-opt", 2);
        for inst in 0..20 {
            let pairs: Vec<OrientationPair> = (0..4)
                .map(|_| {
                    OrientationPair::new("p", random_dir(&mut r), random_dir(&mut r))
                        .weighted(r.random_range(0.5..2.0))
                        .unwrap()
                })
                .collect();
            let best = kabsch_rotation(&pairs).unwrap();
            let f = residual(&best, &pairs);
            for k in 0..1000u64 {
                let axis = random_dir(&mut r);
                let tweak = Rotation::from_axis_angle(&axis, r.random_range(-0.5..0.5));
                let other = tweak.compose(&best);
                assert!(f <= residual(&other, &pairs) + 1e-12, "instance {inst} trial {k}");
            }
        }
    }

    #[test]
    fn pose_delta_cases() {
        let c = Vec3::new(0.1, 0.2, 0.3);
        let d = plan_pose_delta(&c, &c, &[]).unwrap();
        assert_eq!(d, PoseDelta::identity());
        let t = Vec3::new(0.5, 0.0, 0.3);
        let d = plan_pose_delta(&c, &t, &[]).unwrap();
        assert_eq!(d.rotation, Rotation::identity());
        assert!((d.translation - (t - c)).norm() < 1e-15);

        let tilted = OrientationPair::new("cap", UnitVec3::X, UnitVec3::Z);
        let d = plan_pose_delta(&c, &c, &[tilted]).unwrap();
        assert!(angular_error(&d.rotation.rotate(&UnitVec3::X), &UnitVec3::Z) < 1e-9);
    }

    #[test]
    fn pose_delta_json() {
        let d = PoseDelta {
            rotation: Rotation::identity(),
            translation: Vec3::new(1.0, 2.0, 3.0),
        };
        let v = serde_json::to_value(d).unwrap();
        assert_eq!(
            v,
            serde_json::json!({"rotation": [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
                               "translation": [1.0, 2.0, 3.0]})
        );
        let back: PoseDelta = serde_json::from_value(v).unwrap();
        assert_eq!(back, d);
    }

    #[test]
    fn weights_must_be_positive() {
        let p = OrientationPair::new("p", UnitVec3::X, UnitVec3::Y);
        assert!(p.clone().weighted(0.0).is_err());
        assert!(p.weighted(-1.0).is_err());
    }
}
