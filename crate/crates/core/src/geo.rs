//! Point-cloud and rotation primitives.
//!
//! Angles cross public interfaces in degrees; everything internal is radians.

use std::cmp::Ordering;
use std::f64::consts::PI;

use nalgebra::{Matrix3, Vector3};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

pub type Vec3 = Vector3<f64>;

const UNIT_TOL: f64 = 1e-9;

/// A direction on the unit sphere.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 3]", into = "[f64; 3]")]
pub struct UnitVec3(Vec3);

impl UnitVec3 {
    pub const X: UnitVec3 = UnitVec3(Vector3::new(1.0, 0.0, 0.0));
    pub const Y: UnitVec3 = UnitVec3(Vector3::new(0.0, 1.0, 0.0));
    pub const Z: UnitVec3 = UnitVec3(Vector3::new(0.0, 0.0, 1.0));

    /// Normalizes `v`. Fails on non-finite or (near) zero input.
    pub fn normalize(v: Vec3) -> Result<Self> {
        if !v.iter().all(|c| c.is_finite()) {
            return Err(Error::invalid(format!("non-finite direction {v:?}")));
        }
        let n = v.norm();
        if n <= 1e-12 {
            return Err(Error::invalid("cannot normalize a zero vector"));
        }
        Ok(UnitVec3(v / n))
    }

    /// Accepts `v` only if it is already unit length.
    pub fn from_unit(v: Vec3) -> Result<Self> {
        if !v.iter().all(|c| c.is_finite()) || (v.norm() - 1.0).abs() > UNIT_TOL {
            return Err(Error::invalid(format!("not a unit vector: {v:?}")));
        }
        Ok(UnitVec3(v))
    }

    pub fn new(x: f64, y: f64, z: f64) -> Result<Self> {
        Self::normalize(Vec3::new(x, y, z))
    }

    pub fn as_vec(&self) -> &Vec3 {
        &self.0
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.0.x, self.0.y, self.0.z]
    }

    pub fn dot(&self, other: &UnitVec3) -> f64 {
        self.0.dot(&other.0)
    }

    pub fn neg(self) -> UnitVec3 {
        UnitVec3(-self.0)
    }
}

impl TryFrom<[f64; 3]> for UnitVec3 {
    type Error = Error;
    /// Values already unit length to a few ulps are kept bit-exact so that
    /// serialized directions round-trip; others within 1e-6 are renormalized.
    fn try_from(a: [f64; 3]) -> Result<Self> {
        let v = Vec3::new(a[0], a[1], a[2]);
        let off = (v.norm() - 1.0).abs();
        if !v.iter().all(|c| c.is_finite()) || off > 1e-6 {
            return Err(Error::invalid(format!("not a unit vector: {a:?}")));
        }
        if off <= 4.0 * f64::EPSILON {
            Ok(UnitVec3(v))
        } else {
            Self::normalize(v)
        }
    }
}

impl From<UnitVec3> for [f64; 3] {
    fn from(u: UnitVec3) -> Self {
        u.to_array()
    }
}

/// A proper rotation (orthonormal, det = +1).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 9]", into = "[f64; 9]")]
pub struct Rotation(Matrix3<f64>);

impl Rotation {
    pub fn identity() -> Self {
        Rotation(Matrix3::identity())
    }

    /// Validates orthonormality and orientation within 1e-9.
    pub fn from_matrix(m: Matrix3<f64>) -> Result<Self> {
        if !m.iter().all(|c| c.is_finite()) {
            return Err(Error::invalid("non-finite rotation matrix"));
        }
        let err = (m.transpose() * m - Matrix3::identity()).abs().max();
        if err >= 1e-9 || (m.determinant() - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!(
                "not a proper rotation (orthogonality error {err:e}, det {})",
                m.determinant()
            )));
        }
        Ok(Rotation(m))
    }

    /// Wraps a matrix known to be a rotation up to rounding.
    pub(crate) fn from_matrix_unchecked(m: Matrix3<f64>) -> Self {
        debug_assert!((m.determinant() - 1.0).abs() < 1e-6);
        Rotation(m)
    }

    pub fn from_rows(r: [f64; 9]) -> Result<Self> {
        Self::from_matrix(Matrix3::from_row_slice(&r))
    }

    pub fn from_axis_angle(axis: &UnitVec3, angle_rad: f64) -> Self {
        let a = nalgebra::Unit::new_unchecked(*axis.as_vec());
        Rotation(*nalgebra::Rotation3::from_axis_angle(&a, angle_rad).matrix())
    }

    /// Intrinsic z-y-x Euler composition: `Rz(yaw) * Ry(pitch) * Rx(roll)`.
    pub fn from_euler_zyx(yaw: f64, pitch: f64, roll: f64) -> Self {
        let (sa, ca) = yaw.sin_cos();
        let (sb, cb) = pitch.sin_cos();
        let (sc, cc) = roll.sin_cos();
        let rz = Matrix3::new(ca, -sa, 0.0, sa, ca, 0.0, 0.0, 0.0, 1.0);
        let ry = Matrix3::new(cb, 0.0, sb, 0.0, 1.0, 0.0, -sb, 0.0, cb);
        let rx = Matrix3::new(1.0, 0.0, 0.0, 0.0, cc, -sc, 0.0, sc, cc);
        Rotation(rz * ry * rx)
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn to_rows(&self) -> [f64; 9] {
        let m = &self.0;
        [
            m[(0, 0)], m[(0, 1)], m[(0, 2)],
            m[(1, 0)], m[(1, 1)], m[(1, 2)],
            m[(2, 0)], m[(2, 1)], m[(2, 2)],
        ]
    }

    pub fn apply(&self, v: &Vec3) -> Vec3 {
        self.0 * v
    }

    pub fn rotate(&self, u: &UnitVec3) -> UnitVec3 {
        let v = self.0 * u.0;
        // Renormalize to keep the invariant exact after rounding.
        UnitVec3(v / v.norm())
    }

    /// `self` after `other`, i.e. `self * other`.
    pub fn compose(&self, other: &Rotation) -> Rotation {
        Rotation(self.0 * other.0)
    }

    pub fn inverse(&self) -> Rotation {
        Rotation(self.0.transpose())
    }

    /// Geodesic distance to `other`, in degrees.
    pub fn angle_to(&self, other: &Rotation) -> f64 {
        let rel = self.0.transpose() * other.0;
        let c = ((rel.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
        // acos loses precision near 0; use the skew part as well.
        let s = Vec3::new(
            rel[(2, 1)] - rel[(1, 2)],
            rel[(0, 2)] - rel[(2, 0)],
            rel[(1, 0)] - rel[(0, 1)],
        )
        .norm()
            / 2.0;
        s.atan2(c).to_degrees()
    }

    pub fn orthogonality_error(&self) -> f64 {
        (self.0.transpose() * self.0 - Matrix3::identity()).abs().max()
    }
}

impl TryFrom<[f64; 9]> for Rotation {
    type Error = Error;
    fn try_from(r: [f64; 9]) -> Result<Self> {
        let m = Matrix3::from_row_slice(&r);
        // Decimal round trips are exact, but hand-written files may not be.
        let err = (m.transpose() * m - Matrix3::identity()).abs().max();
        if err > 1e-6 || (m.determinant() - 1.0).abs() > 1e-6 {
            return Err(Error::invalid("not a proper rotation"));
        }
        Ok(Rotation(m))
    }
}

impl From<Rotation> for [f64; 9] {
    fn from(r: Rotation) -> Self {
        r.to_rows()
    }
}

/// An ordered, nonempty set of finite 3D points.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    points: Vec<Vec3>,
}

impl PointCloud {
    pub fn new(points: Vec<Vec3>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::invalid("point cloud must contain at least one point"));
        }
        if let Some(i) = points.iter().position(|p| !p.iter().all(|c| c.is_finite())) {
            return Err(Error::invalid(format!("point {i} is not finite")));
        }
        Ok(PointCloud { points })
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    pub fn into_points(self) -> Vec<Vec3> {
        self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn centroid(&self) -> Vec3 {
        let sum = self.points.iter().fold(Vec3::zeros(), |acc, p| acc + p);
        sum / self.points.len() as f64
    }

    /// Axis-aligned `(min, max)` corners.
    pub fn aabb(&self) -> (Vec3, Vec3) {
        let mut lo = self.points[0];
        let mut hi = self.points[0];
        for p in &self.points[1..] {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        (lo, hi)
    }

    pub fn rotated(&self, r: &Rotation) -> PointCloud {
        PointCloud {
            points: self.points.iter().map(|p| r.apply(p)).collect(),
        }
    }

    /// Rotates about `pivot` then translates by `t`.
    pub fn transformed_about(&self, r: &Rotation, pivot: &Vec3, t: &Vec3) -> PointCloud {
        PointCloud {
            points: self
                .points
                .iter()
                .map(|p| r.apply(&(p - pivot)) + pivot + t)
                .collect(),
        }
    }

    pub fn map(&self, f: impl Fn(&Vec3) -> Vec3) -> PointCloud {
        PointCloud {
            points: self.points.iter().map(f).collect(),
        }
    }

    /// Points at `indices`, in the given order. Indices must be in range.
    pub fn subset(&self, indices: &[usize]) -> Result<PointCloud> {
        let pts = indices
            .iter()
            .map(|&i| {
                self.points
                    .get(i)
                    .copied()
                    .ok_or_else(|| Error::invalid(format!("index {i} out of range")))
            })
            .collect::<Result<Vec<_>>>()?;
        PointCloud::new(pts)
    }
}

/// Orders by squared distance, then by index.
fn by_dist_then_index(a: &(f64, usize), b: &(f64, usize)) -> Ordering {
    a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
}

/// Farthest point sampling.
///
/// Starts at the point farthest from the centroid; each next pick maximizes
/// the distance to the already-selected set. Ties go to the lowest index.
pub fn fps_sample(cloud: &PointCloud, k: usize) -> Result<Vec<usize>> {
    let n = cloud.len();
    if k == 0 || k > n {
        return Err(Error::invalid(format!("fps: k = {k} must be in 1..={n}")));
    }
    let pts = cloud.points();
    let c = cloud.centroid();
    let mut first = 0;
    let mut best = -1.0;
    for (i, p) in pts.iter().enumerate() {
        let d = (p - c).norm_squared();
        if d > best {
            best = d;
            first = i;
        }
    }
    let mut selected = Vec::with_capacity(k);
    selected.push(first);
    let mut min_d: Vec<f64> = pts.iter().map(|p| (p - pts[first]).norm_squared()).collect();
    min_d[first] = -1.0;
    while selected.len() < k {
        let mut next = usize::MAX;
        let mut best = -1.0;
        for (i, &d) in min_d.iter().enumerate() {
            if d > best {
                best = d;
                next = i;
            }
        }
        selected.push(next);
        let q = pts[next];
        for (d, p) in min_d.iter_mut().zip(pts) {
            let nd = (p - q).norm_squared();
            if nd < *d {
                *d = nd;
            }
        }
        // Selected points sit at distance 0; keep them out of later picks.
        min_d[next] = -1.0;
    }
    Ok(selected)
}

/// The `k` nearest points to each center (center included), nearest first.
pub fn knn_group(cloud: &PointCloud, centers: &[usize], k: usize) -> Result<Vec<Vec<usize>>> {
    let n = cloud.len();
    if k == 0 || k > n {
        return Err(Error::invalid(format!("knn: k = {k} must be in 1..={n}")));
    }
    let pts = cloud.points();
    let mut scratch: Vec<(f64, usize)> = Vec::with_capacity(n);
    centers
        .iter()
        .map(|&c| {
            let q = pts
                .get(c)
                .ok_or_else(|| Error::invalid(format!("center index {c} out of range")))?;
            scratch.clear();
            scratch.extend(pts.iter().enumerate().map(|(i, p)| ((p - q).norm_squared(), i)));
            if k < n {
                scratch.select_nth_unstable_by(k - 1, by_dist_then_index);
            }
            let group = &mut scratch[..k];
            group.sort_unstable_by(by_dist_then_index);
            Ok(group.iter().map(|&(_, i)| i).collect())
        })
        .collect()
}

/// A cloud mapped into the unit ball, with the map that undoes it.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalized {
    pub cloud: PointCloud,
    pub center: Vec3,
    pub scale: f64,
}

impl Normalized {
    pub fn denormalize(&self) -> PointCloud {
        self.cloud.map(|p| p * self.scale + self.center)
    }
}

/// Centers the cloud at its centroid and scales the farthest point to radius 1.
pub fn normalize_unit_sphere(cloud: &PointCloud) -> Result<Normalized> {
    let center = cloud.centroid();
    let scale = cloud
        .points()
        .iter()
        .map(|p| (p - center).norm())
        .fold(0.0, f64::max);
    if scale <= 1e-12 {
        return Err(Error::DegenerateGeometry(
            "all points coincide; cannot normalize".into(),
        ));
    }
    Ok(Normalized {
        cloud: cloud.map(|p| (p - center) / scale),
        center,
        scale,
    })
}

/// Angle between two directions in degrees, in `[0, 180]`.
///
/// Computed as `atan2(|u x v|, u . v)`, which equals the clamped arccosine of
/// the dot product but keeps full precision near 0 and 180 degrees.
pub fn angular_error(u: &UnitVec3, v: &UnitVec3) -> f64 {
    u.0.cross(&v.0).norm().atan2(u.dot(v)).to_degrees()
}

/// Like [`angular_error`] for raw vectors; normalizes both and rejects
/// non-finite or zero input.
pub fn angular_error_raw(u: &Vec3, v: &Vec3) -> Result<f64> {
    Ok(angular_error(&UnitVec3::normalize(*u)?, &UnitVec3::normalize(*v)?))
}

/// Random rotation from z-y-x Euler angles, each uniform on `(-pi, pi)`.
pub fn sample_rotation_uniform(seed: u64) -> Rotation {
    let mut r = rng::stream("rotation", seed);
    let mut angle = || r.random_range(-PI..PI);
    let (a, b, c) = (angle(), angle(), angle());
    Rotation::from_euler_zyx(a, b, c)
}
