//! Parametric surface primitives and per-family shape construction.
//!
//! Every family is built in a canonical z-up frame from a handful of surface
//! patches; points are drawn uniformly by area across all patches.

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use nalgebra::Matrix3;
use rand::Rng as _;

use crate::geo::{Rotation, UnitVec3, Vec3};
use crate::rng::Rng;

use super::Family;

#[derive(Debug, Clone, Copy)]
enum Surface {
    /// Side of a z-aligned cylinder.
    CylinderSide { radius: f64, z0: f64, z1: f64 },
    /// Annulus in the plane `z`.
    Disk { z: f64, r_in: f64, r_out: f64 },
    /// Lateral surface of a truncated cone; either radius may be zero.
    Frustum { z0: f64, r0: f64, z1: f64, r1: f64 },
    /// Arc `u in [u0, u1]` of a torus around the z axis.
    TorusArc { major: f64, minor: f64, u0: f64, u1: f64 },
    /// Parallelogram `center + s*hu + t*hv`, `s, t in [-1, 1]`.
    Rect { center: Vec3, hu: Vec3, hv: Vec3 },
    /// Quarter ellipse in the plane `x`: `z in [-length, 0]`, `y in [-width, 0]`.
    QuarterEllipse { x: f64, length: f64, width: f64 },
}

impl Surface {
    fn area(&self) -> f64 {
        match *self {
            Surface::CylinderSide { radius, z0, z1 } => TAU * radius * (z1 - z0).abs(),
            Surface::Disk { r_in, r_out, .. } => PI * (r_out * r_out - r_in * r_in),
            Surface::Frustum { z0, r0, z1, r1 } => {
                let slant = ((r1 - r0).powi(2) + (z1 - z0).powi(2)).sqrt();
                PI * (r0 + r1) * slant
            }
            Surface::TorusArc { major, minor, u0, u1 } => TAU * minor * major * (u1 - u0),
            Surface::Rect { hu, hv, .. } => 4.0 * hu.cross(&hv).norm(),
            Surface::QuarterEllipse { length, width, .. } => PI * length * width / 4.0,
        }
    }

    fn sample(&self, r: &mut Rng) -> Vec3 {
        match *self {
            Surface::CylinderSide { radius, z0, z1 } => {
                let th = r.random_range(0.0..TAU);
                Vec3::new(radius * th.cos(), radius * th.sin(), r.random_range(z0..z1))
            }
            Surface::Disk { z, r_in, r_out } => {
                let rad = r.random_range(r_in * r_in..r_out * r_out).sqrt();
                let th = r.random_range(0.0..TAU);
                Vec3::new(rad * th.cos(), rad * th.sin(), z)
            }
            Surface::Frustum { z0, r0, z1, r1 } => {
                let th = r.random_range(0.0..TAU);
                // Area density grows linearly with radius.
                let (lo, hi) = (r0.min(r1), r0.max(r1));
                let rad = if hi - lo < 1e-12 {
                    r0
                } else {
                    r.random_range(lo * lo..hi * hi).sqrt()
                };
                let t = if (r1 - r0).abs() < 1e-12 {
                    r.random_range(0.0..1.0)
                } else {
                    (rad - r0) / (r1 - r0)
                };
                Vec3::new(rad * th.cos(), rad * th.sin(), z0 + t * (z1 - z0))
            }
            Surface::TorusArc { major, minor, u0, u1 } => loop {
                let u = r.random_range(u0..u1);
                let v = r.random_range(0.0..TAU);
                let w = major + minor * v.cos();
                if r.random_range(0.0..major + minor) < w {
                    break Vec3::new(w * u.cos(), w * u.sin(), minor * v.sin());
                }
            },
            Surface::Rect { center, hu, hv } => {
                center + hu * r.random_range(-1.0..1.0) + hv * r.random_range(-1.0..1.0)
            }
            Surface::QuarterEllipse { x, length, width } => loop {
                let s: f64 = r.random_range(0.0..1.0);
                let t: f64 = r.random_range(0.0..1.0);
                if s * s + t * t <= 1.0 {
                    break Vec3::new(x, -width * t, -length * s);
                }
            },
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Patch {
    surface: Surface,
    frame: Rotation,
    offset: Vec3,
}

impl Patch {
    fn at(surface: Surface) -> Self {
        Patch {
            surface,
            frame: Rotation::identity(),
            offset: Vec3::zeros(),
        }
    }

    fn placed(surface: Surface, frame: Rotation, offset: Vec3) -> Self {
        Patch {
            surface,
            frame,
            offset,
        }
    }
}

fn box_faces(center: Vec3, half: Vec3) -> Vec<Patch> {
    let (x, y, z) = (Vec3::x() * half.x, Vec3::y() * half.y, Vec3::z() * half.z);
    [(x, y, z), (y, z, x), (z, x, y)]
        .into_iter()
        .flat_map(|(n, u, v)| {
            [1.0, -1.0].map(|s| {
                Patch::at(Surface::Rect {
                    center: center + n * s,
                    hu: u,
                    hv: v,
                })
            })
        })
        .collect()
}

/// A family instance: its surface patches and its canonical labelled directions.
#[derive(Debug, Clone)]
pub(crate) struct Shape {
    patches: Vec<Patch>,
    pub labels: Vec<(String, UnitVec3)>,
}

impl Shape {
    pub fn sample_points(&self, n: usize, r: &mut Rng) -> Vec<Vec3> {
        let cumulative: Vec<f64> = self
            .patches
            .iter()
            .scan(0.0, |acc, p| {
                *acc += p.surface.area();
                Some(*acc)
            })
            .collect();
        let total = *cumulative.last().expect("shape has patches");
        (0..n)
            .map(|_| {
                let u = r.random_range(0.0..total);
                let i = cumulative.partition_point(|&c| c <= u).min(self.patches.len() - 1);
                let p = &self.patches[i];
                p.frame.apply(&p.surface.sample(r)) + p.offset
            })
            .collect()
    }
}

fn label(name: &str, dir: UnitVec3) -> (String, UnitVec3) {
    (name.to_string(), dir)
}

/// Builds a randomized instance of `family` in its canonical frame.
pub(crate) fn build(family: Family, r: &mut Rng) -> Shape {
    let up = UnitVec3::Z;
    let down = up.neg();
    match family {
        Family::Arrow => {
            let rs = r.random_range(0.03..0.06);
            let head_len = r.random_range(0.2..0.35);
            let rh = r.random_range(0.1..0.18);
            let zb = 0.5 - head_len;
            let patches = vec![
                Patch::at(Surface::CylinderSide { radius: rs, z0: -0.5, z1: zb }),
                Patch::at(Surface::Disk { z: -0.5, r_in: 0.0, r_out: rs }),
                Patch::at(Surface::Disk { z: zb, r_in: rs, r_out: rh }),
                Patch::at(Surface::Frustum { z0: zb, r0: rh, z1: 0.5, r1: 0.0 }),
            ];
            Shape {
                patches,
                labels: vec![
                    label("pointing direction", up),
                    label("tail", down),
                    label("top", up),
                ],
            }
        }
        Family::Mug => {
            let radius = r.random_range(0.3..0.45);
            let height = r.random_range(0.7..1.0);
            let azimuth = r.random_range(0.0..TAU);
            let major = r.random_range(0.2..0.3) * height;
            let minor = r.random_range(0.03..0.06);
            let radial = Vec3::new(azimuth.cos(), azimuth.sin(), 0.0);
            // Handle ring lies in the plane spanned by the radial direction and +z.
            let frame = Rotation::from_matrix_unchecked(Matrix3::from_columns(&[
                radial,
                Vec3::z(),
                radial.cross(&Vec3::z()),
            ]));
            let patches = vec![
                Patch::at(Surface::CylinderSide { radius, z0: 0.0, z1: height }),
                Patch::at(Surface::Disk { z: 0.0, r_in: 0.0, r_out: radius }),
                Patch::placed(
                    Surface::TorusArc { major, minor, u0: -FRAC_PI_2, u1: FRAC_PI_2 },
                    frame,
                    radial * radius + Vec3::z() * (height / 2.0),
                ),
            ];
            let handle = UnitVec3::normalize(radial).expect("unit radial");
            Shape {
                patches,
                labels: vec![
                    label("top", up),
                    label("opening", up),
                    label("handle", handle),
                    label("pour out", up),
                ],
            }
        }
        Family::Bottle => {
            let radius = r.random_range(0.25..0.4);
            let body = r.random_range(0.5..0.8);
            let shoulder = r.random_range(0.1..0.2);
            let neck_r = r.random_range(0.08..0.14);
            let neck = r.random_range(0.1..0.25);
            let cap_r = neck_r + 0.02;
            let z_neck = body + shoulder;
            let z_cap = z_neck + neck;
            let patches = vec![
                Patch::at(Surface::Disk { z: 0.0, r_in: 0.0, r_out: radius }),
                Patch::at(Surface::CylinderSide { radius, z0: 0.0, z1: body }),
                Patch::at(Surface::Frustum { z0: body, r0: radius, z1: z_neck, r1: neck_r }),
                Patch::at(Surface::CylinderSide { radius: neck_r, z0: z_neck, z1: z_cap }),
                Patch::at(Surface::CylinderSide { radius: cap_r, z0: z_cap, z1: z_cap + 0.06 }),
                Patch::at(Surface::Disk { z: z_cap + 0.06, r_in: 0.0, r_out: cap_r }),
            ];
            Shape {
                patches,
                labels: vec![
                    label("cap", up),
                    label("bottom", down),
                    label("upright direction", up),
                    label("top", up),
                ],
            }
        }
        Family::Knife => {
            let blade = r.random_range(0.6..0.9);
            let width = r.random_range(0.12..0.2);
            let handle = r.random_range(0.35..0.5);
            let mut patches = vec![
                Patch::at(Surface::QuarterEllipse { x: 0.01, length: blade, width }),
                Patch::at(Surface::QuarterEllipse { x: -0.01, length: blade, width }),
            ];
            patches.extend(box_faces(
                Vec3::new(0.0, -0.3 * width, handle / 2.0),
                Vec3::new(0.04, 0.3 * width, handle / 2.0),
            ));
            Shape {
                patches,
                labels: vec![
                    label("blade", down),
                    label("handle", up),
                    label("cutting direction", UnitVec3::Y.neg()),
                ],
            }
        }
        Family::Cone => {
            let radius = r.random_range(0.3..0.5);
            let height = r.random_range(0.6..1.0);
            let patches = vec![
                Patch::at(Surface::Frustum { z0: 0.0, r0: radius, z1: height, r1: 0.0 }),
                Patch::at(Surface::Disk { z: 0.0, r_in: 0.0, r_out: radius }),
            ];
            Shape {
                patches,
                labels: vec![label("tip", up), label("top", up), label("base", down)],
            }
        }
        Family::Plug => {
            let w = r.random_range(0.4..0.6);
            let d = r.random_range(0.3..0.45);
            let h = r.random_range(0.25..0.4);
            let prong = r.random_range(0.2..0.3);
            let cable = r.random_range(0.3..0.5);
            let mut patches = box_faces(Vec3::zeros(), Vec3::new(w / 2.0, d / 2.0, h / 2.0));
            for sx in [-1.0, 1.0] {
                patches.extend(box_faces(
                    Vec3::new(sx * w / 4.0, d / 2.0 + prong / 2.0, 0.2 * h),
                    Vec3::new(0.02, prong / 2.0, 0.05),
                ));
            }
            // Local +z of the cable cylinder points along world -y.
            let along_minus_y = Rotation::from_euler_zyx(0.0, 0.0, FRAC_PI_2);
            patches.push(Patch::placed(
                Surface::CylinderSide { radius: 0.05, z0: 0.0, z1: cable },
                along_minus_y,
                Vec3::new(0.0, -d / 2.0, -0.2 * h),
            ));
            Shape {
                patches,
                labels: vec![
                    label("plug-in", UnitVec3::Y),
                    label("top", up),
                    label("cable", UnitVec3::Y.neg()),
                ],
            }
        }
    }
}
