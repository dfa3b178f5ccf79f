//! Language-grounded object orientation toolkit.

pub mod align;
pub mod corrupt;
pub mod error;
pub mod geo;
pub mod textenc;
pub mod rng;
pub mod pointso;
pub mod synthgen;
pub mod scenegraph;
pub mod taskdsl;
pub mod bench;

pub use error::{Error, Result};
pub use geo::{PointCloud, Rotation, UnitVec3, Vec3};
