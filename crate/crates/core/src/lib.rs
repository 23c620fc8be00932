//! Core of the supervised surface-repair pipeline: geometry, point-cloud IO,
//! corrosion clustering, reviewer exclusion volumes, coverage planning and
//! base placement/navigation.

pub mod base;
pub mod cloud;
pub mod coverage;
pub mod detection;
pub mod exclusion;
pub mod geom;
pub mod pipeline;
pub mod scenario;
pub mod spatial;

pub use cloud::{PointCloud, Rgb};
pub use detection::{Cluster, ClusterId};
pub use exclusion::{ExclusionSet, ExclusionVolume, Shape};
pub use geom::{Point3, Pose, UnitQuaternion};
