//! SE(3)-equivariant separable point convolutions on finite rotation groups,
//! with analytic gradients and desk-scale training.

pub mod error;
pub mod geom;
pub mod group;
pub mod heads;
pub mod conv;
pub mod sampling;
pub mod testkit;
pub mod train;

pub use conv::EquivariantFeatureMap;
pub use error::{Error, Result};
pub use geom::{Rotation, Vec3};
pub use group::{FiniteRotationGroup, GroupKind};
pub use sampling::{NeighborhoodTable, PointCloud};
