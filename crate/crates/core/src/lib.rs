//! Stability-aware training of neural interatomic potentials.
//!
//! Reference potentials, molecular dynamics with parallel replicas,
//! trajectory observables, a fluctuation-based gradient estimator for
//! ensemble averages, stability criteria and the combined training loop.

// `!(x > 0.0)` is how NaN gets rejected along with the out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// Coordinate loops read better indexed.
#![allow(clippy::needless_range_loop)]

pub mod error;
pub mod estimator;
pub mod geometry;
pub mod md;
pub mod observables;
pub mod potentials;
pub mod stability;
pub mod system;
pub mod systems;
pub mod trainer;
pub mod units;

pub use error::{Error, Result};
pub use geometry::{minimum_image_displacement, Vec3};
pub use system::{instantaneous_temperature, kinetic_energy, Bond, Cell, LocalNeighborhood, SimState, SystemSpec};
