//! Stochastic Poisson surface reconstruction on the unit torus.
//!
//! An oriented point cloud is read as noisy observations of a Gaussian
//! vector field `v`, coupled to a scalar implicit field `f` through
//! `laplacian f = div v`. Conditioning needs one kernel solve on the data
//! points; the posterior over `f` is then available anywhere without a
//! volumetric grid.
//!
//! ```no_run
//! use spsr_core::kernels::Hyperparameters;
//! use spsr_core::points::PointSet;
//! use spsr_core::posterior::{PosteriorConfig, PosteriorModel};
//! use spsr_core::solver::ObservationSystem;
//!
//! # fn main() -> spsr_core::Result<()> {
//! let points = PointSet::from_points3(&[[0.5, 0.5, 0.8], [0.5, 0.5, 0.2]]);
//! let normals = PointSet::from_points3(&[[0.0, 0.0, 1.0], [0.0, 0.0, -1.0]]);
//! let system = ObservationSystem::new(points, normals, Hyperparameters::default())?;
//! let model = PosteriorModel::build(system, PosteriorConfig::default())?;
//! let inside = model.mean(&PointSet::from_points3(&[[0.5, 0.5, 0.5]]))?;
//! # Ok(())
//! # }
//! ```

pub mod cli;
pub mod contour;
pub mod error;
pub mod instrument;
pub mod io;
pub mod kernels;
pub mod points;
pub mod posterior;
pub mod queries;
mod rng;
pub mod solver;
pub mod spectral;

pub use error::{Error, ErrorCategory, Result};
