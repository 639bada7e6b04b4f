//! Reduced order modeling of an advection-diffusion problem with an
//! irreducible heating source.
//!
//! The pipeline runs in stages, each in its own module:
//!
//! * [`signals`]: randomized sum-of-sines control trajectories.
//! * [`fom`]: the 1D finite-difference full-order model that produces snapshots.
//! * [`pod`]: orthonormal bases extracted from snapshot matrices.
//! * [`galerkin`]: projected diffusion/advection operators and the ridge velocity map.
//! * [`closure`]: the memory-augmented neural correction and its exact vector-Jacobian products.
//! * [`odeint`]: fixed-step RK4 and the checkpointed reverse sweep.
//! * [`training`]: datasets, loss, Adam and evaluation metrics.
//!
//! [`array_io`] holds the binary array format shared by every persisted artifact.

pub mod array_io;
pub mod closure;
pub mod error;
pub mod fom;
pub mod galerkin;
pub mod linalg;
pub mod odeint;
pub mod pod;
pub mod signals;
pub mod training;

pub use error::{Error, Result};
