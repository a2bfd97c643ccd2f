//! Error-mitigated quantum distance estimation embedded in a data-driven
//! truss solver.
//!
//! The stack runs bottom-up:
//!
//! * [`qsim`] evolves density matrices through basis circuits with Kraus noise,
//! * [`noisemodel`] builds depolarizing and thermal-relaxation channels from
//!   device calibration data,
//! * [`transpile`] lowers circuits to {I, X, SX, RZ, ECR} and folds gates,
//! * [`qdistance`] builds Swap-test and Hadamard-test distance circuits,
//! * [`estimation`] turns exact probabilities into sampled estimates,
//! * [`zne`] extrapolates noise-scaled probabilities back to zero noise,
//! * [`materialdb`] holds strain-stress databases and the k-d tree,
//! * [`ddsolver`] runs the data-driven truss iteration,
//! * [`experiments`] drives the batch studies behind the `qmitdd` binary.

pub mod ddsolver;
pub mod error;
pub mod estimation;
pub mod experiments;
pub mod materialdb;
pub mod noisemodel;
pub mod qdistance;
pub mod qsim;
pub mod transpile;
pub mod zne;

pub use error::{Error, Result};
