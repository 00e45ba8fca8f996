//! Mixing of SGD and accelerated SGD (SAGD) Markov chains on least squares.
//!
//! The crate builds the closed-form second-moment recursion of two coupled
//! chains, its contraction matrix, spectra and pseudospectra of that matrix,
//! a grid tuner for the hyper-parameters, and an experiment harness that
//! compares simulated mixing rates with the predicted ones.

pub mod chains;
pub mod contraction;
pub mod error;
pub mod harness;
pub mod moments;
pub mod rng;
pub mod spectral;
pub mod tuner;

pub use chains::{ChainState, CoupledTrajectory, LabelModel, SampleSource, Synthetic, Theta};
pub use contraction::{ContractionMatrix, SecondMomentState};
pub use error::{Error, Result};
pub use moments::{MomentSpec, ScalarLaw};
pub use spectral::SpectralReport;
pub use tuner::{TuneConfig, TuneResult};
