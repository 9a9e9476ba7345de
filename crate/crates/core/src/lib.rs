//! Simulation-grounded learning toolkit.
//!
//! The crate builds predictors that never see real labelled data: a
//! mechanistic simulator (linear dynamical system, SIR, or SEIR) draws
//! parameters from a prior, rolls out trajectories, and the resulting
//! (observation, quantity-of-interest) pairs train an ordinary dense
//! network. Around that core the crate provides
//!
//! * deterministic counter-based random streams ([`rng`]),
//! * the simulators and observation models ([`sim`]),
//! * supervised dataset synthesis and a binary on-disk format ([`datagen`]),
//! * a self-contained dense network engine with reverse-mode gradients,
//!   Adam, and finite-difference gradient checking ([`nnet`]),
//! * a kernel Monte Carlo approximation of the Bayes-optimal predictor
//!   ([`oracle`]),
//! * distribution-shift risk bounds and a mismatch sweep ([`bounds`]),
//! * mechanistic attribution of predictions back to simulator atoms,
//!   with a KL alignment term for training ([`attribution`]),
//! * convergence-to-oracle experiment drivers ([`convergence`]),
//! * nonlinear least-squares fitting and AIC model selection
//!   ([`modelselect`]), and
//! * deterministic CSV/JSON artifact writers ([`artifact`]).
//!
//! All randomness flows through [`rng::RngStream`], so every experiment is
//! reproducible bit-for-bit from a single `u64` seed, independent of thread
//! count or platform.

pub mod artifact;
pub mod attribution;
pub mod bounds;
pub mod convergence;
pub mod datagen;
pub mod error;
pub mod modelselect;
pub mod nnet;
pub mod oracle;
pub mod params;
pub mod rng;
pub mod sim;

pub use error::{Error, Result};

/// Library version, recorded in run manifests for provenance.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
