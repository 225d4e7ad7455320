//! Attainment regions over a controller's feature-parameter space.
//!
//! A trial either succeeds or fails. Over the joint space of environment
//! features (synthetic ice, ramp angle) and PID gains (K_P, K_I, K_D), the
//! set of points whose predicted success probability clears a threshold η_p
//! is the *attainment region*. This crate learns that region from binary
//! trial outcomes and puts it to work:
//!
//! * [`simulator`] — a deterministic, seedable surrogate of the ramp
//!   experiment that produces the trial outcomes;
//! * [`gp`] — Gaussian-process regression of the success probability with an
//!   ARD RBF kernel over normalized coordinates;
//! * [`region`] — membership queries and 2-D slice extraction for plots;
//! * [`solver`] — nearest in-region point under a freeze mask: adaptive
//!   solutions move the gains, counterfactual solutions move the features;
//! * [`calibration`] — two-point linear maps from raw encoder latents to
//!   feature coordinates, carrying a simulation-trained model to a physical
//!   system;
//! * [`domain`] / [`dataset`] — the shared 5-D types and the JSONL trial
//!   format.
//!
//! Everything is deterministic given its seeds: identical inputs produce
//! bitwise-identical datasets, models, and solutions.

pub mod calibration;
pub mod dataset;
pub mod domain;
pub mod error;
pub mod gp;
pub mod region;
pub mod simulator;
pub mod solver;

pub use calibration::{calibrated_predict, CalibratedPrediction, CalibrationSet, LinearMap};
pub use dataset::{load_dataset, save_dataset};
pub use domain::{
    denormalize, normalize, Dimension, DomainBounds, FeatureParameterPoint, FeatureVector,
    GainVector, TrialRecord, TrialSource, DIMS,
};
pub use error::{Error, Result};
pub use gp::{FitConfig, FittedModel, GpHyperparams};
pub use region::{
    slice_grid, AttainmentQuery, FixedValue, SliceGrid, SliceSpec, SuccessPredictor,
    DEFAULT_ETA_P,
};
pub use simulator::{
    reference_dataset, reference_plan, run_trial, run_trial_traced, sample_dataset, SimConfig,
    TrialTrace,
};
pub use solver::{brute_force_nearest, solve, FreezeMask, SolutionResult, SolverConfig};
