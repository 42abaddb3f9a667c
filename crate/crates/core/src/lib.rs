//! Filter stability for finite-state hidden Markov models.
//!
//! Forward filtering under correct and misspecified priors, the backward
//! density of the initial state, geometric ergodicity of the signal, and
//! checks of the accompanying bounds on simulated and random models.

pub mod backward;
pub mod config;
pub mod ergodicity;
pub mod error;
pub mod filter;
pub mod harness;
pub mod matrix;
pub mod model;
pub mod simulate;

pub use backward::{BackwardContext, BackwardDensity, OscillationRecord};
pub use config::{parse_config, to_json, ModelDocument};
pub use ergodicity::{BoundStatus, ErgodicityReport, PoissonSolution, StationaryBackward};
pub use error::{Error, Result};
pub use filter::{DecayRate, FilterRun, PairRun, PriorLabel};
pub use harness::{KaijserReport, RunRecord, Scenario};
pub use matrix::Matrix;
pub use model::{
    Coefficients, Density, FiniteModel, ModelSetup, Observation, ObservationModel, StateSpace,
    TransitionKernel,
};
pub use simulate::Trajectory;
