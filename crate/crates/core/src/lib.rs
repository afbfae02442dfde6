//! Decentralized multi-target tracking by mobile sensing agents.
//!
//! Each agent runs a perception–action cycle: it senses targets through a
//! range/azimuth/polar-angle sensor, exchanges estimates with peers it can
//! reach, refines its per-target tracks with a second-order extended Kalman
//! filter, and then picks its next heading and altitude by a stochastic
//! gradient step on a Fisher-information loss. Agents within a group improve
//! their decisions in turn (a seesaw sweep), each conditioning on the latest
//! decisions of the others.
//!
//! Modules, bottom-up:
//!
//! - [`measurement`]: sensor model, Jacobian, Hessians.
//! - [`ekf2`]: second-order EKF.
//! - [`information`]: Fisher bookkeeping, predicted post-action information, losses.
//! - [`decision`]: analytic gradients, action update, seesaw.
//! - [`world`]: ground truth, detection and communication draws.
//! - [`engine`]: the per-step loop, replications, metrics.
//! - [`experiment`]: configuration files, presets, CSV/JSON output.

pub mod decision;
pub mod ekf2;
pub mod engine;
pub mod experiment;
pub mod information;
pub mod linalg;
pub mod measurement;
pub mod world;

pub use decision::{decide, seesaw, GradientForm, GradientStepConfig};
pub use ekf2::{MotionModel, NoiseModel, TrackEstimate};
pub use engine::{median_min_distance, run_replications, ReplicationResult, RunOptions};
pub use information::{ActionVector, FisherView, LossContext};
pub use measurement::{measure, EnuVector, Measurement};
pub use world::ScenarioConfig;

// The guide's code listings compile and run as doc-tests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/measurement.md")]
    mod measurement {}
    #[doc = include_str!("../../../book/src/filter.md")]
    mod filter {}
    #[doc = include_str!("../../../book/src/information.md")]
    mod information {}
    #[doc = include_str!("../../../book/src/seesaw.md")]
    mod seesaw {}
    #[doc = include_str!("../../../book/src/simulation.md")]
    mod simulation {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
}
