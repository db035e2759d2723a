//! Exact NAG, RMSProp and ADAM iterations with step sizes and iteration
//! budgets computed from smoothness constants, plus the pieces needed to
//! check those budgets empirically: benchmark objectives, a tied-weight ReLU
//! autoencoder with analytic Hessian-vector products, and a Lanczos
//! minimum-eigenvalue tracker.

pub mod error;
pub mod linalg;
pub mod objective;
pub mod optim;
pub mod rng;
pub mod schedules;
pub mod autoenc;
pub mod spectrum;

pub use error::{Error, Result};
pub use objective::{FiniteSumObjective, ObjectiveHandle, ObjectiveMeta};
pub use optim::{
    run, run_with, Method, Observer, OptimizerConfig, OptimizerState, StopRule, Trace, TraceRecord,
};
pub use schedules::{StepRule, TheoremBudget, TheoremId};
