//! Scaling-law toolkit for dense and mixture-of-experts transformer training.
//!
//! The crate covers four layers that build on each other:
//!
//! * [`accounting`]: exact parameter, FLOP, and memory arithmetic, plus the
//!   standard width/depth rule and its inversions.
//! * [`law`]: the joint loss law over active parameters, training tokens, and
//!   expert count, its per-expert-count reduction to a two-term power law, and
//!   the peak learning-rate rule.
//! * [`fitting`]: robust refitting of the law from run records (Huber loss on
//!   log residuals, loss-weighted, multi-seed quasi-Newton minimization).
//! * [`planner`]: compute-, memory-, and inference-budget optimizers built on
//!   the law, including expert-count selection and budget-savings analysis.
//!
//! [`dataio`] handles run-record CSV/JSON ingestion, ships a bundled
//! experiment grid, and generates synthetic runs for fitting round trips.
//!
//! With the default `parallel` feature the seed sweeps in [`fitting`] and the
//! expert sweeps in [`planner`] fan out over a thread pool; results are
//! reduced deterministically and are bit-identical to the sequential build.

// Validation guards are written `!(x >= k)` so NaN takes the rejecting
// branch; spelling them with partial_cmp would bury that intent.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod accounting;
pub mod dataio;
pub mod fitting;
pub mod law;
pub mod numeric;
pub mod planner;

mod lbfgs;
mod par;
