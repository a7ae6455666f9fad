//! Model-predictive load-frequency control for multi-area power systems, run as a
//! VCG-style online mechanism.
//!
//! Each area is owned by a firm with private quadratic cost weights (its type).
//! Firms report types, a receding-horizon LQ controller acts on the reports, and
//! Clarke-pivot taxes computed from counterfactual runs without each firm make
//! truthful reporting approximately optimal. The [`bounds`] module computes the
//! horizon-dependent efficiency certificate that bounds the remaining incentive
//! to misreport.

// NaN-rejecting `!(x < y)` checks, per-agent range vectors and index loops over
// parallel arrays are deliberate.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::single_range_in_vec_init, clippy::needless_range_loop)]

pub mod bounds;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod lq;
pub mod mechanism;
pub mod mpc;
pub mod par;
pub mod plant;
pub mod report;
pub mod scenario;

pub use bounds::{AdmissibilityEnvelope, EfficiencyCertificate, EnvelopeSpec};
pub use error::{Error, Result};
pub use lq::CostWeights;
pub use mechanism::{GridSpec, MechanismSetup, TaxLedger, TaxMode};
pub use mpc::{Policy, ProfileSchedule, TrajectoryRecord, TypeProfile, TypeStream, TypeVector};
pub use par::Execution;
pub use plant::{AreaParams, DiscretePlant, Discretization, NetworkModel};
pub use scenario::{parse_scenario, Horizon, Scenario};
