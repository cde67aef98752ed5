//! Online power control for an energy-harvesting transmitter with a finite
//! battery and a general concave reward.
//!
//! - [`utility`]: reward functions, the gap kernel and its infimum.
//! - [`arrivals`]: i.i.d. energy arrivals bounded by the battery.
//! - [`policy`]: fixed-fraction rules and the exact optimum under
//!   Bernoulli-full arrivals.
//! - [`sim`]: Monte Carlo evaluation.
//! - [`bounds`]: upper bound, multiplicative and additive gaps.
//! - [`dp`]: relative value iteration oracle.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod arrivals;
pub mod bounds;
pub mod dp;
pub mod error;
pub mod policy;
pub mod search;
pub mod sim;
pub mod utility;

pub use arrivals::{ArrivalKind, ArrivalSpec};
pub use error::{Error, Result};
pub use policy::{BernoulliSchedule, Policy, Support, TabularPolicy};
pub use sim::{SimConfig, SimResult};
pub use utility::{Builtin, Slope, Utility, UtilityClass};
