//! Reliability capacity regions for DC power grids with stochastic injections.
//!
//! Stochastic nodal injections are modelled as small-noise diffusions
//! (Ornstein-Uhlenbeck in closed form). Line currents follow the DC power
//! flow map and line temperatures follow a first-order thermal lag. The crate
//! computes large-deviations decay rates of current and temperature overload
//! events, the polyhedral capacity regions they induce, and Monte Carlo
//! estimates used to validate them.
//!
//! Module map:
//!
//! - [`grid`]: network description and the injection → normalized current map.
//! - [`injections`]: OU and general diffusion models, sample paths, rate functional.
//! - [`rates`]: closed-form decay rates and optimal paths for OU injections.
//! - [`thermal`]: current → temperature map.
//! - [`exact1d`]: exact temperature decay rate for a single line by shooting.
//! - [`region`]: capacity regions, 2-D slices and most-at-risk partitions.
//! - [`montecarlo`]: empirical overload probabilities.
//! - [`io`]: native JSON networks, MATPOWER case subset, exports.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod exact1d;
pub mod geometry;
pub mod grid;
pub mod injections;
pub mod io;
pub mod montecarlo;
mod ode;
pub mod rates;
pub mod region;
pub mod thermal;

pub use error::{Error, Result};
pub use grid::{DcFlowMatrices, GridNetwork, Line, OperatingPoint};
pub use injections::{DiffusionModel, OuModel, SamplePath};
pub use rates::{DecayRateReport, PsiContext, Rate};
pub use region::{CapacityRegion, RegionKind};
