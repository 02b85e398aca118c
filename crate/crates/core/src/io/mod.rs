//! Input formats and result exports.

pub mod export;
pub mod matpower;
pub mod native;

pub use export::Labels;
pub use matpower::{apply_imax_rule, parse_matpower, ConversionParams, MatpowerCase};
pub use native::{parse_native, Network, NetworkDocument};
