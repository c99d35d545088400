//! Provision point mechanisms with refund bonuses for civic crowdfunding.

// `!(x > 0.0)` rejects NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod conditions;
pub mod equilibrium;
pub mod error;
pub mod format;
pub mod gascost;
pub mod mechanisms;
pub mod simulator;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/refunds.md")]
    mod refunds {}
    #[doc = include_str!("../../../book/src/conditions.md")]
    mod conditions {}
    #[doc = include_str!("../../../book/src/equilibrium.md")]
    mod equilibrium {}
    #[doc = include_str!("../../../book/src/simulation.md")]
    mod simulation {}
    #[doc = include_str!("../../../book/src/gas.md")]
    mod gas {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
