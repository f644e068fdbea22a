//! Discrete-time large-trader model in which market makers quote at utility
//! indifference prices.
//!
//! * [`utility`] and [`pareto`]: market-maker preferences, the representative
//!   agent and Pareto allocations.
//! * [`tree`]: finite filtrations as scenario trees.
//! * [`dynamics`]: indifference cash balances, Pareto weights and utility
//!   evolution for arbitrary strategies.
//! * [`superrep`]: superreplication price search with attainment diagnostics
//!   and efficient-friction probes.
//! * [`binomial`]: completeness and exact replication for binomial trees with a
//!   single exponential market maker.
//! * [`tails`]: the exponential tail order, decreasing-tail checks on trees,
//!   Lévy and BNS tail checks.

// `!(x > 0.0)` style guards also reject NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod binomial;
pub mod dynamics;
pub mod error;
pub mod numeric;
pub mod pareto;
pub mod quadrature;
pub mod superrep;
pub mod tails;
pub mod tree;
pub mod utility;

pub use error::{Error, Result};
pub use pareto::{MarketMakerPanel, ParetoAllocation};
pub use tree::ScenarioTree;
pub use utility::UtilitySpec;
