//! Pathwise analysis of an index and a stock.
//!
//! Prices are reduced to dyadic crossing partitions, summed into relative
//! variation functionals, and tested against mixing strategies whose capital
//! processes bound the equity premium and the CAPM deficit.

pub mod bounds;
pub mod functionals;
pub mod montecarlo;
pub mod partitions;
pub mod paths;
pub mod strategies;
pub mod suite;
