//! Mediation analysis of GWAS and eQTL summary statistics with a shared
//! reference panel.

pub mod baselines;
pub mod bench;
pub mod cli;
pub mod error;
pub mod factorize;
pub mod io;
pub mod linalg;
pub mod mediate;
pub mod rng;
pub mod simulate;
pub mod ssvi;
pub mod sumstats;

pub use error::{Error, ErrorClass, Result};
