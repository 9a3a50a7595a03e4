//! File formats, run management and the `ecc-lab` command line for
//! `ecc-core` experiments.

pub mod cli;
pub mod error;
pub mod gradcheck;
pub mod inspect;
pub mod io;
pub mod oracle;
pub mod reports;
pub mod run;
