//! Command-line front end for `wdlab`: experiment files with sweeps,
//! trajectory CSVs, run summaries and run comparison.

pub mod commands;
pub mod config;
pub mod csv_io;
pub mod report;
