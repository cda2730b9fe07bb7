//! File formats, reports and CSV export for the `dtflat` command-line tool.

pub mod commands;
pub mod export;
pub mod report;
pub mod sysfile;
