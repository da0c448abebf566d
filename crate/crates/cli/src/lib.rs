//! File formats, configuration and the subcommand implementations behind
//! the `jicd` binary. The heavy lifting lives in `jicd-core`; this crate
//! adds PNG and checkpoint IO, the TOML config with dotted-key overrides,
//! run directories, curve files and SVG plots.

pub mod commands;
pub mod config;
pub mod curves;
pub mod dataset;
pub mod pngio;
pub mod plotsvg;
pub mod rundir;
