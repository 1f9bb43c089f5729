//! Command-line front end for the simulator: spec files with flag overrides,
//! reproducible experiment presets, and dual JSON/CSV result documents.

pub mod experiment;
pub mod output;
pub mod spec;
