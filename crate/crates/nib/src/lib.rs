//! Files and command line around `nib-core`: IDX loading, parameter files,
//! metrics CSV and manifests, β sweeps and bottleneck scatter export.

pub mod cli;
pub mod idx;
pub mod params_file;
pub mod report;
pub mod run;
