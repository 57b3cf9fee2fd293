pub mod bench;
pub mod case_io;
pub mod config;
pub mod data_io;
pub mod model_io;
pub mod parallel;
pub mod report;

pub use mfpf_core as core;
