//! Scenario files, experiment runner, and the report, hexdump and CSV formats.

mod config;
mod hexdump;
mod report;
mod run;

pub use config::{Experiment, Plant, PlantSource, Scenario};
pub use hexdump::{format_hexdump, latency_csv, parse_hexdump, BYTES_PER_LINE};
pub use report::{DumpSummary, KaslrTrial, Outcome, Report};
pub use run::{
    build_machine, dump_cell, matrix_configs, plant_bytes, run, run_scenario, write_atomic, write_outputs, Planted,
    ASCII_SAMPLE, MATRIX_MIN_ACCURACY,
};
