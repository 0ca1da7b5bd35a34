//! Experiment harness: configuration files, seeded runs and output formats.

pub mod config;
pub mod experiment;
pub mod plotdata;
pub mod records;
pub mod weights;

mod fsutil;

pub use config::{parse_config, parse_config_str, ConfigError, RunSpec, Scheme};
pub use experiment::{run_experiment, run_seed, ExperimentError, SeedRun};
pub use plotdata::emit_plot_data;
pub use records::{read_csv, write_csv, MetricsRecord, CSV_HEADER};
pub use weights::{load_weights, save_weights, WeightsError};
