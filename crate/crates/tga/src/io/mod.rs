//! Bit-exact persistence and artifact export: binary checkpoints and
//! datasets (little-endian, CRC-validated where specified), portable graymap
//! attention exports, CSV reports, and the TOML run configuration.

mod checkpoint;
mod config;
mod dataset;
mod pgm;
mod reports;

pub use checkpoint::{checkpoint_load, checkpoint_save};
pub use config::{load_config, load_config_with_seed, save_config, subseed, PretrainSettings, RunConfig};
pub(crate) use config::config_echo;
pub use dataset::{dataset_load, dataset_save};
pub use pgm::export_attention;
pub use reports::{write_attack_trace, write_loss_trace, write_metrics_csv};
