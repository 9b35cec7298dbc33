//! Configuration-driven experiment runner: presets for the verification
//! scenarios, report and plot-data emission, and reproducible run manifests.

pub mod config;
pub mod experiment;
pub mod plotdata;
pub mod presets;

pub use config::{build_model, emit_config, parse_config, ExperimentConfig};
pub use experiment::{run_experiment, ExperimentOutcome, Report};
pub use plotdata::emit_plotdata;
pub use presets::{preset_config, PRESET_NAMES};
