//! Library side of the `mindbus` binary: offline training and evaluation,
//! and the bridge, drone, console and orchestration runtimes.

pub mod bridge;
pub mod console;
pub mod drone;
pub mod logging;
pub mod offline;
pub mod run;
pub mod settings;

pub use run::{run, Role, RunOptions, RunSummary, System};
pub use settings::Settings;
