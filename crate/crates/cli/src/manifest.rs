use std::time::Instant;

use entclass_core::rng::GENERATOR_NAME;
use entclass_core::ToleranceConfig;
use serde::Serialize;
use serde_json::Value;

/// Everything needed to rerun a command: embedded in every output.
#[derive(Clone, Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub args: Value,
    pub seed: u64,
    pub rng: &'static str,
    pub tolerances: ToleranceConfig,
    pub version: &'static str,
    pub wall_time_s: f64,
}

pub struct Clock {
    started: Instant,
}

impl Clock {
    pub fn start() -> Self {
        Clock { started: Instant::now() }
    }

    pub fn manifest(&self, command: &str, args: &impl Serialize, seed: u64) -> RunManifest {
        RunManifest {
            command: command.to_string(),
            args: serde_json::to_value(args).unwrap_or(Value::Null),
            seed,
            rng: GENERATOR_NAME,
            tolerances: ToleranceConfig::default(),
            version: env!("CARGO_PKG_VERSION"),
            wall_time_s: self.started.elapsed().as_secs_f64(),
        }
    }
}

/// The manifest as `#`-prefixed lines for the head of a CSV file.
pub fn csv_header(m: &RunManifest) -> String {
    format!("# manifest: {}\n", serde_json::to_string(m).unwrap_or_default())
}
