//! Run manifest written next to the data files.

use std::path::Path;

use serde::Serialize;

use routhsim_core::io::write_atomic;
use routhsim_core::{Error, ScenarioConfig};

/// Record of one CLI run. `config` echoes the fully resolved scenario,
/// including every default and flag override, so the run can be repeated
/// without the original file or command line.
#[derive(Serialize)]
pub struct RunManifest {
    pub command: String,
    pub scenario: String,
    pub config: ScenarioConfig,
    /// Data files this run produced, in write order.
    pub outputs: Vec<String>,
    pub termination: String,
    pub impact_count: usize,
    pub final_time: f64,
    /// Largest in-arc drift of the cyclic momentum, when one exists.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_momentum_drift: Option<f64>,
    /// Momentum held on each reduced segment, for `reduce` runs.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mu_sequence: Option<Vec<f64>>,
}

impl RunManifest {
    pub fn write(&self, path: &Path) -> Result<(), Error> {
        let text = serde_json::to_string_pretty(self).map_err(Error::from)?;
        write_atomic(path, &format!("{text}\n"))
    }
}
