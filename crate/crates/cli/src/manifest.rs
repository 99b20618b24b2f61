//! Run manifests: everything needed to reproduce an output directory.

use std::path::{Path, PathBuf};

use evsim::characterize::write_json;
use evsim::stimulus::{RotatingChart, Wedge};
use evsim::{EventFormat, SceneSpec, SensorConfig};
use serde::{Deserialize, Serialize};

pub const MANIFEST_FILE: &str = "manifest.json";

/// Experiment parameters after all defaults and files are resolved.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Params {
    Simulate {
        duration_us: u64,
        format: EventFormat,
    },
    SCurve {
        contrasts: Vec<f64>,
        trials: u32,
        base_lux: f64,
    },
    NoiseLux {
        lux_list: Vec<f64>,
        duration_us: u64,
    },
    NoiseFcut {
        fcut_list: Vec<f64>,
        lux: f64,
        duration_us: u64,
    },
    /// Chart options as given on the command line; never stored.
    Chart {
        wedges: Option<Vec<Wedge>>,
        base_lux: f64,
        duration_us: u64,
    },
    ChartResolved {
        chart: RotatingChart,
        duration_us: u64,
    },
    Budget {
        lux: f64,
        f_cut: Option<f64>,
        binned: bool,
    },
    Aps {
        t_us: u64,
        exposure_us: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_path: Option<PathBuf>,
    pub scene_path: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub seed_override: Option<u64>,
    pub timestamp: String,
    pub workers: Option<usize>,
    /// Resolved configuration; replay uses this, not the original files.
    pub config: SensorConfig,
    pub scene: Option<SceneSpec>,
    pub params: Params,
}

impl RunManifest {
    pub fn write(&self, dir: &Path) -> evsim::Result<()> {
        write_json(dir.join(MANIFEST_FILE), self)
    }

    /// Read a manifest file, or the manifest inside a run directory.
    pub fn load(path: &Path) -> evsim::Result<Self> {
        let file = if path.is_dir() {
            path.join(MANIFEST_FILE)
        } else {
            path.to_path_buf()
        };
        let text = std::fs::read_to_string(file)?;
        let m: Self = serde_json::from_str(&text)?;
        let config = m.config.clone().validate()?;
        Ok(Self { config, ..m })
    }
}

pub fn now() -> String {
    chrono::Local::now().to_rfc3339()
}
