//! Characterization experiments: S-curves, noise sweeps, chart detection,
//! photon budget and stochastic-resonance probes.

mod budget;
mod chart;
mod noise;
mod resonance;
mod scurve;

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use budget::{photon_budget, rose_required_photons, BudgetReport};
pub use chart::{
    chart_detection, chart_detection_with_events, score_chart, ChartReport, PixelResponseStats, WedgeResult, DETECTION_FRACTION,
    DETECTION_WINDOW_US, NOISE_BUDGET_HZ,
};
pub use noise::{
    noise_rate, noise_sweep_fcut, noise_sweep_illuminance, settle_us, tune_threshold, NoisePoint,
    NoiseSweepResult, SweptQuantity,
};
pub use resonance::{stochastic_resonance_probe, ResonanceReport};
pub use scurve::{estimate_nct, measure_s_curve, step_scene, ControlRow, NctEstimate, SCurve, SCurvePoint};

use crate::array::PixelArray;
use crate::config::SensorConfig;
use crate::error::Result;
use crate::readout::Polarity;
use crate::stimulus::Stimulus;

/// Structured outcome of any characterization run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "experiment", rename_all = "snake_case")]
pub enum ExperimentResult {
    SCurve { curve: SCurve, nct: NctEstimate },
    NoiseSweep { sweeps: Vec<NoiseSweepResult> },
    Chart(ChartReport),
    Budget(BudgetReport),
    Resonance(ResonanceReport),
}

/// Pretty JSON text of any result.
pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(value)?)
}

pub fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let mut text = to_json(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

/// Which polarities a pixel emitted inside a window.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub(crate) struct Response {
    pub on: bool,
    pub off: bool,
}

/// Advance `array` to `t_to` and report per pixel which polarities fired
/// in `[t_from, t_to]`.
pub(crate) fn response_flags<S: Stimulus + ?Sized>(
    array: &mut PixelArray,
    scene: &S,
    t_from: u64,
    t_to: u64,
) -> Vec<Response> {
    let width = array.config().width as usize;
    let n = array.config().pixel_count();
    let bands = array.run_fold(
        scene,
        t_to,
        Vec::new,
        |hits: &mut Vec<(usize, Polarity)>, e| {
            if e.t_us >= t_from {
                hits.push((e.y as usize * width + e.x as usize, e.polarity));
            }
        },
    );
    let mut out = vec![Response::default(); n];
    for (i, p) in bands.into_iter().flatten() {
        match p {
            Polarity::On => out[i].on = true,
            Polarity::Off => out[i].off = true,
        }
    }
    out
}

/// One evaluated candidate of a grid search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPoint<T> {
    pub cfg: SensorConfig,
    pub result: T,
}

/// Evaluate `eval` on every candidate configuration. Results keep the
/// candidate order; no candidate is selected or modified.
pub fn grid_search<T, F>(candidates: &[SensorConfig], eval: F) -> Result<Vec<GridPoint<T>>>
where
    T: Send,
    F: Fn(&SensorConfig) -> Result<T> + Sync,
{
    candidates
        .par_iter()
        .map(|cfg| {
            Ok(GridPoint {
                cfg: cfg.clone(),
                result: eval(cfg)?,
            })
        })
        .collect()
}

/// Cartesian product of threshold, cutoff and refractory lists applied to `base`.
pub fn config_grid(base: &SensorConfig, thetas: &[f64], f_cuts: &[f64], refractories_us: &[u64]) -> Vec<SensorConfig> {
    let mut out = Vec::new();
    for &theta in thetas {
        for &f_cut_hz in f_cuts {
            for &refractory_us in refractories_us {
                out.push(SensorConfig {
                    theta_on: theta,
                    theta_off: theta,
                    f_cut_hz,
                    refractory_us,
                    ..base.clone()
                });
            }
        }
    }
    out
}
