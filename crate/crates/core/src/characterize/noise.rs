//! Noise event rates on static scenes.

use std::f64::consts::TAU;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::array::PixelArray;
use crate::config::SensorConfig;
use crate::error::{Error, Result};
use crate::stimulus::SceneSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweptQuantity {
    IlluminanceLux,
    CutoffHz,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoisePoint {
    /// Swept value: lux or Hz.
    pub value: f64,
    /// Mean noise events per active pixel per second.
    pub rate_hz_per_px: f64,
    /// Poisson standard error of the rate.
    pub rate_se: f64,
    pub events: u64,
    pub active_pixels: usize,
    /// Counting time after the settling interval, seconds.
    pub duration_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSweepResult {
    pub swept: SweptQuantity,
    pub binned: bool,
    pub points: Vec<NoisePoint>,
}

impl NoiseSweepResult {
    /// Rates never drop (`increasing`) or never rise by more than `k`
    /// combined standard errors between any two points.
    pub fn is_monotone_within(&self, k: f64, increasing: bool) -> bool {
        let p = &self.points;
        (0..p.len()).all(|j| {
            (0..j).all(|i| {
                let d = if increasing {
                    p[i].rate_hz_per_px - p[j].rate_hz_per_px
                } else {
                    p[j].rate_hz_per_px - p[i].rate_hz_per_px
                };
                d <= k * (p[i].rate_se.powi(2) + p[j].rate_se.powi(2)).sqrt()
            })
        })
    }

    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let name = match self.swept {
            SweptQuantity::IlluminanceLux => "lux",
            SweptQuantity::CutoffHz => "f_cut_hz",
        };
        w.write_record([name, "binned", "rate_hz_per_px", "rate_se", "events", "active_pixels", "duration_s"])?;
        for p in &self.points {
            w.write_record([
                p.value.to_string(),
                self.binned.to_string(),
                p.rate_hz_per_px.to_string(),
                p.rate_se.to_string(),
                p.events.to_string(),
                p.active_pixels.to_string(),
                p.duration_s.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Minimum time discarded before counting noise events.
pub const NOISE_BURN_IN_US: u64 = 1_000_000;

/// Discarded start of a noise measurement: [`NOISE_BURN_IN_US`] or five
/// low-pass time constants, whichever is longer.
pub fn settle_us(f_cut_hz: f64) -> u64 {
    ((5.0e6 / (TAU * f_cut_hz)).ceil() as u64).max(NOISE_BURN_IN_US)
}

/// Events per active pixel per second on a constant scene at `lux`.
///
/// Pixels start with uniformly random residuals (see
/// [`PixelArray::with_random_residuals`]); a pixel started exactly centered
/// sits as far from both thresholds as possible and underreports noise for
/// a long time. Counting starts after [`settle_us`] and lasts `duration_us`.
pub fn noise_rate(cfg: &SensorConfig, lux: f64, duration_us: u64) -> Result<NoisePoint> {
    noise_rate_in(cfg, &SceneSpec::constant(lux), lux, duration_us)
}

pub(crate) fn noise_rate_in(cfg: &SensorConfig, scene: &SceneSpec, value: f64, duration_us: u64) -> Result<NoisePoint> {
    if duration_us == 0 {
        return Err(Error::Precondition("noise measurement needs a nonzero duration".into()));
    }
    scene.validate()?;
    let mut array = PixelArray::new(cfg, scene)?.with_random_residuals(cfg.seed);
    let t0 = settle_us(cfg.f_cut_hz);
    let t1 = t0 + duration_us;
    let counts = array.run_fold(scene, t1, || 0u64, |n, e| *n += (e.t_us > t0) as u64);
    let events: u64 = counts.iter().sum();
    let active = cfg.active_pixels();
    let duration_s = (t1 - t0) as f64 * 1e-6;
    let per = active as f64 * duration_s;
    Ok(NoisePoint {
        value,
        rate_hz_per_px: events as f64 / per,
        rate_se: (events.max(1) as f64).sqrt() / per,
        events,
        active_pixels: active,
        duration_s,
    })
}

/// Noise rate versus illuminance, binned (with forced reset) and unbinned.
/// Returns `(binned, unbinned)`.
pub fn noise_sweep_illuminance(
    cfg: &SensorConfig,
    lux_list: &[f64],
    duration_us: u64,
) -> Result<(NoiseSweepResult, NoiseSweepResult)> {
    if lux_list.is_empty() {
        return Err(Error::Precondition("illuminance sweep needs at least one lux value".into()));
    }
    let arm = |binned: bool| -> Result<NoiseSweepResult> {
        let cfg = SensorConfig {
            binning_enabled: binned,
            force_reset: binned,
            ..cfg.clone()
        };
        let points = lux_list
            .par_iter()
            .map(|&lux| noise_rate(&cfg, lux, duration_us))
            .collect::<Result<Vec<_>>>()?;
        Ok(NoiseSweepResult {
            swept: SweptQuantity::IlluminanceLux,
            binned,
            points,
        })
    };
    Ok((arm(true)?, arm(false)?))
}

/// Noise rate versus photoreceptor cutoff at a fixed illuminance.
pub fn noise_sweep_fcut(cfg: &SensorConfig, fcut_list: &[f64], lux: f64, duration_us: u64) -> Result<NoiseSweepResult> {
    if fcut_list.is_empty() {
        return Err(Error::Precondition("cutoff sweep needs at least one f_cut value".into()));
    }
    let points = fcut_list
        .par_iter()
        .map(|&f| {
            let cfg = SensorConfig {
                f_cut_hz: f,
                ..cfg.clone()
            };
            let mut p = noise_rate(&cfg, lux, duration_us)?;
            p.value = f;
            Ok(p)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(NoiseSweepResult {
        swept: SweptQuantity::CutoffHz,
        binned: cfg.binning_enabled,
        points,
    })
}

/// Smallest symmetric threshold from `thetas` whose noise rate at `lux`
/// stays below `max_rate_hz`. Candidates are tried in the given order.
pub fn tune_threshold(
    cfg: &SensorConfig,
    lux: f64,
    thetas: &[f64],
    max_rate_hz: f64,
    duration_us: u64,
) -> Result<Option<(f64, NoisePoint)>> {
    let mut sorted = thetas.to_vec();
    sorted.sort_by(f64::total_cmp);
    for theta in sorted {
        let cfg = SensorConfig {
            theta_on: theta,
            theta_off: theta,
            ..cfg.clone()
        };
        let p = noise_rate(&cfg, lux, duration_us)?;
        if p.rate_hz_per_px < max_rate_hz {
            return Ok(Some((theta, p)));
        }
    }
    Ok(None)
}
