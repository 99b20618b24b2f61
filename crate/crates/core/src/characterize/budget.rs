//! Photon budget arithmetic.

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::config::SensorConfig;
use crate::error::{Error, Result};
use crate::stimulus::photoelectron_rate;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetReport {
    pub lux: f64,
    pub f_cut_hz: f64,
    pub binned: bool,
    /// Integration time `1 / (2π f_cut)`, seconds.
    pub tau_s: f64,
    /// Photoelectrons per integration time.
    pub n_e: f64,
    /// `√(2/N)`; undefined when no light is collected.
    pub sigma_over_n: Option<f64>,
    /// `(k, k·σ/N)` for k = 1, 2, 4.
    pub k_sigma_contrasts: Vec<(u32, f64)>,
}

/// Photoelectrons, noise floor and k-sigma contrasts at `lux` and `f_cut_hz`.
pub fn photon_budget(lux: f64, f_cut_hz: f64, cfg: &SensorConfig, binned: bool) -> Result<BudgetReport> {
    if !(lux >= 0.0 && lux.is_finite()) {
        return Err(Error::Precondition(format!("illuminance must be >= 0, got {lux}")));
    }
    if !(f_cut_hz > 0.0 && f_cut_hz.is_finite()) {
        return Err(Error::Precondition(format!("f_cut must be > 0, got {f_cut_hz}")));
    }
    let tau_s = 1.0 / (TAU * f_cut_hz);
    let n_e = photoelectron_rate(lux, cfg, binned) * tau_s;
    let sigma_over_n = (n_e > 0.0).then(|| (2.0 / n_e).sqrt());
    let k_sigma_contrasts = match sigma_over_n {
        Some(s) => [1, 2, 4].iter().map(|&k| (k, k as f64 * s)).collect(),
        None => Vec::new(),
    };
    Ok(BudgetReport {
        lux,
        f_cut_hz,
        binned,
        tau_s,
        n_e,
        sigma_over_n,
        k_sigma_contrasts,
    })
}

/// Photoelectrons needed to see contrast `c` at `k` sigma: `2k² / c²`.
pub fn rose_required_photons(c: f64, k: f64) -> Result<f64> {
    if !(c > 0.0 && c < 1.0) {
        return Err(Error::Precondition(format!("contrast must lie in (0, 1), got {c}")));
    }
    if !(k > 0.0) {
        return Err(Error::Precondition(format!("k must be > 0, got {k}")));
    }
    Ok(2.0 * k * k / (c * c))
}
