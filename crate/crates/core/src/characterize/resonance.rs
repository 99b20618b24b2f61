//! Detection of sub-threshold steps with and without noise.

use serde::{Deserialize, Serialize};

use crate::config::{NoiseMode, SensorConfig};
use crate::error::{Error, Result};
use crate::readout::Polarity;
use crate::stimulus::StepProtocol;

use super::scurve::run_step_trials;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResonanceReport {
    /// Signed step contrast.
    pub contrast: f64,
    pub trials: u64,
    /// Correct-polarity response probability with the configured noise.
    pub p_noise_on: f64,
    /// Same with noise switched off.
    pub p_noise_off: f64,
    /// Opposite-polarity response probability with noise.
    pub p_wrong_noise_on: f64,
}

/// Response probability to a step of `contrast` with noise on and off.
pub fn stochastic_resonance_probe(
    cfg: &SensorConfig,
    contrast: f64,
    base_lux: f64,
    trials: u32,
) -> Result<ResonanceReport> {
    if cfg.noise_mode == NoiseMode::Off {
        return Err(Error::Precondition("resonance probe needs a noise mode other than off".into()));
    }
    if trials == 0 || contrast == 0.0 {
        return Err(Error::Precondition("resonance probe needs trials >= 1 and a nonzero step".into()));
    }
    let want = Polarity::of_contrast(contrast);
    let protocol = StepProtocol::new(base_lux, contrast);
    let probe = |cfg: &SensorConfig| -> Result<(f64, f64, u64)> {
        let resp = run_step_trials(cfg, &protocol, trials, 0x5E)?;
        let w = cfg.width as usize;
        let n = cfg.pixel_count();
        let (mut looks, mut hit, mut wrong) = (0u64, 0u64, 0u64);
        for (i, r) in resp.iter().enumerate() {
            let px = i % n;
            if !cfg.is_active((px % w) as u32, (px / w) as u32) {
                continue;
            }
            looks += 1;
            let (h, x) = match want {
                Polarity::On => (r.on, r.off),
                Polarity::Off => (r.off, r.on),
            };
            hit += h as u64;
            wrong += x as u64;
        }
        Ok((hit as f64 / looks as f64, wrong as f64 / looks as f64, looks))
    };
    let (p_on, p_wrong, looks) = probe(cfg)?;
    let quiet = SensorConfig {
        noise_mode: NoiseMode::Off,
        ..cfg.clone()
    };
    let (p_off, _, _) = probe(&quiet)?;
    Ok(ResonanceReport {
        contrast,
        trials: looks,
        p_noise_on: p_on,
        p_noise_off: p_off,
        p_wrong_noise_on: p_wrong,
    })
}
