//! Photoelectron sampling and the noisy log-intensity signal.
//!
//! The photoreceptor floor is a multiple of photon shot noise. The noise
//! calibration targets the *filtered* signal: after the pixel's first-order
//! low-pass at `f_cut`, the log-signal variance is `noise_factor / N` with
//! `N = rate / (2π f_cut)` photoelectrons. Per step, Poisson counting supplies
//! `1 / (rate·dt)` of variance and a white Gaussian photoreceptor/buffer
//! term supplies the remainder.

use std::f64::consts::TAU;

use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};

use crate::config::{NoiseMode, SensorConfig};
use crate::pixel::lowpass_alpha;

/// Counts below this are floored to keep the log finite.
pub const COUNT_FLOOR: f64 = 0.5;

/// Above this mean the Poisson draw is replaced by a rounded Gaussian.
pub const GAUSSIAN_ABOVE_MEAN: f64 = 1e3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhotonSample {
    pub n_e: f64,
    pub ell: f64,
}

/// Photoelectrons collected in one step of `dt_us` at `rate_eps` e⁻/s.
pub fn sample_photoelectrons<R: Rng + ?Sized>(rate_eps: f64, dt_us: u64, rng: &mut R) -> f64 {
    draw_count(rate_eps * dt_us as f64 * 1e-6, rng)
}

#[inline]
pub(crate) fn draw_count<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> f64 {
    if mean <= 0.0 {
        0.0
    } else if mean > GAUSSIAN_ABOVE_MEAN {
        let z: f64 = StandardNormal.sample(rng);
        (mean + mean.sqrt() * z).round().max(0.0)
    } else {
        Poisson::new(mean).expect("finite positive mean").sample(rng)
    }
}

/// Log signal for `count` photoelectrons against a reference of `ref_count`
/// (the reference rate times dt), plus a Gaussian term of std `extra_sd`.
pub fn log_signal<R: Rng + ?Sized>(count: f64, ref_count: f64, extra_sd: f64, rng: &mut R) -> f64 {
    let ell = (count.max(COUNT_FLOOR) / ref_count).ln();
    if extra_sd > 0.0 {
        let z: f64 = StandardNormal.sample(rng);
        ell + extra_sd * z
    } else {
        ell
    }
}

/// Per-configuration noise calibration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel {
    pub mode: NoiseMode,
    pub factor: f64,
    pub f_cut_hz: f64,
    pub dt_s: f64,
    alpha: f64,
}

impl NoiseModel {
    pub fn new(cfg: &SensorConfig) -> Self {
        Self {
            mode: cfg.noise_mode,
            factor: cfg.noise_factor,
            f_cut_hz: cfg.f_cut_hz,
            dt_s: cfg.dt_us as f64 * 1e-6,
            alpha: lowpass_alpha(cfg.dt_us, cfg.f_cut_hz),
        }
    }

    /// Mean photoelectrons per step at `rate`.
    #[inline]
    pub fn mean_count(&self, rate: f64) -> f64 {
        rate * self.dt_s
    }

    /// Total per-step log variance whose low-pass output has variance
    /// `factor / N`. Uses the exact discrete gain `α / (2 − α)` of the filter.
    #[inline]
    pub fn step_variance(&self, rate: f64) -> f64 {
        let rate = rate.max(COUNT_FLOOR / self.dt_s);
        self.factor * TAU * self.f_cut_hz / rate * (2.0 - self.alpha) / self.alpha
    }

    /// Part of [`Self::step_variance`] not already supplied by Poisson counting.
    #[inline]
    pub fn buffer_variance(&self, rate: f64) -> f64 {
        let shot = 1.0 / self.mean_count(rate).max(COUNT_FLOOR);
        (self.step_variance(rate) - shot).max(0.0)
    }

    /// Noise-free log intensity.
    #[inline]
    pub fn noiseless(&self, rate: f64, ref_rate: f64) -> f64 {
        (self.mean_count(rate).max(COUNT_FLOOR) / self.mean_count(ref_rate)).ln()
    }

    /// Log signal from an already drawn photoelectron count.
    #[inline]
    pub fn from_count<R: Rng + ?Sized>(&self, count: f64, rate: f64, ref_rate: f64, rng: &mut R) -> f64 {
        log_signal(count, self.mean_count(ref_rate), self.buffer_variance(rate).sqrt(), rng)
    }

    /// Analytic mode: deterministic log plus calibrated Gaussian noise.
    #[inline]
    pub fn analytic<R: Rng + ?Sized>(&self, rate: f64, ref_rate: f64, rng: &mut R) -> f64 {
        let z: f64 = StandardNormal.sample(rng);
        self.noiseless(rate, ref_rate) + self.step_variance(rate).sqrt() * z
    }

    /// One sample of the log signal for a single (unbinned) photodiode.
    pub fn sample<R: Rng + ?Sized>(&self, rate: f64, ref_rate: f64, rng: &mut R) -> PhotonSample {
        match self.mode {
            NoiseMode::Off => PhotonSample {
                n_e: self.mean_count(rate),
                ell: self.noiseless(rate, ref_rate),
            },
            NoiseMode::AnalyticGaussian => PhotonSample {
                n_e: self.mean_count(rate),
                ell: self.analytic(rate, ref_rate, rng),
            },
            NoiseMode::PoissonPlusBuffer => {
                let n_e = draw_count(self.mean_count(rate), rng);
                PhotonSample {
                    n_e,
                    ell: self.from_count(n_e, rate, ref_rate, rng),
                }
            }
        }
    }
}
