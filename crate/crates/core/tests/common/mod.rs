//! Reference models written independently of the library internals.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub const PI2: f64 = 2.0 * std::f64::consts::PI;

/// Photoelectrons in one integration time `1/(2π f)` for a pixel (or a
/// 2x2 bin when `bins = 4`) of pitch `pitch_um`.
pub fn budget_n(lux: f64, f_cut: f64, qe: f64, pitch_um: f64, bins: f64) -> f64 {
    let photons_per_s = lux * 1e4 * pitch_um * pitch_um * bins;
    photons_per_s * qe / (PI2 * f_cut)
}

/// Noise-floor target for the filtered log signal, `2 / N`.
pub fn filtered_variance(n: f64) -> f64 {
    2.0 / n
}

/// Gaussian AR(1) model of one photoreceptor + preamp + detector chain.
///
/// The input log signal is `mean(t) + sd·z` with white `z`, filtered by a
/// one-pole low-pass. The detector compares `gain·(y − center)` (clipped at
/// `±sat`) against the level memorized at the last event.
#[derive(Debug, Clone)]
pub struct Chain {
    pub dt_us: u64,
    pub f_cut: f64,
    pub gain: f64,
    pub sat: f64,
    pub theta_on: f64,
    pub theta_off: f64,
    pub refractory_us: u64,
    /// Stationary std of the filtered signal.
    pub filtered_sd: f64,
    /// Start with a uniform residual in `(−θ_off, θ_on)` instead of centered.
    pub random_residual: bool,
}

impl Chain {
    fn alpha(&self) -> f64 {
        1.0 - (-PI2 * self.f_cut * self.dt_us as f64 * 1e-6).exp()
    }

    /// Per-step input std giving the requested stationary filtered std.
    fn input_sd(&self) -> f64 {
        let a = self.alpha();
        self.filtered_sd * ((2.0 - a) / a).sqrt()
    }

    /// Run from t = 0 (settled at `mean(0)`, no noise history) to `t_end`
    /// and call `on_event(t, is_on)` for each event.
    pub fn run(
        &self,
        mean: impl Fn(u64) -> f64,
        t_end: u64,
        rng: &mut ChaCha8Rng,
        mut on_event: impl FnMut(u64, bool),
    ) {
        let a = self.alpha();
        let sd = self.input_sd();
        let mut y = mean(0);
        let mut center = y;
        if self.random_residual {
            let u = rng.random_range(-self.theta_off..self.theta_on);
            center = y - u / self.gain;
        }
        let mut mem = 0.0;
        let mut until = 0u64;
        let mut t = self.dt_us;
        while t <= t_end {
            let z: f64 = StandardNormal.sample(rng);
            y += a * (mean(t) + sd * z - y);
            let v = (self.gain * (y - center)).clamp(-self.sat, self.sat);
            if t >= until {
                let d = v - mem;
                let fired = if d >= self.theta_on {
                    Some(true)
                } else if -d >= self.theta_off {
                    Some(false)
                } else {
                    None
                };
                if let Some(on) = fired {
                    on_event(t, on);
                    center = y;
                    mem = 0.0;
                    until = t + self.refractory_us;
                }
            }
            t += self.dt_us;
        }
    }

    /// Mean events per second on a constant input, over `chains` independent
    /// chains of `seconds` each, after discarding five time constants or one
    /// second, whichever is longer.
    pub fn noise_rate(&self, chains: u32, seconds: f64, seed: u64) -> f64 {
        let settle = ((5e6 / (PI2 * self.f_cut)) as u64).max(1_000_000);
        let t_end = settle + (seconds * 1e6) as u64;
        let mut total = 0u64;
        for c in 0..chains {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ ((c as u64) << 20));
            self.run(|_| 0.0, t_end, &mut rng, |t, _| total += (t > settle) as u64);
        }
        total as f64 / (chains as f64 * seconds)
    }

    /// Probability that a pixel answers a step of log size `log_step` with a
    /// correct-polarity event within `window_us`, using the reset-pulse
    /// protocol: settle, `reset` log pulse from `t_reset` to the midpoint,
    /// back to zero, then the step at `t_test`.
    pub fn step_detection(
        &self,
        reset: f64,
        log_step: f64,
        t_reset: u64,
        t_test: u64,
        window_us: u64,
        trials: u32,
        seed: u64,
    ) -> f64 {
        let pulse_end = t_reset + (t_test - t_reset) / 2;
        let mean = |t: u64| {
            if t >= t_test {
                log_step
            } else if t >= t_reset && t < pulse_end {
                reset
            } else {
                0.0
            }
        };
        let want_on = log_step > 0.0;
        let mut hits = 0u32;
        for k in 0..trials {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(k as u64).wrapping_mul(0x9E37_79B9));
            let mut hit = false;
            self.run(mean, t_test + window_us, &mut rng, |t, on| {
                if t >= t_test && on == want_on {
                    hit = true;
                }
            });
            hits += hit as u32;
        }
        hits as f64 / trials as f64
    }
}

/// Random, sorted event stream for round-trip tests.
pub fn random_events(n: usize, width: u16, height: u16, seed: u64) -> Vec<evsim::Event> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = 0u64;
    let mut out = Vec::with_capacity(n);
    let mut seen = std::collections::HashSet::new();
    while out.len() < n {
        t += rng.random_range(0..3u64);
        let (x, y) = (rng.random_range(0..width), rng.random_range(0..height));
        if !seen.insert((t, x, y)) {
            continue;
        }
        out.push(evsim::Event {
            t_us: t,
            x,
            y,
            polarity: if rng.random::<bool>() {
                evsim::Polarity::On
            } else {
                evsim::Polarity::Off
            },
        });
    }
    out.sort_by_key(|e| (e.t_us, e.y, e.x));
    out
}

/// Threshold at 5% contrast with gain 7, used for the binning sweep.
pub fn theta_5pct() -> f64 {
    7.0 * 1.05f64.ln()
}

/// Threshold at 2% contrast with gain 7, used for the cutoff sweep.
pub fn theta_2pct() -> f64 {
    7.0 * 1.02f64.ln()
}

/// Illuminances of the binning sweep; the middle one is the reference point.
pub const BINNING_LUX: [f64; 5] = [0.03, 0.06, 0.12, 0.25, 0.5];

/// Unbinned / binned noise-rate ratio at 0.12 lux, f_cut 18 Hz, dt 500 us,
/// 5% threshold, from [`Chain::noise_rate`] (200 and 400 chains of 20 s).
pub const ORACLE_BINNING_FACTOR: f64 = 23.0;

/// Cutoffs of the cutoff sweep.
pub const FCUT_LIST: [f64; 5] = [3.5, 10.0, 18.0, 50.0, 200.0];

/// Noise-rate ratio 200 Hz / 3.5 Hz at 0.21 lux, dt 250 us, 2% threshold
/// (100 chains of 10 s).
pub const ORACLE_FCUT_RATIO: f64 = 348.0;

/// Reference chain with the default pixel geometry (QE 0.5, 30 um).
pub fn reference_chain(lux: f64, f_cut: f64, dt_us: u64, theta: f64, bins: f64) -> Chain {
    Chain {
        dt_us,
        f_cut,
        gain: 7.0,
        sat: 3.45,
        theta_on: theta,
        theta_off: theta,
        refractory_us: 1_000,
        filtered_sd: filtered_variance(budget_n(lux, f_cut, 0.5, 30.0, bins)).sqrt(),
        random_residual: true,
    }
}
