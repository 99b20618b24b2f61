//! Per-pixel signal chain: low-pass buffer, preamp with auto-centering, and
//! the change detector.
//!
//! Signal order is noise → low-pass → preamp → detector. Shot noise enters
//! before the low-pass so that `f_cut` sets the noise bandwidth.

use std::f64::consts::TAU;

use crate::config::SensorConfig;
use crate::readout::Polarity;

/// Exact first-order IIR coefficient `1 − exp(−2π f_cut dt)`.
pub fn lowpass_alpha(dt_us: u64, f_cut_hz: f64) -> f64 {
    1.0 - (-TAU * f_cut_hz * dt_us as f64 * 1e-6).exp()
}

/// One step of the low-pass buffer.
#[inline]
pub fn lowpass_step(prev: f64, input: f64, alpha: f64) -> f64 {
    prev + alpha * (input - prev)
}

/// Preamp transfer. Bypassed: the detector sees the log signal directly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Preamp {
    pub enabled: bool,
    pub gain: f64,
    pub sat: f64,
    pub auto_center: bool,
}

impl Preamp {
    pub fn from_config(cfg: &SensorConfig) -> Self {
        Self {
            enabled: cfg.preamp_enabled,
            gain: cfg.preamp_gain,
            sat: cfg.preamp_sat,
            auto_center: cfg.auto_center,
        }
    }

    #[inline]
    pub fn output(&self, ell: f64, center: f64) -> f64 {
        if self.enabled {
            (self.gain * (ell - center)).clamp(-self.sat, self.sat)
        } else {
            ell
        }
    }
}

/// `clamp(gain·(ell − center), ±sat)`, or `ell` when the preamp is bypassed.
pub fn preamp(ell: f64, center: f64, cfg: &SensorConfig) -> f64 {
    Preamp::from_config(cfg).output(ell, center)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelState {
    pub ell_filt: f64,
    pub ell_center: f64,
    pub v_mem: f64,
    pub refractory_until_us: u64,
    pub theta_on_px: f64,
    pub theta_off_px: f64,
}

impl PixelState {
    /// Settled, centered pixel at log level `ell`.
    pub fn centered(ell: f64, theta_on_px: f64, theta_off_px: f64, amp: &Preamp) -> Self {
        Self {
            ell_filt: ell,
            ell_center: ell,
            v_mem: amp.output(ell, ell),
            refractory_until_us: 0,
            theta_on_px,
            theta_off_px,
        }
    }

    /// Current detector input.
    #[inline]
    pub fn detector_input(&self, amp: &Preamp) -> f64 {
        amp.output(self.ell_filt, self.ell_center)
    }

    /// Advance the chain by one sample of the log signal. `can_fire` is false
    /// for pixels whose event generator is disabled.
    #[inline]
    pub fn update(
        &mut self,
        ell: f64,
        t_us: u64,
        alpha: f64,
        amp: &Preamp,
        refractory_us: u64,
        can_fire: bool,
    ) -> Option<Polarity> {
        self.ell_filt = lowpass_step(self.ell_filt, ell, alpha);
        if !can_fire {
            return None;
        }
        let v = self.detector_input(amp);
        let fired = change_detect(self, v, t_us, refractory_us);
        if fired.is_some() {
            auto_center(self, amp);
        }
        fired
    }
}

/// Re-center the preamp on the current filtered level. The memorized level
/// moves with it so that an unchanged input reads as zero change.
pub fn auto_center(state: &mut PixelState, amp: &Preamp) {
    if !(amp.enabled && amp.auto_center) {
        return;
    }
    state.ell_center = state.ell_filt;
    state.v_mem = amp.output(state.ell_filt, state.ell_center);
}

/// Threshold comparison with reset-to-current semantics and a refractory
/// period. At most one event per call.
#[inline]
pub fn change_detect(state: &mut PixelState, v: f64, t_us: u64, refractory_us: u64) -> Option<Polarity> {
    if t_us < state.refractory_until_us {
        return None;
    }
    let delta = v - state.v_mem;
    // delta cannot exceed both thresholds at once, so ON and OFF are exclusive
    let polarity = if delta >= state.theta_on_px {
        Polarity::On
    } else if -delta >= state.theta_off_px {
        Polarity::Off
    } else {
        return None;
    };
    state.v_mem = v;
    state.refractory_until_us = t_us + refractory_us;
    Some(polarity)
}

/// Shared photoelectron count of a shorted 2x2 group.
#[inline]
pub fn bin_photons(counts: [f64; 4]) -> f64 {
    counts.iter().sum()
}

/// A 2x2 binning group; the top-left pixel is the master.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BinGroup {
    pub gx: u32,
    pub gy: u32,
}

impl BinGroup {
    pub fn containing(x: u32, y: u32) -> Self {
        Self { gx: x / 2, gy: y / 2 }
    }

    pub fn master(&self) -> (u32, u32) {
        (2 * self.gx, 2 * self.gy)
    }

    /// Row-major members, master first.
    pub fn members(&self) -> [(u32, u32); 4] {
        let (x, y) = self.master();
        [(x, y), (x + 1, y), (x, y + 1), (x + 1, y + 1)]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn amp(gain: f64, sat: f64) -> Preamp {
        Preamp {
            enabled: true,
            gain,
            sat,
            auto_center: true,
        }
    }

    #[test]
    fn lowpass_fixed_point_and_limit() {
        let a = lowpass_alpha(100, 18.0);
        assert_eq!(lowpass_step(0.37, 0.37, a), 0.37);
        let a_inf = lowpass_alpha(10_000_000, 1e6);
        assert_eq!(a_inf, 1.0);
        assert_eq!(lowpass_step(0.0, 2.5, a_inf), 2.5);
    }

    #[test]
    fn lowpass_step_response_at_tau() {
        // dt at the step limit for f_cut = 10 Hz
        let f = 10.0;
        let dt = 5_000u64;
        let a = lowpass_alpha(dt, f);
        let tau_us = 1e6 / (TAU * f);
        // evaluate exactly at tau by running whole steps then the fractional remainder
        let whole = (tau_us / dt as f64).floor() as u64;
        let mut y = 0.0;
        for _ in 0..whole {
            y = lowpass_step(y, 1.0, a);
        }
        let rem = tau_us - (whole * dt) as f64;
        let a_rem = 1.0 - (-TAU * f * rem * 1e-6).exp();
        y = lowpass_step(y, 1.0, a_rem);
        assert!((y - (1.0 - (-1.0f64).exp())).abs() < 1e-3, "y = {y}");
    }

    #[test]
    fn preamp_gain_and_clip() {
        let p = amp(7.0, 3.45);
        assert!((p.output(1.01, 1.0) - 0.07).abs() < 1e-12);
        assert_eq!(p.output(2.0, 2.0), 0.0);
        assert_eq!(p.output(1.0, 0.0), 3.45);
        assert_eq!(p.output(-1.0, 0.0), -3.45);
        let bypass = Preamp { enabled: false, ..p };
        assert_eq!(bypass.output(5.0, 1.0), 5.0);
    }

    #[test]
    fn auto_center_recenters() {
        let p = amp(7.0, 3.45);
        let mut s = PixelState::centered(0.0, 0.1, 0.1, &p);
        s.ell_filt = 2.3;
        auto_center(&mut s, &p);
        assert_eq!(s.ell_center, 2.3);
        assert_eq!(s.detector_input(&p), 0.0);
        assert_eq!(s.v_mem, 0.0);

        let bypass = Preamp { enabled: false, ..p };
        let mut b = PixelState::centered(0.0, 0.1, 0.1, &bypass);
        b.ell_filt = 1.0;
        let before = b;
        auto_center(&mut b, &bypass);
        assert_eq!(b, before);
    }

    #[test]
    fn detect_on_resets_to_current() {
        let mut s = PixelState {
            ell_filt: 0.0,
            ell_center: 0.0,
            v_mem: 0.0,
            refractory_until_us: 0,
            theta_on_px: 0.10,
            theta_off_px: 0.10,
        };
        assert_eq!(change_detect(&mut s, 0.25, 10, 0), Some(Polarity::On));
        assert_eq!(s.v_mem, 0.25);
        assert_eq!(change_detect(&mut s, 0.30, 11, 0), None);
        assert_eq!(change_detect(&mut s, 0.16, 12, 0), None);
        assert_eq!(change_detect(&mut s, 0.15, 13, 0), Some(Polarity::Off));
    }

    #[test]
    fn refractory_blocks_then_releases() {
        let mut s = PixelState {
            ell_filt: 0.0,
            ell_center: 0.0,
            v_mem: 0.0,
            refractory_until_us: 0,
            theta_on_px: 0.1,
            theta_off_px: 0.1,
        };
        assert_eq!(change_detect(&mut s, 0.2, 1_000, 500), Some(Polarity::On));
        // crossing inside the refractory window is ignored
        assert_eq!(change_detect(&mut s, 0.5, 1_400, 500), None);
        assert_eq!(s.v_mem, 0.2);
        // still displaced when the window expires: fires on that step
        assert_eq!(change_detect(&mut s, 0.5, 1_500, 500), Some(Polarity::On));
        assert_eq!(s.refractory_until_us, 2_000);
    }

    #[test]
    fn bin_sums_counts() {
        assert_eq!(bin_photons([10.0, 20.0, 30.0, 40.0]), 100.0);
        let g = BinGroup::containing(5, 2);
        assert_eq!(g.master(), (4, 2));
        assert_eq!(g.members(), [(4, 2), (5, 2), (4, 3), (5, 3)]);
    }
}
