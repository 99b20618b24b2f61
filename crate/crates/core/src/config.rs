//! Sensor operating point and its validation.
//!
//! Thresholds are expressed at the change-detector input, i.e. in preamp
//! output units (natural-log intensity times the preamp gain when the preamp
//! is enabled). Time is integer microseconds everywhere.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kv::{parse_bool, KvDocument};

/// How photon shot noise enters the log signal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseMode {
    /// Poisson photoelectron counts plus a Gaussian photoreceptor/buffer term.
    PoissonPlusBuffer,
    /// Deterministic log intensity plus calibrated white Gaussian noise.
    AnalyticGaussian,
    Off,
}

impl NoiseMode {
    pub fn as_str(self) -> &'static str {
        match self {
            NoiseMode::PoissonPlusBuffer => "poisson_plus_buffer",
            NoiseMode::AnalyticGaussian => "analytic_gaussian",
            NoiseMode::Off => "off",
        }
    }
}

impl fmt::Display for NoiseMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for NoiseMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "poisson_plus_buffer" => Ok(NoiseMode::PoissonPlusBuffer),
            "analytic_gaussian" => Ok(NoiseMode::AnalyticGaussian),
            "off" => Ok(NoiseMode::Off),
            other => Err(format!(
                "unknown noise mode `{other}` (expected poisson_plus_buffer, analytic_gaussian or off)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SensorConfig {
    pub width: u32,
    pub height: u32,
    pub pixel_pitch_um: f64,
    pub qe: f64,
    pub theta_on: f64,
    pub theta_off: f64,
    pub preamp_enabled: bool,
    pub preamp_gain: f64,
    pub preamp_sat: f64,
    /// Re-center the preamp after every event. Disabling it freezes the
    /// operating point at its initial value.
    pub auto_center: bool,
    pub f_cut_hz: f64,
    pub refractory_us: u64,
    pub binning_enabled: bool,
    pub force_reset: bool,
    pub mismatch_sigma: f64,
    pub noise_mode: NoiseMode,
    /// Filtered log-noise variance in units of 1/N (2 = twice shot noise).
    pub noise_factor: f64,
    pub dt_us: u64,
    pub seed: u64,
    /// APS full-well capacity in electrons.
    pub fullwell_e: f64,
}

impl Default for SensorConfig {
    fn default() -> Self {
        Self {
            width: 64,
            height: 64,
            pixel_pitch_um: 30.0,
            qe: 0.5,
            theta_on: 0.119,
            theta_off: 0.119,
            preamp_enabled: true,
            preamp_gain: 7.0,
            preamp_sat: 3.45,
            auto_center: true,
            f_cut_hz: 18.0,
            refractory_us: 1_000,
            binning_enabled: false,
            force_reset: false,
            mismatch_sigma: 0.0,
            noise_mode: NoiseMode::PoissonPlusBuffer,
            noise_factor: 2.0,
            dt_us: 100,
            seed: 0,
            fullwell_e: 100_000.0,
        }
    }
}

/// Every recognised config key with its unit, in file order.
pub const CONFIG_KEYS: &[(&str, &str)] = &[
    ("width", "array width in pixels (even when binning)"),
    ("height", "array height in pixels (even when binning)"),
    ("pixel_pitch_um", "photodiode side length, um"),
    ("qe", "quantum efficiency, (0, 1]"),
    ("theta_on", "ON threshold at detector input, log units x gain"),
    ("theta_off", "OFF threshold at detector input, log units x gain"),
    ("preamp_enabled", "route the log signal through the preamp (bool)"),
    ("preamp_gain", "preamp gain, dimensionless, >= 1"),
    ("preamp_sat", "preamp output half-window before clipping, output units"),
    ("auto_center", "re-center the preamp after each event (bool)"),
    ("f_cut_hz", "low-pass buffer cutoff, Hz"),
    ("refractory_us", "refractory period, us"),
    ("binning_enabled", "short 2x2 photodiode groups (bool)"),
    ("force_reset", "with binning, only the top-left pixel of a group emits (bool)"),
    ("mismatch_sigma", "log-normal sigma of per-pixel threshold factors"),
    ("noise_mode", "poisson_plus_buffer | analytic_gaussian | off"),
    ("noise_factor", "filtered log-noise variance in units of 1/N"),
    ("dt_us", "simulation step, us, <= 1e6 / (20 f_cut)"),
    ("seed", "64-bit reproducibility seed"),
    ("fullwell_e", "APS full-well capacity, electrons"),
];

/// A single failed invariant.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    ZeroDimension { width: u32, height: u32 },
    OddDimension { width: u32, height: u32 },
    DimensionTooLarge { width: u32, height: u32 },
    StepTooCoarse { dt_us: u64, max_dt_us: f64 },
    NonPositive { key: &'static str, value: f64 },
    GainBelowOne(f64),
    QeOutOfRange(f64),
    NegativeMismatch(f64),
    ForceResetWithoutBinning,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::ZeroDimension { width, height } => {
                write!(f, "zero dimension {width}x{height}")
            }
            Violation::OddDimension { width, height } => {
                write!(f, "odd dimension {width}x{height} with binning enabled")
            }
            Violation::DimensionTooLarge { width, height } => {
                write!(f, "dimension {width}x{height} exceeds 65535")
            }
            Violation::StepTooCoarse { dt_us, max_dt_us } => write!(
                f,
                "dt too coarse: {dt_us} us > {max_dt_us:.1} us (20 steps per filter time constant)"
            ),
            Violation::NonPositive { key, value } => write!(f, "{key} must be > 0, got {value}"),
            Violation::GainBelowOne(g) => write!(f, "preamp_gain must be >= 1, got {g}"),
            Violation::QeOutOfRange(q) => write!(f, "qe must be in (0, 1], got {q}"),
            Violation::NegativeMismatch(s) => write!(f, "mismatch_sigma must be >= 0, got {s}"),
            Violation::ForceResetWithoutBinning => {
                f.write_str("force_reset requires binning_enabled")
            }
        }
    }
}

/// Largest allowed step, µs: 1e6 / (20 f_cut).
pub fn max_dt_us(f_cut_hz: f64) -> f64 {
    1e6 / (20.0 * f_cut_hz)
}

/// Check every invariant and report all violations at once.
pub fn validate_config(cfg: SensorConfig) -> Result<SensorConfig> {
    let mut errs = Vec::new();
    if cfg.width == 0 || cfg.height == 0 {
        errs.push(Violation::ZeroDimension {
            width: cfg.width,
            height: cfg.height,
        });
    }
    if cfg.width > u16::MAX as u32 || cfg.height > u16::MAX as u32 {
        errs.push(Violation::DimensionTooLarge {
            width: cfg.width,
            height: cfg.height,
        });
    }
    if cfg.binning_enabled && (!cfg.width.is_multiple_of(2) || !cfg.height.is_multiple_of(2)) {
        errs.push(Violation::OddDimension {
            width: cfg.width,
            height: cfg.height,
        });
    }
    if cfg.force_reset && !cfg.binning_enabled {
        errs.push(Violation::ForceResetWithoutBinning);
    }
    let positive = [
        ("theta_on", cfg.theta_on),
        ("theta_off", cfg.theta_off),
        ("pixel_pitch_um", cfg.pixel_pitch_um),
        ("preamp_sat", cfg.preamp_sat),
        ("f_cut_hz", cfg.f_cut_hz),
        ("noise_factor", cfg.noise_factor),
        ("fullwell_e", cfg.fullwell_e),
        ("dt_us", cfg.dt_us as f64),
    ];
    for (key, value) in positive {
        // `!(v > 0)` also catches NaN
        if !(value > 0.0) || !value.is_finite() {
            errs.push(Violation::NonPositive { key, value });
        }
    }
    if !(cfg.preamp_gain >= 1.0) {
        errs.push(Violation::GainBelowOne(cfg.preamp_gain));
    }
    if !(cfg.qe > 0.0 && cfg.qe <= 1.0) {
        errs.push(Violation::QeOutOfRange(cfg.qe));
    }
    if !(cfg.mismatch_sigma >= 0.0) {
        errs.push(Violation::NegativeMismatch(cfg.mismatch_sigma));
    }
    if cfg.f_cut_hz > 0.0 && cfg.dt_us > 0 {
        let max = max_dt_us(cfg.f_cut_hz);
        if cfg.dt_us as f64 > max {
            errs.push(Violation::StepTooCoarse {
                dt_us: cfg.dt_us,
                max_dt_us: max,
            });
        }
    }
    if errs.is_empty() {
        Ok(cfg)
    } else {
        Err(Error::InvalidConfig(errs))
    }
}

impl SensorConfig {
    pub fn validate(self) -> Result<Self> {
        validate_config(self)
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    /// Gain between log intensity and the detector input.
    pub fn effective_gain(&self) -> f64 {
        if self.preamp_enabled {
            self.preamp_gain
        } else {
            1.0
        }
    }

    /// Noise-free contrast step that reaches the nominal ON threshold.
    pub fn nominal_contrast_on(&self) -> f64 {
        (self.theta_on / self.effective_gain()).exp() - 1.0
    }

    /// Magnitude of the noise-free OFF contrast step reaching the OFF threshold.
    pub fn nominal_contrast_off(&self) -> f64 {
        1.0 - (-self.theta_off / self.effective_gain()).exp()
    }

    /// Pixels that own an event generator.
    pub fn active_pixels(&self) -> usize {
        if self.binning_enabled && self.force_reset {
            self.pixel_count() / 4
        } else {
            self.pixel_count()
        }
    }

    /// True when pixel (x, y) can emit events.
    pub fn is_active(&self, x: u32, y: u32) -> bool {
        !(self.binning_enabled && self.force_reset) || (x.is_multiple_of(2) && y.is_multiple_of(2))
    }

    /// Set one field from its textual form.
    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        fn num<T: FromStr>(key: &str, v: &str) -> std::result::Result<T, String>
        where
            T::Err: fmt::Display,
        {
            v.parse::<T>().map_err(|e| format!("`{key}`: {e}"))
        }
        fn flag(key: &str, v: &str) -> std::result::Result<bool, String> {
            parse_bool(v).ok_or_else(|| format!("`{key}`: expected a boolean, got `{v}`"))
        }
        match key {
            "width" => self.width = num(key, value)?,
            "height" => self.height = num(key, value)?,
            "pixel_pitch_um" => self.pixel_pitch_um = num(key, value)?,
            "qe" => self.qe = num(key, value)?,
            "theta_on" => self.theta_on = num(key, value)?,
            "theta_off" => self.theta_off = num(key, value)?,
            "preamp_enabled" => self.preamp_enabled = flag(key, value)?,
            "preamp_gain" => self.preamp_gain = num(key, value)?,
            "preamp_sat" => self.preamp_sat = num(key, value)?,
            "auto_center" => self.auto_center = flag(key, value)?,
            "f_cut_hz" => self.f_cut_hz = num(key, value)?,
            "refractory_us" => self.refractory_us = num(key, value)?,
            "binning_enabled" => self.binning_enabled = flag(key, value)?,
            "force_reset" => self.force_reset = flag(key, value)?,
            "mismatch_sigma" => self.mismatch_sigma = num(key, value)?,
            "noise_mode" => self.noise_mode = value.parse()?,
            "noise_factor" => self.noise_factor = num(key, value)?,
            "dt_us" => self.dt_us = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "fullwell_e" => self.fullwell_e = num(key, value)?,
            other => return Err(format!("unknown config key `{other}`")),
        }
        Ok(())
    }

    /// Apply every non-scene key of `doc` on top of `self`. Unknown keys are errors.
    pub fn apply(mut self, doc: &KvDocument) -> Result<Self> {
        for (key, entry) in doc.iter() {
            if key.starts_with("scene.") {
                continue;
            }
            self.set(key, &entry.value)
                .map_err(|msg| Error::parse(entry.line, msg))?;
        }
        Ok(self)
    }

    /// Defaults overlaid with `doc`, then validated.
    pub fn from_kv(doc: &KvDocument) -> Result<Self> {
        Self::default().apply(doc)?.validate()
    }

    pub fn from_str_kv(text: &str) -> Result<Self> {
        Self::from_kv(&KvDocument::parse(text)?)
    }

    /// Render as a config file that parses back to the same value.
    pub fn to_kv_string(&self) -> String {
        let mut out = String::new();
        for (key, _) in CONFIG_KEYS {
            let value = match *key {
                "width" => self.width.to_string(),
                "height" => self.height.to_string(),
                "pixel_pitch_um" => fmt_f64(self.pixel_pitch_um),
                "qe" => fmt_f64(self.qe),
                "theta_on" => fmt_f64(self.theta_on),
                "theta_off" => fmt_f64(self.theta_off),
                "preamp_enabled" => self.preamp_enabled.to_string(),
                "preamp_gain" => fmt_f64(self.preamp_gain),
                "preamp_sat" => fmt_f64(self.preamp_sat),
                "auto_center" => self.auto_center.to_string(),
                "f_cut_hz" => fmt_f64(self.f_cut_hz),
                "refractory_us" => self.refractory_us.to_string(),
                "binning_enabled" => self.binning_enabled.to_string(),
                "force_reset" => self.force_reset.to_string(),
                "mismatch_sigma" => fmt_f64(self.mismatch_sigma),
                "noise_mode" => self.noise_mode.to_string(),
                "noise_factor" => fmt_f64(self.noise_factor),
                "dt_us" => self.dt_us.to_string(),
                "seed" => self.seed.to_string(),
                "fullwell_e" => fmt_f64(self.fullwell_e),
                _ => unreachable!(),
            };
            out.push_str(key);
            out.push_str(" = ");
            out.push_str(&value);
            out.push('\n');
        }
        out
    }
}

// `{:?}` on f64 is the shortest representation that round-trips.
fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}
