//! Step-response S-curves and the nominal contrast threshold.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::array::PixelArray;
use crate::config::SensorConfig;
use crate::error::{Error, Result};
use crate::readout::Polarity;
use crate::rng::derive_seed;
use crate::stimulus::{SceneKind, SceneSpec, StepProtocol};

use super::{response_flags, Response};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SCurvePoint {
    /// Contrast magnitude.
    pub contrast: f64,
    /// Fraction of (pixel, trial) pairs with a correct-polarity event.
    pub fraction: f64,
    /// Number of (pixel, trial) pairs looked at.
    pub trials: u64,
    /// Pairs with at least one event of the opposite polarity.
    pub wrong_polarity: u64,
}

/// Zero-contrast control measured with every curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlRow {
    pub trials: u64,
    pub fraction_on: f64,
    pub fraction_off: f64,
    /// Fraction with any event at all.
    pub fraction_any: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SCurve {
    pub polarity: Polarity,
    pub base_lux: f64,
    /// Sorted by strictly increasing contrast.
    pub points: Vec<SCurvePoint>,
    pub control: ControlRow,
}

impl SCurve {
    /// Control fraction for this curve's polarity.
    pub fn control_fraction(&self) -> f64 {
        match self.polarity {
            Polarity::On => self.control.fraction_on,
            Polarity::Off => self.control.fraction_off,
        }
    }

    /// True when no point falls below an earlier one by more than `k`
    /// binomial standard errors of the difference.
    pub fn is_monotone_within(&self, k: f64) -> bool {
        let se2 = |p: &SCurvePoint| {
            let q = p.fraction.clamp(1e-9, 1.0 - 1e-9);
            q * (1.0 - q) / p.trials.max(1) as f64
        };
        self.points.iter().enumerate().all(|(j, b)| {
            self.points[..j]
                .iter()
                .all(|a| a.fraction - b.fraction <= k * (se2(a) + se2(b)).sqrt())
        })
    }

    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["polarity", "contrast", "fraction", "trials", "wrong_polarity"])?;
        let pol = match self.polarity {
            Polarity::On => "on",
            Polarity::Off => "off",
        };
        let c = &self.control;
        w.write_record([
            "control".to_string(),
            "0".to_string(),
            self.control_fraction().to_string(),
            c.trials.to_string(),
            match self.polarity {
                Polarity::On => (c.fraction_off * c.trials as f64).round().to_string(),
                Polarity::Off => (c.fraction_on * c.trials as f64).round().to_string(),
            },
        ])?;
        for p in &self.points {
            w.write_record([
                pol.to_string(),
                p.contrast.to_string(),
                p.fraction.to_string(),
                p.trials.to_string(),
                p.wrong_polarity.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", content = "contrast", rename_all = "snake_case")]
pub enum NctEstimate {
    Reached(f64),
    NotReached,
}

impl NctEstimate {
    pub fn value(self) -> Option<f64> {
        match self {
            NctEstimate::Reached(c) => Some(c),
            NctEstimate::NotReached => None,
        }
    }
}

/// Contrast at which the curve crosses 50 %, by linear interpolation. The
/// zero-contrast control anchors the lower end.
pub fn estimate_nct(curve: &SCurve) -> NctEstimate {
    let mut prev = (0.0, curve.control_fraction());
    if prev.1 >= 0.5 {
        return NctEstimate::Reached(0.0);
    }
    for p in &curve.points {
        if p.fraction >= 0.5 {
            let (c0, f0) = prev;
            let c = c0 + (0.5 - f0) / (p.fraction - f0) * (p.contrast - c0);
            return NctEstimate::Reached(c);
        }
        prev = (p.contrast, p.fraction);
    }
    NctEstimate::NotReached
}

/// Step protocol used for every trial. Timing follows [`StepProtocol::new`].
pub fn step_scene(base_lux: f64, signed_contrast: f64) -> SceneSpec {
    SceneKind::Step(StepProtocol::new(base_lux, signed_contrast)).into()
}

/// Run `trials` step trials and tally per-pixel responses in the window
/// after the test step.
pub(crate) fn run_step_trials(
    cfg: &SensorConfig,
    protocol: &StepProtocol,
    trials: u32,
    salt: u64,
) -> Result<Vec<Response>> {
    let scene: SceneSpec = SceneKind::Step(protocol.clone()).into();
    scene.validate()?;
    let cfg = cfg.clone().validate()?;
    (0..trials)
        .into_par_iter()
        .map(|trial| {
            let seed = derive_seed(cfg.seed, (salt << 32) | trial as u64);
            let mut array = PixelArray::new(&cfg, &scene)?.with_noise_seed(seed);
            Ok(response_flags(
                &mut array,
                &scene,
                protocol.t_test_us,
                protocol.end_us(),
            ))
        })
        .collect::<Result<Vec<_>>>()
        .map(|v| v.into_iter().flatten().collect())
}

fn tally(cfg: &SensorConfig, responses: &[Response]) -> (u64, u64, u64, u64) {
    let w = cfg.width as usize;
    let n = cfg.pixel_count();
    let (mut looks, mut on, mut off, mut any) = (0, 0, 0, 0);
    for (i, r) in responses.iter().enumerate() {
        let px = i % n;
        if !cfg.is_active((px % w) as u32, (px / w) as u32) {
            continue;
        }
        looks += 1;
        on += r.on as u64;
        off += r.off as u64;
        any += (r.on || r.off) as u64;
    }
    (looks, on, off, any)
}

/// Fraction of pixels responding with the step's polarity, per contrast.
///
/// `contrasts` are signed and must share one sign (positive: ON curve,
/// negative: OFF curve). A zero-contrast control is always measured.
pub fn measure_s_curve(cfg: &SensorConfig, contrasts: &[f64], base_lux: f64, trials: u32) -> Result<SCurve> {
    if contrasts.is_empty() || trials == 0 {
        return Err(Error::Precondition("s-curve needs contrasts and trials >= 1".into()));
    }
    let polarity = Polarity::of_contrast(contrasts[0]);
    if contrasts.iter().any(|&c| c == 0.0 || Polarity::of_contrast(c) != polarity) {
        return Err(Error::Precondition(
            "s-curve contrasts must be nonzero and share one polarity".into(),
        ));
    }
    let mut sorted: Vec<f64> = contrasts.to_vec();
    sorted.sort_by(|a, b| a.abs().total_cmp(&b.abs()));
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::Precondition("s-curve contrasts must be distinct".into()));
    }

    let control_resp = run_step_trials(cfg, &StepProtocol::new(base_lux, 0.0), trials, 0)?;
    let (looks, on, off, any) = tally(cfg, &control_resp);
    let control = ControlRow {
        trials: looks,
        fraction_on: on as f64 / looks as f64,
        fraction_off: off as f64 / looks as f64,
        fraction_any: any as f64 / looks as f64,
    };

    let points = sorted
        .iter()
        .enumerate()
        .map(|(k, &c)| {
            let resp = run_step_trials(cfg, &StepProtocol::new(base_lux, c), trials, k as u64 + 1)?;
            let (looks, on, off, _) = tally(cfg, &resp);
            let (hit, wrong) = match polarity {
                Polarity::On => (on, off),
                Polarity::Off => (off, on),
            };
            Ok(SCurvePoint {
                contrast: c.abs(),
                fraction: hit as f64 / looks as f64,
                trials: looks,
                wrong_polarity: wrong,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(SCurve {
        polarity,
        base_lux,
        points,
        control,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn curve(points: &[(f64, f64)]) -> SCurve {
        SCurve {
            polarity: Polarity::On,
            base_lux: 1.0,
            points: points
                .iter()
                .map(|&(contrast, fraction)| SCurvePoint {
                    contrast,
                    fraction,
                    trials: 100,
                    wrong_polarity: 0,
                })
                .collect(),
            control: ControlRow {
                trials: 100,
                fraction_on: 0.0,
                fraction_off: 0.0,
                fraction_any: 0.0,
            },
        }
    }

    #[test]
    fn interpolates_between_brackets() {
        let c = estimate_nct(&curve(&[(0.01, 0.2), (0.02, 0.8)])).value().unwrap();
        assert!((c - 0.015).abs() < 1e-12);
    }

    #[test]
    fn not_reached_below_half() {
        assert_eq!(estimate_nct(&curve(&[(0.01, 0.1), (0.02, 0.49)])), NctEstimate::NotReached);
    }

    #[test]
    fn step_curve_lands_inside_bracket() {
        let c = estimate_nct(&curve(&[(0.016, 0.0), (0.0172, 1.0)])).value().unwrap();
        assert!(c > 0.016 && c <= 0.0172);
    }

    #[test]
    fn monotone_check_tolerates_noise() {
        assert!(curve(&[(0.01, 0.30), (0.02, 0.28), (0.03, 0.9)]).is_monotone_within(3.0));
        assert!(!curve(&[(0.01, 0.9), (0.02, 0.1)]).is_monotone_within(3.0));
    }

    #[test]
    fn rejects_mixed_polarity() {
        let cfg = SensorConfig {
            width: 2,
            height: 2,
            ..Default::default()
        };
        assert!(measure_s_curve(&cfg, &[0.01, -0.01], 1.0, 1).is_err());
        assert!(measure_s_curve(&cfg, &[], 1.0, 1).is_err());
        assert!(measure_s_curve(&cfg, &[0.01], 1.0, 0).is_err());
    }
}
