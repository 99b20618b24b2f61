//! Rotating-chart edge detection.

use serde::{Deserialize, Serialize};

use crate::array::PixelArray;
use crate::config::SensorConfig;
use crate::error::{Error, Result};
use crate::pixel::BinGroup;
use crate::readout::{Event, Polarity};
use crate::stimulus::{RotatingChart, SceneKind, SceneSpec, SegmentKind};

use super::noise::{noise_rate, NoisePoint};

/// Accumulation time after an edge passes a pixel.
pub const DETECTION_WINDOW_US: u64 = 200_000;

/// Noise budget for detection experiments, events per pixel per second.
pub const NOISE_BUDGET_HZ: f64 = 6.0;

/// Fraction of pixels that must respond for an edge to count as detected.
pub const DETECTION_FRACTION: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WedgeResult {
    /// Signed test contrast.
    pub contrast: f64,
    pub polarity: Polarity,
    /// Fraction of (active pixel, pass) looks with a correct-polarity event.
    pub fraction: f64,
    pub looks: u64,
    pub detected: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PixelResponseStats {
    /// Events per active pixel per second during the chart run.
    pub mean_event_rate_hz: f64,
    /// Per active pixel (row-major), fraction of test-edge looks answered.
    pub hit_fraction: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChartReport {
    pub wedges: Vec<WedgeResult>,
    /// Noise rate on a constant scene at the chart's base illuminance.
    pub noise: NoisePoint,
    pub noise_within_budget: bool,
    pub pixels: PixelResponseStats,
}

impl ChartReport {
    /// Smallest detected contrast magnitude of a polarity.
    pub fn min_detected(&self, polarity: Polarity) -> Option<f64> {
        self.wedges
            .iter()
            .filter(|w| w.detected && w.polarity == polarity)
            .map(|w| w.contrast.abs())
            .min_by(f64::total_cmp)
    }

    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["contrast", "polarity", "fraction", "looks", "detected"])?;
        for r in &self.wedges {
            w.write_record([
                r.contrast.to_string(),
                match r.polarity {
                    Polarity::On => "on".to_string(),
                    Polarity::Off => "off".to_string(),
                },
                r.fraction.to_string(),
                r.looks.to_string(),
                r.detected.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Run the chart for `duration_us` and decide detection per wedge.
///
/// A look starts once a wedge's test segment covers every illuminance sample
/// feeding the pixel (all four members of its group when binning) and lasts
/// [`DETECTION_WINDOW_US`] or until the next segment reaches any of them,
/// whichever is shorter. Looks
/// before a pixel has seen one full reset and baseline segment, or that do
/// not end before `duration_us`, are skipped. The noise rate is measured
/// separately on a constant scene at the chart base illuminance over the
/// same duration.
pub fn chart_detection(cfg: &SensorConfig, chart: &RotatingChart, duration_us: u64) -> Result<ChartReport> {
    Ok(chart_detection_with_events(cfg, chart, duration_us)?.0)
}

/// [`chart_detection`] that also returns the recorded event stream.
pub fn chart_detection_with_events(
    cfg: &SensorConfig,
    chart: &RotatingChart,
    duration_us: u64,
) -> Result<(ChartReport, Vec<Event>)> {
    let scene: SceneSpec = SceneKind::Chart(chart.clone()).into();
    scene.validate()?;
    let cfg = cfg.clone().validate()?;
    let events = PixelArray::new(&cfg, &scene)?.run_events(&scene, duration_us);
    let (wedges, hit_fraction) = score_chart(&cfg, chart, &events, duration_us)?;
    let noise = noise_rate(&cfg, chart.base_lux, duration_us)?;
    let pixel_seconds = cfg.active_pixels() as f64 * duration_us as f64 * 1e-6;
    let report = ChartReport {
        wedges,
        noise_within_budget: noise.rate_hz_per_px < NOISE_BUDGET_HZ,
        noise,
        pixels: PixelResponseStats {
            mean_event_rate_hz: events.len() as f64 / pixel_seconds,
            hit_fraction,
        },
    };
    Ok((report, events))
}

/// Phase lag, in turns, of each illuminance sample feeding pixel (x, y)
/// relative to the pixel itself: the 2x2 group when binning, else the pixel.
fn footprint_offsets(cfg: &SensorConfig, chart: &RotatingChart, x: u32, y: u32) -> Vec<f64> {
    let own = chart.pixel_phase(x, y);
    let members = if cfg.binning_enabled {
        BinGroup::containing(x, y).members().to_vec()
    } else {
        vec![(x, y)]
    };
    members
        .into_iter()
        .map(|(mx, my)| {
            let d = (own - chart.pixel_phase(mx, my)).rem_euclid(1.0);
            if d > 0.5 {
                d - 1.0
            } else {
                d
            }
        })
        .collect()
}

/// Score an already recorded event stream against the chart geometry.
pub fn score_chart(
    cfg: &SensorConfig,
    chart: &RotatingChart,
    events: &[Event],
    duration_us: u64,
) -> Result<(Vec<WedgeResult>, Vec<f64>)> {
    let w = cfg.width as usize;
    let mut by_pixel: Vec<Vec<(u64, Polarity)>> = vec![Vec::new(); cfg.pixel_count()];
    for e in events {
        if e.x as u32 >= cfg.width || e.y as u32 >= cfg.height {
            return Err(Error::OutOfRange {
                x: e.x as u32,
                y: e.y as u32,
                width: cfg.width,
                height: cfg.height,
            });
        }
        by_pixel[e.y as usize * w + e.x as usize].push((e.t_us, e.polarity));
    }
    let dwell = chart.dwell_us();
    let period = chart.period_us();
    let n_seg = chart.segment_count();
    let mut looks = vec![0u64; chart.wedges.len()];
    let mut hits = vec![0u64; chart.wedges.len()];
    let mut hit_fraction = Vec::with_capacity(cfg.active_pixels());
    for y in 0..cfg.height {
        for x in 0..cfg.width {
            if !cfg.is_active(x, y) {
                continue;
            }
            let offsets = footprint_offsets(cfg, chart, x, y);
            let (lag, lead) = offsets
                .iter()
                .fold((0.0f64, 0.0f64), |(hi, lo), &d| (hi.max(d), lo.min(d)));
            let evs = &by_pixel[y as usize * w + x as usize];
            let (mut px_looks, mut px_hits) = (0u64, 0u64);
            for seg in 0..n_seg {
                let (wedge, kind) = RotatingChart::segment_kind(seg);
                if kind != SegmentKind::Test {
                    continue;
                }
                let want = chart.wedges[wedge].polarity;
                for entry in chart.entry_times(x, y, seg, duration_us) {
                    // the whole footprint must sit inside the test segment
                    let start = entry + lag * period;
                    let end = (start + DETECTION_WINDOW_US as f64).min(entry + lead * period + dwell);
                    if end <= start || entry < 2.0 * dwell || end > duration_us as f64 {
                        continue;
                    }
                    let (t0, t1) = (start.ceil() as u64, end.ceil() as u64);
                    let first = evs.partition_point(|&(t, _)| t < t0);
                    let hit = evs[first..]
                        .iter()
                        .take_while(|&&(t, _)| t < t1)
                        .any(|&(_, p)| p == want);
                    looks[wedge] += 1;
                    hits[wedge] += hit as u64;
                    px_looks += 1;
                    px_hits += hit as u64;
                }
            }
            hit_fraction.push(if px_looks > 0 {
                px_hits as f64 / px_looks as f64
            } else {
                0.0
            });
        }
    }
    let wedges = chart
        .wedges
        .iter()
        .enumerate()
        .map(|(i, wd)| {
            let fraction = if looks[i] > 0 {
                hits[i] as f64 / looks[i] as f64
            } else {
                0.0
            };
            WedgeResult {
                contrast: wd.signed(),
                polarity: wd.polarity,
                fraction,
                looks: looks[i],
                detected: looks[i] > 0 && fraction >= DETECTION_FRACTION,
            }
        })
        .collect();
    Ok((wedges, hit_fraction))
}
