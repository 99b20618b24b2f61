//! Time-varying illuminance fields on the pixel plane.
//!
//! Contrast steps are multiplicative: stepping by `C` multiplies illuminance
//! by `1 + C`, so a step changes log intensity by exactly `ln(1 + C)`.

use std::f64::consts::TAU;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::SensorConfig;
use crate::error::{Error, Result};
use crate::kv::KvDocument;
use crate::readout::Polarity;

/// Visible photons per lux per second per square micron.
pub const PHOTONS_PER_LUX_S_UM2: f64 = 1e4;

/// Anything that can report chip illuminance (lux) at a pixel and time.
pub trait Stimulus: Sync {
    fn illuminance_at(&self, x: u32, y: u32, t_us: u64) -> f64;
}

impl<F> Stimulus for F
where
    F: Fn(u32, u32, u64) -> f64 + Sync,
{
    fn illuminance_at(&self, x: u32, y: u32, t_us: u64) -> f64 {
        self(x, y, t_us)
    }
}

/// Photoelectrons per second collected by one pixel (or one 2x2 bin).
pub fn photoelectron_rate(lux: f64, cfg: &SensorConfig, binned: bool) -> f64 {
    let bin = if binned { 4.0 } else { 1.0 };
    lux * PHOTONS_PER_LUX_S_UM2 * cfg.qe * cfg.pixel_pitch_um * cfg.pixel_pitch_um * bin
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepProtocol {
    pub base_lux: f64,
    pub reset_contrast: f64,
    /// Signed test contrast: positive for an ON step, negative for OFF.
    pub test_contrast: f64,
    pub t_reset_us: u64,
    pub t_test_us: u64,
    pub t_window_us: u64,
}

impl StepProtocol {
    pub fn new(base_lux: f64, test_contrast: f64) -> Self {
        Self {
            base_lux,
            reset_contrast: 0.60,
            test_contrast,
            t_reset_us: 10_000,
            t_test_us: 410_000,
            t_window_us: 200_000,
        }
    }

    /// The reset pulse occupies the first half of `[t_reset, t_test)`; the
    /// second half lets the pixel settle back at `base_lux`.
    pub fn pulse_end_us(&self) -> u64 {
        self.t_reset_us + (self.t_test_us - self.t_reset_us) / 2
    }

    pub fn end_us(&self) -> u64 {
        self.t_test_us + self.t_window_us
    }

    fn level(&self, t_us: u64) -> f64 {
        if t_us >= self.t_test_us {
            self.base_lux * (1.0 + self.test_contrast)
        } else if t_us >= self.t_reset_us && t_us < self.pulse_end_us() {
            self.base_lux * (1.0 + self.reset_contrast)
        } else {
            self.base_lux
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Wedge {
    /// Contrast magnitude in (0, 1).
    pub contrast: f64,
    pub polarity: Polarity,
}

impl Wedge {
    pub fn signed(&self) -> f64 {
        match self.polarity {
            Polarity::On => self.contrast,
            Polarity::Off => -self.contrast,
        }
    }
}

/// Which part of a wedge group a chart segment belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SegmentKind {
    Reset,
    Baseline,
    Test,
}

/// Synthetic rotating chart made of equal angular segments around a center.
///
/// Each wedge contributes three consecutive segments: a bright reset bar at
/// `base * (1 + reset_edge_contrast)`, a baseline segment at `base`, and the
/// test segment at `base * (1 + C)`. A pixel therefore sees, per wedge, a
/// large reset edge, a settling interval, and then the low-contrast test
/// edge, once per revolution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RotatingChart {
    pub base_lux: f64,
    pub wedges: Vec<Wedge>,
    pub reset_edge_contrast: f64,
    pub rotation_hz: f64,
    pub center: (f64, f64),
}

/// Default rotation period: every wedge crosses every pixel once per 200 ms.
pub const CHART_PERIOD_US: u64 = 200_000;

impl RotatingChart {
    /// Chart centered on a `width` x `height` array turning once per
    /// [`CHART_PERIOD_US`].
    pub fn new(base_lux: f64, wedges: Vec<Wedge>, width: u32, height: u32) -> Self {
        Self {
            base_lux,
            wedges,
            reset_edge_contrast: 0.20,
            rotation_hz: 1e6 / CHART_PERIOD_US as f64,
            center: (width as f64 / 2.0, height as f64 / 2.0),
        }
    }

    pub fn segment_count(&self) -> usize {
        3 * self.wedges.len()
    }

    pub fn period_us(&self) -> f64 {
        1e6 / self.rotation_hz
    }

    pub fn dwell_us(&self) -> f64 {
        self.period_us() / self.segment_count() as f64
    }

    pub fn segment_kind(seg: usize) -> (usize, SegmentKind) {
        let kind = match seg % 3 {
            0 => SegmentKind::Reset,
            1 => SegmentKind::Baseline,
            _ => SegmentKind::Test,
        };
        (seg / 3, kind)
    }

    /// Angular position of the pixel center, as a fraction of a turn.
    pub fn pixel_phase(&self, x: u32, y: u32) -> f64 {
        let dx = x as f64 + 0.5 - self.center.0;
        let dy = y as f64 + 0.5 - self.center.1;
        (dy.atan2(dx) / TAU).rem_euclid(1.0)
    }

    fn chart_position(&self, x: u32, y: u32, t_us: u64) -> f64 {
        (self.pixel_phase(x, y) + self.rotation_hz * t_us as f64 * 1e-6).rem_euclid(1.0)
    }

    pub fn segment_at(&self, x: u32, y: u32, t_us: u64) -> usize {
        let n = self.segment_count();
        ((self.chart_position(x, y, t_us) * n as f64) as usize).min(n - 1)
    }

    /// Times (µs, fractional) at which segment `seg` reaches pixel (x, y)
    /// within `[0, t_end_us)`.
    pub fn entry_times(&self, x: u32, y: u32, seg: usize, t_end_us: u64) -> Vec<f64> {
        let n = self.segment_count() as f64;
        let lead = (seg as f64 / n - self.pixel_phase(x, y)).rem_euclid(1.0);
        let period = self.period_us();
        let mut out = Vec::new();
        let mut t = lead * period;
        while t < t_end_us as f64 {
            out.push(t);
            t += period;
        }
        out
    }

    fn level(&self, x: u32, y: u32, t_us: u64) -> f64 {
        let (wedge, kind) = Self::segment_kind(self.segment_at(x, y, t_us));
        match kind {
            SegmentKind::Reset => self.base_lux * (1.0 + self.reset_edge_contrast),
            SegmentKind::Baseline => self.base_lux,
            SegmentKind::Test => self.base_lux * (1.0 + self.wedges[wedge].signed()),
        }
    }
}

/// Binary mask image; `true` marks pattern pixels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mask {
    pub width: u32,
    pub height: u32,
    pub data: Vec<bool>,
}

impl Mask {
    /// Load a PGM (or any PNM) file; pixels at or above half scale are set.
    pub fn load_pgm(path: impl AsRef<Path>) -> Result<Self> {
        let img = image::open(path)?.to_luma8();
        let (width, height) = img.dimensions();
        let data = img.pixels().map(|p| p.0[0] >= 128).collect();
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn get_wrapped(&self, x: i64, y: i64) -> bool {
        let mx = x.rem_euclid(self.width as i64) as usize;
        let my = y.rem_euclid(self.height as i64) as usize;
        self.data[my * self.width as usize + mx]
    }
}

/// Mask translated at constant velocity, tiled periodically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MovingPattern {
    pub base_lux: f64,
    pub mask: Mask,
    /// Pixels per second along x and y.
    pub velocity: (f64, f64),
    pub pattern_contrast: f64,
}

impl MovingPattern {
    fn level(&self, x: u32, y: u32, t_us: u64) -> f64 {
        let t = t_us as f64 * 1e-6;
        let mx = (x as f64 - self.velocity.0 * t).floor() as i64;
        let my = (y as f64 - self.velocity.1 * t).floor() as i64;
        if self.mask.get_wrapped(mx, my) {
            self.base_lux * (1.0 + self.pattern_contrast)
        } else {
            self.base_lux
        }
    }
}

/// Uniform staircase: illuminance rises by `step_db` (20·log10 convention)
/// every `step_us`, for `steps` steps, then holds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Staircase {
    pub base_lux: f64,
    pub step_db: f64,
    pub steps: u32,
    pub step_us: u64,
}

impl Staircase {
    fn level(&self, t_us: u64) -> f64 {
        let k = (t_us / self.step_us).min(self.steps as u64) as f64;
        self.base_lux * 10f64.powf(self.step_db * k / 20.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum SceneKind {
    Constant { lux: f64 },
    Step(StepProtocol),
    Chart(RotatingChart),
    Pattern(MovingPattern),
    Staircase(Staircase),
}

/// Rectangle `[x0, x1) x [y0, y1)` whose illuminance is scaled by `factor`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegionAttenuation {
    pub x0: u32,
    pub y0: u32,
    pub x1: u32,
    pub y1: u32,
    pub factor: f64,
}

impl RegionAttenuation {
    /// Two-stop neutral density filter.
    pub const ND4: f64 = 0.25;

    fn contains(&self, x: u32, y: u32) -> bool {
        x >= self.x0 && x < self.x1 && y >= self.y0 && y < self.y1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub kind: SceneKind,
    #[serde(default)]
    pub attenuation: Vec<RegionAttenuation>,
}

impl From<SceneKind> for SceneSpec {
    fn from(kind: SceneKind) -> Self {
        Self {
            kind,
            attenuation: Vec::new(),
        }
    }
}

impl SceneSpec {
    pub fn constant(lux: f64) -> Self {
        SceneKind::Constant { lux }.into()
    }

    pub fn with_attenuation(mut self, region: RegionAttenuation) -> Self {
        self.attenuation.push(region);
        self
    }

    pub fn base_lux(&self) -> f64 {
        match &self.kind {
            SceneKind::Constant { lux } => *lux,
            SceneKind::Step(s) => s.base_lux,
            SceneKind::Chart(c) => c.base_lux,
            SceneKind::Pattern(p) => p.base_lux,
            SceneKind::Staircase(s) => s.base_lux,
        }
    }

    /// Check the scene invariants: nonnegative lux, contrasts in (-1, 1),
    /// attenuation in (0, 1].
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Precondition(msg));
        let contrast_ok = |c: f64| c > -1.0 && c < 1.0;
        let base = self.base_lux();
        if !(base >= 0.0) || !base.is_finite() {
            return bad(format!("base illuminance must be >= 0, got {base}"));
        }
        match &self.kind {
            SceneKind::Constant { .. } => {}
            SceneKind::Step(s) => {
                if !contrast_ok(s.reset_contrast) || !contrast_ok(s.test_contrast) {
                    return bad("step contrasts must lie in (-1, 1)".into());
                }
                if s.t_test_us <= s.t_reset_us || s.t_window_us == 0 {
                    return bad("step protocol needs t_reset < t_test and a nonzero window".into());
                }
            }
            SceneKind::Chart(c) => {
                if c.wedges.is_empty() {
                    return bad("chart needs at least one wedge".into());
                }
                if c.wedges.iter().any(|w| !(w.contrast > 0.0 && w.contrast < 1.0))
                    || !contrast_ok(c.reset_edge_contrast)
                {
                    return bad("chart contrasts must lie in (-1, 1)".into());
                }
                if !(c.rotation_hz > 0.0) {
                    return bad("chart rotation_hz must be > 0".into());
                }
            }
            SceneKind::Pattern(p) => {
                if !contrast_ok(p.pattern_contrast) {
                    return bad("pattern contrast must lie in (-1, 1)".into());
                }
                if p.mask.width == 0 || p.mask.height == 0 {
                    return bad("empty pattern mask".into());
                }
            }
            SceneKind::Staircase(s) => {
                if s.step_us == 0 {
                    return bad("staircase step_us must be > 0".into());
                }
            }
        }
        if let Some(r) = self.attenuation.iter().find(|r| !(r.factor > 0.0 && r.factor <= 1.0)) {
            return bad(format!("attenuation factor must be in (0, 1], got {}", r.factor));
        }
        Ok(())
    }

    /// Parse `scene.*` keys of `doc`. Relative mask paths resolve against `base_dir`.
    pub fn from_kv(doc: &KvDocument, cfg: &SensorConfig, base_dir: Option<&Path>) -> Result<Self> {
        let scene = parse_scene(doc, cfg, base_dir)?;
        scene.validate()?;
        Ok(scene)
    }
}

/// Chip illuminance (lux) of `scene` at pixel (x, y) and time `t_us`.
pub fn illuminance_at(scene: &SceneSpec, x: u32, y: u32, t_us: u64) -> f64 {
    let base = match &scene.kind {
        SceneKind::Constant { lux } => *lux,
        SceneKind::Step(s) => s.level(t_us),
        SceneKind::Chart(c) => c.level(x, y, t_us),
        SceneKind::Pattern(p) => p.level(x, y, t_us),
        SceneKind::Staircase(s) => s.level(t_us),
    };
    scene
        .attenuation
        .iter()
        .filter(|r| r.contains(x, y))
        .fold(base, |lux, r| lux * r.factor)
}

impl Stimulus for SceneSpec {
    fn illuminance_at(&self, x: u32, y: u32, t_us: u64) -> f64 {
        illuminance_at(self, x, y, t_us)
    }
}

const SCENE_KEYS: &[&str] = &[
    "scene.type",
    "scene.lux",
    "scene.base_lux",
    "scene.reset_contrast",
    "scene.test_contrast",
    "scene.t_reset_us",
    "scene.t_test_us",
    "scene.t_window_us",
    "scene.wedges",
    "scene.reset_edge_contrast",
    "scene.rotation_hz",
    "scene.center_x",
    "scene.center_y",
    "scene.mask",
    "scene.velocity_x",
    "scene.velocity_y",
    "scene.pattern_contrast",
    "scene.step_db",
    "scene.steps",
    "scene.step_us",
    "scene.attenuation",
];

fn parse_scene(doc: &KvDocument, cfg: &SensorConfig, base_dir: Option<&Path>) -> Result<SceneSpec> {
    for (key, entry) in doc.iter() {
        if key.starts_with("scene.") && !SCENE_KEYS.contains(&key) {
            return Err(Error::parse(entry.line, format!("unknown scene key `{key}`")));
        }
    }
    let ty = doc
        .get("scene.type")
        .ok_or_else(|| Error::parse(0, "missing `scene.type`"))?;
    let base = || -> Result<f64> {
        doc.parsed::<f64>("scene.base_lux")?
            .or(doc.parsed::<f64>("scene.lux")?)
            .ok_or_else(|| Error::parse(ty.line, "missing `scene.base_lux`"))
    };
    let kind = match ty.value.as_str() {
        "constant" => SceneKind::Constant { lux: base()? },
        "step" => {
            let mut s = StepProtocol::new(base()?, doc.parsed("scene.test_contrast")?.unwrap_or(0.0));
            if let Some(v) = doc.parsed("scene.reset_contrast")? {
                s.reset_contrast = v;
            }
            if let Some(v) = doc.parsed("scene.t_reset_us")? {
                s.t_reset_us = v;
            }
            if let Some(v) = doc.parsed("scene.t_test_us")? {
                s.t_test_us = v;
            }
            if let Some(v) = doc.parsed("scene.t_window_us")? {
                s.t_window_us = v;
            }
            SceneKind::Step(s)
        }
        "chart" => {
            let entry = doc
                .get("scene.wedges")
                .ok_or_else(|| Error::parse(ty.line, "chart needs `scene.wedges`"))?;
            let wedges = parse_wedges(&entry.value).map_err(|m| Error::parse(entry.line, m))?;
            let mut c = RotatingChart::new(base()?, wedges, cfg.width, cfg.height);
            if let Some(v) = doc.parsed("scene.reset_edge_contrast")? {
                c.reset_edge_contrast = v;
            }
            if let Some(v) = doc.parsed("scene.rotation_hz")? {
                c.rotation_hz = v;
            }
            if let Some(v) = doc.parsed("scene.center_x")? {
                c.center.0 = v;
            }
            if let Some(v) = doc.parsed("scene.center_y")? {
                c.center.1 = v;
            }
            SceneKind::Chart(c)
        }
        "pattern" => {
            let entry = doc
                .get("scene.mask")
                .ok_or_else(|| Error::parse(ty.line, "pattern needs `scene.mask`"))?;
            let mut path = PathBuf::from(&entry.value);
            if path.is_relative() {
                if let Some(dir) = base_dir {
                    path = dir.join(path);
                }
            }
            SceneKind::Pattern(MovingPattern {
                base_lux: base()?,
                mask: Mask::load_pgm(&path)?,
                velocity: (
                    doc.parsed("scene.velocity_x")?.unwrap_or(0.0),
                    doc.parsed("scene.velocity_y")?.unwrap_or(0.0),
                ),
                pattern_contrast: doc.parsed("scene.pattern_contrast")?.unwrap_or(0.5),
            })
        }
        "staircase" => SceneKind::Staircase(Staircase {
            base_lux: base()?,
            step_db: doc.parsed("scene.step_db")?.unwrap_or(10.0),
            steps: doc.parsed("scene.steps")?.unwrap_or(10),
            step_us: doc.parsed("scene.step_us")?.unwrap_or(100_000),
        }),
        other => {
            return Err(Error::parse(
                ty.line,
                format!("unknown scene type `{other}` (constant, step, chart, pattern, staircase)"),
            ))
        }
    };
    let attenuation = match doc.get("scene.attenuation") {
        Some(e) => parse_attenuation(&e.value).map_err(|m| Error::parse(e.line, m))?,
        None => Vec::new(),
    };
    Ok(SceneSpec { kind, attenuation })
}

/// `0.01:on, 0.017:off` → wedges.
pub fn parse_wedges(s: &str) -> std::result::Result<Vec<Wedge>, String> {
    s.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|tok| {
            let (c, p) = tok
                .split_once(':')
                .ok_or_else(|| format!("wedge `{tok}` must be `contrast:on|off`"))?;
            let contrast = c.trim().parse::<f64>().map_err(|e| format!("wedge `{tok}`: {e}"))?;
            let polarity = match p.trim() {
                "on" | "ON" | "1" => Polarity::On,
                "off" | "OFF" | "0" => Polarity::Off,
                other => return Err(format!("wedge polarity `{other}` must be on or off")),
            };
            Ok(Wedge { contrast, polarity })
        })
        .collect()
}

/// `x0,y0,x1,y1,factor; ...` → regions.
fn parse_attenuation(s: &str) -> std::result::Result<Vec<RegionAttenuation>, String> {
    s.split(';')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|tok| {
            let parts: Vec<&str> = tok.split(',').map(str::trim).collect();
            if parts.len() != 5 {
                return Err(format!("attenuation `{tok}` must be x0,y0,x1,y1,factor"));
            }
            let int = |i: usize| parts[i].parse::<u32>().map_err(|e| format!("`{tok}`: {e}"));
            Ok(RegionAttenuation {
                x0: int(0)?,
                y0: int(1)?,
                x1: int(2)?,
                y1: int(3)?,
                factor: parts[4].parse().map_err(|e| format!("`{tok}`: {e}"))?,
            })
        })
        .collect()
}
