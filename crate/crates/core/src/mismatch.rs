//! Per-pixel threshold mismatch.

use rand_distr::{Distribution, Normal};

use crate::config::SensorConfig;
use crate::rng::global_stream;

const MISMATCH_STREAM: u64 = 1;

/// Multiplicative log-normal factors applied to the nominal ON/OFF thresholds.
#[derive(Debug, Clone, PartialEq)]
pub struct MismatchMap {
    pub width: u32,
    pub height: u32,
    on: Vec<f64>,
    off: Vec<f64>,
}

impl MismatchMap {
    pub fn uniform(width: u32, height: u32) -> Self {
        let n = width as usize * height as usize;
        Self {
            width,
            height,
            on: vec![1.0; n],
            off: vec![1.0; n],
        }
    }

    #[inline]
    fn index(&self, x: u32, y: u32) -> usize {
        y as usize * self.width as usize + x as usize
    }

    pub fn on_factor(&self, x: u32, y: u32) -> f64 {
        self.on[self.index(x, y)]
    }

    pub fn off_factor(&self, x: u32, y: u32) -> f64 {
        self.off[self.index(x, y)]
    }

    pub fn on_factors(&self) -> &[f64] {
        &self.on
    }

    pub fn off_factors(&self) -> &[f64] {
        &self.off
    }
}

/// Draw `exp(Normal(0, mismatch_sigma))` for every pixel and polarity.
///
/// The map depends only on (seed, width, height, mismatch_sigma).
pub fn build_mismatch_map(cfg: &SensorConfig) -> MismatchMap {
    let sigma = cfg.mismatch_sigma;
    if sigma == 0.0 {
        return MismatchMap::uniform(cfg.width, cfg.height);
    }
    let normal = Normal::new(0.0, sigma).expect("validated sigma");
    let mut rng = global_stream(cfg.seed, MISMATCH_STREAM);
    let n = cfg.pixel_count();
    let mut on = Vec::with_capacity(n);
    let mut off = Vec::with_capacity(n);
    for _ in 0..n {
        on.push(normal.sample(&mut rng).exp());
        off.push(normal.sample(&mut rng).exp());
    }
    MismatchMap {
        width: cfg.width,
        height: cfg.height,
        on,
        off,
    }
}
