//! Whole-array stepping.
//!
//! Pixels only interact through 2x2 binning, so the array is cut into bands
//! of whole rows (an even number when binning) and every band advances
//! independently. Each pixel owns its random stream, which makes the output
//! independent of the band layout and of the worker count. Per-band events
//! are merged into canonical `(t, y, x)` order.

use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;
use rayon::{ThreadPool, ThreadPoolBuilder};

use crate::config::{NoiseMode, SensorConfig};
use crate::error::Result;
use crate::frontend::{draw_count, NoiseModel};
use crate::mismatch::build_mismatch_map;
use crate::pixel::{bin_photons, lowpass_alpha, PixelState, Preamp};
use crate::readout::Event;
use crate::rng::{derive_seed, pixel_stream_unchecked, PixelRng};
use crate::stimulus::{photoelectron_rate, Stimulus};

const RESIDUAL_SALT: u64 = 0x2E51;

/// Step constants shared by every band.
#[derive(Debug, Clone)]
struct Chain {
    width: u32,
    alpha: f64,
    amp: Preamp,
    noise: NoiseModel,
    refractory_us: u64,
    binned: bool,
    force_reset: bool,
    /// Single-photodiode rate per lux.
    rate_per_lux: f64,
    /// Reference rate for the log signal (1 lux, bin-aware).
    ref_rate: f64,
}

impl Chain {
    #[inline]
    fn can_fire(&self, x: u32, y: u32) -> bool {
        !(self.binned && self.force_reset) || (x.is_multiple_of(2) && y.is_multiple_of(2))
    }
}

/// Dynamic state of the full pixel array.
pub struct PixelArray {
    cfg: SensorConfig,
    chain: Chain,
    states: Vec<PixelState>,
    rngs: Vec<PixelRng>,
    t_us: u64,
    workers: usize,
    pool: Option<Arc<ThreadPool>>,
}

impl PixelArray {
    /// Validated, settled array whose pixels are centered on the scene at
    /// `t = 0`. Random streams are keyed by `cfg.seed`.
    pub fn new<S: Stimulus + ?Sized>(cfg: &SensorConfig, scene: &S) -> Result<Self> {
        Self::starting_at(cfg, scene, 0)
    }

    pub fn starting_at<S: Stimulus + ?Sized>(cfg: &SensorConfig, scene: &S, t0_us: u64) -> Result<Self> {
        let cfg = cfg.clone().validate()?;
        let rate_per_lux = photoelectron_rate(1.0, &cfg, false);
        let binned = cfg.binning_enabled;
        let chain = Chain {
            width: cfg.width,
            alpha: lowpass_alpha(cfg.dt_us, cfg.f_cut_hz),
            amp: Preamp::from_config(&cfg),
            noise: NoiseModel::new(&cfg),
            refractory_us: cfg.refractory_us,
            binned,
            force_reset: cfg.force_reset,
            rate_per_lux,
            ref_rate: if binned { 4.0 * rate_per_lux } else { rate_per_lux },
        };
        let mismatch = build_mismatch_map(&cfg);
        let mut states = Vec::with_capacity(cfg.pixel_count());
        let mut rngs = Vec::with_capacity(cfg.pixel_count());
        for y in 0..cfg.height {
            for x in 0..cfg.width {
                let rate = if binned {
                    let (mx, my) = (x & !1, y & !1);
                    let lux: f64 = [(mx, my), (mx + 1, my), (mx, my + 1), (mx + 1, my + 1)]
                        .iter()
                        .map(|&(px, py)| scene.illuminance_at(px, py, t0_us))
                        .sum();
                    lux * rate_per_lux
                } else {
                    scene.illuminance_at(x, y, t0_us) * rate_per_lux
                };
                let ell = chain.noise.noiseless(rate, chain.ref_rate);
                states.push(PixelState::centered(
                    ell,
                    cfg.theta_on * mismatch.on_factor(x, y),
                    cfg.theta_off * mismatch.off_factor(x, y),
                    &chain.amp,
                ));
                rngs.push(pixel_stream_unchecked(cfg.seed, x, y));
            }
        }
        Ok(Self {
            cfg,
            chain,
            states,
            rngs,
            t_us: t0_us,
            workers: 1,
            pool: None,
        })
    }

    /// Bound parallelism to `n` workers. Results do not depend on `n`.
    pub fn with_workers(mut self, n: usize) -> Self {
        let n = n.max(1);
        self.workers = n;
        self.pool = if n > 1 {
            ThreadPoolBuilder::new().num_threads(n).build().ok().map(Arc::new)
        } else {
            None
        };
        self
    }

    /// Re-key the per-pixel noise streams. The mismatch map stays the one
    /// drawn from `cfg.seed`, so repeated trials share fixed-pattern offsets.
    pub fn with_noise_seed(mut self, seed: u64) -> Self {
        let w = self.cfg.width;
        for (i, rng) in self.rngs.iter_mut().enumerate() {
            *rng = pixel_stream_unchecked(seed, i as u32 % w, i as u32 / w);
        }
        self
    }

    /// Give every pixel a residual drawn uniformly from `(−θ_off, θ_on)`
    /// between its detector input and memorized level, as left behind by
    /// an unknown history of earlier changes.
    pub fn with_random_residuals(mut self, seed: u64) -> Self {
        let w = self.cfg.width;
        let seed = derive_seed(seed, RESIDUAL_SALT);
        for (i, s) in self.states.iter_mut().enumerate() {
            let mut rng = pixel_stream_unchecked(seed, i as u32 % w, i as u32 / w);
            let u = rng.random_range(-s.theta_off_px..s.theta_on_px);
            s.v_mem = s.detector_input(&self.chain.amp) - u;
        }
        self
    }

    pub fn config(&self) -> &SensorConfig {
        &self.cfg
    }

    pub fn time_us(&self) -> u64 {
        self.t_us
    }

    pub fn states(&self) -> &[PixelState] {
        &self.states
    }

    pub fn state(&self, x: u32, y: u32) -> &PixelState {
        &self.states[y as usize * self.cfg.width as usize + x as usize]
    }

    /// Advance one `dt` step and return its events in `(y, x)` order.
    pub fn step<S: Stimulus + ?Sized>(&mut self, scene: &S) -> Vec<Event> {
        let t = self.t_us + self.cfg.dt_us;
        self.process(scene, t, t)
    }

    /// Step repeatedly until `t_end_us` and return the merged, sorted events.
    pub fn run_events<S: Stimulus + ?Sized>(&mut self, scene: &S, t_end_us: u64) -> Vec<Event> {
        let t_first = self.t_us + self.cfg.dt_us;
        self.process(scene, t_first, t_end_us)
    }

    /// Step until `t_end_us`, folding events into one accumulator per band
    /// (returned in band order) instead of materializing the stream.
    pub fn run_fold<S, A, I, F>(&mut self, scene: &S, t_end_us: u64, init: I, fold: F) -> Vec<A>
    where
        S: Stimulus + ?Sized,
        A: Send,
        I: Fn() -> A + Sync,
        F: Fn(&mut A, Event) + Sync,
    {
        let t_first = self.t_us + self.cfg.dt_us;
        self.fold_bands(scene, t_first, t_end_us, init, fold)
    }

    /// Per-pixel `(on, off)` counts until `t_end_us`.
    pub fn run_counts<S: Stimulus + ?Sized>(&mut self, scene: &S, t_end_us: u64) -> Vec<(u32, u32)> {
        let width = self.cfg.width as usize;
        let n = self.cfg.pixel_count();
        let bands = self.run_fold(
            scene,
            t_end_us,
            || vec![(0u32, 0u32); n],
            |acc, e| {
                let c = &mut acc[e.y as usize * width + e.x as usize];
                match e.polarity {
                    crate::readout::Polarity::On => c.0 += 1,
                    crate::readout::Polarity::Off => c.1 += 1,
                }
            },
        );
        let mut total = vec![(0u32, 0u32); n];
        for band in bands {
            for (t, b) in total.iter_mut().zip(band) {
                t.0 += b.0;
                t.1 += b.1;
            }
        }
        total
    }

    fn process<S: Stimulus + ?Sized>(&mut self, scene: &S, t_first: u64, t_end: u64) -> Vec<Event> {
        let bands = self.fold_bands(scene, t_first, t_end, Vec::new, |v: &mut Vec<Event>, e| v.push(e));
        let mut events: Vec<Event> = bands.into_iter().flatten().collect();
        // keys are unique: one event per pixel per step at most
        events.sort_unstable_by_key(Event::order_key);
        events
    }

    fn fold_bands<S, A, I, F>(&mut self, scene: &S, t_first: u64, t_end: u64, init: I, fold: F) -> Vec<A>
    where
        S: Stimulus + ?Sized,
        A: Send,
        I: Fn() -> A + Sync,
        F: Fn(&mut A, Event) + Sync,
    {
        let dt = self.cfg.dt_us;
        if t_end < t_first {
            return vec![init()];
        }
        let n_steps = (t_end - t_first) / dt + 1;
        let width = self.cfg.width as usize;
        let height = self.cfg.height as usize;
        let mut rows_per_band = height.div_ceil(self.workers * 4).max(1);
        if self.chain.binned && rows_per_band % 2 == 1 {
            rows_per_band += 1;
        }
        let chunk = rows_per_band * width;
        let chain = &self.chain;
        let run_band = |(band, (states, rngs)): (usize, (&mut [PixelState], &mut [PixelRng]))| {
            let mut acc = init();
            let y0 = (band * rows_per_band) as u32;
            let mut band_run = Band {
                chain,
                y0,
                states,
                rngs,
                scratch: Vec::new(),
            };
            for k in 0..n_steps {
                band_run.step(scene, t_first + k * dt, &mut |e| fold(&mut acc, e));
            }
            acc
        };
        let results: Vec<A> = match (&self.pool, self.workers) {
            (Some(pool), n) if n > 1 => pool.install(|| {
                self.states
                    .par_chunks_mut(chunk)
                    .zip(self.rngs.par_chunks_mut(chunk))
                    .enumerate()
                    .map(run_band)
                    .collect()
            }),
            _ => self
                .states
                .chunks_mut(chunk)
                .zip(self.rngs.chunks_mut(chunk))
                .enumerate()
                .map(run_band)
                .collect(),
        };
        self.t_us = t_first + (n_steps - 1) * dt;
        results
    }
}

/// Advance every pixel by one step at `t_us`, returning the step's events.
pub fn step_array<S: Stimulus + ?Sized>(array: &mut PixelArray, scene: &S, t_us: u64) -> Vec<Event> {
    array.process(scene, t_us, t_us)
}

struct Band<'a> {
    chain: &'a Chain,
    y0: u32,
    states: &'a mut [PixelState],
    rngs: &'a mut [PixelRng],
    scratch: Vec<f64>,
}

impl Band<'_> {
    fn step<S: Stimulus + ?Sized>(&mut self, scene: &S, t: u64, emit: &mut impl FnMut(Event)) {
        let c = self.chain;
        let w = c.width as usize;
        if c.binned {
            self.binned_signals(scene, t);
            for (i, state) in self.states.iter_mut().enumerate() {
                let x = (i % w) as u32;
                let y = self.y0 + (i / w) as u32;
                let fired = state.update(self.scratch[i], t, c.alpha, &c.amp, c.refractory_us, c.can_fire(x, y));
                if let Some(polarity) = fired {
                    emit(Event {
                        t_us: t,
                        x: x as u16,
                        y: y as u16,
                        polarity,
                    });
                }
            }
        } else {
            for (i, (state, rng)) in self.states.iter_mut().zip(self.rngs.iter_mut()).enumerate() {
                let x = (i % w) as u32;
                let y = self.y0 + (i / w) as u32;
                let rate = scene.illuminance_at(x, y, t) * c.rate_per_lux;
                let ell = c.noise.sample(rate, c.ref_rate, rng).ell;
                if let Some(polarity) = state.update(ell, t, c.alpha, &c.amp, c.refractory_us, true) {
                    emit(Event {
                        t_us: t,
                        x: x as u16,
                        y: y as u16,
                        polarity,
                    });
                }
            }
        }
    }

    /// Shared log signal of every 2x2 group, written to all four members.
    fn binned_signals<S: Stimulus + ?Sized>(&mut self, scene: &S, t: u64) {
        let c = self.chain;
        let w = c.width as usize;
        let n = self.states.len();
        self.scratch.resize(n, 0.0);
        let rows = n / w;
        for gy in (0..rows).step_by(2) {
            for gx in (0..w).step_by(2) {
                let idx = [gy * w + gx, gy * w + gx + 1, (gy + 1) * w + gx, (gy + 1) * w + gx + 1];
                let y = self.y0 + gy as u32;
                let x = gx as u32;
                let rates = [
                    scene.illuminance_at(x, y, t) * c.rate_per_lux,
                    scene.illuminance_at(x + 1, y, t) * c.rate_per_lux,
                    scene.illuminance_at(x, y + 1, t) * c.rate_per_lux,
                    scene.illuminance_at(x + 1, y + 1, t) * c.rate_per_lux,
                ];
                let total_rate: f64 = rates.iter().sum();
                let ell = match c.noise.mode {
                    NoiseMode::Off => c.noise.noiseless(total_rate, c.ref_rate),
                    NoiseMode::AnalyticGaussian => c.noise.analytic(total_rate, c.ref_rate, &mut self.rngs[idx[0]]),
                    NoiseMode::PoissonPlusBuffer => {
                        let mut counts = [0.0; 4];
                        for k in 0..4 {
                            counts[k] = draw_count(c.noise.mean_count(rates[k]), &mut self.rngs[idx[k]]);
                        }
                        let shared = bin_photons(counts);
                        c.noise.from_count(shared, total_rate, c.ref_rate, &mut self.rngs[idx[0]])
                    }
                };
                for &i in &idx {
                    self.scratch[i] = ell;
                }
            }
        }
    }
}
