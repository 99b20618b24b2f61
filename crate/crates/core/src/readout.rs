//! Event streams, their file formats, accumulation frames and the APS snapshot.
//!
//! Binary layout (little-endian): a 16-byte header (magic `SDVS`, u16
//! version (1), u16 width, u16 height, six zero bytes) followed by 13-byte
//! records of u64 `t_us`, u16 `x`, u16 `y`, u8 polarity (1 = ON, 0 = OFF).
//! CSV is one `t_us,x,y,p` line per event with no header.

use std::io::Write;
use std::path::Path;

use rand_distr::Distribution;
use serde::{Deserialize, Serialize};

use crate::config::SensorConfig;
use crate::error::{Error, Result};
use crate::frontend::sample_photoelectrons;
use crate::rng::{derive_seed, pixel_stream_unchecked};
use crate::stimulus::{photoelectron_rate, Stimulus};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    Off,
    On,
}

impl Polarity {
    pub fn bit(self) -> u8 {
        match self {
            Polarity::On => 1,
            Polarity::Off => 0,
        }
    }

    pub fn from_bit(b: u8) -> Option<Self> {
        match b {
            1 => Some(Polarity::On),
            0 => Some(Polarity::Off),
            _ => None,
        }
    }

    pub fn of_contrast(c: f64) -> Self {
        if c < 0.0 {
            Polarity::Off
        } else {
            Polarity::On
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Event {
    pub t_us: u64,
    pub x: u16,
    pub y: u16,
    pub polarity: Polarity,
}

impl Event {
    /// Canonical stream order.
    pub fn order_key(&self) -> (u64, u16, u16) {
        (self.t_us, self.y, self.x)
    }
}

pub fn is_sorted(events: &[Event]) -> bool {
    events.windows(2).all(|w| w[0].order_key() <= w[1].order_key())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EventFormat {
    Csv,
    Binary,
}

pub const MAGIC: &[u8; 4] = b"SDVS";
pub const FORMAT_VERSION: u16 = 1;
pub const HEADER_LEN: usize = 16;
pub const RECORD_LEN: usize = 13;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BinaryHeader {
    pub version: u16,
    pub width: u16,
    pub height: u16,
}

pub fn serialize_events(events: &[Event], format: EventFormat, width: u16, height: u16) -> Vec<u8> {
    match format {
        EventFormat::Csv => {
            let mut out = Vec::with_capacity(events.len() * 16);
            for e in events {
                // writing into a Vec cannot fail
                let _ = writeln!(out, "{},{},{},{}", e.t_us, e.x, e.y, e.polarity.bit());
            }
            out
        }
        EventFormat::Binary => {
            let mut out = Vec::with_capacity(HEADER_LEN + events.len() * RECORD_LEN);
            out.extend_from_slice(MAGIC);
            out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
            out.extend_from_slice(&width.to_le_bytes());
            out.extend_from_slice(&height.to_le_bytes());
            out.extend_from_slice(&[0u8; 6]);
            for e in events {
                out.extend_from_slice(&e.t_us.to_le_bytes());
                out.extend_from_slice(&e.x.to_le_bytes());
                out.extend_from_slice(&e.y.to_le_bytes());
                out.push(e.polarity.bit());
            }
            out
        }
    }
}

pub fn read_binary_header(bytes: &[u8]) -> Result<BinaryHeader> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Format(format!("header needs {HEADER_LEN} bytes, got {}", bytes.len())));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let u16_at = |i: usize| u16::from_le_bytes([bytes[i], bytes[i + 1]]);
    let header = BinaryHeader {
        version: u16_at(4),
        width: u16_at(6),
        height: u16_at(8),
    };
    if header.version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported version {}", header.version)));
    }
    if bytes[10..16].iter().any(|&b| b != 0) {
        return Err(Error::Format("reserved header bytes are not zero".into()));
    }
    Ok(header)
}

pub fn deserialize_events(bytes: &[u8], format: EventFormat) -> Result<Vec<Event>> {
    let events = match format {
        EventFormat::Csv => {
            let text = std::str::from_utf8(bytes).map_err(|e| Error::Format(e.to_string()))?;
            text.lines()
                .enumerate()
                .filter(|(_, l)| !l.trim().is_empty())
                .map(|(i, l)| parse_csv_line(l).ok_or_else(|| Error::Format(format!("bad csv line {}: `{l}`", i + 1))))
                .collect::<Result<Vec<_>>>()?
        }
        EventFormat::Binary => {
            let header = read_binary_header(bytes)?;
            let body = &bytes[HEADER_LEN..];
            if !body.len().is_multiple_of(RECORD_LEN) {
                return Err(Error::Format(format!(
                    "truncated record: {} trailing bytes",
                    body.len() % RECORD_LEN
                )));
            }
            body.chunks_exact(RECORD_LEN)
                .map(|r| {
                    let t_us = u64::from_le_bytes(r[0..8].try_into().unwrap());
                    let x = u16::from_le_bytes([r[8], r[9]]);
                    let y = u16::from_le_bytes([r[10], r[11]]);
                    let polarity = Polarity::from_bit(r[12])
                        .ok_or_else(|| Error::Format(format!("bad polarity byte {}", r[12])))?;
                    if x >= header.width || y >= header.height {
                        return Err(Error::Format(format!("event ({x}, {y}) outside header geometry")));
                    }
                    Ok(Event { t_us, x, y, polarity })
                })
                .collect::<Result<Vec<_>>>()?
        }
    };
    if !is_sorted(&events) {
        return Err(Error::Format("events are not sorted by (t, y, x)".into()));
    }
    Ok(events)
}

fn parse_csv_line(line: &str) -> Option<Event> {
    let mut it = line.trim().split(',');
    let t_us = it.next()?.trim().parse().ok()?;
    let x = it.next()?.trim().parse().ok()?;
    let y = it.next()?.trim().parse().ok()?;
    let polarity = Polarity::from_bit(it.next()?.trim().parse().ok()?)?;
    if it.next().is_some() {
        return None;
    }
    Some(Event { t_us, x, y, polarity })
}

/// Per-pixel ON/OFF event counts over a time window.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AccumulationFrame {
    pub width: u32,
    pub height: u32,
    pub t0_us: u64,
    pub window_us: u64,
    pub on: Vec<u32>,
    pub off: Vec<u32>,
}

impl AccumulationFrame {
    pub fn empty(width: u32, height: u32, t0_us: u64, window_us: u64) -> Self {
        let n = width as usize * height as usize;
        Self {
            width,
            height,
            t0_us,
            window_us,
            on: vec![0; n],
            off: vec![0; n],
        }
    }

    /// ON minus OFF per pixel.
    pub fn signed(&self) -> Vec<i64> {
        self.on
            .iter()
            .zip(&self.off)
            .map(|(&a, &b)| a as i64 - b as i64)
            .collect()
    }

    pub fn total(&self) -> u64 {
        self.on.iter().chain(&self.off).map(|&c| c as u64).sum()
    }

    /// Signed plane shifted to mid-gray 128 and clipped to a byte.
    pub fn to_gray(&self) -> Vec<u8> {
        self.signed()
            .into_iter()
            .map(|s| (128 + s).clamp(0, 255) as u8)
            .collect()
    }

    pub fn write_pgm(&self, path: impl AsRef<Path>) -> Result<()> {
        write_pgm8(path, self.width, self.height, &self.to_gray())
    }
}

/// Count events with `t0 ≤ t < t0 + window`.
pub fn accumulate(events: &[Event], width: u32, height: u32, t0_us: u64, window_us: u64) -> Result<AccumulationFrame> {
    if window_us == 0 {
        return Err(Error::Precondition("accumulation window must be > 0".into()));
    }
    let mut frame = AccumulationFrame::empty(width, height, t0_us, window_us);
    let end = t0_us.saturating_add(window_us);
    for e in events.iter().filter(|e| e.t_us >= t0_us && e.t_us < end) {
        if e.x as u32 >= width || e.y as u32 >= height {
            return Err(Error::OutOfRange {
                x: e.x as u32,
                y: e.y as u32,
                width,
                height,
            });
        }
        let i = e.y as usize * width as usize + e.x as usize;
        match e.polarity {
            Polarity::On => frame.on[i] += 1,
            Polarity::Off => frame.off[i] += 1,
        }
    }
    Ok(frame)
}

pub const APS_MAX: u16 = 511;

/// Global-shutter 9-bit intensity frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ApsFrame {
    pub width: u32,
    pub height: u32,
    pub exposure_us: u64,
    pub values: Vec<u16>,
}

impl ApsFrame {
    pub fn mean(&self) -> f64 {
        self.values.iter().map(|&v| v as f64).sum::<f64>() / self.values.len() as f64
    }

    /// 16-bit PGM with maxval 511.
    pub fn write_pgm(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = format!("P5\n{} {}\n{}\n", self.width, self.height, APS_MAX).into_bytes();
        for v in &self.values {
            out.extend_from_slice(&v.to_be_bytes());
        }
        std::fs::write(path, out)?;
        Ok(())
    }
}

const APS_STREAM_SALT: u64 = 0xA95;

/// Ideal integrating snapshot: Poisson photoelectrons over the exposure,
/// scaled by full well and rounded to 9 bits. Independent of any event
/// simulation state.
pub fn capture_aps<S: Stimulus + ?Sized>(
    scene: &S,
    t_us: u64,
    exposure_us: u64,
    cfg: &SensorConfig,
    seed: u64,
) -> Result<ApsFrame> {
    if exposure_us == 0 {
        return Err(Error::Precondition("exposure must be > 0".into()));
    }
    let frame_seed = derive_seed(seed, APS_STREAM_SALT);
    let mut values = Vec::with_capacity(cfg.pixel_count());
    for y in 0..cfg.height {
        for x in 0..cfg.width {
            let mut rng = pixel_stream_unchecked(frame_seed, x, y);
            let rate = photoelectron_rate(scene.illuminance_at(x, y, t_us), cfg, false);
            // APS collects every photon, so large means use the exact sampler too
            let mean = rate * exposure_us as f64 * 1e-6;
            let n = if mean > 0.0 && mean < 1e7 {
                rand_distr::Poisson::new(mean).expect("finite mean").sample(&mut rng)
            } else {
                sample_photoelectrons(rate, exposure_us, &mut rng)
            };
            values.push(quantize9(n / cfg.fullwell_e));
        }
    }
    Ok(ApsFrame {
        width: cfg.width,
        height: cfg.height,
        exposure_us,
        values,
    })
}

/// `round(min(1, fraction) · 511)`, floored at 0.
pub fn quantize9(fraction: f64) -> u16 {
    (fraction.clamp(0.0, 1.0) * APS_MAX as f64).round() as u16
}

pub fn write_pgm8(path: impl AsRef<Path>, width: u32, height: u32, data: &[u8]) -> Result<()> {
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(data);
    std::fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stimulus::SceneSpec;

    fn ev(t: u64, x: u16, y: u16, on: bool) -> Event {
        Event {
            t_us: t,
            x,
            y,
            polarity: if on { Polarity::On } else { Polarity::Off },
        }
    }

    #[test]
    fn empty_streams() {
        let bin = serialize_events(&[], EventFormat::Binary, 64, 32);
        assert_eq!(bin.len(), HEADER_LEN);
        assert_eq!(&bin[..4], b"SDVS");
        assert_eq!(
            read_binary_header(&bin).unwrap(),
            BinaryHeader {
                version: 1,
                width: 64,
                height: 32
            }
        );
        assert!(serialize_events(&[], EventFormat::Csv, 64, 32).is_empty());
        assert!(deserialize_events(&bin, EventFormat::Binary).unwrap().is_empty());
    }

    #[test]
    fn single_event_csv_line() {
        let bytes = serialize_events(&[ev(1000, 3, 5, true)], EventFormat::Csv, 8, 8);
        assert_eq!(bytes, b"1000,3,5,1\n");
        let bin = serialize_events(&[ev(1000, 3, 5, true)], EventFormat::Binary, 8, 8);
        assert_eq!(bin.len(), HEADER_LEN + RECORD_LEN);
        assert_eq!(&bin[16..24], &1000u64.to_le_bytes());
    }

    #[test]
    fn malformed_binary_rejected() {
        let mut bin = serialize_events(&[ev(1, 0, 0, false)], EventFormat::Binary, 8, 8);
        bin.pop();
        assert!(matches!(deserialize_events(&bin, EventFormat::Binary), Err(Error::Format(_))));
        assert!(deserialize_events(b"SDV", EventFormat::Binary).is_err());
        let mut bad = serialize_events(&[], EventFormat::Binary, 8, 8);
        bad[0] = b'X';
        assert!(deserialize_events(&bad, EventFormat::Binary).is_err());
        assert!(deserialize_events(b"1,2,3\n", EventFormat::Csv).is_err());
        assert!(deserialize_events(b"5,0,0,1\n4,0,0,1\n", EventFormat::Csv).is_err());
    }

    #[test]
    fn accumulate_windows() {
        let events = vec![ev(10, 2, 2, true), ev(20, 1, 0, false), ev(30, 2, 2, true)];
        let none = accumulate(&events, 4, 4, 100, 50).unwrap();
        assert_eq!(none.total(), 0);
        let one = accumulate(&events, 4, 4, 0, 15).unwrap();
        assert_eq!(one.on[2 * 4 + 2], 1);
        assert_eq!(one.total(), 1);
        let whole = accumulate(&events, 4, 4, 0, 40).unwrap();
        let a = accumulate(&events, 4, 4, 0, 20).unwrap();
        let b = accumulate(&events, 4, 4, 20, 20).unwrap();
        let summed: Vec<i64> = a.signed().iter().zip(b.signed()).map(|(x, y)| x + y).collect();
        assert_eq!(summed, whole.signed());
        assert_eq!(whole.signed()[1], -1);
        assert_eq!(whole.to_gray()[2 * 4 + 2], 130);
        assert!(accumulate(&events, 4, 4, 0, 0).is_err());
    }

    #[test]
    fn aps_dark_and_saturated() {
        let cfg = SensorConfig {
            width: 8,
            height: 8,
            ..Default::default()
        };
        let dark = capture_aps(&SceneSpec::constant(0.0), 0, 10_000, &cfg, 1).unwrap();
        assert!(dark.values.iter().all(|&v| v == 0));
        let bright = capture_aps(&SceneSpec::constant(1e4), 0, 10_000, &cfg, 1).unwrap();
        assert!(bright.values.iter().all(|&v| v == 511));
        assert!(capture_aps(&SceneSpec::constant(1.0), 0, 0, &cfg, 1).is_err());
    }

    #[test]
    fn aps_half_fullwell_mean() {
        let cfg = SensorConfig {
            width: 64,
            height: 64,
            ..Default::default()
        };
        // 50 ke- over 10 ms at 4.5e6 e-/s/lux → 1.111 lux
        let lux = 0.5 * cfg.fullwell_e / (photoelectron_rate(1.0, &cfg, false) * 0.01);
        let f = capture_aps(&SceneSpec::constant(lux), 0, 10_000, &cfg, 9).unwrap();
        // per-pixel sd ≈ 511·sqrt(5e4)/1e5 ≈ 1.14 LSB; 3 sigma of the mean over 4096 pixels
        let tol = 3.0 * (1.14f64.powi(2) + 1.0 / 12.0).sqrt() / 64.0;
        assert!((f.mean() - 255.5).abs() < tol, "mean {}", f.mean());
    }
}
