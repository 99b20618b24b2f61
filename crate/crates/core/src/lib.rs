//! Behavioral simulator of a scientific event-camera pixel array.
//!
//! Each pixel converts photons to a noisy log-intensity signal, low-passes
//! it, amplifies it around an auto-centered operating point, and emits ON
//! or OFF events when the amplified signal moves by a threshold. The
//! [`characterize`] module runs the standard sensitivity, noise and
//! photon-budget experiments on top of the array.
//!
//! ```
//! use evsim::{PixelArray, SceneSpec, SensorConfig};
//!
//! let cfg = SensorConfig { width: 8, height: 8, ..Default::default() };
//! let scene = SceneSpec::constant(1.0);
//! let mut array = PixelArray::new(&cfg, &scene).unwrap();
//! let events = array.run_events(&scene, 10_000);
//! assert!(evsim::readout::is_sorted(&events));
//! ```

pub mod array;
pub mod characterize;
pub mod config;
pub mod error;
pub mod frontend;
pub mod kv;
pub mod mismatch;
pub mod pixel;
pub mod readout;
pub mod rng;
pub mod stimulus;

pub use array::{step_array, PixelArray};
pub use config::{validate_config, NoiseMode, SensorConfig};
pub use error::{Error, Result};
pub use readout::{Event, EventFormat, Polarity};
pub use stimulus::{SceneKind, SceneSpec, Stimulus};
