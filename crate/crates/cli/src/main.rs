//! `evsim` command-line front end.

mod manifest;
mod overrides;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use evsim::characterize::{
    chart_detection_with_events, estimate_nct, measure_s_curve, noise_sweep_fcut, noise_sweep_illuminance,
    photon_budget, write_json, ExperimentResult, NctEstimate, DETECTION_WINDOW_US,
};
use evsim::kv::KvDocument;
use evsim::readout::{accumulate, capture_aps, serialize_events};
use evsim::stimulus::{parse_wedges, RotatingChart, Wedge};
use evsim::{Error, EventFormat, PixelArray, SceneKind, SceneSpec, SensorConfig};

use manifest::{Params, RunManifest};
use overrides::ConfigOverrides;

#[derive(Parser, Debug)]
#[command(name = "evsim", version, about = "Event-camera pixel array simulator and characterization harness")]
struct Cli {
    /// Worker threads; results are identical for any value.
    #[arg(long, global = true, value_name = "N")]
    workers: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Sensor config file of `key = value` lines.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Output directory. Defaults to `<command>-<timestamp>` in the working directory.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,

    #[command(flatten)]
    keys: ConfigOverrides,
}

#[derive(Args, Debug, Clone)]
struct SceneArg {
    /// Scene file with `scene.*` keys. Falls back to scene keys in the config file.
    #[arg(long, value_name = "FILE")]
    scene: Option<PathBuf>,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum FormatArg {
    Csv,
    Binary,
}

#[derive(Debug, Clone)]
struct WedgeList(Vec<Wedge>);

fn wedge_list(s: &str) -> Result<WedgeList, String> {
    let w = parse_wedges(s)?;
    if w.is_empty() {
        return Err("at least one wedge is required".into());
    }
    Ok(WedgeList(w))
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the array on a scene and write the event stream.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        scene: SceneArg,
        /// Simulated time, us.
        #[arg(long, value_name = "US")]
        duration_us: u64,
        #[arg(long, value_enum, default_value = "binary")]
        format: FormatArg,
    },
    /// Measure an S-curve with the reset-pulse step protocol.
    Scurve {
        #[command(flatten)]
        common: Common,
        /// Signed test contrasts, comma separated, all of one polarity.
        #[arg(long, value_delimiter = ',', required = true, allow_hyphen_values = true)]
        contrasts: Vec<f64>,
        /// Repetitions of the whole array per contrast.
        #[arg(long, default_value_t = 4)]
        trials: u32,
        /// Background illuminance, lux.
        #[arg(long, default_value_t = 40.0)]
        base_lux: f64,
    },
    /// Noise event rate sweep over illuminance or cutoff frequency.
    Noise {
        #[command(flatten)]
        common: Common,
        /// Illuminances, lux; runs binned and unbinned arms.
        #[arg(long, value_delimiter = ',', conflicts_with = "fcut_list", required_unless_present = "fcut_list")]
        lux_list: Vec<f64>,
        /// Cutoff frequencies, Hz, at `--lux`.
        #[arg(long, value_delimiter = ',')]
        fcut_list: Vec<f64>,
        /// Illuminance for the cutoff sweep, lux.
        #[arg(long, default_value_t = 0.21)]
        lux: f64,
        /// Counting time per point after settling, us.
        #[arg(long, default_value_t = 5_000_000)]
        duration_us: u64,
    },
    /// Rotating-chart edge detection with accumulation frames.
    Chart {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        scene: SceneArg,
        /// Wedges as `contrast:on|off` pairs, used when no chart scene is given.
        #[arg(long, value_name = "LIST", value_parser = wedge_list)]
        wedges: Option<WedgeList>,
        /// Chart background, lux, with `--wedges`.
        #[arg(long, default_value_t = 0.7)]
        base_lux: f64,
        /// Simulated time, us.
        #[arg(long, default_value_t = 2_000_000)]
        duration_us: u64,
    },
    /// Photon budget for one operating point.
    Budget {
        #[command(flatten)]
        common: Common,
        /// Chip illuminance, lux.
        #[arg(long, allow_negative_numbers = true)]
        lux: f64,
        /// Cutoff frequency, Hz; defaults to the config value.
        #[arg(long)]
        f_cut: Option<f64>,
        /// Count photons over a 2x2 bin.
        #[arg(long)]
        binned: bool,
    },
    /// Capture one APS intensity frame.
    Aps {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        scene: SceneArg,
        /// Exposure start, us.
        #[arg(long, default_value_t = 0)]
        t_us: u64,
        /// Exposure time, us.
        #[arg(long, value_name = "US")]
        exposure_us: u64,
    },
    /// Re-run a recorded manifest.
    Replay {
        manifest: PathBuf,
        /// Output directory. Defaults to `<command>-<timestamp>`.
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("invalid arguments").trim_start_matches("error: ");
            report("usage", first);
            return ExitCode::from(2);
        }
    };
    if let Some(n) = cli.workers {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
            report("precondition", &e.to_string());
            return ExitCode::from(4);
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (kind, code) = classify(&e);
            report(kind, &e.to_string());
            ExitCode::from(code)
        }
    }
}

/// One JSON object on one stderr line.
fn report(kind: &str, message: &str) {
    let line = serde_json::json!({ "error": kind, "message": message.replace('\n', " ") });
    eprintln!("{line}");
}

fn classify(e: &Error) -> (&'static str, u8) {
    match e {
        Error::InvalidConfig(_) | Error::Parse { .. } => ("invalid_config", 2),
        Error::Io(_) | Error::Image(_) | Error::Csv(_) | Error::Json(_) => ("io", 3),
        Error::Precondition(_) | Error::OutOfRange { .. } | Error::Format(_) => ("precondition", 4),
    }
}

fn run(cli: Cli) -> evsim::Result<()> {
    let workers = cli.workers;
    let (name, common, scene_path, params) = match cli.command {
        Command::Replay { manifest, out } => {
            let m = RunManifest::load(&manifest)?;
            let out_dir = make_out_dir(&m.command, out.as_deref())?;
            let scene = m.scene.clone();
            let replay = RunManifest {
                out_dir: out_dir.clone(),
                timestamp: manifest::now(),
                workers,
                ..m
            };
            execute(&replay.config, scene.as_ref(), &replay.params, &out_dir)?;
            return replay.write(&out_dir);
        }
        Command::Simulate {
            common,
            scene,
            duration_us,
            format,
        } => (
            "simulate",
            common,
            scene.scene,
            Params::Simulate {
                duration_us,
                format: match format {
                    FormatArg::Csv => EventFormat::Csv,
                    FormatArg::Binary => EventFormat::Binary,
                },
            },
        ),
        Command::Scurve {
            common,
            contrasts,
            trials,
            base_lux,
        } => (
            "scurve",
            common,
            None,
            Params::SCurve {
                contrasts,
                trials,
                base_lux,
            },
        ),
        Command::Noise {
            common,
            lux_list,
            fcut_list,
            lux,
            duration_us,
        } => {
            let params = if fcut_list.is_empty() {
                Params::NoiseLux { lux_list, duration_us }
            } else {
                Params::NoiseFcut {
                    fcut_list,
                    lux,
                    duration_us,
                }
            };
            ("noise", common, None, params)
        }
        Command::Chart {
            common,
            scene,
            wedges,
            base_lux,
            duration_us,
        } => (
            "chart",
            common,
            scene.scene,
            Params::Chart {
                wedges: wedges.map(|w| w.0),
                base_lux,
                duration_us,
            },
        ),
        Command::Budget {
            common,
            lux,
            f_cut,
            binned,
        } => ("budget", common, None, Params::Budget { lux, f_cut, binned }),
        Command::Aps {
            common,
            scene,
            t_us,
            exposure_us,
        } => ("aps", common, scene.scene, Params::Aps { t_us, exposure_us }),
    };

    let config_doc = match &common.config {
        Some(p) => Some(KvDocument::load(p)?),
        None => None,
    };
    let mut cfg = SensorConfig::default();
    if let Some(doc) = &config_doc {
        cfg = cfg.apply(doc)?;
    }
    let cfg = common.keys.apply(cfg)?.validate()?;

    let scene = if params.needs_scene() {
        Some(load_scene(&cfg, scene_path.as_deref(), common.config.as_deref(), config_doc.as_ref())?)
    } else {
        None
    };
    let params = params.resolve(&cfg, scene.as_ref())?;
    let scene = match &params {
        Params::Chart { .. } => None,
        _ => scene,
    };

    let out_dir = make_out_dir(name, common.out.as_deref())?;
    execute(&cfg, scene.as_ref(), &params, &out_dir)?;
    RunManifest {
        command: name.to_string(),
        config_path: common.config.clone(),
        scene_path,
        out_dir: out_dir.clone(),
        seed_override: common.keys.seed(),
        timestamp: manifest::now(),
        workers,
        config: cfg,
        scene,
        params,
    }
    .write(&out_dir)
}

fn load_scene(
    cfg: &SensorConfig,
    scene_path: Option<&Path>,
    config_path: Option<&Path>,
    config_doc: Option<&KvDocument>,
) -> evsim::Result<SceneSpec> {
    match (scene_path, config_doc) {
        (Some(p), _) => SceneSpec::from_kv(&KvDocument::load(p)?, cfg, p.parent()),
        (None, Some(doc)) if doc.get("scene.type").is_some() => {
            SceneSpec::from_kv(doc, cfg, config_path.and_then(Path::parent))
        }
        _ => Err(Error::Precondition(
            "no scene: pass --scene or put scene.* keys in the config file".into(),
        )),
    }
}

fn make_out_dir(command: &str, out: Option<&Path>) -> evsim::Result<PathBuf> {
    let dir = match out {
        Some(p) => p.to_path_buf(),
        None => {
            let stamp = chrono::Local::now().format("%Y%m%dT%H%M%S");
            let base = PathBuf::from(format!("{command}-{stamp}"));
            let mut dir = base.clone();
            let mut k = 1;
            while dir.exists() {
                dir = PathBuf::from(format!("{}-{k}", base.display()));
                k += 1;
            }
            dir
        }
    };
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn write_csv_with(path: PathBuf, f: impl FnOnce(&mut Vec<u8>) -> evsim::Result<()>) -> evsim::Result<()> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    std::fs::write(path, buf)?;
    Ok(())
}

fn execute(cfg: &SensorConfig, scene: Option<&SceneSpec>, params: &Params, out: &Path) -> evsim::Result<()> {
    let need_scene = || scene.ok_or_else(|| Error::Precondition("command needs a scene".into()));
    match params {
        Params::Simulate { duration_us, format } => {
            let scene = need_scene()?;
            let events = PixelArray::new(cfg, scene)?.run_events(scene, *duration_us);
            let name = match format {
                EventFormat::Csv => "events.csv",
                EventFormat::Binary => "events.bin",
            };
            let bytes = serialize_events(&events, *format, cfg.width as u16, cfg.height as u16);
            std::fs::write(out.join(name), bytes)?;
            println!("{} events -> {}", events.len(), out.join(name).display());
        }
        Params::SCurve {
            contrasts,
            trials,
            base_lux,
        } => {
            let curve = measure_s_curve(cfg, contrasts, *base_lux, *trials)?;
            let nct = estimate_nct(&curve);
            write_csv_with(out.join("scurve.csv"), |b| curve.write_csv(b))?;
            match nct {
                NctEstimate::Reached(c) => println!("NCT {:.4}% (control {:.3}%)", 100.0 * c, 100.0 * curve.control_fraction()),
                NctEstimate::NotReached => println!("NCT not reached (control {:.3}%)", 100.0 * curve.control_fraction()),
            }
            write_json(out.join("scurve.json"), &ExperimentResult::SCurve { curve, nct })?;
        }
        Params::NoiseLux { lux_list, duration_us } => {
            let (b, u) = noise_sweep_illuminance(cfg, lux_list, *duration_us)?;
            write_csv_with(out.join("noise_binned.csv"), |w| b.write_csv(w))?;
            write_csv_with(out.join("noise_unbinned.csv"), |w| u.write_csv(w))?;
            for (p, q) in b.points.iter().zip(&u.points) {
                println!(
                    "{} lux: binned {:.4} Hz/px, unbinned {:.4} Hz/px",
                    p.value, p.rate_hz_per_px, q.rate_hz_per_px
                );
            }
            write_json(out.join("noise.json"), &ExperimentResult::NoiseSweep { sweeps: vec![b, u] })?;
        }
        Params::NoiseFcut {
            fcut_list,
            lux,
            duration_us,
        } => {
            let s = noise_sweep_fcut(cfg, fcut_list, *lux, *duration_us)?;
            write_csv_with(out.join("noise_fcut.csv"), |w| s.write_csv(w))?;
            for p in &s.points {
                println!("{} Hz: {:.4} Hz/px", p.value, p.rate_hz_per_px);
            }
            write_json(out.join("noise.json"), &ExperimentResult::NoiseSweep { sweeps: vec![s] })?;
        }
        Params::Chart { .. } => unreachable!("chart parameters are resolved before execution"),
        Params::ChartResolved { chart, duration_us } => {
            let (report, events) = chart_detection_with_events(cfg, chart, *duration_us)?;
            write_csv_with(out.join("chart.csv"), |w| report.write_csv(w))?;
            let frames = out.join("frames");
            std::fs::create_dir_all(&frames)?;
            let mut t0 = 0;
            let mut k = 0;
            while t0 < *duration_us {
                let window = DETECTION_WINDOW_US.min(duration_us - t0);
                accumulate(&events, cfg.width, cfg.height, t0, window)?.write_pgm(frames.join(format!("acc_{k:04}.pgm")))?;
                t0 += window;
                k += 1;
            }
            for w in &report.wedges {
                println!(
                    "{:+.4}: {:.3} of looks ({})",
                    w.contrast,
                    w.fraction,
                    if w.detected { "detected" } else { "missed" }
                );
            }
            println!(
                "noise {:.3} Hz/px ({} the 6 Hz/px budget)",
                report.noise.rate_hz_per_px,
                if report.noise_within_budget { "within" } else { "over" }
            );
            write_json(out.join("chart.json"), &ExperimentResult::Chart(report))?;
        }
        Params::Budget { lux, f_cut, binned } => {
            let f = f_cut.unwrap_or(cfg.f_cut_hz);
            let r = photon_budget(*lux, f, cfg, *binned)?;
            match r.sigma_over_n {
                Some(s) => println!("N = {:.4e} e-, sigma/N = {:.4}%", r.n_e, 100.0 * s),
                None => println!("N = 0 e-, sigma/N undefined"),
            }
            write_json(out.join("budget.json"), &ExperimentResult::Budget(r))?;
        }
        Params::Aps { t_us, exposure_us } => {
            let frame = capture_aps(need_scene()?, *t_us, *exposure_us, cfg, cfg.seed)?;
            frame.write_pgm(out.join("aps.pgm"))?;
            println!("APS mean {:.1} / 511", frame.mean());
        }
    }
    Ok(())
}

impl Params {
    fn needs_scene(&self) -> bool {
        match self {
            Params::Simulate { .. } | Params::Aps { .. } => true,
            Params::Chart { wedges, .. } => wedges.is_none(),
            _ => false,
        }
    }

    /// Replace command-line chart options by a concrete chart.
    fn resolve(self, cfg: &SensorConfig, scene: Option<&SceneSpec>) -> evsim::Result<Self> {
        let Params::Chart {
            wedges,
            base_lux,
            duration_us,
        } = self
        else {
            return Ok(self);
        };
        let chart = match (wedges, scene) {
            (Some(w), _) => RotatingChart::new(base_lux, w, cfg.width, cfg.height),
            (None, Some(SceneSpec {
                kind: SceneKind::Chart(c),
                ..
            })) => c.clone(),
            (None, _) => {
                return Err(Error::Precondition("chart needs --wedges or a chart scene".into()));
            }
        };
        Ok(Params::ChartResolved { chart, duration_us })
    }
}
