use std::path::Path;
use std::process::{Command, Output};

fn evsim(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_evsim"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("run evsim")
}

fn stderr_line(o: &Output) -> serde_json::Value {
    let text = String::from_utf8_lossy(&o.stderr);
    assert_eq!(text.trim_end().lines().count(), 1, "{text}");
    serde_json::from_str(text.trim()).unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn budget_reference_point() {
    let tmp = tempfile::tempdir().unwrap();
    let o = evsim(&["budget", "--lux", "0.7", "--binned", "--out", "run"], tmp.path());
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("N = 1.11"), "{text}");
    assert!(text.contains("sigma/N = 0.42"), "{text}");
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(tmp.path().join("run/budget.json")).unwrap()).unwrap();
    assert_eq!(json["experiment"], "budget");
    assert!((json["n_e"].as_f64().unwrap() / 1.10e5 - 1.0).abs() < 0.02);
    assert!(tmp.path().join("run/manifest.json").exists());
}

#[test]
fn default_run_directory_is_named_by_command() {
    let tmp = tempfile::tempdir().unwrap();
    assert!(evsim(&["budget", "--lux", "1"], tmp.path()).status.success());
    let names: Vec<String> = std::fs::read_dir(tmp.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    assert_eq!(names.len(), 1);
    assert!(names[0].starts_with("budget-2"), "{names:?}");
}

#[test]
fn quiet_constant_scene_gives_empty_stream() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "s.cfg", "width = 8\nheight = 8\nnoise_mode = off\nscene.type = constant\nscene.lux = 2\n");
    let o = evsim(
        &["simulate", "--config", &cfg, "--duration-us", "100000", "--out", "run"],
        tmp.path(),
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let bytes = std::fs::read(tmp.path().join("run/events.bin")).unwrap();
    assert_eq!(bytes.len(), 16);
    let o = evsim(
        &["simulate", "--config", &cfg, "--duration-us", "100000", "--format", "csv", "--out", "csv"],
        tmp.path(),
    );
    assert!(o.status.success());
    assert!(std::fs::read(tmp.path().join("csv/events.csv")).unwrap().is_empty());
}

#[test]
fn flags_override_file_values() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "a.cfg", "width = 8\nheight = 8\nseed = 3\n");
    let o = evsim(&["budget", "--config", &cfg, "--seed", "9", "--width", "16", "--lux", "1", "--out", "r"], tmp.path());
    assert!(o.status.success());
    let m: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(tmp.path().join("r/manifest.json")).unwrap()).unwrap();
    assert_eq!(m["config"]["seed"], 9);
    assert_eq!(m["config"]["width"], 16);
    assert_eq!(m["config"]["height"], 8);
    assert_eq!(m["seed_override"], 9);
}

#[test]
fn scurve_replay_is_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let args = [
        "scurve", "--width", "8", "--height", "8", "--dt_us", "500", "--seed", "4", "--contrasts", "0.01,0.02,0.03",
        "--trials", "1", "--base-lux", "2", "--out", "first",
    ];
    let o = evsim(&args, tmp.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).contains("NCT"));
    let o = evsim(&["replay", "first/manifest.json", "--out", "second"], tmp.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["scurve.csv", "scurve.json"] {
        assert_eq!(
            std::fs::read(tmp.path().join("first").join(f)).unwrap(),
            std::fs::read(tmp.path().join("second").join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn worker_count_does_not_change_events() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(
        tmp.path(),
        "n.cfg",
        "width = 16\nheight = 16\ndt_us = 500\ntheta_on = 0.05\ntheta_off = 0.05\nscene.type = constant\nscene.lux = 0.05\n",
    );
    for (w, out) in [("1", "w1"), ("3", "w3")] {
        let o = evsim(
            &["--workers", w, "simulate", "--config", &cfg, "--duration-us", "200000", "--out", out],
            tmp.path(),
        );
        assert!(o.status.success());
    }
    let a = std::fs::read(tmp.path().join("w1/events.bin")).unwrap();
    assert!(a.len() > 16);
    assert_eq!(a, std::fs::read(tmp.path().join("w3/events.bin")).unwrap());
}

#[test]
fn chart_writes_report_and_frames() {
    let tmp = tempfile::tempdir().unwrap();
    let o = evsim(
        &[
            "chart", "--width", "8", "--height", "8", "--dt_us", "500", "--wedges", "0.03:on,0.03:off", "--duration-us",
            "600000", "--out", "c",
        ],
        tmp.path(),
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let dir = tmp.path().join("c");
    assert!(dir.join("chart.csv").exists() && dir.join("chart.json").exists());
    let frames = std::fs::read_dir(dir.join("frames")).unwrap().count();
    assert_eq!(frames, 3);
    let m: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["params"]["kind"], "chart_resolved");
}

#[test]
fn aps_frame() {
    let tmp = tempfile::tempdir().unwrap();
    let scene = write(tmp.path(), "scene.cfg", "scene.type = constant\nscene.lux = 10\n");
    let o = evsim(
        &["aps", "--width", "4", "--height", "4", "--scene", &scene, "--exposure-us", "10000", "--out", "a"],
        tmp.path(),
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let pgm = std::fs::read(tmp.path().join("a/aps.pgm")).unwrap();
    assert!(pgm.starts_with(b"P5\n4 4\n511\n"));
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let o = evsim(&["budget", "--lux", "1", "--width", "63", "--binning_enabled", "true"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(stderr_line(&o)["error"], "invalid_config");

    let o = evsim(&["budget", "--lux", "1", "--config", "missing.cfg"], tmp.path());
    assert_eq!(o.status.code(), Some(3));
    assert_eq!(stderr_line(&o)["error"], "io");

    let o = evsim(&["budget", "--lux", "-1", "--out", "x"], tmp.path());
    assert_eq!(o.status.code(), Some(4));
    assert_eq!(stderr_line(&o)["error"], "precondition");

    let o = evsim(&["scurve", "--contrasts", "0.01,-0.01", "--out", "y"], tmp.path());
    assert_eq!(o.status.code(), Some(4));

    let o = evsim(&["simulate", "--duration-us", "10", "--out", "z"], tmp.path());
    assert_eq!(o.status.code(), Some(4));
    assert!(stderr_line(&o)["message"].as_str().unwrap().contains("scene"));
}

#[test]
fn help_lists_every_config_key() {
    let tmp = tempfile::tempdir().unwrap();
    let o = evsim(&["simulate", "--help"], tmp.path());
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    for (key, help) in evsim::config::CONFIG_KEYS {
        assert!(text.contains(&format!("--{key}")), "{key}");
        assert!(text.contains(help), "{help}");
    }
}
