use evsim::config::{max_dt_us, Violation};
use evsim::kv::KvDocument;
use evsim::{validate_config, Error, SensorConfig};

#[test]
fn reference_operating_point_is_valid() {
    let cfg = SensorConfig {
        width: 64,
        height: 64,
        binning_enabled: true,
        dt_us: 100,
        f_cut_hz: 18.0,
        ..Default::default()
    };
    assert!(validate_config(cfg).is_ok());
    assert!((max_dt_us(18.0) - 2777.78).abs() < 0.01);
}

#[test]
fn every_violation_is_reported() {
    let cfg = SensorConfig {
        width: 63,
        binning_enabled: true,
        theta_on: 0.0,
        dt_us: 5_000,
        ..Default::default()
    };
    let Err(Error::InvalidConfig(v)) = validate_config(cfg) else {
        panic!("expected invalid config");
    };
    assert!(v.len() >= 3, "{v:?}");
    let text = Error::InvalidConfig(v.clone()).to_string();
    assert!(text.contains("odd"), "{text}");
    assert!(v.contains(&Violation::OddDimension { width: 63, height: 64 }));
    assert!(v.iter().any(|x| matches!(x, Violation::NonPositive { key: "theta_on", .. })));
    assert!(v.iter().any(|x| matches!(x, Violation::StepTooCoarse { dt_us: 5_000, .. })));
}

#[test]
fn kv_round_trip() {
    let cfg = SensorConfig {
        width: 32,
        height: 16,
        theta_on: 0.1234567890123,
        mismatch_sigma: 0.07,
        seed: u64::MAX,
        binning_enabled: true,
        force_reset: true,
        ..Default::default()
    };
    let back = SensorConfig::from_str_kv(&cfg.to_kv_string()).unwrap();
    assert_eq!(back, cfg);
}

#[test]
fn kv_errors_carry_line_numbers() {
    let err = SensorConfig::from_str_kv("width = 8\n# note\nbogus = 1\n").unwrap_err();
    assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
    let err = KvDocument::parse("a = 1\na = 2\n").unwrap_err();
    assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
    let err = SensorConfig::from_str_kv("noise_mode = loud\n").unwrap_err();
    assert!(err.to_string().contains("loud"));
}
