use chronon::config::RunConfig;
use chronon::peakfit::Estimate;
use chronon::pipeline::{analyze_link, calibrate_kappa, run_sync};
use chronon::qdsim::{simulate_run, CH_X_REMOTE};
use chronon::syncproto::{compute_sync, verify_delay_insertion};

fn short_config() -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.run.duration_s = 2.0;
    cfg.source.pair_prob = 0.01;
    cfg.link.one_way_delay_ps = 96_393_880.0;
    cfg.link.reflectance = 0.7;
    // a short run needs the offset known to within a millisecond
    cfg.clock.offset_s = 0.000_123_456_789;
    cfg.correlator.one_way_search_ps = (-1_000_000_000, 1_000_000_000);
    cfg
}

#[test]
fn large_offset_recovered_with_calibrated_kappa() {
    let mut cfg = short_config();
    cfg.clock.offset_s = 917.000_321_987_654;
    cfg.sync.coarse_offset_s = 917;
    let kappa = calibrate_kappa(&cfg, 11).unwrap();
    assert!(kappa.kappa_ps.value > 50.0 && kappa.kappa_ps.value < 300.0, "{:?}", kappa.kappa_ps);
    let run = run_sync(&cfg, &cfg.link, 12, kappa.kappa_ps).unwrap();
    assert!(run.check.pass, "{:?}", run.check);
    assert!(run.report.compensated_offset_text.starts_with("917.000321"), "{}", run.report.compensated_offset_text);
}

#[test]
fn without_kappa_the_round_trip_half_overshoots_by_the_cascade_delay() {
    let cfg = short_config();
    let kappa = calibrate_kappa(&cfg, 21).unwrap().kappa_ps;
    let run = run_sync(&cfg, &cfg.link, 22, Estimate::exact(0.0)).unwrap();
    // uncorrected, the residual is κ: half the delay of the cascade maximum
    // that sits once in the round trip and once in the one-way peak
    let residual = run.check.residual_ps;
    assert!(
        (residual - kappa.value).abs() < 3.0 * run.check.sigma_ps.hypot(kappa.error) + 10.0,
        "residual {residual} vs kappa {kappa:?}"
    );
    let rt = run.report.tau_round_trip_ps.value;
    let ow_prop = run.report.tau_one_way_ps.value - (run.truth.offset_total_ps as f64);
    assert!((rt - 2.0 * ow_prop + 2.0 * kappa.value).abs() < 50.0, "rt {rt}, one-way {ow_prop}");
}

#[test]
fn common_time_shift_changes_nothing_and_subscriber_shift_moves_raw_offset() {
    let cfg = short_config();
    let (stream, _) = simulate_run(&cfg.source, &cfg.link, &cfg.clock, &cfg.measurement, cfg.run.duration_s, 31).unwrap();
    let base = analyze_link(&stream, &cfg).unwrap();
    let base_report = compute_sync(&base.one_way.fit, &base.round_trip.fit, 0, Estimate::exact(0.0)).unwrap();

    let epoch = 3_600_000_000_000_000u64;
    let shifted = stream.map_times(|t| t.time_ps + epoch);
    let a = analyze_link(&shifted, &cfg).unwrap();
    let r = compute_sync(&a.one_way.fit, &a.round_trip.fit, 0, Estimate::exact(0.0)).unwrap();
    assert_eq!(r.raw_fine_ps, base_report.raw_fine_ps);
    assert_eq!(r.compensated_fine_ps, base_report.compensated_fine_ps);

    let s = 500_321u64;
    let moved = stream.map_times(|t| if t.channel == CH_X_REMOTE { t.time_ps + s } else { t.time_ps });
    let a = analyze_link(&moved, &cfg).unwrap();
    let r = compute_sync(&a.one_way.fit, &a.round_trip.fit, 0, Estimate::exact(0.0)).unwrap();
    let change = r.raw_fine_ps - base_report.raw_fine_ps;
    assert!(
        (change - s as f64).abs() < 3.0 * r.raw_error_ps.hypot(base_report.raw_error_ps),
        "raw offset moved by {change}, expected {s}"
    );
    assert_eq!(r.tau_round_trip_ps, base_report.tau_round_trip_ps);
}

#[test]
fn forward_only_delay_gives_unit_ratio() {
    let cfg = short_config();
    let before = run_sync(&cfg, &cfg.link, 41, Estimate::exact(0.0)).unwrap();
    let mut link = cfg.link.clone();
    link.forward_only_delay_ps = 4480.0;
    let after = run_sync(&cfg, &link, 42, Estimate::exact(0.0)).unwrap();
    let v = verify_delay_insertion(&before.report, &after.report, 0.1).unwrap();
    assert!((v.ratio.value - 1.0).abs() < 0.05, "{:?}", v.ratio);
    assert!(!v.pass);

    let mut link = cfg.link.clone();
    link.inserted_delay_ps = 4480.0;
    let common = run_sync(&cfg, &link, 43, Estimate::exact(0.0)).unwrap();
    let v = verify_delay_insertion(&before.report, &common.report, 0.1).unwrap();
    assert!((v.ratio.value - 2.0).abs() < 0.1, "{:?}", v.ratio);
    assert!(v.pass);
}
