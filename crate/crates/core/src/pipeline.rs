//! Closed-loop run: simulate, locate and fit both correlation peaks, derive
//! the clock offset, and compare it with what was injected. Optional stages
//! repeat the run with extra fiber, reconstruct the two-photon state in time
//! bins, and measure g²(0) of a single emission line.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::correlator::{correlate, find_peak, CorrelationHistogram, PeakSearchResult};
use crate::error::{Error, Result};
use crate::peakfit::{
    cascade_residuals, fit_cascade, fit_g2, g2_residuals, CascadeFit, CascadeFitOptions, Estimate, G2Fit, ResidualReport,
};
use crate::qdsim::{
    derive_seed, simulate_hbt, simulate_run, simulate_settings, ClockParams, GroundTruth, LinkParams, CH_XX, CH_X_REMOTE, CH_X_RETURN,
};
use crate::syncproto::{
    compute_sync, path_length_from_roundtrip, verify_delay_insertion, DelayVerification, SyncReport,
};
use crate::timetags::{write_stream, TagStream};
use crate::tomography::{fit_fidelity_oscillation, FidelityOscillation, TimeBinSeries};

/// Seed indices of the auxiliary runs derived from the main seed.
pub const SEED_KAPPA: u64 = 1;
pub const SEED_DELAY: u64 = 2;
pub const SEED_TOMO: u64 = 3;
pub const SEED_G2: u64 = 4;

/// Peak search, histogram, and fit for one correlation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PeakAnalysis {
    pub search: PeakSearchResult,
    pub histogram: CorrelationHistogram,
    pub fit: CascadeFit,
    pub residuals: ResidualReport,
}

impl PeakAnalysis {
    pub fn quality(&self) -> FitQuality {
        FitQuality {
            chi2: self.residuals.chi2,
            dof: self.residuals.dof,
            reduced_chi2: self.residuals.reduced_chi2,
            mismatch: self.residuals.mismatch,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitQuality {
    pub chi2: f64,
    pub dof: usize,
    pub reduced_chi2: f64,
    pub mismatch: bool,
}

/// Both peaks of one acquisition.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LinkAnalysis {
    pub one_way: PeakAnalysis,
    pub round_trip: PeakAnalysis,
}

/// Fit options for the synchronization peaks. Without polarization analyzers
/// the coincidences carry no oscillation, so that term is dropped.
pub fn sync_fit_options(cfg: &RunConfig) -> CascadeFitOptions {
    let mut opts = cfg.fit.clone();
    if cfg.measurement.projection_xx.is_none() && cfg.measurement.projection_x.is_none() {
        opts.oscillation = false;
    }
    opts
}

/// Locates `a − b` inside `window`, then histograms and fits around it.
pub fn analyze_peak(a: &[u64], b: &[u64], window: (i64, i64), cfg: &RunConfig) -> Result<PeakAnalysis> {
    let c = &cfg.correlator;
    let search = find_peak(a, b, window, c.bin_width_ps, &c.peak_search)?;
    let start = search.tau_peak_ps - c.fit_before_ps;
    let end = search.tau_peak_ps + c.fit_after_ps;
    let histogram = correlate(a, b, start, end, c.bin_width_ps)?;
    let fit = fit_cascade(&histogram, None, &sync_fit_options(cfg))?;
    let residuals = cascade_residuals(&fit, &histogram);
    Ok(PeakAnalysis {
        search,
        histogram,
        fit,
        residuals,
    })
}

/// One-way (remote X − XX) and round-trip (returned X − XX) analysis of a
/// three-channel run. The one-way window is taken relative to the coarse
/// offset.
pub fn analyze_link(stream: &TagStream, cfg: &RunConfig) -> Result<LinkAnalysis> {
    analyze_link_windows(stream, cfg, one_way_search_window(cfg)?, cfg.correlator.round_trip_search_ps)
}

/// The configured one-way search window on the absolute τ axis.
pub fn one_way_search_window(cfg: &RunConfig) -> Result<(i64, i64)> {
    let coarse = cfg.sync.coarse_offset_s as i128 * 1_000_000_000_000;
    let (lo, hi) = cfg.correlator.one_way_search_ps;
    let conv = |v: i128| {
        i64::try_from(v).map_err(|_| Error::Config(format!("one-way search window overflows at {v} ps")))
    };
    Ok((conv(coarse + lo as i128)?, conv(coarse + hi as i128)?))
}

fn analyze_link_windows(
    stream: &TagStream,
    cfg: &RunConfig,
    one_way: (i64, i64),
    round_trip: (i64, i64),
) -> Result<LinkAnalysis> {
    let xx = stream.channel_times(CH_XX)?;
    let remote = stream.channel_times(CH_X_REMOTE)?;
    let returned = stream.channel_times(CH_X_RETURN)?;
    log::info!("one-way search in [{}, {}) ps", one_way.0, one_way.1);
    let one_way = analyze_peak(&remote, &xx, one_way, cfg)?;
    log::info!("round-trip search in [{}, {}) ps", round_trip.0, round_trip.1);
    let round_trip = analyze_peak(&returned, &xx, round_trip, cfg)?;
    Ok(LinkAnalysis { one_way, round_trip })
}

/// κ from a run with the subscriber's detector next to the master's: no
/// fiber and no clock offset, so the compensated offset it yields is the
/// residual asymmetry itself.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KappaCalibration {
    pub seed: u64,
    pub kappa_ps: Estimate,
    pub one_way_quality: FitQuality,
    pub round_trip_quality: FitQuality,
    pub report: SyncReport,
}

pub fn calibrate_kappa(cfg: &RunConfig, seed: u64) -> Result<KappaCalibration> {
    let link = LinkParams {
        one_way_delay_ps: 0.0,
        inserted_delay_ps: 0.0,
        forward_only_delay_ps: 0.0,
        ..cfg.link.clone()
    };
    let clock = ClockParams {
        offset_s: 0.0,
        offset_ps: 0.0,
        ..cfg.clock.clone()
    };
    log::info!("kappa calibration run, seed {seed}");
    let (stream, _) = simulate_run(&cfg.source, &link, &clock, &cfg.measurement, cfg.run.duration_s, seed)?;
    // Both peaks sit within a few ns of zero here.
    let (lo, hi) = cfg.correlator.round_trip_search_ps;
    let half = (hi - lo).max(1);
    let analysis = analyze_link_windows(&stream, cfg, (-half, half), (-half, half))?;
    let report = compute_sync(
        &analysis.one_way.fit,
        &analysis.round_trip.fit,
        0,
        Estimate::exact(0.0),
    )?;
    Ok(KappaCalibration {
        seed,
        kappa_ps: Estimate::new(report.compensated_fine_ps, report.compensated_error_ps),
        one_way_quality: analysis.one_way.quality(),
        round_trip_quality: analysis.round_trip.quality(),
        report,
    })
}

/// Recovered compensated offset against the injected one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OffsetCheck {
    pub truth_offset_ps: i128,
    pub recovered_offset_text: String,
    /// recovered − truth.
    pub residual_ps: f64,
    pub sigma_ps: f64,
    /// max(3σ, configured floor).
    pub tolerance_ps: f64,
    pub pass: bool,
}

pub fn check_offset(report: &SyncReport, truth_offset_ps: i128, floor_ps: f64) -> OffsetCheck {
    let coarse_minus_truth = report.coarse_offset_s as i128 * 1_000_000_000_000 - truth_offset_ps;
    let residual = coarse_minus_truth as f64 + report.compensated_fine_ps;
    let tolerance = (3.0 * report.compensated_error_ps).max(floor_ps);
    OffsetCheck {
        truth_offset_ps,
        recovered_offset_text: report.compensated_offset_text.clone(),
        residual_ps: residual,
        sigma_ps: report.compensated_error_ps,
        tolerance_ps: tolerance,
        pass: residual.is_finite() && residual.abs() < tolerance,
    }
}

/// Simulation, analysis, and sync report of one acquisition.
#[derive(Debug, Clone)]
pub struct SyncRun {
    pub stream: TagStream,
    pub truth: GroundTruth,
    pub analysis: LinkAnalysis,
    pub report: SyncReport,
    pub check: OffsetCheck,
}

pub fn run_sync(cfg: &RunConfig, link: &LinkParams, seed: u64, kappa: Estimate) -> Result<SyncRun> {
    log::info!("simulating {} s, seed {seed}", cfg.run.duration_s);
    let (stream, truth) = simulate_run(&cfg.source, link, &cfg.clock, &cfg.measurement, cfg.run.duration_s, seed)?;
    let analysis = analyze_link(&stream, cfg)?;
    let report = compute_sync(&analysis.one_way.fit, &analysis.round_trip.fit, cfg.sync.coarse_offset_s, kappa)?;
    let check = check_offset(&report, truth.offset_total_ps, cfg.sync.offset_tolerance_ps);
    Ok(SyncRun {
        stream,
        truth,
        analysis,
        report,
        check,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DelayCheckReport {
    pub inserted_delay_ps: f64,
    pub forward_only: bool,
    pub seed: u64,
    /// Shifts a delay of this kind should produce.
    pub expected_one_way_shift_ps: f64,
    pub expected_round_trip_shift_ps: f64,
    pub verification: DelayVerification,
    pub after: SyncReport,
    pub after_offset_check: OffsetCheck,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TomographySummary {
    pub seed: u64,
    pub duration_s: f64,
    pub peak_tau_ps: i64,
    pub bins_reconstructed: usize,
    pub best_bin_tau_ps: Option<i64>,
    pub best_fidelity: Option<Estimate>,
    pub best_concurrence: Option<Estimate>,
    pub integrated_fidelity: Option<Estimate>,
    pub integrated_concurrence: Option<Estimate>,
    pub oscillation: Option<FidelityOscillation>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct G2Summary {
    pub seed: u64,
    pub duration_s: f64,
    pub expected_g2_zero: f64,
    pub fit: G2Fit,
    pub quality: FitQuality,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineReport {
    pub label: String,
    pub seed: u64,
    pub duration_s: f64,
    pub truth: GroundTruth,
    pub one_way_peak: PeakSearchResult,
    pub round_trip_peak: PeakSearchResult,
    pub one_way_fit: CascadeFit,
    pub round_trip_fit: CascadeFit,
    pub one_way_quality: FitQuality,
    pub round_trip_quality: FitQuality,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa_calibration: Option<KappaCalibration>,
    pub sync: SyncReport,
    pub offset_check: OffsetCheck,
    /// Fiber length implied by the round trip at the link's group index.
    pub path_length_m: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delay_check: Option<DelayCheckReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tomography: Option<TomographySummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub g2: Option<G2Summary>,
    /// Offset within tolerance and, where enabled, the delay ratio within
    /// its tolerance.
    pub pass: bool,
}

/// Everything a run produced, for writing out.
#[derive(Debug, Clone)]
pub struct PipelineRun {
    pub report: PipelineReport,
    pub main: SyncRun,
    pub delay_after: Option<SyncRun>,
    pub tomography: Option<TimeBinSeries>,
    pub g2_histogram: Option<CorrelationHistogram>,
}

pub fn run_pipeline(cfg: &RunConfig) -> Result<PipelineRun> {
    cfg.validate()?;
    let seed = cfg.run.seed;

    let kappa_calibration = if cfg.sync.calibrate_kappa {
        Some(calibrate_kappa(cfg, derive_seed(seed, SEED_KAPPA))?)
    } else {
        None
    };
    let kappa = kappa_calibration
        .as_ref()
        .map(|k| k.kappa_ps)
        .unwrap_or(Estimate::new(cfg.sync.kappa_ps, cfg.sync.kappa_error_ps));
    if let Some(k) = &kappa_calibration {
        log::info!("kappa = {:.3} ± {:.3} ps", k.kappa_ps.value, k.kappa_ps.error);
    }

    let main = run_sync(cfg, &cfg.link, seed, kappa)?;
    log::info!("offset residual {:.3} ps (tolerance {:.3} ps)", main.check.residual_ps, main.check.tolerance_ps);

    let (delay_check, delay_after) = if cfg.delay_check.enabled {
        let d = cfg.delay_check.inserted_delay_ps;
        let mut link = cfg.link.clone();
        if cfg.delay_check.forward_only {
            link.forward_only_delay_ps += d;
        } else {
            link.inserted_delay_ps += d;
        }
        let delay_seed = derive_seed(seed, SEED_DELAY);
        let after = run_sync(cfg, &link, delay_seed, kappa)?;
        let verification = verify_delay_insertion(&main.report, &after.report, cfg.sync.ratio_tolerance)?;
        let mut after_report = after.report.clone();
        after_report.inserted_delay_estimate_ps = Some(verification.inserted_delay_estimate_ps);
        let (ow, rt) = if cfg.delay_check.forward_only { (d, d) } else { (d, 2.0 * d) };
        let report = DelayCheckReport {
            inserted_delay_ps: d,
            forward_only: cfg.delay_check.forward_only,
            seed: delay_seed,
            expected_one_way_shift_ps: ow,
            expected_round_trip_shift_ps: rt,
            verification,
            after: after_report,
            after_offset_check: after.check.clone(),
        };
        (Some(report), Some(after))
    } else {
        (None, None)
    };

    let (tomography_summary, tomography) = if cfg.tomography.enabled {
        let (summary, series) = run_tomography(cfg, main.analysis.one_way.fit.t0_abs_ps().round() as i64)?;
        (Some(summary), Some(series))
    } else {
        (None, None)
    };

    let (g2, g2_histogram) = if cfg.g2.enabled {
        let (summary, h) = run_g2(cfg)?;
        (Some(summary), Some(h))
    } else {
        (None, None)
    };

    let pass = main.check.pass && delay_check.as_ref().is_none_or(|d| d.verification.pass);
    let report = PipelineReport {
        label: cfg.run.label.clone(),
        seed,
        duration_s: cfg.run.duration_s,
        truth: main.truth.clone(),
        one_way_peak: main.analysis.one_way.search.clone(),
        round_trip_peak: main.analysis.round_trip.search.clone(),
        one_way_fit: main.analysis.one_way.fit.clone(),
        round_trip_fit: main.analysis.round_trip.fit.clone(),
        one_way_quality: main.analysis.one_way.quality(),
        round_trip_quality: main.analysis.round_trip.quality(),
        kappa_calibration,
        sync: main.report.clone(),
        offset_check: main.check.clone(),
        path_length_m: path_length_from_roundtrip(main.report.tau_round_trip_ps.value, cfg.link.group_index),
        delay_check,
        tomography: tomography_summary,
        g2,
        pass,
    };
    Ok(PipelineRun {
        report,
        main,
        delay_after,
        tomography,
        g2_histogram,
    })
}

/// Time-binned tomography on one run per setting, with the bins placed
/// around `peak_tau_ps` on the one-way axis.
pub fn run_tomography(cfg: &RunConfig, peak_tau_ps: i64) -> Result<(TomographySummary, TimeBinSeries)> {
    let t = &cfg.tomography;
    let seed = derive_seed(cfg.run.seed, SEED_TOMO);
    let settings = t.analysis.settings();
    log::info!("tomography: {} settings × {} s", settings.len(), t.duration_s);
    let streams = simulate_settings(&settings, &cfg.source, &cfg.link, &cfg.clock, t.duration_s, seed)?;
    let series = crate::tomography::tomo_timeseries(&streams, peak_tau_ps, &t.waveplate, &t.analysis)?;
    let best = series.best_bin();
    let summary = TomographySummary {
        seed,
        duration_s: t.duration_s,
        peak_tau_ps,
        bins_reconstructed: series.bins.iter().filter(|b| b.state.is_some()).count(),
        best_bin_tau_ps: best.map(|b| b.tau_ps),
        best_fidelity: best.and_then(|b| b.state.as_ref().map(|s| s.fidelity)),
        best_concurrence: best.and_then(|b| b.state.as_ref().map(|s| s.concurrence)),
        integrated_fidelity: series.integrated.as_ref().map(|s| s.fidelity),
        integrated_concurrence: series.integrated.as_ref().map(|s| s.concurrence),
        oscillation: fit_fidelity_oscillation(&series),
    };
    Ok((summary, series))
}

/// Autocorrelation of one emission line split onto two detectors.
pub fn run_g2(cfg: &RunConfig) -> Result<(G2Summary, CorrelationHistogram)> {
    let g = &cfg.g2;
    let seed = derive_seed(cfg.run.seed, SEED_G2);
    log::info!("g2: {} s, seed {seed}", g.duration_s);
    let stream = simulate_hbt(&cfg.source, &g.source, g.duration_s, seed)?;
    let a = stream.channel_times(1)?;
    let b = stream.channel_times(0)?;
    let half = (g.span_periods * cfg.source.rep_period_ps).round() as i64;
    let w = g.bin_width_ps as i64;
    let half = (half + w - 1) / w * w;
    let h = correlate(&a, &b, -half, half, g.bin_width_ps)?;
    let fit = fit_g2(&h, cfg.source.rep_period_ps, &g.fit)?;
    let r = g2_residuals(&fit, &h);
    let summary = G2Summary {
        seed,
        duration_s: g.duration_s,
        expected_g2_zero: g.source.expected_g2_zero(),
        quality: FitQuality {
            chi2: r.chi2,
            dof: r.dof,
            reduced_chi2: r.reduced_chi2,
            mismatch: r.mismatch,
        },
        fit,
    };
    Ok((summary, h))
}

fn write_text(dir: &Path, name: &str, text: &str) -> Result<()> {
    let path = dir.join(name);
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

pub fn to_json<T: Serialize>(v: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(v)?;
    s.push('\n');
    Ok(s)
}

/// `bin,tau_ps,total,F,dF,C,dC`; the state columns are empty for bins that
/// were not reconstructed.
pub fn tomography_csv(series: &TimeBinSeries) -> String {
    let mut s = String::from("bin,tau_ps,total,F,dF,C,dC\n");
    for (k, b) in series.bins.iter().enumerate() {
        match &b.state {
            Some(st) => s.push_str(&format!(
                "{k},{},{},{:.6},{:.6},{:.6},{:.6}\n",
                b.tau_ps, b.total, st.fidelity.value, st.fidelity.error, st.concurrence.value, st.concurrence.error
            )),
            None => s.push_str(&format!("{k},{},{},,,,\n", b.tau_ps, b.total)),
        }
    }
    s
}

#[derive(Serialize)]
struct BinMatrix<'a> {
    bin: usize,
    tau_ps: i64,
    rho: &'a crate::tomography::DensityMatrix,
}

/// Reconstructed density matrices per bin, plus the integrated one.
pub fn tomography_matrices_json(series: &TimeBinSeries) -> Result<String> {
    #[derive(Serialize)]
    struct Out<'a> {
        bin_width_ps: u64,
        bins: Vec<BinMatrix<'a>>,
        integrated: Option<&'a crate::tomography::DensityMatrix>,
    }
    let bins = series
        .bins
        .iter()
        .enumerate()
        .filter_map(|(k, b)| {
            b.state.as_ref().map(|s| BinMatrix {
                bin: k,
                tau_ps: b.tau_ps,
                rho: &s.rho,
            })
        })
        .collect();
    to_json(&Out {
        bin_width_ps: series.bin_width_ps,
        bins,
        integrated: series.integrated.as_ref().map(|s| &s.rho),
    })
}

/// Writes the report and its artifacts into `dir`. File contents depend only
/// on the configuration.
pub fn write_outputs(run: &PipelineRun, cfg: &RunConfig, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_text(dir, "config.toml", &cfg.to_toml_string())?;
    write_text(dir, "report.json", &to_json(&run.report)?)?;
    write_text(dir, "summary.txt", &summary_text(&run.report))?;
    write_link_artifacts(dir, "", &run.main.analysis)?;
    write_text(dir, "sync.json", &to_json(&run.main.report)?)?;
    if run.report.delay_check.is_some() {
        write_text(dir, "sync_before.json", &to_json(&run.main.report)?)?;
    }
    if let (Some(after), Some(d)) = (&run.delay_after, &run.report.delay_check) {
        write_link_artifacts(dir, "delayed_", &after.analysis)?;
        write_text(dir, "sync_after.json", &to_json(&d.after)?)?;
        write_text(dir, "verify_delay.json", &to_json(&d.verification)?)?;
    }
    if let Some(series) = &run.tomography {
        write_text(dir, "tomo_bins.csv", &tomography_csv(series))?;
        write_text(dir, "tomo_rho.json", &tomography_matrices_json(series)?)?;
    }
    if let (Some(h), Some(g)) = (&run.g2_histogram, &run.report.g2) {
        write_text(dir, "g2_hist.csv", &h.to_csv())?;
        write_text(dir, "g2_fit.json", &to_json(&g.fit)?)?;
    }
    if cfg.run.write_streams {
        let path = dir.join("run.qtt");
        write_stream(&run.main.stream, &path)?;
        if let Some(after) = &run.delay_after {
            write_stream(&after.stream, dir.join("delayed_run.qtt"))?;
        }
    }
    Ok(())
}

fn write_link_artifacts(dir: &Path, prefix: &str, a: &LinkAnalysis) -> Result<()> {
    for (name, p) in [("one_way", &a.one_way), ("round_trip", &a.round_trip)] {
        write_text(dir, &format!("{prefix}{name}_hist.csv"), &p.histogram.to_csv())?;
        write_text(dir, &format!("{prefix}{name}_fit.json"), &to_json(&p.fit)?)?;
        write_text(dir, &format!("{prefix}{name}_residuals.txt"), &p.residuals.to_text())?;
    }
    Ok(())
}

pub fn summary_text(r: &PipelineReport) -> String {
    let mut s = format!("run {} (seed {}, {} s)\n", r.label, r.seed, r.duration_s);
    s.push_str(&r.sync.summary());
    s.push_str(&format!(
        "injected offset   {} ps\nresidual          {:.3} ps (tolerance {:.3} ps) {}\n",
        r.offset_check.truth_offset_ps,
        r.offset_check.residual_ps,
        r.offset_check.tolerance_ps,
        pass_word(r.offset_check.pass)
    ));
    s.push_str(&format!("path length       {:.3} m\n", r.path_length_m));
    if let Some(d) = &r.delay_check {
        let v = &d.verification;
        s.push_str(&format!(
            "delay check       one-way shift {:.3} ± {:.3} ps, round-trip shift {:.3} ± {:.3} ps\n\
             delay ratio       {:.4} ± {:.4} (tolerance {}) {}\n",
            v.one_way_shift_ps.value,
            v.one_way_shift_ps.error,
            v.round_trip_shift_ps.value,
            v.round_trip_shift_ps.error,
            v.ratio.value,
            v.ratio.error,
            v.tolerance,
            pass_word(v.pass)
        ));
    }
    if let Some(t) = &r.tomography {
        if let (Some(tau), Some(f), Some(c)) = (t.best_bin_tau_ps, t.best_fidelity, t.best_concurrence) {
            s.push_str(&format!(
                "best tomography bin at {tau} ps: F = {:.4} ± {:.4}, C = {:.4} ± {:.4}\n",
                f.value, f.error, c.value, c.error
            ));
        }
        if let Some(o) = &t.oscillation {
            s.push_str(&format!("fidelity oscillation period {:.1} ps\n", o.period_ps));
        }
    }
    if let Some(g) = &r.g2 {
        s.push_str(&format!(
            "g2(0) = {:.4} ± {:.4} (expected {:.4})\n",
            g.fit.g2_zero.value, g.fit.g2_zero.error, g.expected_g2_zero
        ));
    }
    s.push_str(&format!("overall {}\n", pass_word(r.pass)));
    s
}

fn pass_word(p: bool) -> &'static str {
    if p {
        "PASS"
    } else {
        "FAIL"
    }
}

