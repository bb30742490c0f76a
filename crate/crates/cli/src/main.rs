use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use chronon::config::RunConfig;
use chronon::correlator::{correlate, find_peak, CorrelationHistogram};
use chronon::peakfit::{cascade_residuals, fit_cascade, fit_g2, g2_residuals, CascadeFit, Estimate};
use chronon::pipeline::{
    analyze_peak, one_way_search_window, run_pipeline, summary_text, to_json, tomography_csv,
    tomography_matrices_json, write_outputs, SEED_G2, SEED_TOMO,
};
use chronon::polarization::Setting;
use chronon::qdsim::{derive_seed, simulate_hbt, simulate_run, simulate_settings};
use chronon::syncproto::{compute_sync, verify_delay_insertion, SyncReport};
use chronon::timetags::{read_stream, write_stream, TagStream, TimeTag};
use chronon::tomography::{fit_fidelity_oscillation, tomo_timeseries};
use chronon::Error;

const EXIT_ANALYSIS: u8 = 1;
const EXIT_USAGE: u8 = 2;

fn defaults_help() -> String {
    format!(
        "Configuration files are TOML. Every key is optional; unknown keys are rejected.\n\
         Defaults:\n\n{}",
        RunConfig::default().to_toml_string()
    )
}

#[derive(Parser, Debug)]
#[command(name = "chronon", version, about = "Entangled-photon clock synchronization toolkit")]
#[command(after_long_help = defaults_help())]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Global {
    /// Run configuration (TOML).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Overrides run.seed.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Output directory; overrides run.out_dir.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Overrides correlator.bin_width_ps.
    #[arg(long, global = true, value_name = "N")]
    bin_width_ps: Option<u64>,
    /// Worker threads (default: logical cores).
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,
    /// Report errors on stderr as JSON.
    #[arg(long, global = true)]
    json_errors: bool,
    /// More log output (repeat for debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate tag streams from the configured source, link, and clocks.
    Simulate(SimulateArgs),
    /// Histogram a − b time differences between two channels.
    Correlate(CorrelateArgs),
    /// Locate a correlation peak by coarse-to-fine search.
    FindPeak(PeakArgs),
    /// Fit the cascade model to a histogram CSV.
    Fit(FitArgs),
    /// Fit a pulsed autocorrelation and report g²(0).
    G2(G2Args),
    /// Combine one-way and round-trip fits into an offset report.
    Sync(SyncArgs),
    /// Compare sync reports taken before and after inserting a delay.
    VerifyDelay(VerifyArgs),
    /// Time-binned state tomography from per-setting tag files.
    Tomo(TomoArgs),
    /// Full closed loop on one configuration.
    Pipeline,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SimKind {
    /// Three-channel synchronization run.
    Run,
    /// One run per tomography setting, plus a manifest.
    Tomo,
    /// Two-detector autocorrelation of a single line.
    Hbt,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[arg(long, value_enum, default_value = "run")]
    kind: SimKind,
}

#[derive(Args, Debug)]
struct ChannelPair {
    /// Tag file.
    #[arg(long, short)]
    input: PathBuf,
    /// Channel of the later event (τ = t_a − t_b).
    #[arg(short = 'a', long, default_value_t = 1)]
    channel_a: u16,
    #[arg(short = 'b', long, default_value_t = 0)]
    channel_b: u16,
    #[arg(long, allow_negative_numbers = true)]
    start_ps: i64,
    #[arg(long, allow_negative_numbers = true)]
    end_ps: i64,
}

#[derive(Args, Debug)]
struct CorrelateArgs {
    #[command(flatten)]
    pair: ChannelPair,
    /// Base name of the CSV and JSON outputs.
    #[arg(long, default_value = "hist")]
    name: String,
}

#[derive(Args, Debug)]
struct PeakArgs {
    #[command(flatten)]
    pair: ChannelPair,
}

#[derive(Args, Debug)]
struct FitArgs {
    /// Histogram CSV.
    #[arg(long, short)]
    input: PathBuf,
    /// Base name of the outputs.
    #[arg(long, default_value = "fit")]
    name: String,
}

#[derive(Args, Debug)]
struct G2Args {
    /// Histogram CSV, or a tag file correlated as channel 1 − channel 0.
    #[arg(long, short)]
    input: PathBuf,
    /// Defaults to source.rep_period_ps.
    #[arg(long)]
    rep_period_ps: Option<f64>,
}

#[derive(Args, Debug)]
struct SyncArgs {
    /// Fit JSON of the one-way peak.
    #[arg(long)]
    one_way: PathBuf,
    /// Fit JSON of the round-trip peak.
    #[arg(long)]
    round_trip: PathBuf,
    /// Overrides sync.kappa_ps.
    #[arg(long, allow_negative_numbers = true)]
    kappa_ps: Option<f64>,
    #[arg(long)]
    kappa_error_ps: Option<f64>,
    /// Output name.
    #[arg(long, default_value = "sync")]
    name: String,
}

#[derive(Args, Debug)]
struct VerifyArgs {
    #[arg(long)]
    before: PathBuf,
    #[arg(long)]
    after: PathBuf,
    /// Allowed |ratio − 2|; defaults to sync.ratio_tolerance.
    #[arg(long)]
    tolerance: Option<f64>,
}

#[derive(Args, Debug)]
struct TomoArgs {
    /// Settings manifest (TOML).
    #[arg(long)]
    manifest: PathBuf,
    /// Peak position on the a − b axis; located automatically when omitted.
    #[arg(long, allow_negative_numbers = true)]
    peak_tau_ps: Option<i64>,
}

/// Maps setting labels to tag files and channel pairs. Several entries may
/// share one file.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    setting: Vec<ManifestEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestEntry {
    label: Setting,
    file: PathBuf,
    channel_a: u16,
    channel_b: u16,
}

#[derive(Serialize)]
struct HistogramSidecar<'a> {
    input: &'a str,
    channel_a: u16,
    channel_b: u16,
    n_a: u64,
    n_b: u64,
    tau_start_ps: i64,
    bin_width_ps: u64,
    n_bins: usize,
    total: u64,
}

struct Ctx {
    cfg: RunConfig,
    out: PathBuf,
}

impl Ctx {
    fn write(&self, name: &str, text: &str) -> Result<PathBuf, Error> {
        std::fs::create_dir_all(&self.out).map_err(|e| Error::io(&self.out, e))?;
        let path = self.out.join(name);
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    fn write_json<T: Serialize>(&self, name: &str, v: &T) -> Result<PathBuf, Error> {
        self.write(name, &to_json(v)?)
    }
}

fn main() -> ExitCode {
    let json_errors = std::env::args().any(|a| a == "--json-errors");
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            if json_errors {
                emit_json_error("usage", &e.to_string(), EXIT_USAGE);
            } else {
                let _ = e.print();
            }
            return ExitCode::from(EXIT_USAGE);
        }
    };
    let level = match cli.global.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();

    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = if e.is_analysis_failure() { EXIT_ANALYSIS } else { EXIT_USAGE };
            if json_errors {
                emit_json_error(e.kind(), &e.to_string(), code);
            } else {
                eprintln!("error: {e}");
            }
            ExitCode::from(code)
        }
    }
}

fn emit_json_error(kind: &str, message: &str, code: u8) {
    let v = serde_json::json!({ "error": { "kind": kind, "message": message.trim_end(), "exit_code": code } });
    let _ = writeln!(std::io::stderr(), "{v}");
}

fn load_config(g: &Global) -> Result<RunConfig, Error> {
    let mut cfg = match &g.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = g.seed {
        cfg.run.seed = s;
    }
    if let Some(w) = g.bin_width_ps {
        cfg.correlator.bin_width_ps = w;
    }
    if let Some(o) = &g.out {
        cfg.run.out_dir = o.to_string_lossy().into_owned();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), Error> {
    if let Some(n) = cli.global.threads {
        if n == 0 {
            return Err(Error::Argument("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Argument(format!("thread pool: {e}")))?;
    }
    let cfg = load_config(&cli.global)?;
    let ctx = Ctx {
        out: PathBuf::from(&cfg.run.out_dir),
        cfg,
    };
    match cli.command {
        Command::Simulate(a) => cmd_simulate(&ctx, a),
        Command::Correlate(a) => cmd_correlate(&ctx, a),
        Command::FindPeak(a) => cmd_find_peak(&ctx, a),
        Command::Fit(a) => cmd_fit(&ctx, a),
        Command::G2(a) => cmd_g2(&ctx, a),
        Command::Sync(a) => cmd_sync(&ctx, a),
        Command::VerifyDelay(a) => cmd_verify(&ctx, a),
        Command::Tomo(a) => cmd_tomo(&ctx, a),
        Command::Pipeline => cmd_pipeline(&ctx),
    }
}

fn cmd_simulate(ctx: &Ctx, a: SimulateArgs) -> Result<(), Error> {
    let c = &ctx.cfg;
    std::fs::create_dir_all(&ctx.out).map_err(|e| Error::io(&ctx.out, e))?;
    match a.kind {
        SimKind::Run => {
            let (stream, truth) =
                simulate_run(&c.source, &c.link, &c.clock, &c.measurement, c.run.duration_s, c.run.seed)?;
            let path = ctx.out.join("run.qtt");
            write_stream(&stream, &path)?;
            ctx.write_json("truth.json", &truth)?;
            println!("{}: {} tags {:?}", path.display(), stream.len(), stream.channel_counts());
        }
        SimKind::Tomo => {
            let t = &c.tomography;
            let settings = t.analysis.settings();
            let seed = derive_seed(c.run.seed, SEED_TOMO);
            let streams = simulate_settings(&settings, &c.source, &c.link, &c.clock, t.duration_s, seed)?;
            let mut entries = Vec::new();
            for (s, stream) in &streams {
                let name = format!("tomo_{}.qtt", s.label());
                write_stream(stream, ctx.out.join(&name))?;
                entries.push(ManifestEntry {
                    label: *s,
                    file: PathBuf::from(name),
                    channel_a: t.analysis.channel_a,
                    channel_b: t.analysis.channel_b,
                });
            }
            let text = toml::to_string(&Manifest { setting: entries })
                .map_err(|e| Error::Config(format!("manifest: {e}")))?;
            let path = ctx.write("manifest.toml", &text)?;
            println!("{} settings written, manifest {}", streams.len(), path.display());
        }
        SimKind::Hbt => {
            let stream = simulate_hbt(&c.source, &c.g2.source, c.g2.duration_s, derive_seed(c.run.seed, SEED_G2))?;
            let path = ctx.out.join("hbt.qtt");
            write_stream(&stream, &path)?;
            println!("{}: {} tags {:?}", path.display(), stream.len(), stream.channel_counts());
        }
    }
    Ok(())
}

fn channel_times(p: &ChannelPair) -> Result<(Vec<u64>, Vec<u64>), Error> {
    let stream = read_stream(&p.input)?;
    Ok((stream.channel_times(p.channel_a)?, stream.channel_times(p.channel_b)?))
}

fn cmd_correlate(ctx: &Ctx, a: CorrelateArgs) -> Result<(), Error> {
    let (ta, tb) = channel_times(&a.pair)?;
    let h = correlate(&ta, &tb, a.pair.start_ps, a.pair.end_ps, ctx.cfg.correlator.bin_width_ps)?;
    let csv = ctx.write(&format!("{}.csv", a.name), &h.to_csv())?;
    let input = a.pair.input.to_string_lossy();
    ctx.write_json(
        &format!("{}.json", a.name),
        &HistogramSidecar {
            input: &input,
            channel_a: a.pair.channel_a,
            channel_b: a.pair.channel_b,
            n_a: h.n_a,
            n_b: h.n_b,
            tau_start_ps: h.tau_start_ps,
            bin_width_ps: h.bin_width_ps,
            n_bins: h.len(),
            total: h.total(),
        },
    )?;
    println!("{}: {} bins, {} coincidences", csv.display(), h.len(), h.total());
    Ok(())
}

fn cmd_find_peak(ctx: &Ctx, a: PeakArgs) -> Result<(), Error> {
    let (ta, tb) = channel_times(&a.pair)?;
    let c = &ctx.cfg.correlator;
    let r = find_peak(&ta, &tb, (a.pair.start_ps, a.pair.end_ps), c.bin_width_ps, &c.peak_search)?;
    ctx.write_json("peak.json", &r)?;
    println!("peak at {} ps (significance {:.1})", r.tau_peak_ps, r.significance);
    Ok(())
}

fn read_text(path: &Path) -> Result<String, Error> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, Error> {
    serde_json::from_str(&read_text(path)?)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

fn cmd_fit(ctx: &Ctx, a: FitArgs) -> Result<(), Error> {
    let h = CorrelationHistogram::from_csv(&read_text(&a.input)?)?;
    let fit = fit_cascade(&h, None, &ctx.cfg.fit)?;
    let r = cascade_residuals(&fit, &h);
    ctx.write_json(&format!("{}.json", a.name), &fit)?;
    ctx.write(&format!("{}_residuals.txt", a.name), &r.to_text())?;
    println!(
        "tau_max = {:.3} ± {:.3} ps (absolute {:.3} ps), reduced chi2 {:.3}{}",
        fit.tau_max_ps.value,
        fit.tau_max_ps.error,
        fit.tau_max_abs_ps(),
        r.reduced_chi2,
        if r.mismatch { " (model mismatch)" } else { "" }
    );
    Ok(())
}

fn cmd_g2(ctx: &Ctx, a: G2Args) -> Result<(), Error> {
    let c = &ctx.cfg;
    let rep = a.rep_period_ps.unwrap_or(c.source.rep_period_ps);
    let is_csv = a.input.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    let h = if is_csv {
        CorrelationHistogram::from_csv(&read_text(&a.input)?)?
    } else {
        let stream = read_stream(&a.input)?;
        let w = c.g2.bin_width_ps as i64;
        let half = ((c.g2.span_periods * rep).round() as i64 + w - 1) / w * w;
        let h = correlate(&stream.channel_times(1)?, &stream.channel_times(0)?, -half, half, c.g2.bin_width_ps)?;
        ctx.write("g2_hist.csv", &h.to_csv())?;
        h
    };
    let fit = fit_g2(&h, rep, &c.g2.fit)?;
    let r = g2_residuals(&fit, &h);
    ctx.write_json("g2_fit.json", &fit)?;
    ctx.write("g2_residuals.txt", &r.to_text())?;
    println!(
        "g2(0) = {:.4} ± {:.4}, reduced chi2 {:.3}",
        fit.g2_zero.value, fit.g2_zero.error, r.reduced_chi2
    );
    Ok(())
}

fn cmd_sync(ctx: &Ctx, a: SyncArgs) -> Result<(), Error> {
    let ow: CascadeFit = read_json(&a.one_way)?;
    let rt: CascadeFit = read_json(&a.round_trip)?;
    let s = &ctx.cfg.sync;
    let kappa = Estimate::new(
        a.kappa_ps.unwrap_or(s.kappa_ps),
        a.kappa_error_ps.unwrap_or(s.kappa_error_ps),
    );
    let report = compute_sync(&ow, &rt, s.coarse_offset_s, kappa)?;
    ctx.write_json(&format!("{}.json", a.name), &report)?;
    print!("{}", report.summary());
    Ok(())
}

fn cmd_verify(ctx: &Ctx, a: VerifyArgs) -> Result<(), Error> {
    let before: SyncReport = read_json(&a.before)?;
    let after: SyncReport = read_json(&a.after)?;
    let v = verify_delay_insertion(&before, &after, a.tolerance.unwrap_or(ctx.cfg.sync.ratio_tolerance))?;
    ctx.write_json("verify_delay.json", &v)?;
    println!(
        "one-way shift {:.3} ± {:.3} ps\nround-trip shift {:.3} ± {:.3} ps\nratio {:.4} ± {:.4} {}",
        v.one_way_shift_ps.value,
        v.one_way_shift_ps.error,
        v.round_trip_shift_ps.value,
        v.round_trip_shift_ps.error,
        v.ratio.value,
        v.ratio.error,
        if v.pass { "PASS" } else { "FAIL" }
    );
    Ok(())
}

/// Loads each manifest entry as a two-channel stream with a on channel 1
/// and b on channel 0.
fn load_manifest(path: &Path) -> Result<Vec<(Setting, TagStream)>, Error> {
    let m: Manifest = toml::from_str(&read_text(path)?)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut cache: Vec<(PathBuf, TagStream)> = Vec::new();
    let mut out = Vec::with_capacity(m.setting.len());
    for e in &m.setting {
        let file = base.join(&e.file);
        if !cache.iter().any(|(p, _)| p == &file) {
            cache.push((file.clone(), read_stream(&file)?));
        }
        let stream = &cache.iter().find(|(p, _)| p == &file).expect("just cached").1;
        let mut tags: Vec<TimeTag> = stream
            .channel_times(e.channel_a)?
            .into_iter()
            .map(|t| TimeTag::new(1, t))
            .collect();
        tags.extend(stream.channel_times(e.channel_b)?.into_iter().map(|t| TimeTag::new(0, t)));
        if out.iter().any(|(s, _)| s == &e.label) {
            return Err(Error::Config(format!("setting {} listed twice", e.label)));
        }
        out.push((e.label, TagStream::new(2, tags)?));
    }
    Ok(out)
}

fn cmd_tomo(ctx: &Ctx, a: TomoArgs) -> Result<(), Error> {
    let streams = load_manifest(&a.manifest)?;
    let mut analysis = ctx.cfg.tomography.analysis.clone();
    analysis.channel_a = 1;
    analysis.channel_b = 0;
    let peak = match a.peak_tau_ps {
        Some(p) => p,
        None => {
            let mut ta: Vec<u64> = Vec::new();
            let mut tb: Vec<u64> = Vec::new();
            for (_, s) in &streams {
                ta.extend(s.channel_times(1)?);
                tb.extend(s.channel_times(0)?);
            }
            ta.sort_unstable();
            tb.sort_unstable();
            let p = analyze_peak(&ta, &tb, one_way_search_window(&ctx.cfg)?, &ctx.cfg)?;
            p.fit.t0_abs_ps().round() as i64
        }
    };
    let series = tomo_timeseries(&streams, peak, &ctx.cfg.tomography.waveplate, &analysis)?;
    ctx.write("tomo_bins.csv", &tomography_csv(&series))?;
    ctx.write("tomo_rho.json", &tomography_matrices_json(&series)?)?;
    let osc = fit_fidelity_oscillation(&series);
    if let Some(o) = &osc {
        ctx.write_json("tomo_oscillation.json", o)?;
    }
    let reconstructed = series.bins.iter().filter(|b| b.state.is_some()).count();
    println!("{reconstructed}/{} bins reconstructed from peak at {peak} ps", series.bins.len());
    if let Some(b) = series.best_bin() {
        let s = b.state.as_ref().expect("best bin has a state");
        println!(
            "best bin {} ps: F = {:.4} ± {:.4}, C = {:.4} ± {:.4}",
            b.tau_ps, s.fidelity.value, s.fidelity.error, s.concurrence.value, s.concurrence.error
        );
    }
    if let Some(o) = osc {
        println!("fidelity oscillation period {:.1} ps", o.period_ps);
    }
    Ok(())
}

fn cmd_pipeline(ctx: &Ctx) -> Result<(), Error> {
    let run = run_pipeline(&ctx.cfg)?;
    write_outputs(&run, &ctx.cfg, &ctx.out)?;
    print!("{}", summary_text(&run.report));
    Ok(())
}
