//! Synthetic timestamp streams from a quantum-dot biexciton–exciton cascade
//! distributed over a fiber link with a partial reflector at the far end.
//!
//! Output channels of [`simulate_run`]:
//!
//! * [`CH_XX`]: biexciton photons detected at the master (master clock),
//! * [`CH_X_REMOTE`]: exciton photons transmitted through the reflector and
//!   detected at the subscriber (subscriber clock),
//! * [`CH_X_RETURN`]: exciton photons reflected back and detected at the
//!   master (master clock).
//!
//! The run is cut into fixed blocks of laser pulses and every block draws
//! from its own ChaCha stream, so results depend only on the seed and never
//! on the number of worker threads.

use nalgebra::{Matrix2, Vector2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Geometric, Normal, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::polarization::{default_settings, retarder, Polarization, PolarizationState, Setting, C64};
use crate::timetags::{EpochInfo, TagStream, TimeTag};

pub const CH_XX: u16 = 0;
pub const CH_X_REMOTE: u16 = 1;
pub const CH_X_RETURN: u16 = 2;
pub const RUN_CHANNELS: u16 = 3;

/// ħ in eV·s.
pub const HBAR_EV_S: f64 = 6.582_119_569e-16;

/// Laser pulses simulated per RNG block.
const PULSES_PER_BLOCK: u64 = 1 << 23;

/// Angular frequency (rad/ps) of the exciton phase precession for a
/// fine-structure splitting given in µeV.
pub fn fss_omega_from_uev(splitting_uev: f64) -> f64 {
    splitting_uev * 1e-6 / HBAR_EV_S * 1e-12
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SourceParams {
    /// Laser repetition period (80 MHz).
    pub rep_period_ps: f64,
    /// Probability that a pulse yields a photon pair.
    pub pair_prob: f64,
    pub tau_xx_ps: f64,
    pub tau_x_ps: f64,
    pub fss_omega_rad_per_ps: f64,
    /// Mean on-time of telegraph blinking; blinking is off unless both
    /// on and off times are set.
    pub blink_on_ms: Option<f64>,
    pub blink_off_ms: Option<f64>,
    /// Uncorrelated background rate, applied to every channel.
    pub background_rate_hz: f64,
}

impl Default for SourceParams {
    fn default() -> Self {
        Self {
            rep_period_ps: 12_500.0,
            pair_prob: 4e-4,
            tau_xx_ps: 1380.0,
            tau_x_ps: 1140.0,
            fss_omega_rad_per_ps: fss_omega_from_uev(4.71),
            blink_on_ms: None,
            blink_off_ms: None,
            background_rate_hz: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinkParams {
    pub one_way_delay_ps: f64,
    /// Extra fiber in the common (bidirectional) path.
    pub inserted_delay_ps: f64,
    /// Extra delay on the forward direction only, as a circulator-and-delay
    /// attack would add. Counted once in both the one-way and round-trip paths.
    pub forward_only_delay_ps: f64,
    pub reflectance: f64,
    pub transmit_loss_db: f64,
    pub return_loss_db: f64,
    pub group_index: f64,
    /// Probability that a pair's polarization is fully randomized in transit.
    /// A value q turns Φ⁺ into a Werner state with p = 1 − q.
    pub depolarization: f64,
    /// Birefringent rotation acting on the transmitted exciton,
    /// R(θ)·diag(1, e^{iφ})·R(−θ).
    pub birefringence_theta_rad: f64,
    pub birefringence_phi_rad: f64,
}

impl Default for LinkParams {
    fn default() -> Self {
        Self {
            one_way_delay_ps: 0.0,
            inserted_delay_ps: 0.0,
            forward_only_delay_ps: 0.0,
            reflectance: 0.70,
            transmit_loss_db: 0.0,
            return_loss_db: 0.0,
            group_index: 1.468,
            depolarization: 0.0,
            birefringence_theta_rad: 0.0,
            birefringence_phi_rad: 0.0,
        }
    }
}

impl LinkParams {
    pub fn transmit_probability(&self) -> f64 {
        (1.0 - self.reflectance) * db_to_fraction(self.transmit_loss_db)
    }

    pub fn return_probability(&self) -> f64 {
        self.reflectance * db_to_fraction(self.return_loss_db)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClockParams {
    /// Subscriber minus master, whole-and-fractional seconds part.
    pub offset_s: f64,
    /// Additional fine offset in picoseconds.
    pub offset_ps: f64,
    /// Fractional frequency offset of the subscriber clock, parts per billion.
    pub drift_ppb: f64,
    /// Gaussian timing jitter per channel (XX, remote X, returned X).
    pub jitter_sigma_ps: [f64; 3],
    /// Fixed detection-path delay per channel.
    pub channel_delay_ps: [f64; 3],
}

impl Default for ClockParams {
    fn default() -> Self {
        Self {
            offset_s: 0.0,
            offset_ps: 0.0,
            drift_ppb: 0.0,
            jitter_sigma_ps: [100.0; 3],
            channel_delay_ps: [0.0; 3],
        }
    }
}

impl ClockParams {
    /// Total subscriber-minus-master offset in integer picoseconds.
    pub fn offset_total_ps(&self) -> i128 {
        let whole = self.offset_s.trunc();
        let frac_ps = (self.offset_s - whole) * 1e12 + self.offset_ps;
        whole as i128 * 1_000_000_000_000 + frac_ps.round() as i128
    }
}

/// Polarization analyzers in front of the XX and remote-X detectors.
/// `None` means no analyzer.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeasurementConfig {
    #[serde(with = "opt_token")]
    pub projection_xx: Option<Polarization>,
    #[serde(with = "opt_token")]
    pub projection_x: Option<Polarization>,
    pub label: String,
}

impl MeasurementConfig {
    pub fn for_setting(setting: Setting) -> Self {
        Self {
            projection_xx: Some(setting.biexciton),
            projection_x: Some(setting.exciton),
            label: setting.label(),
        }
    }
}

mod opt_token {
    use super::Polarization;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &Option<Polarization>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            Some(p) => s.serialize_str(&p.to_string()),
            None => s.serialize_str("none"),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Polarization>, D::Error> {
        let s = String::deserialize(d)?;
        let t = s.trim();
        if t.is_empty() || t.eq_ignore_ascii_case("none") {
            return Ok(None);
        }
        let mut chars = t.chars();
        match (chars.next(), chars.next()) {
            (Some(c), None) => Polarization::from_char(c)
                .map(Some)
                .map_err(serde::de::Error::custom),
            _ => Err(serde::de::Error::custom(format!("bad polarization token '{t}'"))),
        }
    }
}

/// Everything injected into a run, for checking analysis results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub seed: u64,
    pub duration_s: f64,
    pub pulses: u64,
    pub pairs_emitted: u64,
    /// Tags per channel including background.
    pub channel_counts: Vec<u64>,
    /// Background tags per channel.
    pub background_counts: Vec<u64>,
    /// Pairs with both the XX and the remote X detected.
    pub coincident_pairs_remote: u64,
    /// Pairs with both the XX and the returned X detected.
    pub coincident_pairs_return: u64,
    pub offset_s: f64,
    pub offset_ps: f64,
    pub offset_total_ps: i128,
    pub drift_ppb: f64,
    pub one_way_delay_ps: f64,
    pub inserted_delay_ps: f64,
    pub forward_only_delay_ps: f64,
    /// Propagation master → subscriber detector (fiber part only).
    pub one_way_propagation_ps: f64,
    /// Propagation master → reflector → master detector.
    pub round_trip_propagation_ps: f64,
    /// Subscriber-minus-master asymmetry of the path, as seen by two-way
    /// compensation: one-way minus half the round trip.
    pub path_asymmetry_ps: f64,
    pub channel_delay_ps: [f64; 3],
}

fn db_to_fraction(db: f64) -> f64 {
    10f64.powf(-db / 10.0)
}

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::Argument(msg()))
    }
}

fn nonneg(name: &str, v: f64) -> Result<()> {
    check(v.is_finite() && v >= 0.0, || format!("{name} must be finite and ≥ 0, got {v}"))
}

fn unit(name: &str, v: f64) -> Result<()> {
    check((0.0..=1.0).contains(&v), || format!("{name} must lie in [0, 1], got {v}"))
}

impl SourceParams {
    pub fn validate(&self) -> Result<()> {
        check(self.rep_period_ps.is_finite() && self.rep_period_ps >= 1.0, || {
            format!("rep_period_ps must be ≥ 1, got {}", self.rep_period_ps)
        })?;
        unit("pair_prob", self.pair_prob)?;
        nonneg("tau_xx_ps", self.tau_xx_ps)?;
        nonneg("tau_x_ps", self.tau_x_ps)?;
        check(self.fss_omega_rad_per_ps.is_finite(), || "fss_omega_rad_per_ps must be finite".into())?;
        nonneg("background_rate_hz", self.background_rate_hz)?;
        if let Some(v) = self.blink_on_ms {
            nonneg("blink_on_ms", v)?;
        }
        if let Some(v) = self.blink_off_ms {
            nonneg("blink_off_ms", v)?;
        }
        Ok(())
    }

    fn blinking(&self) -> Option<(f64, f64)> {
        match (self.blink_on_ms, self.blink_off_ms) {
            (Some(on), Some(off)) if on > 0.0 && off > 0.0 => Some((on * 1e9, off * 1e9)),
            _ => None,
        }
    }
}

impl LinkParams {
    pub fn validate(&self) -> Result<()> {
        nonneg("one_way_delay_ps", self.one_way_delay_ps)?;
        nonneg("inserted_delay_ps", self.inserted_delay_ps)?;
        nonneg("forward_only_delay_ps", self.forward_only_delay_ps)?;
        unit("reflectance", self.reflectance)?;
        nonneg("transmit_loss_db", self.transmit_loss_db)?;
        nonneg("return_loss_db", self.return_loss_db)?;
        check(self.group_index >= 1.0, || format!("group_index must be ≥ 1, got {}", self.group_index))?;
        unit("depolarization", self.depolarization)?;
        check(
            self.birefringence_theta_rad.is_finite() && self.birefringence_phi_rad.is_finite(),
            || "birefringence angles must be finite".into(),
        )
    }
}

impl ClockParams {
    pub fn validate(&self) -> Result<()> {
        check(self.offset_s.is_finite() && self.offset_ps.is_finite(), || "clock offset must be finite".into())?;
        check(self.drift_ppb.is_finite() && self.drift_ppb.abs() < 1e9, || {
            format!("drift_ppb out of range: {}", self.drift_ppb)
        })?;
        for (i, &j) in self.jitter_sigma_ps.iter().enumerate() {
            nonneg(&format!("jitter_sigma_ps[{i}]"), j)?;
        }
        for (i, &d) in self.channel_delay_ps.iter().enumerate() {
            check(d.is_finite(), || format!("channel_delay_ps[{i}] must be finite"))?;
        }
        Ok(())
    }
}

fn validate_duration(duration_s: f64) -> Result<()> {
    check(duration_s.is_finite() && duration_s > 0.0, || {
        format!("duration_s must be > 0, got {duration_s}")
    })
}

/// On-intervals [start, end) in ps of a telegraph process that starts on.
fn blink_timeline(mean_on_ps: f64, mean_off_ps: f64, horizon_ps: f64, rng: &mut ChaCha8Rng) -> Vec<(f64, f64)> {
    let on = Exp::new(1.0 / mean_on_ps).expect("positive mean");
    let off = Exp::new(1.0 / mean_off_ps).expect("positive mean");
    let mut t = 0.0;
    let mut out = Vec::new();
    while t < horizon_ps {
        let end = t + on.sample(rng);
        out.push((t, end));
        t = end + off.sample(rng);
    }
    out
}

fn is_on(timeline: Option<&[(f64, f64)]>, t: f64) -> bool {
    match timeline {
        None => true,
        Some(iv) => {
            let idx = iv.partition_point(|&(start, _)| start <= t);
            idx > 0 && t < iv[idx - 1].1
        }
    }
}

fn block_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn exp_sampler(mean: f64) -> Option<Exp<f64>> {
    (mean > 0.0).then(|| Exp::new(1.0 / mean).expect("positive mean"))
}

fn sample_or_zero<R: Rng>(d: &Option<Exp<f64>>, rng: &mut R) -> f64 {
    d.as_ref().map_or(0.0, |d| d.sample(rng))
}

fn jitter_sampler(sigma: f64) -> Option<Normal<f64>> {
    (sigma > 0.0).then(|| Normal::new(0.0, sigma).expect("positive sigma"))
}

fn jitter<R: Rng>(d: &Option<Normal<f64>>, rng: &mut R) -> f64 {
    d.as_ref().map_or(0.0, |d| d.sample(rng))
}

/// Outcome of measuring the XX photon and preparing the conditional X state.
struct PairOutcome {
    xx_detected: bool,
    x_state: Vector2<C64>,
}

fn measure_xx<R: Rng>(state: &PolarizationState, analyzer: Option<Polarization>, rng: &mut R) -> PairOutcome {
    let a = state.amplitudes();
    // Project the second (XX) qubit onto |p⟩: component for X basis index i is Σ_j ⟨p|j⟩ a[2i+j].
    let project = |p: Polarization| {
        let pv = p.jones();
        Vector2::new(
            pv[0].conj() * a[0] + pv[1].conj() * a[1],
            pv[0].conj() * a[2] + pv[1].conj() * a[3],
        )
    };
    let basis = analyzer.unwrap_or(Polarization::H);
    let pass = project(basis);
    let p_pass = pass.norm_squared();
    let (outcome_pass, conditional) = if rng.random::<f64>() < p_pass {
        (true, pass)
    } else {
        (false, project(basis.orthogonal()))
    };
    let norm = conditional.norm();
    let x_state = if norm > 0.0 {
        conditional / C64::new(norm, 0.0)
    } else {
        Vector2::new(C64::new(1.0, 0.0), C64::new(0.0, 0.0))
    };
    PairOutcome {
        xx_detected: analyzer.is_none() || outcome_pass,
        x_state,
    }
}

struct RunPlan<'a> {
    src: &'a SourceParams,
    meas: &'a MeasurementConfig,
    seed: u64,
    pulses: u64,
    horizon_ps: f64,
    blink: Option<Vec<(f64, f64)>>,
    p_transmit: f64,
    p_return: f64,
    depolarization: f64,
    birefringence: Option<Matrix2<C64>>,
    // integer path delays added to the random part of each tag
    delay_ch: [i128; 3],
    offset_ps: i128,
    drift: f64,
    jitter: [Option<Normal<f64>>; 3],
}

#[derive(Default)]
struct BlockOutput {
    tags: Vec<TimeTag>,
    pairs: u64,
    coinc_remote: u64,
    coinc_return: u64,
    background: [u64; 3],
}

impl RunPlan<'_> {
    fn subscriber_time(&self, master_ps: i128) -> Option<u64> {
        let drift = if self.drift != 0.0 {
            (self.drift * master_ps as f64).round() as i128
        } else {
            0
        };
        let t = master_ps + drift + self.offset_ps;
        u64::try_from(t).ok()
    }

    fn push(&self, out: &mut Vec<TimeTag>, ch: u16, master_ps: i128) -> bool {
        let t = if ch == CH_X_REMOTE {
            self.subscriber_time(master_ps)
        } else {
            u64::try_from(master_ps).ok()
        };
        match t {
            Some(t) => {
                out.push(TimeTag::new(ch, t));
                true
            }
            None => false,
        }
    }

    fn run_block(&self, block: u64) -> BlockOutput {
        let mut rng = block_rng(self.seed, block + 1);
        let first = block * PULSES_PER_BLOCK;
        let end = (first + PULSES_PER_BLOCK).min(self.pulses);
        let mut out = BlockOutput::default();

        let xx_delay = exp_sampler(self.src.tau_xx_ps);
        let x_delay = exp_sampler(self.src.tau_x_ps);
        let rep = self.src.rep_period_ps;

        let mut k = first;
        let geometric = (self.src.pair_prob > 0.0 && self.src.pair_prob < 1.0)
            .then(|| Geometric::new(self.src.pair_prob).expect("probability in (0,1)"));
        loop {
            if self.src.pair_prob <= 0.0 {
                break;
            }
            if let Some(g) = &geometric {
                k = k.saturating_add(g.sample(&mut rng));
            }
            if k >= end {
                break;
            }
            let pulse_ps = k as f64 * rep;
            k += 1;
            if !is_on(self.blink.as_deref(), pulse_ps) {
                continue;
            }
            out.pairs += 1;
            let t_xx = sample_or_zero(&xx_delay, &mut rng);
            let t_d = sample_or_zero(&x_delay, &mut rng);
            let route: f64 = rng.random();
            let randomized = self.depolarization > 0.0 && rng.random::<f64>() < self.depolarization;

            let (xx_detected, x_passes) = if randomized {
                let xx = self.meas.projection_xx.is_none() || rng.random::<bool>();
                let x = self.meas.projection_x.is_none() || rng.random::<bool>();
                (xx, x)
            } else {
                let mut state = PolarizationState::phased_phi(self.src.fss_omega_rad_per_ps * t_d);
                if let Some(u) = &self.birefringence {
                    state = state.apply_exciton(u);
                }
                let outcome = measure_xx(&state, self.meas.projection_xx, &mut rng);
                let x = match self.meas.projection_x {
                    None => true,
                    Some(q) => {
                        let amp = q.jones().dotc(&outcome.x_state).norm_sqr();
                        rng.random::<f64>() < amp
                    }
                };
                (outcome.xx_detected, x)
            };

            let base = pulse_ps.round() as i128;
            let mut xx_tagged = false;
            if xx_detected {
                let t = base + (t_xx + jitter(&self.jitter[0], &mut rng)).round() as i128 + self.delay_ch[0];
                xx_tagged = self.push(&mut out.tags, CH_XX, t);
            }
            if route < self.p_transmit {
                if x_passes {
                    let t = base
                        + (t_xx + t_d + jitter(&self.jitter[1], &mut rng)).round() as i128
                        + self.delay_ch[1];
                    if self.push(&mut out.tags, CH_X_REMOTE, t) && xx_tagged {
                        out.coinc_remote += 1;
                    }
                }
            } else if route < self.p_transmit + self.p_return {
                let t = base
                    + (t_xx + t_d + jitter(&self.jitter[2], &mut rng)).round() as i128
                    + self.delay_ch[2];
                if self.push(&mut out.tags, CH_X_RETURN, t) && xx_tagged {
                    out.coinc_return += 1;
                }
            }
        }

        if self.src.background_rate_hz > 0.0 {
            let t0 = first as f64 * rep;
            let span = (end - first) as f64 * rep;
            let mean = self.src.background_rate_hz * span * 1e-12;
            let poisson = Poisson::new(mean).ok();
            for ch in 0..RUN_CHANNELS {
                let n = poisson.as_ref().map_or(0, |p| p.sample(&mut rng) as u64);
                for _ in 0..n {
                    let t = (t0 + rng.random::<f64>() * span).round() as i128;
                    if self.push(&mut out.tags, ch, t) {
                        out.background[ch as usize] += 1;
                    }
                }
            }
        }
        out
    }
}

/// Simulates one acquisition of duration `duration_s`.
pub fn simulate_run(
    src: &SourceParams,
    link: &LinkParams,
    clk: &ClockParams,
    meas: &MeasurementConfig,
    duration_s: f64,
    seed: u64,
) -> Result<(TagStream, GroundTruth)> {
    src.validate()?;
    link.validate()?;
    clk.validate()?;
    validate_duration(duration_s)?;

    let horizon_ps = duration_s * 1e12;
    let pulses = (horizon_ps / src.rep_period_ps).floor() as u64;
    let blink = src.blinking().map(|(on, off)| {
        let mut rng = block_rng(seed, 0);
        blink_timeline(on, off, horizon_ps, &mut rng)
    });

    let fwd = link.one_way_delay_ps + link.inserted_delay_ps;
    let one_way = fwd + link.forward_only_delay_ps;
    let round_trip = 2.0 * fwd + link.forward_only_delay_ps;
    let r = |v: f64| v.round() as i128;
    let delay_ch = [
        r(clk.channel_delay_ps[0]),
        r(link.one_way_delay_ps) + r(link.inserted_delay_ps) + r(link.forward_only_delay_ps) + r(clk.channel_delay_ps[1]),
        2 * (r(link.one_way_delay_ps) + r(link.inserted_delay_ps)) + r(link.forward_only_delay_ps) + r(clk.channel_delay_ps[2]),
    ];
    let birefringence = (link.birefringence_theta_rad != 0.0 || link.birefringence_phi_rad != 0.0)
        .then(|| retarder(link.birefringence_theta_rad, link.birefringence_phi_rad));

    let plan = RunPlan {
        src,
        meas,
        seed,
        pulses,
        horizon_ps,
        blink,
        p_transmit: link.transmit_probability(),
        p_return: link.return_probability(),
        depolarization: link.depolarization,
        birefringence,
        delay_ch,
        offset_ps: clk.offset_total_ps(),
        drift: clk.drift_ppb * 1e-9,
        jitter: [
            jitter_sampler(clk.jitter_sigma_ps[0]),
            jitter_sampler(clk.jitter_sigma_ps[1]),
            jitter_sampler(clk.jitter_sigma_ps[2]),
        ],
    };
    debug_assert!(plan.horizon_ps > 0.0);

    let blocks = pulses.div_ceil(PULSES_PER_BLOCK);
    let outputs: Vec<BlockOutput> = (0..blocks).into_par_iter().map(|b| plan.run_block(b)).collect();

    let mut tags = Vec::with_capacity(outputs.iter().map(|o| o.tags.len()).sum());
    let mut pairs = 0;
    let mut coinc_remote = 0;
    let mut coinc_return = 0;
    let mut background = [0u64; 3];
    for o in outputs {
        tags.extend(o.tags);
        pairs += o.pairs;
        coinc_remote += o.coinc_remote;
        coinc_return += o.coinc_return;
        for ch in 0..3 {
            background[ch] += o.background[ch];
        }
    }
    let stream = TagStream::new(RUN_CHANNELS, tags)?.with_epoch(EpochInfo {
        label: if meas.label.is_empty() { "run".into() } else { meas.label.clone() },
        duration_s: Some(duration_s),
    });

    let truth = GroundTruth {
        seed,
        duration_s,
        pulses,
        pairs_emitted: pairs,
        channel_counts: stream.channel_counts(),
        background_counts: background.to_vec(),
        coincident_pairs_remote: coinc_remote,
        coincident_pairs_return: coinc_return,
        offset_s: clk.offset_s,
        offset_ps: clk.offset_ps,
        offset_total_ps: clk.offset_total_ps(),
        drift_ppb: clk.drift_ppb,
        one_way_delay_ps: link.one_way_delay_ps,
        inserted_delay_ps: link.inserted_delay_ps,
        forward_only_delay_ps: link.forward_only_delay_ps,
        one_way_propagation_ps: one_way,
        round_trip_propagation_ps: round_trip,
        path_asymmetry_ps: one_way - round_trip / 2.0,
        channel_delay_ps: clk.channel_delay_ps,
    };
    Ok((stream, truth))
}

/// Seed for the `index`-th member of a family of runs.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    seed ^ (index + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// One run per tomography setting, each with its own derived seed.
pub fn simulate_tomography_set(
    src: &SourceParams,
    link: &LinkParams,
    clk: &ClockParams,
    duration_s: f64,
    seed: u64,
) -> Result<Vec<(Setting, TagStream)>> {
    simulate_settings(&default_settings(), src, link, clk, duration_s, seed)
}

pub fn simulate_settings(
    settings: &[Setting],
    src: &SourceParams,
    link: &LinkParams,
    clk: &ClockParams,
    duration_s: f64,
    seed: u64,
) -> Result<Vec<(Setting, TagStream)>> {
    settings
        .par_iter()
        .enumerate()
        .map(|(i, &s)| {
            let meas = MeasurementConfig::for_setting(s);
            simulate_run(src, link, clk, &meas, duration_s, derive_seed(seed, i as u64))
                .map(|(stream, _)| (s, stream))
        })
        .collect()
}

/// Two-detector (Hanbury Brown–Twiss) measurement of a single emission line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HbtParams {
    /// Probability per pulse that the emitter photon is detected (either arm).
    pub detected_photon_prob: f64,
    pub lifetime_ps: f64,
    /// Mean detected photons per pulse from spectrally overlapping
    /// neighbouring emitters (Poissonian, pulse-synchronous).
    pub pulsed_background_mean: f64,
    /// Per-detector jitter; two detectors at 35.36 ps give a 50 ps IRF.
    pub jitter_sigma_ps: f64,
}

impl Default for HbtParams {
    fn default() -> Self {
        Self {
            detected_photon_prob: 0.01,
            lifetime_ps: 1140.0,
            pulsed_background_mean: 0.0,
            jitter_sigma_ps: 50.0 / std::f64::consts::SQRT_2,
        }
    }
}

impl HbtParams {
    pub fn validate(&self) -> Result<()> {
        unit("detected_photon_prob", self.detected_photon_prob)?;
        nonneg("lifetime_ps", self.lifetime_ps)?;
        nonneg("pulsed_background_mean", self.pulsed_background_mean)?;
        nonneg("jitter_sigma_ps", self.jitter_sigma_ps)
    }

    /// Zero-delay to side-peak area ratio produced by these settings:
    /// (2sμ + μ²)/(s + μ)² with s the emitter and μ the background photon
    /// probability per pulse.
    pub fn expected_g2_zero(&self) -> f64 {
        let s = self.detected_photon_prob;
        let mu = self.pulsed_background_mean;
        if s + mu == 0.0 {
            return f64::NAN;
        }
        (2.0 * s * mu + mu * mu) / ((s + mu) * (s + mu))
    }

    /// Background mean that yields a target g²(0) for the current emitter
    /// probability: μ = s·(1/√(1−g) − 1).
    pub fn background_for_g2(detected_photon_prob: f64, g2_zero: f64) -> f64 {
        detected_photon_prob * (1.0 / (1.0 - g2_zero).sqrt() - 1.0)
    }
}

/// Simulates a 50:50 split of one emission line onto channels 0 and 1.
/// Blinking and CW background come from `src`; the emitter itself from `hbt`.
pub fn simulate_hbt(src: &SourceParams, hbt: &HbtParams, duration_s: f64, seed: u64) -> Result<TagStream> {
    src.validate()?;
    hbt.validate()?;
    validate_duration(duration_s)?;
    let horizon_ps = duration_s * 1e12;
    let pulses = (horizon_ps / src.rep_period_ps).floor() as u64;
    let blink = src.blinking().map(|(on, off)| {
        let mut rng = block_rng(seed, 0);
        blink_timeline(on, off, horizon_ps, &mut rng)
    });
    let blocks = pulses.div_ceil(PULSES_PER_BLOCK);
    let lifetime = exp_sampler(hbt.lifetime_ps);
    let jit = jitter_sampler(hbt.jitter_sigma_ps);
    let rep = src.rep_period_ps;

    let per_block: Vec<Vec<TimeTag>> = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let mut rng = block_rng(seed, b + 1);
            let first = b * PULSES_PER_BLOCK;
            let end = (first + PULSES_PER_BLOCK).min(pulses);
            let n_pulses = end - first;
            let mut tags = Vec::new();
            let photon = |pulse: u64, rng: &mut ChaCha8Rng, tags: &mut Vec<TimeTag>| {
                let arm: u16 = if rng.random::<bool>() { 1 } else { 0 };
                let t = pulse as f64 * rep + sample_or_zero(&lifetime, rng) + jitter(&jit, rng);
                if t >= 0.0 {
                    tags.push(TimeTag::new(arm, t.round() as u64));
                }
            };
            // emitter: at most one photon per pulse
            if hbt.detected_photon_prob > 0.0 {
                let geo = (hbt.detected_photon_prob < 1.0)
                    .then(|| Geometric::new(hbt.detected_photon_prob).expect("valid probability"));
                let mut k = first;
                loop {
                    if let Some(g) = &geo {
                        k = k.saturating_add(g.sample(&mut rng));
                    }
                    if k >= end {
                        break;
                    }
                    if is_on(blink.as_deref(), k as f64 * rep) {
                        photon(k, &mut rng, &mut tags);
                    }
                    k += 1;
                }
            }
            // neighbouring emitters: independent Poisson photon numbers per pulse
            if hbt.pulsed_background_mean > 0.0 {
                let total = Poisson::new(hbt.pulsed_background_mean * n_pulses as f64)
                    .map(|p| p.sample(&mut rng) as u64)
                    .unwrap_or(0);
                for _ in 0..total {
                    let pulse = first + rng.random_range(0..n_pulses);
                    photon(pulse, &mut rng, &mut tags);
                }
            }
            if src.background_rate_hz > 0.0 {
                let span = n_pulses as f64 * rep;
                let mean = src.background_rate_hz * span * 1e-12;
                if let Ok(p) = Poisson::new(mean) {
                    for ch in 0..2u16 {
                        let n = p.sample(&mut rng) as u64;
                        for _ in 0..n {
                            let t = first as f64 * rep + rng.random::<f64>() * span;
                            tags.push(TimeTag::new(ch, t.round() as u64));
                        }
                    }
                }
            }
            tags
        })
        .collect();
    let tags = per_block.into_iter().flatten().collect();
    Ok(TagStream::new(2, tags)?.with_epoch(EpochInfo {
        label: "hbt".into(),
        duration_s: Some(duration_s),
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ideal_src(pair_prob: f64) -> SourceParams {
        SourceParams {
            pair_prob,
            fss_omega_rad_per_ps: 0.0,
            ..Default::default()
        }
    }

    fn ideal_clock() -> ClockParams {
        ClockParams {
            jitter_sigma_ps: [0.0; 3],
            ..Default::default()
        }
    }

    fn lossless() -> LinkParams {
        LinkParams::default()
    }

    #[test]
    fn fss_period_from_splitting() {
        let omega = fss_omega_from_uev(4.71);
        let period = 2.0 * std::f64::consts::PI / omega;
        // h/S = 4.135667696e-15 eV·s / 4.71e-6 eV
        assert!((period - 878.06).abs() < 0.1, "period {period}");
    }

    #[test]
    fn rejects_bad_arguments() {
        let run = |src: &SourceParams, link: &LinkParams, d: f64| {
            simulate_run(src, link, &ideal_clock(), &MeasurementConfig::default(), d, 1)
        };
        assert!(matches!(run(&ideal_src(0.1), &lossless(), 0.0), Err(Error::Argument(_))));
        assert!(matches!(run(&ideal_src(1.5), &lossless(), 1e-3), Err(Error::Argument(_))));
        let bad_link = LinkParams { reflectance: -0.1, ..Default::default() };
        assert!(matches!(run(&ideal_src(0.1), &bad_link, 1e-3), Err(Error::Argument(_))));
    }

    #[test]
    fn every_pulse_yields_xx_and_one_x() {
        let (s, truth) = simulate_run(
            &ideal_src(1.0),
            &lossless(),
            &ideal_clock(),
            &MeasurementConfig::default(),
            1e-5,
            3,
        )
        .unwrap();
        let c = s.channel_counts();
        assert_eq!(truth.pulses, 800);
        assert_eq!(c[0], 800);
        assert_eq!(c[1] + c[2], 800);
    }

    #[test]
    fn exciton_delay_is_exponential_with_lifetime_mean() {
        // 10⁶ pulses; X always routed to channel 1.
        let link = LinkParams { reflectance: 0.0, one_way_delay_ps: 0.0, ..Default::default() };
        let (s, _) = simulate_run(
            &ideal_src(1.0),
            &link,
            &ideal_clock(),
            &MeasurementConfig::default(),
            (1e6 + 0.5) * 12_500e-12,
            11,
        )
        .unwrap();
        // One XX and one X per pulse, so Σt_X − Σt_XX is the sum of the X
        // delays exactly.
        let xx = s.channel_times(CH_XX).unwrap();
        let x = s.channel_times(CH_X_REMOTE).unwrap();
        assert_eq!(xx.len(), 1_000_000);
        assert_eq!(x.len(), 1_000_000);
        let sum_x: u128 = x.iter().map(|&t| t as u128).sum();
        let sum_xx: u128 = xx.iter().map(|&t| t as u128).sum();
        let mean = (sum_x - sum_xx) as f64 / 1e6;
        assert!((mean - 1140.0).abs() < 11.4, "mean X delay {mean}");
    }

    #[test]
    fn reflectance_splits_returned_fraction() {
        let (_, truth) = simulate_run(
            &ideal_src(0.5),
            &lossless(),
            &ideal_clock(),
            &MeasurementConfig::default(),
            2e-3,
            5,
        )
        .unwrap();
        let c1 = truth.channel_counts[1] as f64;
        let c2 = truth.channel_counts[2] as f64;
        let n = c1 + c2;
        let frac = c2 / n;
        let sigma = (0.7 * 0.3 / n).sqrt();
        assert!((frac - 0.70).abs() < 3.0 * sigma, "returned fraction {frac} ± {sigma}");
    }

    #[test]
    fn inserted_delay_shifts_exactly() {
        let run = |inserted: f64| {
            let link = LinkParams {
                one_way_delay_ps: 1000.0,
                inserted_delay_ps: inserted,
                ..Default::default()
            };
            simulate_run(&ideal_src(0.2), &link, &ideal_clock(), &MeasurementConfig::default(), 1e-4, 9)
                .unwrap()
                .0
        };
        let a = run(0.0);
        let b = run(4480.0);
        assert_eq!(a.channel_times(0).unwrap(), b.channel_times(0).unwrap());
        let shift = |ch: u16, d: u64| {
            let ta = a.channel_times(ch).unwrap();
            let tb = b.channel_times(ch).unwrap();
            assert_eq!(ta.len(), tb.len());
            assert!(ta.iter().zip(&tb).all(|(x, y)| y - x == d));
        };
        shift(CH_X_REMOTE, 4480);
        shift(CH_X_RETURN, 8960);
    }

    #[test]
    fn causality_without_jitter_or_background() {
        let link = LinkParams { one_way_delay_ps: 5000.0, ..Default::default() };
        let clk = ClockParams { offset_s: 0.25, ..ideal_clock() };
        let (s, truth) = simulate_run(&ideal_src(0.3), &link, &clk, &MeasurementConfig::default(), 1e-4, 2).unwrap();
        let xx = s.channel_times(CH_XX).unwrap();
        let x = s.channel_times(CH_X_REMOTE).unwrap();
        let fixed = 5000 + truth.offset_total_ps as u64;
        for &t in &x {
            // ancestor: latest XX at or before t − fixed
            let idx = xx.partition_point(|&a| a <= t - fixed);
            assert!(idx > 0, "X tag without XX ancestor");
            assert!(t - fixed - xx[idx - 1] < 12_500 * 3);
        }
        assert_eq!(truth.round_trip_propagation_ps - 2.0 * truth.one_way_propagation_ps, 0.0);
    }

    #[test]
    fn negative_offset_drops_early_tags() {
        let clk = ClockParams { offset_s: -1e-5, ..ideal_clock() };
        let (s, _) = simulate_run(&ideal_src(1.0), &lossless(), &clk, &MeasurementConfig::default(), 2e-5, 2).unwrap();
        let x = s.channel_times(CH_X_REMOTE).unwrap();
        assert!(x.iter().all(|&t| t < 10_000_000));
        assert!(!x.is_empty());
    }

    #[test]
    fn born_rule_normalization_over_joint_outcomes() {
        // With both analyzers in the H/V basis, the four joint outcome
        // frequencies sum to the coincidence total and follow the phased state.
        let src = SourceParams {
            pair_prob: 1.0,
            fss_omega_rad_per_ps: fss_omega_from_uev(4.71),
            ..Default::default()
        };
        let link = LinkParams { reflectance: 0.0, ..Default::default() };
        let n_pulses = 250_000.0;
        let mut total = 0.0;
        for (i, label) in ["HH", "HV", "VH", "VV"].iter().enumerate() {
            let meas = MeasurementConfig::for_setting(label.parse().unwrap());
            let (_, truth) = simulate_run(&src, &link, &ideal_clock(), &meas, n_pulses * 12_500e-12, 100 + i as u64).unwrap();
            total += truth.coincident_pairs_remote as f64 / n_pulses;
        }
        // each setting estimates its own probability from an independent run
        let sigma = (4.0 * 0.25 / n_pulses).sqrt();
        assert!((total - 1.0).abs() < 4.0 * sigma, "ΣP = {total}");
    }

    #[test]
    fn phi_plus_setting_rates() {
        let src = ideal_src(0.5);
        let link = LinkParams { reflectance: 0.0, ..Default::default() };
        let rate = |label: &str, seed: u64| {
            let meas = MeasurementConfig::for_setting(label.parse().unwrap());
            let (_, truth) = simulate_run(&src, &link, &ideal_clock(), &meas, 5e-3, seed).unwrap();
            truth.coincident_pairs_remote as f64
        };
        let (hh, vv, hv, dd) = (rate("HH", 1), rate("VV", 2), rate("HV", 3), rate("DD", 4));
        let sigma = (hh + vv).sqrt();
        assert!((hh - vv).abs() < 4.0 * sigma, "HH {hh} VV {vv}");
        // 4-vector oracle: |⟨DD|Φ⁺⟩|² = |(1/2)(1 + 1)/√2|² = 1/2 = |⟨HH|Φ⁺⟩|²
        let dd_vec = kron_dd();
        let p_dd = dd_vec.dotc(PolarizationState::phi_plus().amplitudes()).norm_sqr();
        assert!((p_dd - 0.5).abs() < 1e-15);
        assert!((dd - hh).abs() < 4.0 * sigma, "DD {dd} HH {hh}");
        assert_eq!(hv, 0.0);
    }

    fn kron_dd() -> nalgebra::Vector4<C64> {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let d = Vector2::new(C64::new(s, 0.0), C64::new(s, 0.0));
        nalgebra::Vector4::new(d[0] * d[0], d[0] * d[1], d[1] * d[0], d[1] * d[1])
    }

    #[test]
    fn tiny_runs_may_be_empty() {
        let src = ideal_src(1e-6);
        let set = simulate_tomography_set(&src, &lossless(), &ideal_clock(), 1e-3, 1).unwrap();
        assert_eq!(set.len(), 16);
        assert!(set.iter().any(|(_, s)| s.channel_counts()[1] == 0));
    }

    #[test]
    fn seeded_runs_are_reproducible() {
        let src = SourceParams { background_rate_hz: 1e5, ..ideal_src(0.05) };
        let go = || simulate_run(&src, &lossless(), &ClockParams::default(), &MeasurementConfig::default(), 0.2, 42).unwrap();
        let (a, ta) = go();
        let (b, tb) = go();
        assert_eq!(a, b);
        assert_eq!(ta, tb);
        assert!(ta.background_counts.iter().all(|&n| n > 0));
    }

    #[test]
    fn blinking_reduces_pairs() {
        let src = SourceParams {
            blink_on_ms: Some(0.01),
            blink_off_ms: Some(0.01),
            ..ideal_src(0.1)
        };
        let (_, truth) = simulate_run(&src, &lossless(), &ideal_clock(), &MeasurementConfig::default(), 0.02, 8).unwrap();
        let expected = truth.pulses as f64 * 0.1 * 0.5;
        assert!((truth.pairs_emitted as f64 - expected).abs() < 0.1 * expected);
    }

    #[test]
    fn hbt_background_oracle() {
        let mu = HbtParams::background_for_g2(0.02, 0.15);
        let h = HbtParams { detected_photon_prob: 0.02, pulsed_background_mean: mu, ..Default::default() };
        assert!((h.expected_g2_zero() - 0.15).abs() < 1e-12);
        let pure = HbtParams { detected_photon_prob: 0.0, pulsed_background_mean: 0.1, ..Default::default() };
        assert!((pure.expected_g2_zero() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn offset_total_is_exact_for_fine_part() {
        let clk = ClockParams { offset_s: 918_251.0, offset_ps: 669_509_152.98, ..Default::default() };
        assert_eq!(clk.offset_total_ps(), 918_251_000_669_509_153);
        let clk = ClockParams { offset_s: 0.123456789, ..Default::default() };
        assert_eq!(clk.offset_total_ps(), 123_456_789_000);
    }
}
