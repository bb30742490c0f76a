//! Pulsed autocorrelation model: two-sided exponential peaks at multiples of
//! the repetition period, a bunching envelope 1 + b·e^{−|t|/τ_b} from
//! blinking, a flat background, all convolved with a Gaussian IRF.
//!
//! Side peaks share one amplitude scaled by the envelope, the center peak
//! has its own amplitude. Free per-peak amplitudes would make the envelope
//! redundant.

use serde::{Deserialize, Serialize};

use super::lm::{self, LmConfig, Problem};
use super::Estimate;
use crate::correlator::CorrelationHistogram;
use crate::error::{Error, Result};

pub const N_PARAMS: usize = 6;
pub const PARAM_NAMES: [&str; N_PARAMS] = [
    "center_amplitude",
    "side_amplitude",
    "tau_decay_ps",
    "blinking_amplitude",
    "blinking_time_ps",
    "background",
];

const I_A0: usize = 0;
const I_A: usize = 1;
const I_TAU: usize = 2;
const I_B: usize = 3;
const I_TB: usize = 4;
const I_C: usize = 5;

/// Peaks at |k| ≥ this are treated as uncorrelated.
pub const FAR_PEAK_INDEX: i64 = 5;
/// Required span on each side of zero, in periods.
pub const MIN_PERIODS_EACH_SIDE: f64 = 7.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct G2FitOptions {
    /// Width of the Gaussian instrument response.
    pub irf_width_ps: f64,
    /// Interpret `irf_width_ps` as a FWHM rather than σ.
    pub irf_width_is_fwhm: bool,
    pub tau_decay_guess_ps: f64,
    pub max_iterations: usize,
}

impl Default for G2FitOptions {
    fn default() -> Self {
        Self {
            irf_width_ps: 50.0,
            irf_width_is_fwhm: false,
            tau_decay_guess_ps: 1140.0,
            max_iterations: 2000,
        }
    }
}

impl G2FitOptions {
    pub fn irf_sigma_ps(&self) -> f64 {
        if self.irf_width_is_fwhm {
            self.irf_width_ps / (2.0 * (2.0 * std::f64::consts::LN_2).sqrt())
        } else {
            self.irf_width_ps
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PeakAmplitude {
    pub index: i64,
    /// Peak height in counts per bin.
    pub amplitude: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct G2Fit {
    pub peak_amplitudes: Vec<PeakAmplitude>,
    pub center_amplitude: Estimate,
    pub side_amplitude: Estimate,
    pub tau_decay_ps: Estimate,
    pub blinking_amplitude: Estimate,
    pub blinking_time_ps: Estimate,
    pub background: Estimate,
    pub irf_sigma_ps: f64,
    pub rep_period_ps: f64,
    pub g2_zero: Estimate,
    pub rss: f64,
    pub weighted_rss: f64,
    pub n_bins: usize,
    pub iterations: usize,
    pub converged: bool,
    pub at_bound: Vec<String>,
    #[serde(skip)]
    params: [f64; N_PARAMS],
}

impl G2Fit {
    pub fn params(&self) -> [f64; N_PARAMS] {
        self.params
    }
}

/// Evaluates the convolved model on the bins of a histogram.
pub(crate) struct G2Model {
    tau_start: f64,
    bin_width: f64,
    /// width of each bin relative to `bin_width` (the last may be longer)
    bin_scale: Vec<f64>,
    period: f64,
    sub: usize,
    pad: usize,
    kernel: Vec<f64>,
}

impl G2Model {
    pub(crate) fn new(h: &CorrelationHistogram, period: f64, irf_sigma: f64) -> Self {
        let w = h.bin_width_ps as f64;
        let n = h.len();
        let bin_scale = (0..n)
            .map(|k| {
                let end = if k + 1 < n { h.bin_start(k + 1) } else { h.tau_end_ps() };
                (end - h.bin_start(k)) as f64 / w
            })
            .collect();
        let sub = if irf_sigma > 0.0 {
            (w / (irf_sigma / 3.0)).ceil().max(1.0) as usize
        } else {
            1
        };
        let hs = w / sub as f64;
        let (pad, kernel) = if irf_sigma > 0.0 {
            let pad = (6.0 * irf_sigma / hs).ceil() as usize;
            let mut k: Vec<f64> = (0..=2 * pad)
                .map(|m| {
                    let d = (m as f64 - pad as f64) * hs;
                    (-0.5 * (d / irf_sigma).powi(2)).exp()
                })
                .collect();
            let s: f64 = k.iter().sum();
            k.iter_mut().for_each(|v| *v /= s);
            (pad, k)
        } else {
            (0, vec![1.0])
        };
        Self {
            tau_start: h.tau_start_ps as f64,
            bin_width: w,
            bin_scale,
            period,
            sub,
            pad,
            kernel,
        }
    }

    fn envelope(p: &[f64], t: f64) -> f64 {
        1.0 + p[I_B] * (-t.abs() / p[I_TB]).exp()
    }

    fn raw(&self, p: &[f64], t: f64) -> f64 {
        let tau = p[I_TAU];
        let reach = ((30.0 * tau) / self.period).ceil() as i64 + 1;
        let k0 = (t / self.period).round() as i64;
        let mut s = 0.0;
        for k in (k0 - reach)..=(k0 + reach) {
            let d = (t - k as f64 * self.period).abs();
            let amp = if k == 0 { p[I_A0] } else { p[I_A] };
            s += amp * (-d / tau).exp();
        }
        s * Self::envelope(p, t)
    }

    pub(crate) fn eval(&self, p: &[f64], out: &mut [f64]) {
        let n = self.bin_scale.len();
        let hs = self.bin_width / self.sub as f64;
        let grid_len = n * self.sub + 2 * self.pad;
        let origin = self.tau_start - self.pad as f64 * hs;
        let raw: Vec<f64> = (0..grid_len)
            .map(|j| self.raw(p, origin + (j as f64 + 0.5) * hs))
            .collect();
        for (k, o) in out.iter_mut().enumerate().take(n) {
            let mut acc = 0.0;
            for s in 0..self.sub {
                let centre = k * self.sub + s + self.pad;
                let mut v = 0.0;
                for (m, w) in self.kernel.iter().enumerate() {
                    v += w * raw[centre + m - self.pad];
                }
                acc += v;
            }
            *o = (acc / self.sub as f64 + p[I_C]) * self.bin_scale[k];
        }
    }
}

struct G2Problem<'a> {
    model: G2Model,
    y: &'a [f64],
    inv_sigma: Vec<f64>,
    max_tb: f64,
}

impl Problem for G2Problem<'_> {
    fn n_params(&self) -> usize {
        N_PARAMS
    }
    fn n_residuals(&self) -> usize {
        self.y.len()
    }
    fn residuals(&self, p: &[f64], out: &mut [f64]) {
        self.model.eval(p, out);
        for i in 0..out.len() {
            out[i] = (out[i] - self.y[i]) * self.inv_sigma[i];
        }
    }
    fn constrain(&self, p: &mut [f64]) -> bool {
        let before = p.to_vec();
        p[I_A0] = p[I_A0].max(0.0);
        p[I_A] = p[I_A].max(1e-12);
        p[I_TAU] = p[I_TAU].max(1.0);
        p[I_B] = p[I_B].max(0.0);
        p[I_TB] = p[I_TB].clamp(1.0, self.max_tb);
        p[I_C] = p[I_C].max(0.0);
        before != p
    }
}

pub fn fit_g2(h: &CorrelationHistogram, rep_period_ps: f64, opts: &G2FitOptions) -> Result<G2Fit> {
    if !(rep_period_ps > 0.0) {
        return Err(Error::Argument("repetition period must be positive".into()));
    }
    let need = MIN_PERIODS_EACH_SIDE * rep_period_ps;
    if (h.tau_start_ps as f64) > -need || (h.tau_end_ps() as f64) < need {
        return Err(Error::Argument(format!(
            "histogram [{}, {}) ps must span at least {MIN_PERIODS_EACH_SIDE} periods on each side of zero",
            h.tau_start_ps,
            h.tau_end_ps()
        )));
    }
    let y: Vec<f64> = h.counts.iter().map(|&c| c as f64).collect();
    let irf = opts.irf_sigma_ps();
    let problem = G2Problem {
        model: G2Model::new(h, rep_period_ps, irf),
        y: &y,
        inv_sigma: y.iter().map(|&c| 1.0 / c.max(1.0).sqrt()).collect(),
        max_tb: 1e4 * rep_period_ps,
    };
    let start = initial_guess(h, &y, rep_period_ps, opts.tau_decay_guess_ps);
    let cfg = LmConfig {
        max_iterations: opts.max_iterations,
        ..LmConfig::default()
    };
    let all = [true; N_PARAMS];
    let mut alt = start;
    alt[I_B] = 0.5;
    alt[I_TB] = 2.0 * rep_period_ps;
    // without blinking the envelope is flat and τ_b is free to wander, so the
    // nested b = 0 model is always tried as well
    let mut flat = start;
    flat[I_B] = 0.0;
    let mut no_blink = all;
    no_blink[I_B] = false;
    no_blink[I_TB] = false;
    let candidates = [(start, all), (alt, all), (flat, no_blink)];
    let mut best: Option<(lm::LmOutcome, [bool; N_PARAMS])> = None;
    let mut last = None;
    for (x0, free) in candidates {
        let out = lm::minimize(&problem, &x0, &free, &cfg);
        if out.converged && best.as_ref().is_none_or(|(b, _)| out.cost < b.cost) {
            best = Some((out, free));
        } else if !out.converged {
            last = Some(out);
        }
    }
    let Some((out, free)) = best else {
        let out = last.expect("at least one candidate fit");
        return Err(Error::Fit(format!(
            "g2 fit did not converge after {} iterations (weighted rss {:.6e}, params {:?})",
            out.iterations, out.cost, out.params
        )));
    };
    let mut p = [0.0; N_PARAMS];
    p.copy_from_slice(&out.params);
    let mut cov = out.covariance(y.len(), &free);
    if p[I_B] == 0.0 {
        // τ_b has no effect at b = 0
        for j in 0..N_PARAMS {
            cov[(I_TB, j)] = 0.0;
            cov[(j, I_TB)] = 0.0;
        }
    }
    let err = |i: usize| cov[(i, i)].max(0.0).sqrt();

    let lo = (h.tau_start_ps as f64 / rep_period_ps).ceil() as i64;
    let hi = (h.tau_end_ps() as f64 / rep_period_ps).floor() as i64;
    let peak_amplitudes = (lo..=hi)
        .map(|k| PeakAmplitude {
            index: k,
            amplitude: peak_height(&p, k, rep_period_ps),
        })
        .collect();

    let g2 = g2_zero(&p, lo, hi, rep_period_ps);
    let mut grad = [0.0; N_PARAMS];
    for i in 0..N_PARAMS {
        let step = (err(i) * 1e-3).max(1e-7 * p[i].abs()).max(1e-12);
        let mut up = p;
        let mut dn = p;
        up[i] += step;
        dn[i] -= step;
        grad[i] = (g2_zero(&up, lo, hi, rep_period_ps) - g2_zero(&dn, lo, hi, rep_period_ps)) / (2.0 * step);
    }
    let mut var = 0.0;
    for i in 0..N_PARAMS {
        for j in 0..N_PARAMS {
            var += grad[i] * cov[(i, j)] * grad[j];
        }
    }

    let mut model = vec![0.0; y.len()];
    problem.model.eval(&p, &mut model);
    let rss = model.iter().zip(&y).map(|(m, c)| (m - c).powi(2)).sum();

    let mut at_bound = Vec::new();
    if p[I_A0] == 0.0 {
        at_bound.push(PARAM_NAMES[I_A0].to_string());
    }
    if p[I_B] == 0.0 {
        at_bound.push(PARAM_NAMES[I_B].to_string());
    }
    if p[I_C] == 0.0 {
        at_bound.push(PARAM_NAMES[I_C].to_string());
    }

    let est = |i: usize| Estimate::new(p[i], err(i));
    Ok(G2Fit {
        peak_amplitudes,
        center_amplitude: est(I_A0),
        side_amplitude: est(I_A),
        tau_decay_ps: est(I_TAU),
        blinking_amplitude: est(I_B),
        blinking_time_ps: est(I_TB),
        background: est(I_C),
        irf_sigma_ps: irf,
        rep_period_ps,
        g2_zero: Estimate::new(g2, var.max(0.0).sqrt()),
        rss,
        weighted_rss: out.cost,
        n_bins: y.len(),
        iterations: out.iterations,
        converged: out.converged,
        at_bound,
        params: p,
    })
}

/// Evaluates the fitted model on the bins of `h`.
pub fn g2_model_counts(fit: &G2Fit, h: &CorrelationHistogram) -> Vec<f64> {
    let m = G2Model::new(h, fit.rep_period_ps, fit.irf_sigma_ps);
    let mut out = vec![0.0; h.len()];
    m.eval(&fit.params, &mut out);
    out
}

fn peak_height(p: &[f64], k: i64, period: f64) -> f64 {
    let a = if k == 0 { p[I_A0] } else { p[I_A] };
    a * G2Model::envelope(p, k as f64 * period)
}

fn g2_zero(p: &[f64], lo: i64, hi: i64, period: f64) -> f64 {
    let far: Vec<f64> = (lo..=hi)
        .filter(|k| k.abs() >= FAR_PEAK_INDEX)
        .map(|k| peak_height(p, k, period))
        .collect();
    let mean = far.iter().sum::<f64>() / far.len() as f64;
    p[I_A0] / mean
}

fn initial_guess(h: &CorrelationHistogram, y: &[f64], period: f64, tau: f64) -> [f64; N_PARAMS] {
    let w = h.bin_width_ps as f64;
    let phase = |k: usize| {
        let t = h.bin_start(k) as f64 + 0.5 * w;
        let r = (t / period).round();
        (r as i64, (t - r * period).abs())
    };
    let mut valley: Vec<f64> = (0..y.len())
        .filter(|&k| phase(k).1 > 0.4 * period)
        .map(|k| y[k])
        .collect();
    valley.sort_by(f64::total_cmp);
    let c = valley.get(valley.len() / 2).copied().unwrap_or(0.0);
    let area = |idx: i64| -> f64 {
        (0..y.len())
            .filter(|&k| {
                let (r, d) = phase(k);
                r == idx && d < 0.5 * period
            })
            .map(|k| y[k] - c)
            .sum()
    };
    let to_height = |a: f64| (a * w / (2.0 * tau)).max(0.0);
    let far: Vec<f64> = [-6i64, -5, 5, 6].iter().map(|&k| to_height(area(k))).collect();
    let a_side = (far.iter().sum::<f64>() / far.len() as f64).max(1e-3);
    let near = 0.5 * (to_height(area(-1)) + to_height(area(1)));
    let a0 = to_height(area(0));
    let b = (near / a_side - 1.0).max(0.0);
    [a0, a_side, tau, b, 2.0 * period, c.max(0.0)]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn synthetic(p: &[f64; N_PARAMS], period: f64, w: u64, sigma: f64) -> CorrelationHistogram {
        let span = (8.0 * period) as i64;
        let n = (2 * span) as u64 / w;
        let mut h = CorrelationHistogram {
            tau_start_ps: -span,
            bin_width_ps: w,
            counts: vec![0; n as usize],
            n_a: 0,
            n_b: 0,
            window_delta_ps: w,
        };
        let m = G2Model::new(&h, period, sigma);
        let mut out = vec![0.0; h.len()];
        m.eval(p, &mut out);
        h.counts = out.iter().map(|v| v.round() as u64).collect();
        h
    }

    #[test]
    fn convolution_preserves_area() {
        let period = 12500.0;
        let p = [0.0, 100.0, 1140.0, 0.0, 1.0, 0.0];
        let h = synthetic(&p, period, 32, 0.0);
        let sharp: f64 = h.counts.iter().map(|&c| c as f64).sum();
        let blurred = synthetic(&p, period, 32, 50.0);
        let soft: f64 = blurred.counts.iter().map(|&c| c as f64).sum();
        assert!((sharp - soft).abs() / sharp < 1e-3);
    }

    #[test]
    fn recovers_noiseless_parameters() {
        let period = 12500.0;
        let p = [15.0, 100.0, 1140.0, 0.4, 40000.0, 2.0];
        let h = synthetic(&p, period, 32, 50.0);
        let fit = fit_g2(&h, period, &G2FitOptions::default()).unwrap();
        let expect = 15.0 / (100.0 * (1.0 + 0.4 * (-5.0f64 * period / 40000.0).exp()));
        // rounding the synthetic counts limits the precision
        assert!((fit.g2_zero.value - expect).abs() < 0.01, "{} vs {expect}", fit.g2_zero.value);
        assert!((fit.tau_decay_ps.value - 1140.0).abs() < 5.0);
        assert!((fit.blinking_amplitude.value - 0.4).abs() < 0.02);
    }

    #[test]
    fn rejects_short_span() {
        let period = 12500.0;
        let h = CorrelationHistogram {
            tau_start_ps: -50_000,
            bin_width_ps: 100,
            counts: vec![1; 1000],
            n_a: 0,
            n_b: 0,
            window_delta_ps: 100,
        };
        assert!(matches!(fit_g2(&h, period, &G2FitOptions::default()), Err(Error::Argument(_))));
    }

    #[test]
    fn fwhm_switch() {
        let o = G2FitOptions {
            irf_width_is_fwhm: true,
            ..Default::default()
        };
        assert!((o.irf_sigma_ps() - 50.0 / 2.3548200450309493).abs() < 1e-9);
        assert_eq!(G2FitOptions::default().irf_sigma_ps(), 50.0);
    }
}
