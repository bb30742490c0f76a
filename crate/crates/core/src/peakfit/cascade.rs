//! Cascade coincidence peak model:
//!
//! f(t) = A·(1 − e^{−x/τr})·e^{−x/τd}·(1 + B·cos(ω·x + φ)) + C,  x = t − t0,
//!
//! with f(t) = C before the cascade starts (t < t0).

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::lm::{self, LmConfig, Problem};
use super::Estimate;
use crate::correlator::CorrelationHistogram;
use crate::error::{Error, Result};

pub const N_PARAMS: usize = 8;
pub const PARAM_NAMES: [&str; N_PARAMS] = [
    "amplitude",
    "oscillation",
    "tau_rise_ps",
    "tau_decay_ps",
    "omega_rad_per_ps",
    "phi_rad",
    "background",
    "t0_ps",
];

const I_A: usize = 0;
const I_B: usize = 1;
const I_TR: usize = 2;
const I_TD: usize = 3;
const I_W: usize = 4;
const I_PHI: usize = 5;
const I_C: usize = 6;
const I_T0: usize = 7;

const MIN_TAU_PS: f64 = 1e-3;

/// Model value at `t` for parameters in `PARAM_NAMES` order.
pub fn model(p: &[f64], t: f64) -> f64 {
    let x = t - p[I_T0];
    if x < 0.0 {
        return p[I_C];
    }
    let rise = 1.0 - (-x / p[I_TR]).exp();
    let decay = (-x / p[I_TD]).exp();
    p[I_A] * rise * decay * (1.0 + p[I_B] * (p[I_W] * x + p[I_PHI]).cos()) + p[I_C]
}

/// Analytic gradient of `model` with respect to the parameters.
pub fn gradient(p: &[f64], t: f64) -> [f64; N_PARAMS] {
    let mut g = [0.0; N_PARAMS];
    g[I_C] = 1.0;
    let x = t - p[I_T0];
    if x < 0.0 {
        return g;
    }
    let (a, b, tr, td, w, phi) = (p[I_A], p[I_B], p[I_TR], p[I_TD], p[I_W], p[I_PHI]);
    let er = (-x / tr).exp();
    let ed = (-x / td).exp();
    let rise = 1.0 - er;
    let (sn, cs) = (w * x + phi).sin_cos();
    let osc = 1.0 + b * cs;
    let env = rise * ed;
    g[I_A] = env * osc;
    g[I_B] = a * env * cs;
    g[I_TR] = -a * er * x / (tr * tr) * ed * osc;
    g[I_TD] = a * env * x / (td * td) * osc;
    g[I_W] = -a * env * b * sn * x;
    g[I_PHI] = -a * env * b * sn;
    let dx = er / tr * ed * osc - rise * ed / td * osc - env * b * w * sn;
    g[I_T0] = -a * dx;
    g
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CascadeFit {
    pub amplitude: Estimate,
    pub oscillation: Estimate,
    pub tau_rise_ps: Estimate,
    pub tau_decay_ps: Estimate,
    pub omega_rad_per_ps: Estimate,
    pub phi_rad: Estimate,
    pub background: Estimate,
    /// Cascade start, relative to `axis_origin_ps`.
    pub t0_ps: Estimate,
    /// Position of the model maximum, relative to `axis_origin_ps`.
    pub tau_max_ps: Estimate,
    /// Absolute τ (ps) that the relative positions above are measured from.
    pub axis_origin_ps: i64,
    /// Σ (f − counts)².
    pub rss: f64,
    /// Σ (f − counts)²/max(counts, 1), the minimized objective.
    pub weighted_rss: f64,
    pub n_bins: usize,
    pub iterations: usize,
    pub converged: bool,
    /// Names of parameters that ended on a bound.
    pub at_bound: Vec<String>,
}

impl CascadeFit {
    pub fn params(&self) -> [f64; N_PARAMS] {
        [
            self.amplitude.value,
            self.oscillation.value,
            self.tau_rise_ps.value,
            self.tau_decay_ps.value,
            self.omega_rad_per_ps.value,
            self.phi_rad.value,
            self.background.value,
            self.t0_ps.value,
        ]
    }

    /// Model evaluated at an absolute τ.
    pub fn eval_abs(&self, tau_ps: f64) -> f64 {
        model(&self.params(), tau_ps - self.axis_origin_ps as f64)
    }

    pub fn tau_max_abs_ps(&self) -> f64 {
        self.axis_origin_ps as f64 + self.tau_max_ps.value
    }

    pub fn t0_abs_ps(&self) -> f64 {
        self.axis_origin_ps as f64 + self.t0_ps.value
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CascadeFitOptions {
    /// Starting ω; usually the FSS from spectroscopy.
    pub omega_guess_rad_per_ps: f64,
    pub tau_decay_guess_ps: f64,
    /// Hold ω at its starting value.
    pub fix_omega: bool,
    /// Fit the oscillation term; when false B is held at 0.
    pub oscillation: bool,
    pub max_iterations: usize,
}

impl Default for CascadeFitOptions {
    fn default() -> Self {
        Self {
            omega_guess_rad_per_ps: crate::qdsim::fss_omega_from_uev(4.71),
            tau_decay_guess_ps: 1140.0,
            fix_omega: false,
            oscillation: true,
            max_iterations: 2000,
        }
    }
}

struct CascadeProblem<'a> {
    x: &'a [f64],
    y: &'a [f64],
    inv_sigma: Vec<f64>,
}

impl<'a> CascadeProblem<'a> {
    fn new(x: &'a [f64], y: &'a [f64]) -> Self {
        let inv_sigma = y.iter().map(|&c| 1.0 / c.max(1.0).sqrt()).collect();
        Self { x, y, inv_sigma }
    }
}

impl Problem for CascadeProblem<'_> {
    fn n_params(&self) -> usize {
        N_PARAMS
    }
    fn n_residuals(&self) -> usize {
        self.x.len()
    }
    fn residuals(&self, p: &[f64], out: &mut [f64]) {
        for i in 0..self.x.len() {
            out[i] = (model(p, self.x[i]) - self.y[i]) * self.inv_sigma[i];
        }
    }
    fn jacobian(&self, p: &[f64], jac: &mut DMatrix<f64>) {
        for i in 0..self.x.len() {
            let g = gradient(p, self.x[i]);
            for (j, v) in g.iter().enumerate() {
                jac[(i, j)] = v * self.inv_sigma[i];
            }
        }
    }
    fn constrain(&self, p: &mut [f64]) -> bool {
        let mut moved = false;
        for i in [I_TR, I_TD] {
            if p[i] < MIN_TAU_PS {
                p[i] = MIN_TAU_PS;
                moved = true;
            }
        }
        if p[I_B].abs() > 1.0 {
            p[I_B] = p[I_B].signum();
            moved = true;
        }
        moved
    }
}

/// Fits a histogram. Positions in the result are relative to the
/// histogram's first bin edge (`axis_origin_ps`); bins are sampled at
/// their centers.
pub fn fit_cascade(
    h: &CorrelationHistogram,
    init: Option<&CascadeFit>,
    opts: &CascadeFitOptions,
) -> Result<CascadeFit> {
    let x: Vec<f64> = (0..h.len()).map(|k| h.bin_center_rel(k)).collect();
    let y: Vec<f64> = h.counts.iter().map(|&c| c as f64).collect();
    let start = init.map(|f| {
        let mut p = f.params();
        let shift = (f.axis_origin_ps - h.tau_start_ps) as f64;
        p[I_T0] += shift;
        p
    });
    fit_cascade_xy(&x, &y, h.tau_start_ps, h.bin_width_ps as f64, start, opts)
}

/// Fits samples `y` at positions `x` (relative to `origin_ps`).
pub fn fit_cascade_xy(
    x: &[f64],
    y: &[f64],
    origin_ps: i64,
    bin_width_ps: f64,
    start: Option<[f64; N_PARAMS]>,
    opts: &CascadeFitOptions,
) -> Result<CascadeFit> {
    if x.len() != y.len() {
        return Err(Error::Argument("x and y lengths differ".into()));
    }
    if x.len() < 30 {
        return Err(Error::Argument(format!(
            "cascade fit needs at least 30 bins, got {}",
            x.len()
        )));
    }
    if y.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::Argument("counts must be finite and non-negative".into()));
    }

    let problem = CascadeProblem::new(x, y);
    let mut free = [true; N_PARAMS];
    free[I_W] = !opts.fix_omega;
    if !opts.oscillation {
        free[I_B] = false;
        free[I_W] = false;
        free[I_PHI] = false;
    }
    let cfg = LmConfig {
        max_iterations: opts.max_iterations,
        ..LmConfig::default()
    };

    let starts: Vec<[f64; N_PARAMS]> = match start {
        Some(mut p) => {
            if !opts.oscillation {
                p[I_B] = 0.0;
            }
            vec![p]
        }
        None if !opts.oscillation => {
            let mut p = initial_guess(x, y, bin_width_ps, opts);
            p[I_B] = 0.0;
            vec![p]
        }
        None => {
            let base = initial_guess(x, y, bin_width_ps, opts);
            // φ is poorly constrained from a single start; try four quadrants
            // and keep the best.
            let mut v = vec![base];
            for k in 1..4 {
                let mut p = base;
                p[I_PHI] = k as f64 * std::f64::consts::FRAC_PI_2;
                v.push(p);
            }
            let mut flat = base;
            flat[I_B] = 0.0;
            v.push(flat);
            v
        }
    };

    let mut best: Option<lm::LmOutcome> = None;
    for s in &starts {
        let out = lm::minimize(&problem, s, &free, &cfg);
        let better = match &best {
            None => true,
            Some(b) => (out.converged && !b.converged) || (out.converged == b.converged && out.cost < b.cost),
        };
        if better {
            best = Some(out);
        }
    }
    let out = best.expect("at least one start");
    if !out.converged {
        return Err(Error::Fit(format!(
            "cascade fit did not converge after {} iterations (weighted rss {:.6e}, params {:?})",
            out.iterations, out.cost, out.params
        )));
    }

    let mut p = [0.0; N_PARAMS];
    p.copy_from_slice(&out.params);
    normalize_phase(&mut p);
    let cov = out.covariance(x.len(), &free);
    let err = |i: usize| cov[(i, i)].max(0.0).sqrt();

    let (tmax, tmax_err) = tau_max_with_error(&p, &cov);

    let mut at_bound = Vec::new();
    if p[I_TR] <= MIN_TAU_PS {
        at_bound.push(PARAM_NAMES[I_TR].to_string());
    }
    if p[I_TD] <= MIN_TAU_PS {
        at_bound.push(PARAM_NAMES[I_TD].to_string());
    }
    if p[I_B].abs() >= 1.0 {
        at_bound.push(PARAM_NAMES[I_B].to_string());
    }

    let rss = x
        .iter()
        .zip(y)
        .map(|(&t, &c)| (model(&p, t) - c).powi(2))
        .sum();

    let est = |i: usize| Estimate::new(p[i], err(i));
    Ok(CascadeFit {
        amplitude: est(I_A),
        oscillation: est(I_B),
        tau_rise_ps: est(I_TR),
        tau_decay_ps: est(I_TD),
        omega_rad_per_ps: est(I_W),
        phi_rad: est(I_PHI),
        background: est(I_C),
        t0_ps: est(I_T0),
        tau_max_ps: Estimate::new(tmax, tmax_err),
        axis_origin_ps: origin_ps,
        rss,
        weighted_rss: out.cost,
        n_bins: x.len(),
        iterations: out.iterations,
        converged: out.converged,
        at_bound,
    })
}

fn initial_guess(x: &[f64], y: &[f64], bin_width_ps: f64, opts: &CascadeFitOptions) -> [f64; N_PARAMS] {
    let mut sorted = y.to_vec();
    sorted.sort_by(f64::total_cmp);
    let median = sorted[sorted.len() / 2];
    let mut dev: Vec<f64> = y.iter().map(|v| (v - median).abs()).collect();
    dev.sort_by(f64::total_cmp);
    let mad = dev[dev.len() / 2];
    let (imax, &ymax) = y
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .expect("non-empty");
    let threshold = median + 5.0 * mad;
    let first = y.iter().position(|&v| v > threshold).unwrap_or(imax).min(imax);
    let t0 = x[first] - 0.5 * bin_width_ps;
    let tau_rise = 3.0 * bin_width_ps;
    let tau_decay = opts.tau_decay_guess_ps;
    // height of the unit-amplitude envelope at its maximum
    let peak_env = {
        let r = tau_rise / tau_decay;
        let xm = tau_rise * (1.0 + 1.0 / r).ln();
        (1.0 - (-xm / tau_rise).exp()) * (-xm / tau_decay).exp()
    };
    let amp = (ymax - median).max(1.0) / peak_env.max(1e-6);
    [amp, 0.2, tau_rise, tau_decay, opts.omega_guess_rad_per_ps, 0.0, median, t0]
}

/// Makes B ≥ 0 and ω ≥ 0, and wraps φ into (−π, π].
fn normalize_phase(p: &mut [f64; N_PARAMS]) {
    use std::f64::consts::PI;
    if p[I_W] < 0.0 {
        p[I_W] = -p[I_W];
        p[I_PHI] = -p[I_PHI];
    }
    if p[I_B] < 0.0 {
        p[I_B] = -p[I_B];
        p[I_PHI] += PI;
    }
    let mut phi = p[I_PHI].rem_euclid(2.0 * PI);
    if phi > PI {
        phi -= 2.0 * PI;
    }
    p[I_PHI] = phi;
}

/// argmax of f over [t0, t0 + 5·τd]: dense scan, then golden section
/// around the best grid point.
pub fn tau_max(p: &[f64]) -> f64 {
    let lo = p[I_T0];
    let hi = p[I_T0] + 5.0 * p[I_TD];
    const N: usize = 4000;
    let step = (hi - lo) / N as f64;
    let mut best = (lo, f64::NEG_INFINITY);
    for k in 0..=N {
        let t = lo + k as f64 * step;
        let v = model(p, t);
        if v > best.1 {
            best = (t, v);
        }
    }
    let mut a = (best.0 - step).max(lo);
    let mut b = (best.0 + step).min(hi);
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let mut fc = model(p, c);
    let mut fd = model(p, d);
    for _ in 0..200 {
        if (b - a).abs() <= 1e-9 * (1.0 + a.abs()) {
            break;
        }
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = model(p, c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = model(p, d);
        }
    }
    0.5 * (a + b)
}

fn tau_max_with_error(p: &[f64; N_PARAMS], cov: &DMatrix<f64>) -> (f64, f64) {
    let t = tau_max(p);
    let mut grad = [0.0; N_PARAMS];
    for i in 0..N_PARAMS {
        if cov[(i, i)] <= 0.0 {
            continue;
        }
        let h = (cov[(i, i)].sqrt() * 1e-2).max(1e-9 * p[i].abs().max(1e-6));
        let mut up = *p;
        let mut dn = *p;
        up[i] += h;
        dn[i] -= h;
        for q in [&mut up, &mut dn] {
            q[I_TR] = q[I_TR].max(MIN_TAU_PS);
            q[I_TD] = q[I_TD].max(MIN_TAU_PS);
        }
        grad[i] = (tau_max(&up) - tau_max(&dn)) / (up[i] - dn[i]);
    }
    let mut var = 0.0;
    for i in 0..N_PARAMS {
        for j in 0..N_PARAMS {
            var += grad[i] * cov[(i, j)] * grad[j];
        }
    }
    (t, var.max(0.0).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Poisson};

    fn reference() -> [f64; N_PARAMS] {
        [100.0, 0.3, 200.0, 1140.0, 2.0 * std::f64::consts::PI / 878.0, 0.0, 5.0, 0.0]
    }

    fn sample(p: &[f64], lo: f64, w: f64, n: usize) -> (Vec<f64>, Vec<f64>) {
        let x: Vec<f64> = (0..n).map(|k| lo + (k as f64 + 0.5) * w).collect();
        let y = x.iter().map(|&t| model(p, t)).collect();
        (x, y)
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let p = [
                rng.random_range(10.0..500.0),
                rng.random_range(-0.9..0.9),
                rng.random_range(50.0..500.0),
                rng.random_range(500.0..2000.0),
                rng.random_range(0.001..0.02),
                rng.random_range(-3.0..3.0),
                rng.random_range(0.0..20.0),
                rng.random_range(-500.0..500.0),
            ];
            let t = p[I_T0] + rng.random_range(1.0..5000.0);
            let g = gradient(&p, t);
            for j in 0..N_PARAMS {
                let h = 1e-6 * p[j].abs().max(1e-3);
                let mut up = p;
                let mut dn = p;
                up[j] += h;
                dn[j] -= h;
                let fd = (model(&up, t) - model(&dn, t)) / (2.0 * h);
                let scale = g[j].abs().max(fd.abs()).max(1e-6 * model(&p, t).abs());
                let rel = (g[j] - fd).abs() / scale;
                assert!(rel < 1e-5, "param {} rel dev {rel} (analytic {}, fd {fd})", PARAM_NAMES[j], g[j]);
            }
        }
    }

    #[test]
    fn model_is_flat_before_start() {
        let p = reference();
        assert_eq!(model(&p, -1.0), 5.0);
        assert_eq!(model(&p, 0.0), 5.0);
        assert!(model(&p, 300.0) > 5.0);
    }

    #[test]
    fn noiseless_recovery() {
        let p = reference();
        let (x, y) = sample(&p, -3000.0, 16.0, 750);
        let opts = CascadeFitOptions {
            omega_guess_rad_per_ps: p[I_W] * 1.02,
            ..Default::default()
        };
        let fit = fit_cascade_xy(&x, &y, 0, 16.0, None, &opts).unwrap();
        let got = fit.params();
        for i in 0..N_PARAMS {
            let tol = 1e-3 * p[i].abs().max(1.0);
            assert!((got[i] - p[i]).abs() < tol, "{}: {} vs {}", PARAM_NAMES[i], got[i], p[i]);
        }
        assert!(fit.tau_max_ps.value >= fit.t0_ps.value);
        assert!(fit.at_bound.is_empty());
    }

    #[test]
    fn zero_oscillation_leaves_start_intact() {
        let mut p = reference();
        p[I_B] = 0.0;
        p[I_T0] = 250.0;
        let (x, y) = sample(&p, -3000.0, 16.0, 750);
        let fit = fit_cascade_xy(&x, &y, 0, 16.0, None, &CascadeFitOptions::default()).unwrap();
        assert!(fit.oscillation.value.abs() < 1e-3);
        assert!((fit.t0_ps.value - 250.0).abs() < 0.5, "t0 {}", fit.t0_ps.value);
        assert!((fit.tau_decay_ps.value - 1140.0).abs() < 1.0);
    }

    #[test]
    fn tau_max_matches_dense_oracle() {
        let p = reference();
        let mut best = (0.0, f64::NEG_INFINITY);
        let mut t = 0.0;
        while t < 5000.0 {
            let v = model(&p, t);
            if v > best.1 {
                best = (t, v);
            }
            t += 0.01;
        }
        assert!((tau_max(&p) - best.0).abs() < 0.02);
    }

    #[test]
    fn phase_normalization() {
        let mut p = reference();
        p[I_B] = -0.3;
        p[I_PHI] = 0.5;
        let before: Vec<f64> = (0..50).map(|k| model(&p, k as f64 * 37.0)).collect();
        normalize_phase(&mut p);
        assert!(p[I_B] > 0.0);
        assert!(p[I_PHI] > -std::f64::consts::PI && p[I_PHI] <= std::f64::consts::PI);
        for (k, b) in before.iter().enumerate() {
            assert!((model(&p, k as f64 * 37.0) - b).abs() < 1e-9);
        }
    }

    #[test]
    fn too_few_bins() {
        let (x, y) = sample(&reference(), 0.0, 16.0, 20);
        assert!(matches!(
            fit_cascade_xy(&x, &y, 0, 16.0, None, &CascadeFitOptions::default()),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn poisson_noise_gives_sane_errors() {
        let mut p = reference();
        p[I_A] = 2000.0;
        p[I_C] = 50.0;
        let (x, truth) = sample(&p, -3000.0, 16.0, 750);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let y: Vec<f64> = truth
            .iter()
            .map(|&m| Poisson::new(m).unwrap().sample(&mut rng))
            .collect();
        let opts = CascadeFitOptions {
            omega_guess_rad_per_ps: p[I_W],
            ..Default::default()
        };
        let fit = fit_cascade_xy(&x, &y, 0, 16.0, None, &opts).unwrap();
        let pull = (fit.tau_decay_ps.value - 1140.0) / fit.tau_decay_ps.error;
        assert!(pull.abs() < 5.0, "pull {pull}");
        assert!(fit.tau_max_ps.error > 0.0 && fit.tau_max_ps.error < 50.0);
    }
}
