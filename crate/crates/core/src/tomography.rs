//! Two-photon polarization state reconstruction.
//!
//! Counts from projective measurements are turned into a density matrix by
//! maximum likelihood over the Cholesky-style parametrization ρ = T†T/tr(T†T)
//! (T lower-triangular, 16 real parameters), which is a valid state for any
//! parameter vector. Basis order and token conventions follow
//! [`crate::polarization`].

use std::collections::BTreeMap;

use nalgebra::{Matrix2, Matrix4, Vector4};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::correlator::correlate;
use crate::error::{Error, Result};
use crate::peakfit::Estimate;
use crate::polarization::{kron_mat, retarder, PolarizationState, Setting, C64};
use crate::timetags::TagStream;

type M4 = Matrix4<C64>;

const HERMITIAN_TOL: f64 = 1e-12;
const TRACE_TOL: f64 = 1e-10;
const PSD_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    elements: M4,
}

impl DensityMatrix {
    /// Validates Hermiticity, unit trace and positivity.
    pub fn new(elements: M4) -> Result<Self> {
        let rho = Self { elements };
        rho.check_invariants()?;
        Ok(rho)
    }

    /// Hermitian part of `m` scaled to unit trace, without a positivity check.
    fn normalized(m: M4) -> Self {
        let h = (m + m.adjoint()) * C64::new(0.5, 0.0);
        let tr = h.trace().re;
        Self {
            elements: h / C64::new(tr, 0.0),
        }
    }

    pub fn pure(state: &PolarizationState) -> Self {
        let v = state.amplitudes();
        Self::normalized(v * v.adjoint())
    }

    pub fn maximally_mixed() -> Self {
        Self {
            elements: M4::identity() * C64::new(0.25, 0.0),
        }
    }

    /// p·|Φ⁺⟩⟨Φ⁺| + (1 − p)·I/4.
    pub fn werner(p: f64) -> Self {
        Self::pure(&PolarizationState::phi_plus()).mix(&Self::maximally_mixed(), p)
    }

    /// weight·self + (1 − weight)·other.
    pub fn mix(&self, other: &DensityMatrix, weight: f64) -> Self {
        Self {
            elements: self.elements * C64::new(weight, 0.0) + other.elements * C64::new(1.0 - weight, 0.0),
        }
    }

    pub fn elements(&self) -> &M4 {
        &self.elements
    }

    pub fn trace(&self) -> f64 {
        self.elements.trace().re
    }

    pub fn hermiticity_error(&self) -> f64 {
        (self.elements - self.elements.adjoint()).camax()
    }

    /// Eigenvalues in descending order.
    pub fn eigenvalues(&self) -> [f64; 4] {
        let h = (self.elements + self.elements.adjoint()) * C64::new(0.5, 0.0);
        let mut ev: Vec<f64> = h.symmetric_eigenvalues().iter().copied().collect();
        ev.sort_by(|a, b| b.total_cmp(a));
        [ev[0], ev[1], ev[2], ev[3]]
    }

    pub fn purity(&self) -> f64 {
        (self.elements * self.elements).trace().re
    }

    pub fn check_invariants(&self) -> Result<()> {
        let herm = self.hermiticity_error();
        if !(herm < HERMITIAN_TOL) {
            return Err(Error::Argument(format!("density matrix not Hermitian (max |ρ−ρ†| = {herm:e})")));
        }
        let tr = self.trace();
        if !((tr - 1.0).abs() < TRACE_TOL) {
            return Err(Error::Argument(format!("density matrix trace {tr} ≠ 1")));
        }
        let min = self.eigenvalues()[3];
        if !(min > -PSD_TOL) {
            return Err(Error::Argument(format!("density matrix has negative eigenvalue {min:e}")));
        }
        Ok(())
    }

    /// ⟨ψ|ρ|ψ⟩ for the product projector of `setting`.
    pub fn probability(&self, setting: &Setting) -> f64 {
        let psi = setting.projector_state();
        (psi.adjoint() * self.elements * psi)[(0, 0)].re
    }
}

#[derive(Serialize, Deserialize)]
struct DensityMatrixRepr {
    re: [[f64; 4]; 4],
    im: [[f64; 4]; 4],
}

impl Serialize for DensityMatrix {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut r = DensityMatrixRepr {
            re: [[0.0; 4]; 4],
            im: [[0.0; 4]; 4],
        };
        for i in 0..4 {
            for j in 0..4 {
                r.re[i][j] = self.elements[(i, j)].re;
                r.im[i][j] = self.elements[(i, j)].im;
            }
        }
        r.serialize(s)
    }
}

impl<'de> Deserialize<'de> for DensityMatrix {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let r = DensityMatrixRepr::deserialize(d)?;
        let m = M4::from_fn(|i, j| C64::new(r.re[i][j], r.im[i][j]));
        DensityMatrix::new(m).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProjectionCounts {
    pub setting: Setting,
    pub coincidences: u64,
    /// Expected accidental coincidences in the same bin.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accidental_estimate: Option<f64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetQubit {
    #[default]
    Exciton,
    Biexciton,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WaveplateCorrection {
    pub theta_rad: f64,
    pub phi_rad: f64,
    pub target_qubit: TargetQubit,
}

impl Default for WaveplateCorrection {
    fn default() -> Self {
        Self {
            theta_rad: 0.0,
            phi_rad: 0.0,
            target_qubit: TargetQubit::Exciton,
        }
    }
}

impl WaveplateCorrection {
    pub fn unitary(&self) -> M4 {
        let u = retarder(self.theta_rad, self.phi_rad);
        let id = Matrix2::<C64>::identity();
        match self.target_qubit {
            TargetQubit::Exciton => kron_mat(&u, &id),
            TargetQubit::Biexciton => kron_mat(&id, &u),
            TargetQubit::Both => kron_mat(&u, &u),
        }
    }
}

pub fn apply_waveplate(rho: &DensityMatrix, corr: &WaveplateCorrection) -> DensityMatrix {
    let u = corr.unitary();
    DensityMatrix::normalized(u * rho.elements * u.adjoint())
}

/// ⟨ψ|ρ|ψ⟩, clamped to [0, 1].
pub fn fidelity(rho: &DensityMatrix, target: &PolarizationState) -> f64 {
    let v = target.amplitudes();
    (v.adjoint() * rho.elements * v)[(0, 0)].re.clamp(0.0, 1.0)
}

/// Wootters concurrence via the eigenvalues of √ρ·ρ̃·√ρ (same spectrum as
/// ρ·ρ̃, but Hermitian), ρ̃ = (σy⊗σy)ρ*(σy⊗σy).
pub fn concurrence(rho: &DensityMatrix) -> f64 {
    let h = (rho.elements + rho.elements.adjoint()) * C64::new(0.5, 0.0);
    let eig = h.symmetric_eigen();
    let sqrt_vals = eig.eigenvalues.map(|v| C64::new(v.max(0.0).sqrt(), 0.0));
    let sqrt_rho = &eig.eigenvectors * Matrix4::from_diagonal(&sqrt_vals) * eig.eigenvectors.adjoint();
    let sy = Matrix2::new(C64::new(0.0, 0.0), C64::new(0.0, -1.0), C64::new(0.0, 1.0), C64::new(0.0, 0.0));
    let yy = kron_mat(&sy, &sy);
    let tilde = yy * h.conjugate() * yy;
    let m = &sqrt_rho * tilde * &sqrt_rho;
    let m = (m + m.adjoint()) * C64::new(0.5, 0.0);
    let mut lambda: Vec<f64> = m.symmetric_eigenvalues().iter().map(|v| v.max(0.0).sqrt()).collect();
    lambda.sort_by(|a, b| b.total_cmp(a));
    (lambda[0] - lambda[1] - lambda[2] - lambda[3]).clamp(0.0, 1.0)
}

/// Largest fidelity to any maximally entangled state: the top eigenvalue of
/// the real part of ρ in the magic basis.
pub fn fully_entangled_fraction(rho: &DensityMatrix) -> f64 {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let z = C64::new(0.0, 0.0);
    let r = C64::new(s, 0.0);
    let i = C64::new(0.0, s);
    // columns are the magic basis vectors in (HH, HV, VH, VV)
    let magic = M4::new(
        r, i, z, z, //
        z, z, i, r, //
        z, z, i, -r, //
        r, -i, z, z,
    );
    let m = magic.adjoint() * rho.elements * magic;
    let re = m.map(|c| c.re);
    let sym = (re + re.transpose()) * 0.5;
    sym.symmetric_eigenvalues().max().clamp(0.0, 1.0)
}

// ---------------------------------------------------------------------------
// maximum likelihood

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MleOptions {
    /// Random restarts on top of the maximally mixed start.
    pub restarts: usize,
    pub max_iterations: usize,
    /// Relative change in cost that ends a descent.
    pub tolerance: f64,
    pub seed: u64,
    /// Subtract `accidental_estimate` from each count (floored at zero).
    pub subtract_accidentals: bool,
}

impl Default for MleOptions {
    fn default() -> Self {
        Self {
            restarts: 5,
            max_iterations: 5000,
            tolerance: 1e-10,
            seed: 0x7017_0000,
            subtract_accidentals: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct MleFit {
    pub rho: DensityMatrix,
    /// Parameters of T, for warm starts.
    pub params: [f64; 16],
    /// Minimized cost Σ (N·p − n)²/(2·N·p).
    pub cost: f64,
    /// Fitted flux N.
    pub normalization: f64,
    pub iterations: usize,
}

const N_T: usize = 16;
const P_FLOOR: f64 = 1e-14;
const OFF_DIAG: [(usize, usize); 6] = [(1, 0), (2, 0), (2, 1), (3, 0), (3, 1), (3, 2)];

fn t_matrix(t: &[f64; N_T]) -> M4 {
    let mut m = M4::zeros();
    for i in 0..4 {
        m[(i, i)] = C64::new(t[i], 0.0);
    }
    for (k, &(i, j)) in OFF_DIAG.iter().enumerate() {
        m[(i, j)] = C64::new(t[4 + 2 * k], t[5 + 2 * k]);
    }
    m
}

fn rho_from_params(t: &[f64; N_T]) -> DensityMatrix {
    let m = t_matrix(t);
    DensityMatrix::normalized(m.adjoint() * m)
}

/// Lower-triangular T with T†T = ρ for ρ = I/4 (the neutral start).
fn mixed_start() -> [f64; N_T] {
    let mut t = [0.0; N_T];
    t[..4].fill(0.5);
    t
}

struct Likelihood<'a> {
    psi: Vec<Vector4<C64>>,
    n: &'a [f64],
    n_total: f64,
}

impl Likelihood<'_> {
    /// Cost and gradient with N at its closed-form optimum
    /// N² = Σ(n²/p)/Σp, where the cost reduces to N·Σp − Σn.
    fn eval(&self, t: &[f64; N_T]) -> (f64, [f64; N_T], f64) {
        let tm = t_matrix(t);
        let s: f64 = t.iter().map(|x| x * x).sum();
        let mut v = Vec::with_capacity(self.psi.len());
        let mut p = Vec::with_capacity(self.psi.len());
        for psi in &self.psi {
            let tv = tm * psi;
            let q = tv.norm_squared();
            p.push((q / s).max(P_FLOOR));
            v.push(tv);
        }
        let sum_p: f64 = p.iter().sum();
        let sum_n2p: f64 = self.n.iter().zip(&p).map(|(n, p)| n * n / p).sum();
        let norm = (sum_n2p / sum_p).sqrt();
        let cost = norm * sum_p - self.n_total;

        let mut grad = [0.0; N_T];
        for (k, psi) in self.psi.iter().enumerate() {
            let dl_dp = norm / 2.0 - self.n[k] * self.n[k] / (2.0 * norm * p[k] * p[k]);
            if dl_dp == 0.0 {
                continue;
            }
            let q = p[k] * s;
            // dp/dθ = (dq/dθ − p·ds/dθ)/s
            let mut add = |idx: usize, dq: f64| {
                let ds = 2.0 * t[idx];
                grad[idx] += dl_dp * (dq - q / s * ds) / s;
            };
            for i in 0..4 {
                add(i, 2.0 * (v[k][i].conj() * psi[i]).re);
            }
            for (m, &(i, j)) in OFF_DIAG.iter().enumerate() {
                let z = v[k][i].conj() * psi[j];
                add(4 + 2 * m, 2.0 * z.re);
                add(5 + 2 * m, -2.0 * z.im);
            }
        }
        (cost, grad, norm)
    }
}

struct Descent {
    x: [f64; N_T],
    cost: f64,
    iterations: usize,
    converged: bool,
}

fn dot(a: &[f64; N_T], b: &[f64; N_T]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// BFGS with Armijo backtracking.
fn bfgs(f: &Likelihood, x0: [f64; N_T], max_iter: usize, tol: f64) -> Descent {
    let mut x = x0;
    let (mut fx, mut g, _) = f.eval(&x);
    let mut h = [[0.0; N_T]; N_T];
    let reset = |h: &mut [[f64; N_T]; N_T]| {
        for (i, row) in h.iter_mut().enumerate() {
            row.fill(0.0);
            row[i] = 1.0;
        }
    };
    reset(&mut h);
    let floor = 1e-12 * f.n_total.max(1.0);
    for it in 1..=max_iter {
        let mut d = [0.0; N_T];
        for i in 0..N_T {
            d[i] = -(0..N_T).map(|j| h[i][j] * g[j]).sum::<f64>();
        }
        let mut slope = dot(&g, &d);
        if slope >= 0.0 {
            reset(&mut h);
            d = g.map(|v| -v);
            slope = dot(&g, &d);
        }
        if slope == 0.0 {
            return Descent { x, cost: fx, iterations: it, converged: true };
        }
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..80 {
            let mut xn = x;
            for i in 0..N_T {
                xn[i] += alpha * d[i];
            }
            let (fn_, gn, _) = f.eval(&xn);
            if fn_.is_finite() && fn_ <= fx + 1e-4 * alpha * slope {
                accepted = Some((xn, fn_, gn));
                break;
            }
            alpha *= 0.5;
        }
        let Some((xn, fn_, gn)) = accepted else {
            // no decrease possible at machine precision
            return Descent { x, cost: fx, iterations: it, converged: true };
        };
        let mut sv = [0.0; N_T];
        let mut yv = [0.0; N_T];
        for i in 0..N_T {
            sv[i] = xn[i] - x[i];
            yv[i] = gn[i] - g[i];
        }
        let change = fx - fn_;
        x = xn;
        fx = fn_;
        g = gn;
        if change <= tol * fx.abs().max(floor) {
            return Descent { x, cost: fx, iterations: it, converged: true };
        }
        let sy = dot(&sv, &yv);
        if sy > 1e-12 * dot(&sv, &sv).sqrt() * dot(&yv, &yv).sqrt() {
            if it == 1 {
                let scale = sy / dot(&yv, &yv);
                for (i, row) in h.iter_mut().enumerate() {
                    row.fill(0.0);
                    row[i] = scale;
                }
            }
            // H ← (I − ρ s yᵀ) H (I − ρ y sᵀ) + ρ s sᵀ
            let rho = 1.0 / sy;
            let mut hy = [0.0; N_T];
            for i in 0..N_T {
                hy[i] = (0..N_T).map(|j| h[i][j] * yv[j]).sum();
            }
            let yhy = dot(&yv, &hy);
            for i in 0..N_T {
                for j in 0..N_T {
                    h[i][j] += -rho * (sv[i] * hy[j] + hy[i] * sv[j]) + (rho * rho * yhy + rho) * sv[i] * sv[j];
                }
            }
        }
    }
    Descent { x, cost: fx, iterations: max_iter, converged: false }
}

fn effective_counts(counts: &[ProjectionCounts], subtract: bool) -> Vec<f64> {
    counts
        .iter()
        .map(|c| {
            let n = c.coincidences as f64;
            match (subtract, c.accidental_estimate) {
                (true, Some(a)) => (n - a).max(0.0),
                _ => n,
            }
        })
        .collect()
}

/// Maximum-likelihood state for a set of projection counts.
pub fn mle_reconstruct(counts: &[ProjectionCounts], opts: &MleOptions) -> Result<DensityMatrix> {
    mle_fit(counts, opts, None).map(|f| f.rho)
}

/// Like [`mle_reconstruct`], with diagnostics. With `warm` set, only that
/// start is used.
pub fn mle_fit(counts: &[ProjectionCounts], opts: &MleOptions, warm: Option<&[f64; 16]>) -> Result<MleFit> {
    if counts.is_empty() {
        return Err(Error::Argument("no projection counts".into()));
    }
    let n = effective_counts(counts, opts.subtract_accidentals);
    let total: f64 = n.iter().sum();
    if total < 16.0 {
        return Err(Error::Argument(format!(
            "{total} coincidences in total; at least 16 are needed for a reconstruction"
        )));
    }
    let lik = Likelihood {
        psi: counts.iter().map(|c| c.setting.projector_state()).collect(),
        n: &n,
        n_total: total,
    };
    let starts: Vec<[f64; N_T]> = match warm {
        Some(w) => vec![*w],
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            let normal = Normal::new(0.0, 1.0).expect("unit normal");
            let mut v = vec![mixed_start()];
            for _ in 0..opts.restarts {
                let mut t = [0.0; N_T];
                t.iter_mut().for_each(|x| *x = normal.sample(&mut rng));
                v.push(t);
            }
            v
        }
    };
    let mut best: Option<Descent> = None;
    let mut total_iter = 0;
    for s in starts {
        let d = bfgs(&lik, s, opts.max_iterations, opts.tolerance);
        total_iter += d.iterations;
        if !d.converged {
            continue;
        }
        if best.as_ref().is_none_or(|b| d.cost < b.cost) {
            best = Some(d);
        }
    }
    let Some(best) = best else {
        return Err(Error::Reconstruction(format!(
            "no start converged within {} iterations (counts {:?})",
            opts.max_iterations,
            counts.iter().map(|c| c.coincidences).collect::<Vec<_>>()
        )));
    };
    let (_, _, norm) = lik.eval(&best.x);
    let rho = rho_from_params(&best.x);
    rho.check_invariants()
        .map_err(|e| Error::Reconstruction(format!("reconstructed state invalid: {e}")))?;
    Ok(MleFit {
        rho,
        params: best.x,
        cost: best.cost,
        normalization: norm,
        iterations: total_iter,
    })
}

// ---------------------------------------------------------------------------
// time-resolved tomography

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProjectionWindow {
    /// Left edge of the first time bin (a − b convention of the correlator).
    pub tau_start_ps: i64,
    pub bin_width_ps: u64,
    pub n_bins: usize,
    /// Region used to estimate the accidental level per bin.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accidental_window: Option<(i64, i64)>,
}

impl ProjectionWindow {
    /// `before` bins ahead of `peak_tau_ps` and `after` bins from it on, with
    /// accidentals taken from a same-length stretch ending one window
    /// earlier.
    pub fn around(peak_tau_ps: i64, bin_width_ps: u64, before: usize, after: usize) -> Self {
        let start = peak_tau_ps - (before as u64 * bin_width_ps) as i64;
        let len = ((before + after) as u64 * bin_width_ps) as i64;
        Self {
            tau_start_ps: start,
            bin_width_ps,
            n_bins: before + after,
            accidental_window: Some((start - 2 * len, start - len)),
        }
    }
}

/// Per-time-bin counts, one entry per setting in `settings` order.
pub fn project_coincidences(
    streams: &[(Setting, TagStream)],
    settings: &[Setting],
    channels: (u16, u16),
    window: &ProjectionWindow,
) -> Result<Vec<Vec<ProjectionCounts>>> {
    if window.bin_width_ps == 0 || window.n_bins == 0 {
        return Err(Error::Argument("projection window needs bins of positive width".into()));
    }
    let by_setting: BTreeMap<Setting, &TagStream> = streams.iter().map(|(s, t)| (*s, t)).collect();
    let missing: Vec<String> = settings
        .iter()
        .filter(|s| !by_setting.contains_key(s))
        .map(|s| s.label())
        .collect();
    if !missing.is_empty() {
        return Err(Error::Argument(format!("missing settings: {}", missing.join(", "))));
    }
    let end = window.tau_start_ps + (window.n_bins as u64 * window.bin_width_ps) as i64;
    let per_setting: Vec<(Vec<u64>, Option<f64>)> = settings
        .par_iter()
        .map(|s| {
            let stream = by_setting[s];
            let a = stream.channel_times(channels.0)?;
            let b = stream.channel_times(channels.1)?;
            let h = correlate(&a, &b, window.tau_start_ps, end, window.bin_width_ps)?;
            let acc = match window.accidental_window {
                Some((lo, hi)) if hi > lo => {
                    let span = (hi - lo) as u64;
                    let r = correlate(&a, &b, lo, hi, span)?;
                    Some(r.total() as f64 * window.bin_width_ps as f64 / span as f64)
                }
                _ => None,
            };
            Ok((h.counts, acc))
        })
        .collect::<Result<_>>()?;
    Ok((0..window.n_bins)
        .map(|k| {
            settings
                .iter()
                .zip(&per_setting)
                .map(|(s, (c, acc))| ProjectionCounts {
                    setting: *s,
                    coincidences: c[k],
                    accidental_estimate: *acc,
                })
                .collect()
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TomographyConfig {
    pub bin_width_ps: u64,
    /// Bins before the located peak.
    pub bins_before_peak: usize,
    /// Bins from the peak on.
    pub bins_after_peak: usize,
    /// Setting labels; empty means the 16-setting default.
    pub settings: Vec<Setting>,
    /// Channels (a, b) of each setting stream correlated as a − b.
    pub channel_a: u16,
    pub channel_b: u16,
    pub resamples: usize,
    /// Bins with fewer counts are left unreconstructed.
    pub min_counts: u64,
    pub mle: MleOptions,
    pub seed: u64,
}

impl Default for TomographyConfig {
    fn default() -> Self {
        Self {
            bin_width_ps: 16,
            bins_before_peak: 16,
            bins_after_peak: 240,
            settings: Vec::new(),
            channel_a: crate::qdsim::CH_X_REMOTE,
            channel_b: crate::qdsim::CH_XX,
            resamples: 100,
            min_counts: 16,
            mle: MleOptions::default(),
            seed: 0x7017,
        }
    }
}

impl TomographyConfig {
    pub fn settings(&self) -> Vec<Setting> {
        if self.settings.is_empty() {
            crate::polarization::default_settings()
        } else {
            self.settings.clone()
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StateEstimate {
    pub rho: DensityMatrix,
    pub fidelity: Estimate,
    pub concurrence: Estimate,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TimeBin {
    pub tau_ps: i64,
    pub counts: Vec<ProjectionCounts>,
    pub total: u64,
    /// `None` when the bin had too few counts or did not reconstruct.
    pub state: Option<StateEstimate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TimeBinSeries {
    pub bin_width_ps: u64,
    pub waveplate: WaveplateCorrection,
    pub bins: Vec<TimeBin>,
    /// All bins summed.
    pub integrated: Option<StateEstimate>,
}

impl TimeBinSeries {
    /// Bin with the highest fidelity.
    pub fn best_bin(&self) -> Option<&TimeBin> {
        self.bins
            .iter()
            .filter(|b| b.state.is_some())
            .max_by(|a, b| {
                let f = |x: &TimeBin| x.state.as_ref().map(|s| s.fidelity.value).unwrap_or(0.0);
                f(a).total_cmp(&f(b))
            })
    }

    pub fn fidelity_curve(&self) -> Vec<(i64, Option<Estimate>)> {
        self.bins
            .iter()
            .map(|b| (b.tau_ps, b.state.as_ref().map(|s| s.fidelity)))
            .collect()
    }
}

/// Reconstruction, correction, and Poisson-resampled errors for one count
/// vector.
pub fn estimate_state(
    counts: &[ProjectionCounts],
    corr: &WaveplateCorrection,
    target: &PolarizationState,
    mle: &MleOptions,
    resamples: usize,
    seed: u64,
) -> Result<StateEstimate> {
    let fit = mle_fit(counts, mle, None)?;
    let rho = apply_waveplate(&fit.rho, corr);
    let f0 = fidelity(&rho, target);
    let c0 = concurrence(&rho);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fs = Vec::with_capacity(resamples);
    let mut cs = Vec::with_capacity(resamples);
    for _ in 0..resamples {
        let resampled: Vec<ProjectionCounts> = counts
            .iter()
            .map(|c| ProjectionCounts {
                coincidences: if c.coincidences > 0 {
                    Poisson::new(c.coincidences as f64).map(|p| p.sample(&mut rng) as u64).unwrap_or(0)
                } else {
                    0
                },
                ..*c
            })
            .collect();
        if let Ok(f) = mle_fit(&resampled, mle, Some(&fit.params)) {
            let r = apply_waveplate(&f.rho, corr);
            fs.push(fidelity(&r, target));
            cs.push(concurrence(&r));
        }
    }
    Ok(StateEstimate {
        rho,
        fidelity: Estimate::new(f0, std_dev(&fs)),
        concurrence: Estimate::new(c0, std_dev(&cs)),
    })
}

fn std_dev(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = v.iter().sum::<f64>() / v.len() as f64;
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

/// Time-resolved fidelity to Φ⁺ and concurrence across the coincidence peak.
pub fn tomo_timeseries(
    streams: &[(Setting, TagStream)],
    peak_tau_ps: i64,
    corr: &WaveplateCorrection,
    cfg: &TomographyConfig,
) -> Result<TimeBinSeries> {
    let window = ProjectionWindow::around(peak_tau_ps, cfg.bin_width_ps, cfg.bins_before_peak, cfg.bins_after_peak);
    let settings = cfg.settings();
    let per_bin = project_coincidences(streams, &settings, (cfg.channel_a, cfg.channel_b), &window)?;
    let target = PolarizationState::phi_plus();
    let bins: Vec<TimeBin> = per_bin
        .into_par_iter()
        .enumerate()
        .map(|(k, counts)| {
            let tau = window.tau_start_ps + (k as u64 * cfg.bin_width_ps) as i64;
            let total: u64 = counts.iter().map(|c| c.coincidences).sum();
            let (state, note) = if total < cfg.min_counts {
                (None, Some(format!("{total} counts, below {}", cfg.min_counts)))
            } else {
                match estimate_state(
                    &counts,
                    corr,
                    &target,
                    &cfg.mle,
                    cfg.resamples,
                    crate::qdsim::derive_seed(cfg.seed, k as u64),
                ) {
                    Ok(s) => (Some(s), None),
                    Err(e) => (None, Some(e.to_string())),
                }
            };
            TimeBin {
                tau_ps: tau,
                counts,
                total,
                state,
                note,
            }
        })
        .collect();

    let mut summed: Vec<ProjectionCounts> = settings
        .iter()
        .map(|s| ProjectionCounts {
            setting: *s,
            coincidences: 0,
            accidental_estimate: None,
        })
        .collect();
    for b in &bins {
        for (acc, c) in summed.iter_mut().zip(&b.counts) {
            acc.coincidences += c.coincidences;
            if let Some(a) = c.accidental_estimate {
                *acc.accidental_estimate.get_or_insert(0.0) += a;
            }
        }
    }
    let integrated = estimate_state(&summed, corr, &target, &cfg.mle, cfg.resamples, cfg.seed).ok();
    Ok(TimeBinSeries {
        bin_width_ps: cfg.bin_width_ps,
        waveplate: *corr,
        bins,
        integrated,
    })
}

/// Sinusoid F(τ) = mean + amplitude·cos(ω(τ − τ₀) + phase) fitted to a
/// fidelity curve, τ₀ being the first bin's τ.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FidelityOscillation {
    pub period_ps: f64,
    pub omega_rad_per_ps: f64,
    pub mean: f64,
    pub amplitude: f64,
    pub phase_rad: f64,
    pub reference_tau_ps: i64,
    pub points: usize,
}

/// Weighted least-squares sinusoid through the reconstructed bins: a scan
/// over ω from one cycle per curve length to the bin Nyquist limit, then a
/// golden-section refinement. `None` with fewer than 6 usable bins.
pub fn fit_fidelity_oscillation(series: &TimeBinSeries) -> Option<FidelityOscillation> {
    let pts: Vec<(i64, f64, f64)> = series
        .bins
        .iter()
        .filter_map(|b| {
            let f = b.state.as_ref()?.fidelity;
            (f.value.is_finite()).then(|| (b.tau_ps, f.value, 1.0 / f.error.max(1e-3).powi(2)))
        })
        .collect();
    if pts.len() < 6 {
        return None;
    }
    let t0 = pts[0].0;
    let xs: Vec<(f64, f64, f64)> = pts.iter().map(|&(t, f, w)| ((t - t0) as f64, f, w)).collect();
    let span = xs.last().map(|p| p.0).unwrap_or(0.0) + series.bin_width_ps as f64;
    let solve = |omega: f64| -> Option<(f64, [f64; 3])> {
        let mut ata = nalgebra::Matrix3::<f64>::zeros();
        let mut atb = nalgebra::Vector3::<f64>::zeros();
        for &(x, f, w) in &xs {
            let r = nalgebra::Vector3::new(1.0, (omega * x).cos(), (omega * x).sin());
            ata += r * r.transpose() * w;
            atb += r * (f * w);
        }
        let c = ata.cholesky()?.solve(&atb);
        let ssr = xs
            .iter()
            .map(|&(x, f, w)| {
                let m = c[0] + c[1] * (omega * x).cos() + c[2] * (omega * x).sin();
                w * (f - m).powi(2)
            })
            .sum();
        Some((ssr, [c[0], c[1], c[2]]))
    };
    let lo = 2.0 * std::f64::consts::PI / span;
    let hi = std::f64::consts::PI / series.bin_width_ps.max(1) as f64;
    if !(hi > lo) {
        return None;
    }
    let n = 2000;
    let step = (hi - lo) / n as f64;
    let (mut best_k, mut best_ssr) = (None, f64::INFINITY);
    for k in 0..=n {
        if let Some((ssr, _)) = solve(lo + k as f64 * step) {
            if ssr < best_ssr {
                best_ssr = ssr;
                best_k = Some(k);
            }
        }
    }
    let k = best_k?;
    let cost = |w: f64| solve(w).map_or(f64::INFINITY, |r| r.0);
    let (mut a, mut b) = (lo + (k as f64 - 1.0).max(0.0) * step, lo + (k as f64 + 1.0).min(n as f64) * step);
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let (mut c, mut d) = (b - g * (b - a), a + g * (b - a));
    let (mut fc, mut fd) = (cost(c), cost(d));
    for _ in 0..60 {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = cost(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = cost(d);
        }
    }
    let omega = 0.5 * (a + b);
    let (_, [m, cc, ss]) = solve(omega)?;
    Some(FidelityOscillation {
        period_ps: 2.0 * std::f64::consts::PI / omega,
        omega_rad_per_ps: omega,
        mean: m,
        amplitude: cc.hypot(ss),
        phase_rad: (-ss).atan2(cc),
        reference_tau_ps: t0,
        points: xs.len(),
    })
}
