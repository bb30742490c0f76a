//! Damped least squares (Levenberg–Marquardt with Marquardt diagonal
//! scaling and Nielsen's damping update).

use nalgebra::{DMatrix, DVector};

pub trait Problem {
    fn n_params(&self) -> usize;
    fn n_residuals(&self) -> usize;

    /// Weighted residuals (model − data)/σ.
    fn residuals(&self, p: &[f64], out: &mut [f64]);

    /// ∂r_i/∂p_j. Defaults to forward differences.
    fn jacobian(&self, p: &[f64], jac: &mut DMatrix<f64>) {
        numeric_jacobian(self, p, jac);
    }

    /// Pulls `p` back into the feasible region; returns true if anything moved.
    fn constrain(&self, _p: &mut [f64]) -> bool {
        false
    }
}

pub fn numeric_jacobian<P: Problem + ?Sized>(problem: &P, p: &[f64], jac: &mut DMatrix<f64>) {
    let m = problem.n_residuals();
    let mut base = vec![0.0; m];
    problem.residuals(p, &mut base);
    let mut shifted = vec![0.0; m];
    let mut q = p.to_vec();
    for j in 0..p.len() {
        let h = 1e-7 * p[j].abs().max(1e-3);
        q[j] = p[j] + h;
        problem.residuals(&q, &mut shifted);
        for i in 0..m {
            jac[(i, j)] = (shifted[i] - base[i]) / h;
        }
        q[j] = p[j];
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LmConfig {
    pub max_iterations: usize,
    /// Relative cost reduction below which an accepted step ends the fit.
    pub ftol: f64,
    /// Relative step size below which the fit ends.
    pub xtol: f64,
}

impl Default for LmConfig {
    fn default() -> Self {
        Self {
            max_iterations: 2000,
            ftol: 1e-15,
            xtol: 1e-13,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LmOutcome {
    pub params: Vec<f64>,
    /// Σ r².
    pub cost: f64,
    pub iterations: usize,
    pub converged: bool,
    /// JᵀJ at the solution (fixed parameters zeroed).
    pub normal_matrix: DMatrix<f64>,
}

impl LmOutcome {
    /// Covariance from the pseudo-inverse of JᵀJ scaled by cost/dof.
    pub fn covariance(&self, n_residuals: usize, free: &[bool]) -> DMatrix<f64> {
        let n_free = free.iter().filter(|&&f| f).count();
        let dof = n_residuals.saturating_sub(n_free).max(1);
        let scale = self.cost / dof as f64;
        let n = self.params.len();
        let idx: Vec<usize> = (0..n).filter(|&i| free[i]).collect();
        let sub = DMatrix::from_fn(idx.len(), idx.len(), |r, c| self.normal_matrix[(idx[r], idx[c])]);
        let inv = sub
            .clone()
            .pseudo_inverse(1e-12 * sub.diagonal().amax().max(f64::MIN_POSITIVE))
            .unwrap_or_else(|_| DMatrix::zeros(idx.len(), idx.len()));
        let mut cov = DMatrix::zeros(n, n);
        for (r, &i) in idx.iter().enumerate() {
            for (c, &j) in idx.iter().enumerate() {
                cov[(i, j)] = inv[(r, c)] * scale;
            }
        }
        cov
    }
}

pub fn minimize<P: Problem + ?Sized>(problem: &P, start: &[f64], free: &[bool], cfg: &LmConfig) -> LmOutcome {
    let n = problem.n_params();
    let m = problem.n_residuals();
    assert_eq!(start.len(), n);
    assert_eq!(free.len(), n);

    let mut p = start.to_vec();
    problem.constrain(&mut p);
    let mut r = vec![0.0; m];
    problem.residuals(&p, &mut r);
    let mut cost = sumsq(&r);
    let mut jac = DMatrix::zeros(m, n);
    let mut lambda = 1e-3;
    let mut nu = 2.0;
    let mut converged = false;
    let mut iterations = 0;
    let mut trial = vec![0.0; m];

    let normal = |jac: &DMatrix<f64>, r: &[f64]| {
        let mut h = jac.transpose() * jac;
        let mut g = jac.transpose() * DVector::from_column_slice(r);
        for i in 0..n {
            if !free[i] {
                for k in 0..n {
                    h[(i, k)] = 0.0;
                    h[(k, i)] = 0.0;
                }
                g[i] = 0.0;
            }
        }
        (h, g)
    };

    problem.jacobian(&p, &mut jac);
    let (mut h, mut g) = normal(&jac, &r);

    while iterations < cfg.max_iterations {
        iterations += 1;
        if cost == 0.0 || !cost.is_finite() {
            converged = cost == 0.0;
            break;
        }
        // parameters the step would push through a bound are held for this
        // step, so the remaining ones are solved without them
        let mut held: Vec<Option<f64>> = vec![None; n];
        let mut q;
        let mut singular = false;
        loop {
            let mut a = h.clone();
            let mut rhs = -&g;
            for i in 0..n {
                if free[i] && held[i].is_none() {
                    let d = h[(i, i)].max(1e-12 * h.diagonal().amax()).max(f64::MIN_POSITIVE);
                    a[(i, i)] += lambda * d;
                } else {
                    for k in 0..n {
                        a[(i, k)] = 0.0;
                        a[(k, i)] = 0.0;
                    }
                    a[(i, i)] = 1.0;
                    rhs[i] = 0.0;
                }
            }
            let Some(ch) = a.cholesky() else {
                singular = true;
                q = p.clone();
                break;
            };
            let step = ch.solve(&rhs);
            let want: Vec<f64> = (0..n).map(|i| held[i].unwrap_or(p[i] + step[i])).collect();
            q = want.clone();
            problem.constrain(&mut q);
            let mut clipped = false;
            for i in 0..n {
                if free[i] && held[i].is_none() && (q[i] - want[i]).abs() > 1e-12 * (1.0 + want[i].abs()) {
                    held[i] = Some(q[i]);
                    clipped = true;
                }
            }
            if !clipped {
                break;
            }
        }
        if singular {
            lambda *= nu;
            nu *= 2.0;
            if lambda > 1e20 {
                converged = true;
                break;
            }
            continue;
        }
        let actual_step: Vec<f64> = q.iter().zip(&p).map(|(a, b)| a - b).collect();
        problem.residuals(&q, &mut trial);
        let new_cost = sumsq(&trial);
        // predicted reduction of the linearized model for the actual step
        let d = DVector::from_vec(actual_step.clone());
        let predicted = -(2.0 * g.dot(&d) + (d.transpose() * &h * &d)[(0, 0)]);
        if new_cost.is_finite() && new_cost < cost {
            let rho = if predicted > 0.0 { (cost - new_cost) / predicted } else { 1.0 };
            let reduction = cost - new_cost;
            let step_norm = actual_step.iter().map(|x| x * x).sum::<f64>().sqrt();
            let p_norm = p.iter().map(|x| x * x).sum::<f64>().sqrt();
            p = q;
            r.copy_from_slice(&trial);
            cost = new_cost;
            lambda *= (1.0 - (2.0 * rho - 1.0).powi(3)).max(1.0 / 3.0);
            nu = 2.0;
            problem.jacobian(&p, &mut jac);
            (h, g) = normal(&jac, &r);
            if reduction <= cfg.ftol * cost || step_norm <= cfg.xtol * (p_norm + cfg.xtol) {
                converged = true;
                break;
            }
        } else {
            lambda *= nu;
            nu *= 2.0;
            if lambda > 1e20 {
                // no descent direction left: stationary point
                converged = true;
                break;
            }
        }
    }

    LmOutcome {
        params: p,
        cost,
        iterations,
        converged,
        normal_matrix: h,
    }
}

fn sumsq(r: &[f64]) -> f64 {
    r.iter().map(|x| x * x).sum()
}
