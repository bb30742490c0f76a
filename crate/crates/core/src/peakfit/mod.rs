//! Least-squares fits of correlation histograms: the cascade peak shape used
//! to locate a coincidence peak, and the pulsed g² model.

mod cascade;
mod g2;
pub mod lm;

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

pub use cascade::{fit_cascade, fit_cascade_xy, CascadeFit, CascadeFitOptions};
pub use g2::{
    fit_g2, g2_model_counts, G2Fit, G2FitOptions, PeakAmplitude, FAR_PEAK_INDEX,
    MIN_PERIODS_EACH_SIDE as MIN_G2_PERIODS_EACH_SIDE,
};

/// Cascade model internals, exposed for oracles and plotting.
pub mod cascade_model {
    pub use super::cascade::{gradient, model, tau_max, N_PARAMS, PARAM_NAMES};
}

use crate::correlator::CorrelationHistogram;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub error: f64,
}

impl Estimate {
    pub fn new(value: f64, error: f64) -> Self {
        Self { value, error }
    }

    pub fn exact(value: f64) -> Self {
        Self { value, error: 0.0 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BinResidual {
    pub tau_ps: i64,
    pub observed: u64,
    pub model: f64,
    pub residual: f64,
    /// residual / √model
    pub pull: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResidualReport {
    pub bins: Vec<BinResidual>,
    pub chi2: f64,
    pub dof: usize,
    pub reduced_chi2: f64,
    /// Reduced χ² above which the model is flagged as not describing the data.
    pub mismatch_threshold: f64,
    pub mismatch: bool,
}

impl ResidualReport {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# chi2 {:.6}", self.chi2);
        let _ = writeln!(s, "# dof {}", self.dof);
        let _ = writeln!(s, "# reduced_chi2 {:.6}", self.reduced_chi2);
        let _ = writeln!(
            s,
            "# mismatch {} (threshold {:.4})",
            self.mismatch, self.mismatch_threshold
        );
        let _ = writeln!(s, "tau_ps,observed,model,residual,pull");
        for b in &self.bins {
            let _ = writeln!(
                s,
                "{},{},{:.6},{:.6},{:.6}",
                b.tau_ps, b.observed, b.model, b.residual, b.pull
            );
        }
        s
    }
}

/// Per-bin residuals of `model` (expected counts per bin) against `h`, with
/// the Pearson χ² (variance = model, floored at 1e-9).
pub fn residual_report(model: &[f64], h: &CorrelationHistogram, n_params: usize) -> ResidualReport {
    assert_eq!(model.len(), h.len(), "model must cover every bin");
    let mut chi2 = 0.0;
    let bins = h
        .counts
        .iter()
        .zip(model)
        .enumerate()
        .map(|(k, (&obs, &m))| {
            let r = obs as f64 - m;
            let pull = r / m.max(1e-9).sqrt();
            chi2 += pull * pull;
            BinResidual {
                tau_ps: h.bin_start(k),
                observed: obs,
                model: m,
                residual: r,
                pull,
            }
        })
        .collect();
    let dof = h.len().saturating_sub(n_params).max(1);
    let reduced = chi2 / dof as f64;
    // five standard deviations of the χ²/dof distribution
    let threshold = 1.0 + 5.0 * (2.0 / dof as f64).sqrt();
    ResidualReport {
        bins,
        chi2,
        dof,
        reduced_chi2: reduced,
        mismatch_threshold: threshold,
        mismatch: reduced > threshold,
    }
}

pub fn cascade_residuals(fit: &CascadeFit, h: &CorrelationHistogram) -> ResidualReport {
    let p = fit.params();
    let shift = (h.tau_start_ps - fit.axis_origin_ps) as f64;
    let model: Vec<f64> = (0..h.len())
        .map(|k| cascade::model(&p, h.bin_center_rel(k) + shift))
        .collect();
    residual_report(&model, h, cascade::N_PARAMS)
}

pub fn g2_residuals(fit: &G2Fit, h: &CorrelationHistogram) -> ResidualReport {
    residual_report(&g2_model_counts(fit, h), h, g2::N_PARAMS)
}
