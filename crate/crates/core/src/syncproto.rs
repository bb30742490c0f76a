//! Two-way synchronization arithmetic.
//!
//! Convention: the offset δ is subscriber clock minus master clock. The
//! one-way histogram is (X at subscriber) − (XX at master), so its peak sits
//! at propagation + δ; the round-trip histogram (returned X − XX, both on the
//! master clock) peaks at twice the propagation. Fine quantities are kept in
//! picoseconds next to an integer-second coarse part so that offsets of
//! ~10⁶ s keep sub-picosecond resolution.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::peakfit::{CascadeFit, Estimate};
use crate::timetags::TagStream;

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT_M_PER_S: f64 = 299_792_458.0;

/// A one-way peak further than this from the coarse offset means the coarse
/// second was wrong.
pub const MAX_ONE_WAY_PS: f64 = 0.5e12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyncReport {
    pub tau_one_way_ps: Estimate,
    pub tau_round_trip_ps: Estimate,
    /// Integer-second part of the offset, known beforehand.
    pub coarse_offset_s: i64,
    /// coarse + τ_ow, in seconds.
    pub raw_offset_s: f64,
    /// raw − τ_rt/2 − κ, in seconds.
    pub compensated_offset_s: f64,
    /// Fine part of the raw offset (= τ_ow), ps.
    pub raw_fine_ps: f64,
    /// Fine part of the compensated offset (τ_ow − τ_rt/2 − κ), ps.
    pub compensated_fine_ps: f64,
    pub raw_error_ps: f64,
    pub compensated_error_ps: f64,
    /// Residual asymmetry calibration subtracted from the compensated offset.
    pub kappa_ps: Estimate,
    /// Raw offset as a decimal string with femtosecond digits.
    pub raw_offset_text: String,
    pub compensated_offset_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inserted_delay_estimate_ps: Option<f64>,
}

impl SyncReport {
    /// Compensated offset in integer picoseconds.
    pub fn compensated_offset_ps(&self) -> i128 {
        self.coarse_offset_s as i128 * 1_000_000_000_000 + self.compensated_fine_ps.round() as i128
    }

    /// One-way propagation implied by the round trip, ps.
    pub fn one_way_propagation_ps(&self) -> f64 {
        self.tau_round_trip_ps.value / 2.0
    }

    pub fn summary(&self) -> String {
        let mut s = format!(
            "one-way peak      {:>20.3} ± {:.3} ps\n\
             round-trip peak   {:>20.3} ± {:.3} ps\n\
             kappa             {:>20.3} ± {:.3} ps\n\
             raw offset        {} s ± {:.3} ps\n\
             compensated       {} s ± {:.3} ps\n",
            self.tau_one_way_ps.value,
            self.tau_one_way_ps.error,
            self.tau_round_trip_ps.value,
            self.tau_round_trip_ps.error,
            self.kappa_ps.value,
            self.kappa_ps.error,
            self.raw_offset_text,
            self.raw_error_ps,
            self.compensated_offset_text,
            self.compensated_error_ps,
        );
        if let Some(d) = self.inserted_delay_estimate_ps {
            s.push_str(&format!("inserted delay    {d:>20.3} ps\n"));
        }
        s
    }
}

/// Formats `coarse_s` + `fine_ps` as seconds with 15 decimals (1 fs).
pub fn format_offset(coarse_s: i64, fine_ps: f64) -> String {
    let total_fs = coarse_s as i128 * 1_000_000_000_000_000 + (fine_ps * 1e3).round() as i128;
    let sign = if total_fs < 0 { "-" } else { "" };
    let a = total_fs.unsigned_abs();
    format!("{sign}{}.{:015}", a / 1_000_000_000_000_000, a % 1_000_000_000_000_000)
}

/// Combines one-way and round-trip peak positions into a report.
pub fn compute_sync_from_peaks(
    tau_one_way_ps: Estimate,
    tau_round_trip_ps: Estimate,
    coarse_offset_s: i64,
    kappa_ps: Estimate,
) -> Result<SyncReport> {
    for (name, e) in [
        ("one-way peak", tau_one_way_ps),
        ("round-trip peak", tau_round_trip_ps),
        ("kappa", kappa_ps),
    ] {
        if !e.value.is_finite() || !e.error.is_finite() || e.error < 0.0 {
            return Err(Error::Argument(format!("{name} is not a finite estimate: {e:?}")));
        }
    }
    if tau_one_way_ps.value.abs() >= MAX_ONE_WAY_PS {
        return Err(Error::Protocol(format!(
            "one-way peak at {:.6} s from the coarse offset {coarse_offset_s} s; the coarse offset is inconsistent",
            tau_one_way_ps.value * 1e-12
        )));
    }
    let raw_fine = tau_one_way_ps.value;
    let comp_fine = raw_fine - tau_round_trip_ps.value / 2.0 - kappa_ps.value;
    let raw_offset_s = coarse_offset_s as f64 + raw_fine * 1e-12;
    let compensated_offset_s =
        raw_offset_s - tau_round_trip_ps.value / 2.0 * 1e-12 - kappa_ps.value * 1e-12;
    let raw_err = tau_one_way_ps.error;
    let comp_err = (raw_err.powi(2) + (tau_round_trip_ps.error / 2.0).powi(2) + kappa_ps.error.powi(2)).sqrt();
    Ok(SyncReport {
        tau_one_way_ps,
        tau_round_trip_ps,
        coarse_offset_s,
        raw_offset_s,
        compensated_offset_s,
        raw_fine_ps: raw_fine,
        compensated_fine_ps: comp_fine,
        raw_error_ps: raw_err,
        compensated_error_ps: comp_err,
        kappa_ps,
        raw_offset_text: format_offset(coarse_offset_s, raw_fine),
        compensated_offset_text: format_offset(coarse_offset_s, comp_fine),
        inserted_delay_estimate_ps: None,
    })
}

/// `compute_sync_from_peaks` on the fitted maxima of two cascade fits made
/// on absolute τ axes. The coarse second is removed from the one-way
/// position in integer arithmetic before going to floating point.
pub fn compute_sync(
    fit_one_way: &CascadeFit,
    fit_round_trip: &CascadeFit,
    coarse_offset_s: i64,
    kappa_ps: Estimate,
) -> Result<SyncReport> {
    for (name, f) in [("one-way", fit_one_way), ("round-trip", fit_round_trip)] {
        if !f.converged {
            return Err(Error::Argument(format!("{name} fit did not converge")));
        }
    }
    let coarse_ps = coarse_offset_s as i128 * 1_000_000_000_000;
    let ow_origin = (fit_one_way.axis_origin_ps as i128 - coarse_ps) as f64;
    compute_sync_from_peaks(
        Estimate::new(ow_origin + fit_one_way.tau_max_ps.value, fit_one_way.tau_max_ps.error),
        Estimate::new(fit_round_trip.tau_max_abs_ps(), fit_round_trip.tau_max_ps.error),
        coarse_offset_s,
        kappa_ps,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DelayVerification {
    pub one_way_shift_ps: Estimate,
    pub round_trip_shift_ps: Estimate,
    /// round_trip_shift / one_way_shift; 2 for a delay in the shared fiber.
    pub ratio: Estimate,
    pub tolerance: f64,
    pub pass: bool,
    pub raw_offset_change_ps: f64,
    pub compensated_offset_change_ps: f64,
    /// Half the round-trip shift.
    pub inserted_delay_estimate_ps: f64,
}

pub const DEFAULT_RATIO_TOLERANCE: f64 = 0.1;

/// Compares two reports taken before and after inserting a delay.
pub fn verify_delay_insertion(before: &SyncReport, after: &SyncReport, tolerance: f64) -> Result<DelayVerification> {
    for (name, r) in [("before", before), ("after", after)] {
        if !r.tau_one_way_ps.value.is_finite() || !r.tau_round_trip_ps.value.is_finite() {
            return Err(Error::Argument(format!("{name} report has no usable peak positions")));
        }
    }
    if !(tolerance > 0.0) {
        return Err(Error::Argument("tolerance must be positive".into()));
    }
    let diff = |a: Estimate, b: Estimate| Estimate::new(b.value - a.value, a.error.hypot(b.error));
    let ow = diff(before.tau_one_way_ps, after.tau_one_way_ps);
    let rt = diff(before.tau_round_trip_ps, after.tau_round_trip_ps);
    let ratio_value = rt.value / ow.value;
    let ratio_err = if ow.value != 0.0 {
        ratio_value.abs() * ((rt.error / rt.value).powi(2) + (ow.error / ow.value).powi(2)).sqrt()
    } else {
        f64::INFINITY
    };
    let ratio = Estimate::new(ratio_value, if ratio_err.is_nan() { f64::INFINITY } else { ratio_err });
    let coarse_change_ps = (after.coarse_offset_s - before.coarse_offset_s) as f64 * 1e12;
    Ok(DelayVerification {
        one_way_shift_ps: ow,
        round_trip_shift_ps: rt,
        pass: ratio_value.is_finite() && (ratio_value - 2.0).abs() < tolerance,
        ratio,
        tolerance,
        raw_offset_change_ps: coarse_change_ps + after.raw_fine_ps - before.raw_fine_ps,
        compensated_offset_change_ps: coarse_change_ps + after.compensated_fine_ps - before.compensated_fine_ps,
        inserted_delay_estimate_ps: rt.value / 2.0,
    })
}

/// Fiber length for a round-trip time: τ·c/(2n). NaN for τ < 0 or n < 1.
pub fn path_length_from_roundtrip(tau_rt_ps: f64, group_index: f64) -> f64 {
    if tau_rt_ps < 0.0 || group_index < 1.0 {
        return f64::NAN;
    }
    tau_rt_ps * 1e-12 * SPEED_OF_LIGHT_M_PER_S / (2.0 * group_index)
}

/// Subtracts `offset_ps` from every timestamp, clamping at zero. Returns the
/// corrected stream and the number of clamped tags.
pub fn apply_offset_ps(stream: &TagStream, offset_ps: i128) -> (TagStream, u64) {
    let mut clamped = 0u64;
    let out = stream.map_times(|tag| {
        let v = tag.time_ps as i128 - offset_ps;
        if v < 0 {
            clamped += 1;
            0
        } else if v > u64::MAX as i128 {
            clamped += 1;
            u64::MAX
        } else {
            v as u64
        }
    });
    if clamped > 0 {
        log::warn!("offset {offset_ps} ps moved {clamped} timestamps out of range; clamped");
    }
    (out, clamped)
}

/// Brings a subscriber stream onto the master clock using the compensated
/// offset of `report`.
pub fn apply_offset(stream: &TagStream, report: &SyncReport) -> Result<TagStream> {
    if !report.compensated_fine_ps.is_finite() {
        return Err(Error::Argument("compensated offset is not finite".into()));
    }
    Ok(apply_offset_ps(stream, report.compensated_offset_ps()).0)
}
