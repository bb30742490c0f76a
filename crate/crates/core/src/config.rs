//! Run configuration, read from TOML. Every section and key is optional and
//! falls back to the defaults below; unknown keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::correlator::PeakSearchConfig;
use crate::error::{Error, Result};
use crate::peakfit::{CascadeFitOptions, G2FitOptions};
use crate::qdsim::{ClockParams, HbtParams, LinkParams, MeasurementConfig, SourceParams};
use crate::tomography::{TomographyConfig, WaveplateCorrection};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub label: String,
    pub seed: u64,
    pub duration_s: f64,
    pub out_dir: String,
    /// Also write the simulated tag streams (large).
    pub write_streams: bool,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            label: "default".into(),
            seed: 1,
            duration_s: 60.0,
            out_dir: "out".into(),
            write_streams: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorrelatorSection {
    /// Final histogram resolution.
    pub bin_width_ps: u64,
    /// One-way peak search window, relative to the coarse offset.
    pub one_way_search_ps: (i64, i64),
    /// Round-trip peak search window.
    pub round_trip_search_ps: (i64, i64),
    /// Fit window around the located peak.
    pub fit_before_ps: i64,
    pub fit_after_ps: i64,
    pub peak_search: PeakSearchConfig,
}

impl Default for CorrelatorSection {
    fn default() -> Self {
        Self {
            bin_width_ps: 16,
            one_way_search_ps: (-500_000_000_000, 500_000_000_000),
            round_trip_search_ps: (0, 1_000_000_000),
            fit_before_ps: 3_000,
            fit_after_ps: 9_000,
            peak_search: PeakSearchConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyncSection {
    /// Whole seconds of the offset known beforehand.
    pub coarse_offset_s: i64,
    /// Measure κ from a zero-delay, zero-offset run of the same source.
    pub calibrate_kappa: bool,
    /// κ used when not calibrating.
    pub kappa_ps: f64,
    pub kappa_error_ps: f64,
    pub ratio_tolerance: f64,
    /// Closed-loop acceptance floor on |compensated − truth|.
    pub offset_tolerance_ps: f64,
}

impl Default for SyncSection {
    fn default() -> Self {
        Self {
            coarse_offset_s: 0,
            calibrate_kappa: true,
            kappa_ps: 0.0,
            kappa_error_ps: 0.0,
            ratio_tolerance: crate::syncproto::DEFAULT_RATIO_TOLERANCE,
            offset_tolerance_ps: 20.0,
        }
    }
}

/// A second run with extra delay in the shared fiber.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DelayCheckSection {
    pub enabled: bool,
    pub inserted_delay_ps: f64,
    /// Put the delay only in front of the subscriber detector instead.
    pub forward_only: bool,
}

impl Default for DelayCheckSection {
    fn default() -> Self {
        Self {
            enabled: false,
            inserted_delay_ps: 4480.0,
            forward_only: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TomographySection {
    pub enabled: bool,
    /// Acquisition time per setting.
    pub duration_s: f64,
    pub waveplate: WaveplateCorrection,
    pub analysis: TomographyConfig,
}

impl Default for TomographySection {
    fn default() -> Self {
        Self {
            enabled: false,
            duration_s: 10.0,
            waveplate: WaveplateCorrection::default(),
            analysis: TomographyConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct G2Section {
    pub enabled: bool,
    pub duration_s: f64,
    pub bin_width_ps: u64,
    /// Histogram half-span in repetition periods.
    pub span_periods: f64,
    pub source: HbtParams,
    pub fit: G2FitOptions,
}

impl Default for G2Section {
    fn default() -> Self {
        Self {
            enabled: false,
            duration_s: 60.0,
            bin_width_ps: 32,
            span_periods: 8.0,
            source: HbtParams::default(),
            fit: G2FitOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub run: RunSection,
    pub source: SourceParams,
    pub link: LinkParams,
    pub clock: ClockParams,
    pub measurement: MeasurementConfig,
    pub correlator: CorrelatorSection,
    pub fit: CascadeFitOptions,
    pub sync: SyncSection,
    pub delay_check: DelayCheckSection,
    pub tomography: TomographySection,
    pub g2: G2Section,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config is always representable")
    }

    pub fn validate(&self) -> Result<()> {
        let cfg_err = |e: Error| Error::Config(e.to_string());
        self.source.validate().map_err(cfg_err)?;
        self.link.validate().map_err(cfg_err)?;
        self.clock.validate().map_err(cfg_err)?;
        if !(self.run.duration_s > 0.0) {
            return Err(Error::Config("run.duration_s must be positive".into()));
        }
        if self.correlator.bin_width_ps == 0 {
            return Err(Error::Config("correlator.bin_width_ps must be positive".into()));
        }
        for (name, (a, b)) in [
            ("one_way_search_ps", self.correlator.one_way_search_ps),
            ("round_trip_search_ps", self.correlator.round_trip_search_ps),
        ] {
            if b <= a {
                return Err(Error::Config(format!("correlator.{name} is empty")));
            }
        }
        if self.tomography.enabled && !(self.tomography.duration_s > 0.0) {
            return Err(Error::Config("tomography.duration_s must be positive".into()));
        }
        if self.g2.enabled {
            self.g2.source.validate().map_err(cfg_err)?;
            if !(self.g2.span_periods >= crate::peakfit::MIN_G2_PERIODS_EACH_SIDE) {
                return Err(Error::Config(format!(
                    "g2.span_periods must be at least {}",
                    crate::peakfit::MIN_G2_PERIODS_EACH_SIDE
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_gives_defaults() {
        assert_eq!(RunConfig::from_toml_str("").unwrap(), RunConfig::default());
    }

    #[test]
    fn defaults_round_trip_through_toml() {
        let text = RunConfig::default().to_toml_string();
        assert_eq!(RunConfig::from_toml_str(&text).unwrap(), RunConfig::default());
    }

    #[test]
    fn unknown_keys_rejected() {
        let e = RunConfig::from_toml_str("[source]\npair_probability = 0.1\n").unwrap_err();
        assert!(matches!(e, Error::Config(_)), "{e}");
        let e = RunConfig::from_toml_str("[nonsense]\n").unwrap_err();
        assert!(matches!(e, Error::Config(_)));
        let e = RunConfig::from_toml_str("[tomography]\nbogus = 1\n").unwrap_err();
        assert!(matches!(e, Error::Config(_)));
    }

    #[test]
    fn invalid_values_rejected() {
        assert!(RunConfig::from_toml_str("[source]\npair_prob = 1.5\n").is_err());
        assert!(RunConfig::from_toml_str("[run]\nduration_s = 0.0\n").is_err());
    }

    #[test]
    fn partial_sections() {
        let c = RunConfig::from_toml_str(
            "[clock]\noffset_s = 0.123456789\n[measurement]\nprojection_x = \"H\"\n[tomography]\nenabled = true\n[tomography.analysis]\nbin_width_ps = 32\n[tomography.waveplate]\ntheta_rad = 0.4545\nphi_rad = -0.6763\n",
        )
        .unwrap();
        assert_eq!(c.clock.offset_s, 0.123456789);
        assert_eq!(c.tomography.analysis.bin_width_ps, 32);
        assert_eq!(c.tomography.waveplate.phi_rad, -0.6763);
        assert_eq!(c.link, LinkParams::default());
    }
}
