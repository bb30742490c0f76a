//! Polarization tokens and two-photon polarization states.
//!
//! Two-photon vectors use the product basis (HH, HV, VH, VV). The first
//! qubit is the exciton (X) photon and the second the biexciton (XX)
//! photon, so a setting label "HD" projects X onto H and XX onto D.
//!
//! Token convention: D=(H+V)/√2, A=(H−V)/√2, R=(H−iV)/√2, L=(H+iV)/√2.

use std::fmt;
use std::str::FromStr;

use nalgebra::{Matrix2, Vector2, Vector4};
use num_complex::Complex64;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

pub type C64 = Complex64;

const FRAC_1_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Polarization {
    H,
    V,
    D,
    A,
    R,
    L,
}

impl Polarization {
    pub const ALL: [Polarization; 6] = [
        Polarization::H,
        Polarization::V,
        Polarization::D,
        Polarization::A,
        Polarization::R,
        Polarization::L,
    ];

    /// Jones vector in the (H, V) basis.
    pub fn jones(self) -> Vector2<C64> {
        let s = FRAC_1_SQRT_2;
        let (h, v) = match self {
            Polarization::H => (C64::new(1.0, 0.0), C64::new(0.0, 0.0)),
            Polarization::V => (C64::new(0.0, 0.0), C64::new(1.0, 0.0)),
            Polarization::D => (C64::new(s, 0.0), C64::new(s, 0.0)),
            Polarization::A => (C64::new(s, 0.0), C64::new(-s, 0.0)),
            Polarization::R => (C64::new(s, 0.0), C64::new(0.0, -s)),
            Polarization::L => (C64::new(s, 0.0), C64::new(0.0, s)),
        };
        Vector2::new(h, v)
    }

    pub fn orthogonal(self) -> Polarization {
        match self {
            Polarization::H => Polarization::V,
            Polarization::V => Polarization::H,
            Polarization::D => Polarization::A,
            Polarization::A => Polarization::D,
            Polarization::R => Polarization::L,
            Polarization::L => Polarization::R,
        }
    }

    pub fn as_char(self) -> char {
        match self {
            Polarization::H => 'H',
            Polarization::V => 'V',
            Polarization::D => 'D',
            Polarization::A => 'A',
            Polarization::R => 'R',
            Polarization::L => 'L',
        }
    }

    pub fn from_char(c: char) -> Result<Self> {
        Ok(match c.to_ascii_uppercase() {
            'H' => Polarization::H,
            'V' => Polarization::V,
            'D' => Polarization::D,
            'A' => Polarization::A,
            'R' => Polarization::R,
            'L' => Polarization::L,
            other => {
                return Err(Error::Argument(format!(
                    "unknown polarization token '{other}' (expected one of HVDARL)"
                )))
            }
        })
    }
}

impl fmt::Display for Polarization {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.as_char())
    }
}

/// A joint projection: exciton analyzer first, biexciton analyzer second.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Setting {
    pub exciton: Polarization,
    pub biexciton: Polarization,
}

impl Setting {
    pub fn new(exciton: Polarization, biexciton: Polarization) -> Self {
        Self { exciton, biexciton }
    }

    pub fn label(&self) -> String {
        format!("{}{}", self.exciton, self.biexciton)
    }

    /// Product vector |p_X⟩ ⊗ |p_XX⟩.
    pub fn projector_state(&self) -> Vector4<C64> {
        kron(&self.exciton.jones(), &self.biexciton.jones())
    }
}

impl fmt::Display for Setting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.exciton, self.biexciton)
    }
}

impl FromStr for Setting {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let chars: Vec<char> = s.trim().chars().collect();
        if chars.len() != 2 {
            return Err(Error::Argument(format!(
                "setting label '{s}' must be two polarization tokens"
            )));
        }
        Ok(Setting::new(
            Polarization::from_char(chars[0])?,
            Polarization::from_char(chars[1])?,
        ))
    }
}

impl Serialize for Setting {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.label())
    }
}

impl<'de> Deserialize<'de> for Setting {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// The standard 16-setting two-qubit tomography set.
pub const DEFAULT_SETTING_LABELS: [&str; 16] = [
    "HH", "HV", "VV", "VH", "RH", "RV", "DV", "DH", "DR", "DD", "RD", "HD", "VD", "VL", "HL", "RL",
];

pub fn default_settings() -> Vec<Setting> {
    DEFAULT_SETTING_LABELS
        .iter()
        .map(|l| l.parse().expect("static labels are valid"))
        .collect()
}

/// Normalized two-photon polarization state over (HH, HV, VH, VV).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolarizationState {
    amplitudes: Vector4<C64>,
}

impl PolarizationState {
    pub fn new(amplitudes: Vector4<C64>) -> Result<Self> {
        let norm = amplitudes.norm();
        if !norm.is_finite() || norm == 0.0 {
            return Err(Error::Argument("polarization state has zero norm".into()));
        }
        Ok(Self {
            amplitudes: amplitudes / C64::new(norm, 0.0),
        })
    }

    pub fn amplitudes(&self) -> &Vector4<C64> {
        &self.amplitudes
    }

    /// (|HH⟩ + e^{iφ}|VV⟩)/√2
    pub fn phased_phi(phase: f64) -> Self {
        let s = FRAC_1_SQRT_2;
        Self {
            amplitudes: Vector4::new(
                C64::new(s, 0.0),
                C64::new(0.0, 0.0),
                C64::new(0.0, 0.0),
                C64::from_polar(s, phase),
            ),
        }
    }

    pub fn phi_plus() -> Self {
        Self::phased_phi(0.0)
    }

    pub fn phi_minus() -> Self {
        Self::phased_phi(std::f64::consts::PI)
    }

    /// Born probability of the joint projection `setting`.
    pub fn probability(&self, setting: &Setting) -> f64 {
        setting
            .projector_state()
            .dotc(&self.amplitudes)
            .norm_sqr()
    }

    /// Applies a single-qubit unitary to the exciton (first) qubit.
    pub fn apply_exciton(&self, u: &Matrix2<C64>) -> Self {
        let full = kron_mat(u, &Matrix2::identity());
        Self {
            amplitudes: full * self.amplitudes,
        }
    }
}

pub fn kron(a: &Vector2<C64>, b: &Vector2<C64>) -> Vector4<C64> {
    Vector4::new(a[0] * b[0], a[0] * b[1], a[1] * b[0], a[1] * b[1])
}

pub fn kron_mat(a: &Matrix2<C64>, b: &Matrix2<C64>) -> nalgebra::Matrix4<C64> {
    nalgebra::Matrix4::from_fn(|r, c| a[(r / 2, c / 2)] * b[(r % 2, c % 2)])
}

/// Waveplate-style unitary R(θ)·diag(1, e^{iφ})·R(−θ).
pub fn retarder(theta: f64, phi: f64) -> Matrix2<C64> {
    let (s, c) = theta.sin_cos();
    let rot = |sgn: f64| {
        Matrix2::new(
            C64::new(c, 0.0),
            C64::new(-sgn * s, 0.0),
            C64::new(sgn * s, 0.0),
            C64::new(c, 0.0),
        )
    };
    let phase = Matrix2::new(
        C64::new(1.0, 0.0),
        C64::new(0.0, 0.0),
        C64::new(0.0, 0.0),
        C64::from_polar(1.0, phi),
    );
    rot(1.0) * phase * rot(-1.0)
}
