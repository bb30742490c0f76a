//! Simulation and analysis toolkit for entanglement-verified two-way clock
//! synchronization with quantum-dot photon pairs.
//!
//! The pipeline is: [`qdsim`] produces detector timestamp streams
//! ([`timetags::TagStream`]), [`correlator`] histograms pair delays and
//! locates the coincidence peak, [`peakfit`] fits the cascade line shape,
//! [`syncproto`] turns the one-way and round-trip peak positions into an
//! absolute clock offset, and [`tomography`] reconstructs the two-photon
//! polarization state to verify where the photons came from.

pub mod config;
pub mod correlator;
pub mod error;
pub mod peakfit;
pub mod pipeline;
pub mod polarization;
pub mod qdsim;
pub mod syncproto;
pub mod timetags;
pub mod tomography;

pub use error::{Error, Result};
