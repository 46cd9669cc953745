//! Correlated laser-phase models, min-entropy estimation and interferometric
//! calibration for quantum random number generators.

// `!(x > 0.0)` style checks are used on purpose so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod circular;
pub mod error;
pub mod io;
pub mod laser;
pub mod optics;
pub mod phase_model;
pub mod q_engine;
pub mod rng;
pub mod runner;
pub mod visibility;

pub use circular::{wrap_angle, Angle, CircularMoment, WGParams, WrappedGaussian};
pub use error::{Error, Result};
pub use laser::{DriveWaveform, FieldTrajectory, IntegrateOptions, LaserParams, PulseSampling, PulseTrain};
pub use optics::{CoherentAmplitude, DetectionRecord, InputIntensity, NetworkConfig, Topology};
pub use phase_model::{CorrelationModel, PhaseSequence};
pub use q_engine::{QResult, QuadratureScheme, QuadratureSpec, SearchOptions};
pub use rng::SimRng;
pub use runner::{ExperimentConfig, ExperimentKind, RunManifest, RunOutcome};
pub use visibility::{CalibrationResult, SweepGrid, VisibilityEstimate};
