//! Global speed-of-sound estimation for pulse-echo ultrasound.
//!
//! Channel data are beamformed at a range of candidate SoS values, every
//! candidate image is scored by an image metric, and the best-scoring
//! candidate is the estimate. A point-scatterer simulator provides test data
//! with known ground truth.

// NaN must fail range checks, so `!(x > 0.0)` is deliberate.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod beamform;
pub mod error;
pub mod estimator;
pub mod imaging;
pub mod metrics;
pub mod model;
mod nonfinite;
pub mod sim;

pub use beamform::{beamform_frames, beamform_sweep, das_beamform, BeamformConfig, Interpolation};
pub use error::{Error, Result};
pub use estimator::{
    aggregate_errors, aggregate_outcomes, estimate_global, estimate_layered, normalize_scores,
    restrict_range, run_sweep, PatchSpec, SweepJob, SweepOutcome, SweepResult, SweepSettings,
    TimedResult,
};
pub use imaging::{bmode, compound, envelope, log_compress, EnvelopeImage};
pub use metrics::{score, MetricId, MetricInput, MetricParams, Threshold};
pub use model::{
    standard_tx_events, tx_sequence, BModeImage, EstimateReport, FrameSelection, ImageGrid,
    MetricErrorSummary, ProbeGeometry, RfChannelData, RfImage, SosSearchSpec, TxEvent,
};
pub use sim::{
    make_scatterer_field, simulate_channel_data, simulate_phantom, ScattererField, SimConfig,
};
