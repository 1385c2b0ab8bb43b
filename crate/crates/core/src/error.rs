use thiserror::Error;

use crate::metrics::MetricId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid {what}: {reason}")]
    Invalid { what: &'static str, reason: String },

    #[error("empty medium: no scatterers were placed")]
    EmptyMedium,

    #[error("record too long: {needed} samples required, cap is {cap}")]
    RecordTooLong { needed: usize, cap: usize },

    #[error("image grids do not match")]
    GridMismatch,

    #[error("beamforming SoS tags do not match ({0} vs {1} m/s)")]
    SosMismatch(f64, f64),

    #[error("empty focus band")]
    EmptyFocusBand,

    #[error("zero variance")]
    ZeroVariance,

    #[error("infinite PSNR: images are identical")]
    InfinitePsnr,

    #[error("PSNR undefined: maximum pixel value {0} is not positive")]
    NonPositivePeak(f64),

    #[error("image too small: {n_x}x{n_z} pixels, need at least {min}x{min}")]
    ImageTooSmall { n_x: usize, n_z: usize, min: usize },

    #[error("metric {metric} cannot use {frames} frame(s): {reason}")]
    Arity {
        metric: MetricId,
        frames: usize,
        reason: &'static str,
    },

    #[error("patch too small for metric {metric}: layer has {rows} rows, need {min}")]
    PatchTooSmall {
        metric: MetricId,
        rows: usize,
        min: usize,
    },

    #[error("degenerate curve: all scores are equal")]
    DegenerateCurve,
}

impl Error {
    pub(crate) fn invalid(what: &'static str, reason: impl Into<String>) -> Self {
        Error::Invalid {
            what,
            reason: reason.into(),
        }
    }
}
