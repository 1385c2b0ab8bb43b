//! Scalar image metrics. Every score is oriented so that larger means a
//! better beamforming SoS; MSE and CV are negated at this boundary.
//!
//! Three groups, distinguished by their input:
//! - quality metrics read one B-mode image (compounded when several frames
//!   are available),
//! - similarity metrics compare exactly two RF images,
//! - the multi-frame statistic reads two or more RF images.

mod calibrate;
mod multiframe;
mod quality;
mod similarity;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{BModeImage, RfImage};

pub use calibrate::{calibrate_focus_band, focus_band_lattice};
pub use multiframe::coefficient_of_variation;
pub use quality::{
    entropy, focus, focus_ratio, gaussian_blur, grad_mag, resolve_threshold, sobel, st_ten,
    tenengrad, GradientField,
};
pub use similarity::{
    correlation, mean_squared_error, mutual_information, neg_mse, psnr, psnr_from_mse, ssim,
};

/// Serialised as its lowercase key (`mse`, `corr`, ...).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MetricId {
    Focus,
    Entropy,
    GradMag,
    Tenengrad,
    StTen,
    Ssim,
    NegMse,
    Psnr,
    Mi,
    Correlation,
    Cv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Arity {
    /// One B-mode image.
    SingleImage,
    /// Exactly two RF images.
    Pair,
    /// Two or more RF images.
    MultiFrame,
}

impl MetricId {
    pub const ALL: [MetricId; 11] = [
        MetricId::Focus,
        MetricId::Entropy,
        MetricId::GradMag,
        MetricId::Tenengrad,
        MetricId::StTen,
        MetricId::Ssim,
        MetricId::NegMse,
        MetricId::Psnr,
        MetricId::Mi,
        MetricId::Correlation,
        MetricId::Cv,
    ];

    /// Stable lowercase identifier used on the command line and in files.
    pub fn key(self) -> &'static str {
        match self {
            MetricId::Focus => "focus",
            MetricId::Entropy => "entropy",
            MetricId::GradMag => "gradmag",
            MetricId::Tenengrad => "tenengrad",
            MetricId::StTen => "stten",
            MetricId::Ssim => "ssim",
            MetricId::NegMse => "mse",
            MetricId::Psnr => "psnr",
            MetricId::Mi => "mi",
            MetricId::Correlation => "corr",
            MetricId::Cv => "cv",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            MetricId::Focus => "Focus",
            MetricId::Entropy => "Entropy",
            MetricId::GradMag => "GradMag",
            MetricId::Tenengrad => "Tenengrad",
            MetricId::StTen => "ST-Ten",
            MetricId::Ssim => "SSIM",
            MetricId::NegMse => "MSE",
            MetricId::Psnr => "PSNR",
            MetricId::Mi => "MI",
            MetricId::Correlation => "Correlation",
            MetricId::Cv => "CV",
        }
    }

    pub fn arity(self) -> Arity {
        match self {
            MetricId::Focus
            | MetricId::Entropy
            | MetricId::GradMag
            | MetricId::Tenengrad
            | MetricId::StTen => Arity::SingleImage,
            MetricId::Ssim
            | MetricId::NegMse
            | MetricId::Psnr
            | MetricId::Mi
            | MetricId::Correlation => Arity::Pair,
            MetricId::Cv => Arity::MultiFrame,
        }
    }

    /// Whether `frames` transmit events can feed this metric. Quality metrics
    /// take any number of frames through compounding.
    pub fn check_frames(self, frames: usize) -> Result<()> {
        let reason = match self.arity() {
            _ if frames == 0 => Some("no frames selected"),
            Arity::SingleImage => None,
            Arity::Pair if frames != 2 => Some("comparison metrics need exactly two frames"),
            Arity::MultiFrame if frames < 2 => {
                Some("multi-frame statistics need at least two frames")
            }
            _ => None,
        };
        match reason {
            Some(reason) => Err(Error::Arity {
                metric: self,
                frames,
                reason,
            }),
            None => Ok(()),
        }
    }

    /// Fewest axial rows an input slice may have.
    pub fn min_axial_rows(self) -> usize {
        match self {
            MetricId::Ssim => similarity::SSIM_WINDOW,
            MetricId::GradMag | MetricId::Tenengrad | MetricId::StTen => 3,
            MetricId::Correlation => 2,
            _ => 1,
        }
    }
}

impl std::fmt::Display for MetricId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.key())
    }
}

impl std::str::FromStr for MetricId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        MetricId::ALL
            .into_iter()
            .find(|m| m.key() == lower)
            .ok_or_else(|| {
                Error::invalid(
                    "metric",
                    format!("unknown metric {s:?}; expected one of focus, entropy, gradmag, tenengrad, stten, ssim, mse, psnr, mi, corr, cv"),
                )
            })
    }
}

impl Serialize for MetricId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.key())
    }
}

impl<'de> Deserialize<'de> for MetricId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let key = String::deserialize(d)?;
        key.parse().map_err(serde::de::Error::custom)
    }
}

/// Gradient threshold for ST-Ten.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "mode", content = "value")]
pub enum Threshold {
    /// Fixed gradient magnitude.
    Absolute(f64),
    /// Order statistic of the image's own gradient magnitudes, in `[0, 100)`.
    Percentile(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricParams {
    /// Normalised radial frequency band `(f1, f2)` for Focus.
    pub focus_band: (f64, f64),
    pub entropy_bins: usize,
    /// Gaussian std for ST-Ten smoothing, pixels.
    pub stten_sigma: f64,
    pub stten_threshold: Threshold,
    pub ssim_k1: f64,
    pub ssim_k2: f64,
    /// Fixed SSIM dynamic range; `None` uses max - min over both images.
    pub ssim_data_range: Option<f64>,
    pub mi_bins: usize,
    /// Log-compression range for the B-mode input of quality metrics, dB.
    pub dynamic_range: f64,
}

impl Default for MetricParams {
    fn default() -> Self {
        MetricParams {
            focus_band: (0.10, 0.30),
            entropy_bins: 256,
            stten_sigma: 2.0,
            stten_threshold: Threshold::Percentile(90.0),
            ssim_k1: 0.01,
            ssim_k2: 0.03,
            ssim_data_range: None,
            mi_bins: 20,
            dynamic_range: crate::imaging::DEFAULT_DYNAMIC_RANGE,
        }
    }
}

impl MetricParams {
    pub fn validate(&self) -> Result<()> {
        let (f1, f2) = self.focus_band;
        if !(f1 >= 0.0 && f1 < f2 && f2.is_finite()) {
            return Err(Error::invalid(
                "metric params",
                "focus band needs 0 <= f1 < f2",
            ));
        }
        if self.entropy_bins < 2 || self.mi_bins < 2 {
            return Err(Error::invalid(
                "metric params",
                "histograms need at least 2 bins",
            ));
        }
        if !(self.stten_sigma > 0.0 && self.stten_sigma.is_finite()) {
            return Err(Error::invalid("metric params", "stten sigma must be > 0"));
        }
        match self.stten_threshold {
            Threshold::Percentile(p) if !(0.0..100.0).contains(&p) => {
                return Err(Error::invalid(
                    "metric params",
                    "percentile must lie in [0, 100)",
                ))
            }
            Threshold::Absolute(t) if !t.is_finite() => {
                return Err(Error::invalid("metric params", "threshold must be finite"))
            }
            _ => {}
        }
        if !(self.ssim_k1 > 0.0 && self.ssim_k2 > 0.0) {
            return Err(Error::invalid(
                "metric params",
                "ssim constants must be > 0",
            ));
        }
        if matches!(self.ssim_data_range, Some(l) if !(l > 0.0)) {
            return Err(Error::invalid(
                "metric params",
                "ssim data range must be > 0",
            ));
        }
        if !(self.dynamic_range > 0.0 && self.dynamic_range.is_finite()) {
            return Err(Error::invalid("metric params", "dynamic range must be > 0"));
        }
        Ok(())
    }
}

/// What a metric is evaluated on.
#[derive(Debug, Clone, Copy)]
pub enum MetricInput<'a> {
    BMode(&'a BModeImage),
    Frames(&'a [RfImage]),
}

/// Evaluates `metric` and orients the result so that larger is better.
///
/// Identical pairs under PSNR score `+inf`. Inputs on which a metric is
/// undefined (zero-variance correlation, non-positive PSNR peak) are
/// reported as errors here; the estimator maps them to `-inf`.
pub fn score(metric: MetricId, input: MetricInput<'_>, params: &MetricParams) -> Result<f64> {
    match (metric.arity(), input) {
        (Arity::SingleImage, MetricInput::BMode(img)) => match metric {
            MetricId::Focus => focus(img, params.focus_band),
            MetricId::Entropy => Ok(entropy(img, params.entropy_bins)),
            MetricId::GradMag => grad_mag(img),
            MetricId::Tenengrad => tenengrad(img),
            MetricId::StTen => st_ten(img, params.stten_sigma, params.stten_threshold),
            _ => unreachable!(),
        },
        (Arity::SingleImage, MetricInput::Frames(frames)) => Err(Error::Arity {
            metric,
            frames: frames.len(),
            reason: "quality metrics read a B-mode image",
        }),
        (_, MetricInput::BMode(_)) => Err(Error::Arity {
            metric,
            frames: 1,
            reason: "comparison and multi-frame metrics read RF frames",
        }),
        (Arity::Pair, MetricInput::Frames(frames)) => {
            metric.check_frames(frames.len())?;
            let (a, b) = (&frames[0], &frames[1]);
            match metric {
                MetricId::Ssim => ssim(a, b, params),
                MetricId::NegMse => neg_mse(a, b),
                MetricId::Psnr => match psnr(a, b) {
                    Err(Error::InfinitePsnr) => Ok(f64::INFINITY),
                    other => other,
                },
                MetricId::Mi => mutual_information(a, b, params.mi_bins),
                MetricId::Correlation => correlation(a, b),
                _ => unreachable!(),
            }
        }
        (Arity::MultiFrame, MetricInput::Frames(frames)) => {
            metric.check_frames(frames.len())?;
            Ok(-coefficient_of_variation(frames)?)
        }
    }
}

pub(crate) fn same_grid(a: &RfImage, b: &RfImage) -> Result<()> {
    if a.grid != b.grid || a.values.dim() != b.values.dim() {
        return Err(Error::GridMismatch);
    }
    Ok(())
}
