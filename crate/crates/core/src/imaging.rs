//! Envelope detection, log compression and coherent compounding.

use std::sync::Arc;

use ndarray::{Array2, Zip};
use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::model::{BModeImage, ImageGrid, RfImage};

/// Display dynamic range used unless configured otherwise, dB.
pub const DEFAULT_DYNAMIC_RANGE: f64 = 60.0;

/// Magnitude of the axial analytic signal, non-negative.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvelopeImage {
    pub grid: ImageGrid,
    pub values: Array2<f32>,
}

impl EnvelopeImage {
    pub fn new(grid: ImageGrid, values: Array2<f32>) -> Result<Self> {
        crate::model::check_shape(&grid, &values)?;
        if values.iter().any(|&v| !(v >= 0.0 && v.is_finite())) {
            return Err(Error::invalid(
                "envelope image",
                "values must be finite and >= 0",
            ));
        }
        Ok(EnvelopeImage { grid, values })
    }
}

struct Hilbert {
    len: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl Hilbert {
    fn new(signal_len: usize) -> Self {
        let len = signal_len.next_power_of_two().max(2);
        let mut planner = FftPlanner::new();
        Hilbert {
            len,
            forward: planner.plan_fft_forward(len),
            inverse: planner.plan_fft_inverse(len),
        }
    }

    /// Writes `|analytic(signal)|` into `out`.
    fn magnitude<T: Copy + Into<f64>>(&self, signal: &[T], out: &mut [f64]) {
        let n = self.len;
        let mut buf: Vec<Complex<f64>> = signal
            .iter()
            .map(|&v| Complex::new(v.into(), 0.0))
            .chain(std::iter::repeat(Complex::new(0.0, 0.0)))
            .take(n)
            .collect();
        self.forward.process(&mut buf);
        // keep DC and Nyquist, double positive frequencies, drop negative ones
        for c in &mut buf[1..n / 2] {
            *c *= 2.0;
        }
        for c in &mut buf[n / 2 + 1..] {
            *c = Complex::new(0.0, 0.0);
        }
        self.inverse.process(&mut buf);
        let norm = 1.0 / n as f64;
        for (o, c) in out.iter_mut().zip(&buf) {
            *o = c.norm() * norm;
        }
    }
}

/// Envelope of a single trace.
pub fn analytic_envelope(signal: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; signal.len()];
    if !signal.is_empty() {
        Hilbert::new(signal.len()).magnitude(signal, &mut out);
    }
    out
}

/// Envelope of every axial line, zero-padded to the next power of two.
pub fn envelope(image: &RfImage) -> Result<EnvelopeImage> {
    let (n_x, n_z) = image.values.dim();
    if n_z < 4 {
        return Err(Error::invalid(
            "rf image",
            format!("envelope needs at least 4 axial samples, got {n_z}"),
        ));
    }
    let hilbert = Hilbert::new(n_z);
    let lines: Vec<Vec<f32>> = (0..n_x)
        .into_par_iter()
        .map(|ix| {
            let row = image.values.row(ix);
            let row = row.as_slice().expect("standard layout");
            let mut mag = vec![0.0f64; n_z];
            hilbert.magnitude(row, &mut mag);
            mag.into_iter().map(|v| v as f32).collect()
        })
        .collect();
    let mut values = Array2::<f32>::zeros((n_x, n_z));
    for (mut dst, src) in values.outer_iter_mut().zip(lines) {
        dst.as_slice_mut()
            .expect("standard layout")
            .copy_from_slice(&src);
    }
    EnvelopeImage::new(image.grid, values)
}

/// `20 log10(env / max(env))`, clipped to `[-dynamic_range, 0]`.
pub fn log_compress(env: &EnvelopeImage, dynamic_range: f64) -> Result<BModeImage> {
    if !(dynamic_range > 0.0 && dynamic_range.is_finite()) {
        return Err(Error::invalid("dynamic range", "must be > 0"));
    }
    let floor = -dynamic_range;
    let peak = env.values.iter().fold(0.0f32, |m, &v| m.max(v)) as f64;
    let values = if peak > 0.0 {
        env.values.mapv(|v| {
            let db = 20.0 * (v as f64 / peak).log10();
            // log10(0) = -inf clips to the floor as well
            db.clamp(floor, 0.0) as f32
        })
    } else {
        Array2::from_elem(env.values.dim(), floor as f32)
    };
    BModeImage::new(env.grid, values, dynamic_range)
}

/// Pixel-wise mean of RF frames, before envelope detection.
pub fn compound(images: &[RfImage]) -> Result<RfImage> {
    let first = images
        .first()
        .ok_or_else(|| Error::invalid("compound", "no images"))?;
    for img in &images[1..] {
        if img.grid != first.grid {
            return Err(Error::GridMismatch);
        }
        if img.beamform_sos != first.beamform_sos {
            return Err(Error::SosMismatch(first.beamform_sos, img.beamform_sos));
        }
    }
    if images.len() == 1 {
        return Ok(first.clone());
    }
    let mut sum = first.values.mapv(|v| v as f64);
    for img in &images[1..] {
        Zip::from(&mut sum)
            .and(&img.values)
            .for_each(|s, &v| *s += v as f64);
    }
    let k = images.len() as f64;
    Ok(RfImage {
        grid: first.grid,
        values: sum.mapv(|s| (s / k) as f32),
        beamform_sos: first.beamform_sos,
        tx_index: first.tx_index,
    })
}

/// Compound, detect and log-compress in one go.
pub fn bmode(images: &[RfImage], dynamic_range: f64) -> Result<BModeImage> {
    log_compress(&envelope(&compound(images)?)?, dynamic_range)
}
