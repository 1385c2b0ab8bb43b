//! Pairwise comparisons of RF images.
//!
//! All of these are exactly symmetric under argument swap: every reduction
//! is arranged so that swapping the inputs only swaps commutative operands.

use ndarray::{Array2, ArrayView2, Zip};

use super::{same_grid, MetricParams};
use crate::error::{Error, Result};
use crate::model::RfImage;

pub(crate) const SSIM_WINDOW: usize = 7;

/// Mean over all fully-contained 7x7 windows of the luminance and
/// contrast-structure SSIM terms. Window statistics use the sample
/// (N - 1) covariance.
pub fn ssim(a: &RfImage, b: &RfImage, params: &MetricParams) -> Result<f64> {
    same_grid(a, b)?;
    let (n_x, n_z) = a.values.dim();
    if n_x < SSIM_WINDOW || n_z < SSIM_WINDOW {
        return Err(Error::ImageTooSmall {
            n_x,
            n_z,
            min: SSIM_WINDOW,
        });
    }
    let range = match params.ssim_data_range {
        Some(l) => l,
        None => {
            let (lo, hi) = a
                .values
                .iter()
                .chain(b.values.iter())
                .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
                    (lo.min(v), hi.max(v))
                });
            let l = (hi - lo) as f64;
            // two identical constant images: any positive range gives 1
            if l > 0.0 {
                l
            } else {
                1.0
            }
        }
    };
    let c_mu = (params.ssim_k1 * range).powi(2);
    let c_sigma = (params.ssim_k2 * range).powi(2);

    let x = a.values.mapv(|v| v as f64);
    let y = b.values.mapv(|v| v as f64);
    let sx = window_sums(x.view());
    let sy = window_sums(y.view());
    let sxx = window_sums((&x * &x).view());
    let syy = window_sums((&y * &y).view());
    let sxy = window_sums((&x * &y).view());

    let n = (SSIM_WINDOW * SSIM_WINDOW) as f64;
    let mut total = 0.0;
    Zip::from(&sx)
        .and(&sy)
        .and(&sxx)
        .and(&syy)
        .and(&sxy)
        .for_each(|&sx, &sy, &sxx, &syy, &sxy| {
            let mx = sx / n;
            let my = sy / n;
            let vx = (sxx - sx * sx / n) / (n - 1.0);
            let vy = (syy - sy * sy / n) / (n - 1.0);
            let cov = (sxy - sx * sy / n) / (n - 1.0);
            let lum = (2.0 * mx * my + c_mu) / (mx * mx + my * my + c_mu);
            let cs = (2.0 * cov + c_sigma) / (vx + vy + c_sigma);
            total += lum * cs;
        });
    Ok(total / sx.len() as f64)
}

/// Sums over every fully-contained window, separably: 7 along z, then 7 along x.
fn window_sums(v: ArrayView2<'_, f64>) -> Array2<f64> {
    let (n_x, n_z) = v.dim();
    let w = SSIM_WINDOW;
    let (m_x, m_z) = (n_x - w + 1, n_z - w + 1);
    let mut along_z = Array2::<f64>::zeros((n_x, m_z));
    for ix in 0..n_x {
        let row = v.row(ix);
        for iz in 0..m_z {
            let mut s = 0.0;
            for k in 0..w {
                s += row[iz + k];
            }
            along_z[[ix, iz]] = s;
        }
    }
    let mut out = Array2::<f64>::zeros((m_x, m_z));
    for ix in 0..m_x {
        for iz in 0..m_z {
            let mut s = 0.0;
            for k in 0..w {
                s += along_z[[ix + k, iz]];
            }
            out[[ix, iz]] = s;
        }
    }
    out
}

/// Mean squared pixel difference.
pub fn mean_squared_error(a: &RfImage, b: &RfImage) -> Result<f64> {
    same_grid(a, b)?;
    let mut sum = 0.0f64;
    Zip::from(&a.values).and(&b.values).for_each(|&p, &q| {
        let d = (p - q) as f64;
        sum += d * d;
    });
    Ok(sum / a.values.len() as f64)
}

/// `-MSE`, maximal (zero) for identical images.
pub fn neg_mse(a: &RfImage, b: &RfImage) -> Result<f64> {
    Ok(-mean_squared_error(a, b)?)
}

/// `20 log10(peak / sqrt(mse))`.
pub fn psnr_from_mse(peak: f64, mse: f64) -> Result<f64> {
    if mse == 0.0 {
        return Err(Error::InfinitePsnr);
    }
    if !(peak > 0.0) {
        return Err(Error::NonPositivePeak(peak));
    }
    Ok(20.0 * (peak / mse.sqrt()).log10())
}

/// PSNR with the peak taken as the largest pixel value across both images.
/// Identical images give [`Error::InfinitePsnr`].
pub fn psnr(a: &RfImage, b: &RfImage) -> Result<f64> {
    let mse = mean_squared_error(a, b)?;
    let peak = a
        .values
        .iter()
        .chain(b.values.iter())
        .fold(f32::NEG_INFINITY, |m, &v| m.max(v));
    psnr_from_mse(peak as f64, mse)
}

fn bin_labels(values: &Array2<f32>, bins: usize) -> Vec<usize> {
    let (lo, hi) = values
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let span = (hi - lo) as f64;
    if !(span > 0.0) {
        return vec![0; values.len()];
    }
    values
        .iter()
        .map(|&v| {
            let t = (v - lo) as f64 / span;
            ((t * bins as f64) as usize).min(bins - 1)
        })
        .collect()
}

/// Mutual information in nats from a `bins x bins` joint histogram; each
/// image is binned over its own min-max range.
pub fn mutual_information(a: &RfImage, b: &RfImage, bins: usize) -> Result<f64> {
    same_grid(a, b)?;
    if bins < 2 {
        return Err(Error::invalid("mi bins", "need at least 2"));
    }
    let la = bin_labels(&a.values, bins);
    let lb = bin_labels(&b.values, bins);
    let mut joint = vec![0u64; bins * bins];
    for (&i, &j) in la.iter().zip(&lb) {
        joint[i * bins + j] += 1;
    }
    let mut row = vec![0u64; bins];
    let mut col = vec![0u64; bins];
    for i in 0..bins {
        for j in 0..bins {
            row[i] += joint[i * bins + j];
            col[j] += joint[i * bins + j];
        }
    }
    let n = la.len() as f64;
    let ln_n = n.ln();
    let term = |i: usize, j: usize| {
        let c = joint[i * bins + j];
        if c == 0 {
            return 0.0;
        }
        let c = c as f64;
        c / n * ((c.ln() + ln_n) - ((row[i] as f64).ln() + (col[j] as f64).ln()))
    };
    // visit (i, j) and (j, i) together so a transposed histogram sums identically
    let mut mi = 0.0;
    for i in 0..bins {
        mi += term(i, i);
        for j in i + 1..bins {
            mi += term(i, j) + term(j, i);
        }
    }
    Ok(mi.max(0.0))
}

/// Pearson correlation over all pixels.
pub fn correlation(a: &RfImage, b: &RfImage) -> Result<f64> {
    same_grid(a, b)?;
    let n = a.values.len() as f64;
    let mean = |v: &Array2<f32>| v.iter().map(|&x| x as f64).sum::<f64>() / n;
    let (ma, mb) = (mean(&a.values), mean(&b.values));
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    Zip::from(&a.values).and(&b.values).for_each(|&p, &q| {
        let (da, db) = (p as f64 - ma, q as f64 - mb);
        sab += da * db;
        saa += da * da;
        sbb += db * db;
    });
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::ZeroVariance);
    }
    Ok((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}
