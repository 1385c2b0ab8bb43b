use super::quality::{fft_freqs, power_spectrum};
use crate::error::{Error, Result};
use crate::model::BModeImage;

const LATTICE_STEP: f64 = 0.02;
const F1_STEPS: usize = 15;
const F2_STEPS: usize = 22;

/// Candidate `(f1, f2)` bands: `f1` in 0.02..=0.30, `f2` in `f1 + 0.02`..=0.44,
/// both on a 0.02 grid.
pub fn focus_band_lattice() -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    for i in 1..=F1_STEPS {
        for j in i + 1..=F2_STEPS {
            out.push((LATTICE_STEP * i as f64, LATTICE_STEP * j as f64));
        }
    }
    out
}

/// Radial energy distribution of one image, sorted by radius.
struct RadialSpectrum {
    radii: Vec<f64>,
    /// `prefix[k]` is the energy of the first `k` radii.
    prefix: Vec<f64>,
}

impl RadialSpectrum {
    fn new(img: &BModeImage) -> Self {
        let power = power_spectrum(img.values.view());
        let (n_x, n_z) = img.values.dim();
        let fx = fft_freqs(n_x);
        let fz = fft_freqs(n_z);
        let mut pairs = Vec::with_capacity(n_x * n_z);
        for (ix, &u) in fx.iter().enumerate() {
            for (iz, &v) in fz.iter().enumerate() {
                pairs.push(((u * u + v * v).sqrt(), power[[ix, iz]]));
            }
        }
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut prefix = Vec::with_capacity(pairs.len() + 1);
        prefix.push(0.0);
        let mut acc = 0.0;
        for &(_, e) in &pairs {
            acc += e;
            prefix.push(acc);
        }
        RadialSpectrum {
            radii: pairs.into_iter().map(|p| p.0).collect(),
            prefix,
        }
    }

    /// Band energy fraction, `None` when no bin falls inside the ring.
    fn ratio(&self, (f1, f2): (f64, f64)) -> Option<f64> {
        let lo = self.radii.partition_point(|&r| r < f1);
        let hi = self.radii.partition_point(|&r| r <= f2);
        if hi <= lo {
            return None;
        }
        let total = *self.prefix.last().expect("non-empty");
        Some(if total > 0.0 {
            (self.prefix[hi] - self.prefix[lo]) / total
        } else {
            0.0
        })
    }
}

/// Picks the lattice band whose focus argmax over `candidates` lands closest
/// to `true_sos`. Ties go to the widest band, then to the first in lattice order.
pub fn calibrate_focus_band(
    candidates: &[f64],
    images: &[BModeImage],
    true_sos: f64,
) -> Result<(f64, f64)> {
    if candidates.is_empty() || candidates.len() != images.len() {
        return Err(Error::invalid(
            "focus calibration",
            format!(
                "{} candidates for {} images",
                candidates.len(),
                images.len()
            ),
        ));
    }
    let spectra: Vec<RadialSpectrum> = images.iter().map(RadialSpectrum::new).collect();
    let mut best: Option<((f64, f64), f64)> = None;
    for band in focus_band_lattice() {
        let mut arg: Option<(usize, f64)> = None;
        let mut usable = true;
        for (k, s) in spectra.iter().enumerate() {
            match s.ratio(band) {
                Some(v) => {
                    if arg.is_none_or(|(_, m)| v > m) {
                        arg = Some((k, v));
                    }
                }
                None => {
                    usable = false;
                    break;
                }
            }
        }
        let Some((k, _)) = arg.filter(|_| usable) else {
            continue;
        };
        let err = (candidates[k] - true_sos).abs();
        let better = match best {
            None => true,
            Some(((b1, b2), e)) => err < e || (err == e && band.1 - band.0 > b2 - b1),
        };
        if better {
            best = Some((band, err));
        }
    }
    best.map(|(b, _)| b).ok_or(Error::EmptyFocusBand)
}
