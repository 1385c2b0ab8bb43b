//! Single-image sharpness measures on B-mode images.

use ndarray::{Array2, ArrayView2};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::Threshold;
use crate::error::{Error, Result};
use crate::model::BModeImage;

/// Fraction of spectral energy inside the ring `f1 <= |f| <= f2`.
pub fn focus(img: &BModeImage, band: (f64, f64)) -> Result<f64> {
    focus_ratio(img.values.view(), band)
}

/// Same as [`focus`] on a bare array. Frequencies are normalised per axis to
/// `[-0.5, 0.5)` cycles per pixel.
pub fn focus_ratio(values: ArrayView2<'_, f32>, band: (f64, f64)) -> Result<f64> {
    let power = power_spectrum(values);
    let (n_x, n_z) = values.dim();
    let fx = fft_freqs(n_x);
    let fz = fft_freqs(n_z);
    let (f1, f2) = band;
    let mut in_band = 0.0;
    let mut total = 0.0;
    let mut any = false;
    for (ix, &u) in fx.iter().enumerate() {
        for (iz, &v) in fz.iter().enumerate() {
            let e = power[[ix, iz]];
            total += e;
            let r = (u * u + v * v).sqrt();
            if r >= f1 && r <= f2 {
                any = true;
                in_band += e;
            }
        }
    }
    if !any {
        return Err(Error::EmptyFocusBand);
    }
    Ok(if total > 0.0 { in_band / total } else { 0.0 })
}

/// `|FFT2(values)|^2`, lateral-major like the input.
pub(crate) fn power_spectrum(values: ArrayView2<'_, f32>) -> Array2<f64> {
    let (n_x, n_z) = values.dim();
    let mut planner = FftPlanner::<f64>::new();
    let along_z = planner.plan_fft_forward(n_z);
    let along_x = planner.plan_fft_forward(n_x);

    let mut buf: Vec<Complex<f64>> = values
        .iter()
        .map(|&v| Complex::new(v as f64, 0.0))
        .collect();
    for line in buf.chunks_exact_mut(n_z) {
        along_z.process(line);
    }
    let mut column = vec![Complex::new(0.0, 0.0); n_x];
    for iz in 0..n_z {
        for (ix, c) in column.iter_mut().enumerate() {
            *c = buf[ix * n_z + iz];
        }
        along_x.process(&mut column);
        for (ix, c) in column.iter().enumerate() {
            buf[ix * n_z + iz] = *c;
        }
    }
    Array2::from_shape_vec((n_x, n_z), buf.into_iter().map(|c| c.norm_sqr()).collect())
        .expect("shape preserved")
}

pub(crate) fn fft_freqs(n: usize) -> Vec<f64> {
    (0..n)
        .map(|k| {
            let k = if k < n.div_ceil(2) {
                k as f64
            } else {
                k as f64 - n as f64
            };
            k / n as f64
        })
        .collect()
}

/// Shannon entropy (bits) of an `bins`-bin histogram over `[-dynamic_range, 0]`.
pub fn entropy(img: &BModeImage, bins: usize) -> f64 {
    let bins = bins.max(1);
    let lo = -img.dynamic_range;
    let mut counts = vec![0usize; bins];
    for &v in img.values.iter() {
        let t = (v as f64 - lo) / img.dynamic_range;
        let b = ((t * bins as f64).floor().max(0.0) as usize).min(bins - 1);
        counts[b] += 1;
    }
    let n = img.values.len() as f64;
    -counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            p * p.log2()
        })
        .sum::<f64>()
}

/// 3x3 Sobel responses along x (lateral) and z (axial).
#[derive(Debug, Clone)]
pub struct GradientField {
    pub gx: Array2<f64>,
    pub gz: Array2<f64>,
}

impl GradientField {
    pub fn magnitude(&self) -> Array2<f64> {
        ndarray::Zip::from(&self.gx)
            .and(&self.gz)
            .map_collect(|&a, &b| (a * a + b * b).sqrt())
    }
}

/// Unnormalised 3x3 Sobel with edge replication.
pub fn sobel(values: ArrayView2<'_, f64>) -> Result<GradientField> {
    let (n_x, n_z) = values.dim();
    if n_x < 3 || n_z < 3 {
        return Err(Error::ImageTooSmall { n_x, n_z, min: 3 });
    }
    let at = |ix: isize, iz: isize| {
        let ix = ix.clamp(0, n_x as isize - 1) as usize;
        let iz = iz.clamp(0, n_z as isize - 1) as usize;
        values[[ix, iz]]
    };
    let mut gx = Array2::<f64>::zeros((n_x, n_z));
    let mut gz = Array2::<f64>::zeros((n_x, n_z));
    for ix in 0..n_x as isize {
        for iz in 0..n_z as isize {
            let dx = |dz: isize| at(ix + 1, iz + dz) - at(ix - 1, iz + dz);
            let dz = |dx: isize| at(ix + dx, iz + 1) - at(ix + dx, iz - 1);
            gx[[ix as usize, iz as usize]] = dx(-1) + 2.0 * dx(0) + dx(1);
            gz[[ix as usize, iz as usize]] = dz(-1) + 2.0 * dz(0) + dz(1);
        }
    }
    Ok(GradientField { gx, gz })
}

fn as_f64(img: &BModeImage) -> Array2<f64> {
    img.values.mapv(|v| v as f64)
}

/// Sum of Sobel gradient magnitudes.
pub fn grad_mag(img: &BModeImage) -> Result<f64> {
    let g = sobel(as_f64(img).view())?;
    Ok(ndarray::Zip::from(&g.gx)
        .and(&g.gz)
        .fold(0.0, |acc, &a, &b| acc + (a * a + b * b).sqrt()))
}

/// Sum of squared Sobel gradient magnitudes.
pub fn tenengrad(img: &BModeImage) -> Result<f64> {
    let g = sobel(as_f64(img).view())?;
    Ok(sum_squared(&g))
}

fn sum_squared(g: &GradientField) -> f64 {
    ndarray::Zip::from(&g.gx)
        .and(&g.gz)
        .fold(0.0, |acc, &a, &b| acc + (a * a + b * b))
}

/// Separable Gaussian blur, kernel truncated at 4 sigma, edges replicated.
pub fn gaussian_blur(values: ArrayView2<'_, f64>, sigma: f64) -> Array2<f64> {
    let radius = (4.0 * sigma).ceil().max(1.0) as isize;
    let mut kernel: Vec<f64> = (-radius..=radius)
        .map(|k| (-(k * k) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let norm: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|w| *w /= norm);

    let (n_x, n_z) = values.dim();
    let clamp = |i: isize, n: usize| i.clamp(0, n as isize - 1) as usize;
    let mut along_z = Array2::<f64>::zeros((n_x, n_z));
    for ix in 0..n_x {
        for iz in 0..n_z {
            along_z[[ix, iz]] = kernel
                .iter()
                .zip(-radius..)
                .map(|(w, k)| w * values[[ix, clamp(iz as isize + k, n_z)]])
                .sum();
        }
    }
    let mut out = Array2::<f64>::zeros((n_x, n_z));
    for ix in 0..n_x {
        for iz in 0..n_z {
            out[[ix, iz]] = kernel
                .iter()
                .zip(-radius..)
                .map(|(w, k)| w * along_z[[clamp(ix as isize + k, n_x), iz]])
                .sum();
        }
    }
    out
}

/// Gradient magnitude cut-off. A percentile `p` keeps the
/// `ceil(n (100 - p) / 100)` largest magnitudes, plus any ties with the
/// smallest of them.
pub fn resolve_threshold(magnitudes: &[f64], threshold: Threshold) -> f64 {
    match threshold {
        Threshold::Absolute(t) => t,
        Threshold::Percentile(p) => {
            if magnitudes.is_empty() {
                return 0.0;
            }
            let n = magnitudes.len();
            let keep = ((n as f64 * (100.0 - p) / 100.0).ceil() as usize).clamp(1, n);
            let mut sorted = magnitudes.to_vec();
            let idx = n - keep;
            let (_, kth, _) = sorted.select_nth_unstable_by(idx, f64::total_cmp);
            *kth
        }
    }
}

/// Smoothed, thresholded Tenengrad: blur, Sobel, then sum `G^2` over pixels
/// with `G >= tau`.
pub fn st_ten(img: &BModeImage, sigma: f64, threshold: Threshold) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(Error::invalid("stten sigma", "must be > 0"));
    }
    let blurred = gaussian_blur(as_f64(img).view(), sigma);
    let g = sobel(blurred.view())?;
    let mag = g.magnitude();
    let tau = resolve_threshold(mag.as_slice().expect("standard layout"), threshold);
    Ok(ndarray::Zip::from(&mag)
        .and(&g.gx)
        .and(&g.gz)
        .fold(
            0.0,
            |acc, &m, &a, &b| if m >= tau { acc + a * a + b * b } else { acc },
        ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ImageGrid;
    use proptest::prelude::*;

    fn bmode(values: Array2<f32>) -> BModeImage {
        let (n_x, n_z) = values.dim();
        let grid = ImageGrid::new(n_x, n_z, (0.0, 1.0), (1.0, 2.0)).unwrap();
        BModeImage::new(grid, values, 60.0).unwrap()
    }

    fn lcg_image(n_x: usize, n_z: usize, seed: u64) -> Array2<f32> {
        let mut s = seed.wrapping_mul(6364136223846793005).wrapping_add(1);
        Array2::from_shape_fn((n_x, n_z), |_| {
            s = s
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            -((s >> 33) as f32 / (1u64 << 31) as f32) * 60.0
        })
    }

    #[test]
    fn focus_full_band_is_one() {
        let img = bmode(lcg_image(8, 16, 1));
        let r = focus(&img, (0.0, 1.0)).unwrap();
        assert!((r - 1.0).abs() < 1e-12);
    }

    #[test]
    fn focus_constant_image_outside_dc_is_zero() {
        let img = bmode(Array2::from_elem((8, 16), -12.0));
        assert_eq!(focus(&img, (0.05, 0.5)).unwrap(), 0.0);
    }

    #[test]
    fn focus_sinusoid_inside_ring() {
        // 4 periods laterally over 32 px and 8 axially over 64 px: |f| = 0.177
        let (n_x, n_z) = (32, 64);
        let values = Array2::from_shape_fn((n_x, n_z), |(ix, iz)| {
            let phase = 2.0
                * std::f64::consts::PI
                * (4.0 * ix as f64 / n_x as f64 + 8.0 * iz as f64 / n_z as f64);
            phase.cos() as f32
        });
        let r = focus_ratio(values.view(), (0.15, 0.2)).unwrap();
        assert!(r >= 0.99, "{r}");
        // the oracle: all energy sits on the two carrier bins
        let p = power_spectrum(values.view());
        let carrier = p[[4, 8]] + p[[n_x - 4, n_z - 8]];
        assert!((carrier / p.sum() - r).abs() < 1e-9);
    }

    #[test]
    fn focus_empty_band() {
        let img = bmode(lcg_image(4, 4, 2));
        // radii on a 4x4 grid are 0, 0.25, 0.354, 0.5, ...
        assert_eq!(focus(&img, (0.26, 0.27)), Err(Error::EmptyFocusBand));
    }

    #[test]
    fn entropy_examples() {
        assert_eq!(entropy(&bmode(Array2::from_elem((4, 4), -30.0)), 256), 0.0);
        // one pixel per bin centre
        let nb = 16;
        let vals = Array2::from_shape_fn((nb, 1), |(i, _)| {
            (-60.0 + (i as f64 + 0.5) * 60.0 / nb as f64) as f32
        });
        assert!((entropy(&bmode(vals), nb) - (nb as f64).log2()).abs() < 1e-12);
        let two = Array2::from_shape_fn((2, 4), |(i, _)| if i == 0 { -60.0 } else { 0.0 });
        assert!((entropy(&bmode(two), 256) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn gradients_vanish_on_constant_image() {
        let img = bmode(Array2::from_elem((5, 7), -20.0));
        assert_eq!(grad_mag(&img).unwrap(), 0.0);
        assert_eq!(tenengrad(&img).unwrap(), 0.0);
        assert_eq!(st_ten(&img, 2.0, Threshold::Percentile(90.0)).unwrap(), 0.0);
    }

    #[test]
    fn vertical_step_edge() {
        let (n_x, n_z) = (8, 20);
        let step = |h: f32| {
            bmode(Array2::from_shape_fn((n_x, n_z), |(ix, _)| {
                if ix < 4 {
                    -40.0
                } else {
                    -40.0 + h
                }
            }))
        };
        let h = 5.0;
        // two columns straddle the edge, each with |gx| = 4h
        assert_eq!(grad_mag(&step(h)).unwrap(), 8.0 * h as f64 * n_z as f64);
        assert_eq!(
            grad_mag(&step(2.0 * h)).unwrap(),
            2.0 * grad_mag(&step(h)).unwrap()
        );
        assert_eq!(
            tenengrad(&step(2.0 * h)).unwrap(),
            4.0 * tenengrad(&step(h)).unwrap()
        );
    }

    #[test]
    fn too_small_images_rejected() {
        let img = bmode(Array2::zeros((2, 9)));
        assert!(matches!(grad_mag(&img), Err(Error::ImageTooSmall { .. })));
        assert!(matches!(tenengrad(&img), Err(Error::ImageTooSmall { .. })));
        assert!(matches!(
            st_ten(&img, 1.0, Threshold::Absolute(0.0)),
            Err(Error::ImageTooSmall { .. })
        ));
    }

    #[test]
    fn stten_zero_threshold_is_tenengrad_of_blurred() {
        let img = bmode(lcg_image(12, 15, 3));
        let blurred = gaussian_blur(as_f64(&img).view(), 1.5);
        let expected = sum_squared(&sobel(blurred.view()).unwrap());
        assert_eq!(
            st_ten(&img, 1.5, Threshold::Absolute(0.0)).unwrap(),
            expected
        );
        assert_eq!(
            st_ten(&img, 1.5, Threshold::Percentile(0.0)).unwrap(),
            expected
        );
    }

    #[test]
    fn stten_threshold_above_max_is_zero() {
        let img = bmode(lcg_image(12, 15, 4));
        assert_eq!(st_ten(&img, 1.0, Threshold::Absolute(1e9)).unwrap(), 0.0);
    }

    #[test]
    fn stten_percentile_keeps_top_tenth() {
        // 1000 pixels with distinct gradient magnitudes
        let img = bmode(lcg_image(20, 50, 5));
        let sigma = 1.0;
        let g = sobel(gaussian_blur(as_f64(&img).view(), sigma).view()).unwrap();
        let mut energies: Vec<(f64, f64)> =
            g.gx.iter()
                .zip(g.gz.iter())
                .map(|(&a, &b)| ((a * a + b * b).sqrt(), a * a + b * b))
                .collect();
        assert_eq!(energies.len(), 1000);
        energies.sort_by(|a, b| b.0.total_cmp(&a.0));
        assert!(
            energies.windows(2).all(|w| w[0].0 > w[1].0),
            "magnitudes must be distinct"
        );
        let tau = resolve_threshold(
            &g.magnitude().into_raw_vec_and_offset().0,
            Threshold::Percentile(90.0),
        );
        assert_eq!(tau, energies[99].0);
        let top100: f64 = energies[..100].iter().map(|e| e.1).sum();
        let got = st_ten(&img, sigma, Threshold::Percentile(90.0)).unwrap();
        assert!((got - top100).abs() <= 1e-9 * top100);
    }

    #[test]
    fn percentile_includes_ties() {
        let mags = vec![1.0, 2.0, 3.0, 3.0, 3.0];
        // keep ceil(5 * 0.2) = 1, but three values tie at the cut
        let tau = resolve_threshold(&mags, Threshold::Percentile(80.0));
        assert_eq!(tau, 3.0);
        assert_eq!(mags.iter().filter(|&&m| m >= tau).count(), 3);
    }

    #[test]
    fn small_sigma_approaches_tenengrad() {
        let values = Array2::from_shape_fn((40, 60), |(ix, iz)| {
            let x = ix as f64 / 40.0;
            let z = iz as f64 / 60.0;
            (-30.0 + 10.0 * (3.0 * x).sin() * (5.0 * z).cos() + 8.0 * (x * z * 4.0).cos()) as f32
        });
        let img = bmode(values);
        let t = tenengrad(&img).unwrap();
        let s = st_ten(&img, 0.3, Threshold::Absolute(0.0)).unwrap();
        assert!((s - t).abs() / t < 0.01, "{s} vs {t}");
    }

    #[test]
    fn blur_preserves_constants() {
        let c = Array2::from_elem((6, 9), -7.5f64);
        let b = gaussian_blur(c.view(), 2.0);
        assert!(b.iter().all(|&v| (v + 7.5).abs() < 1e-12));
    }

    proptest! {
        #[test]
        fn gradients_shift_invariant(seed in 0u64..1000, shift in 0i32..10) {
            // integer-valued pixels keep every difference exact
            let base = lcg_image(6, 9, seed).mapv(|v| (v / 2.0).round() - 10.0);
            let shifted = base.mapv(|v| v - shift as f32);
            prop_assert_eq!(grad_mag(&bmode(base.clone())).unwrap(), grad_mag(&bmode(shifted.clone())).unwrap());
            prop_assert_eq!(tenengrad(&bmode(base)).unwrap(), tenengrad(&bmode(shifted)).unwrap());
        }

        #[test]
        fn tenengrad_cauchy_schwarz(seed in 0u64..1000) {
            let img = bmode(lcg_image(7, 11, seed));
            let gm = grad_mag(&img).unwrap();
            let t = tenengrad(&img).unwrap();
            prop_assert!(t * (1.0 + 1e-12) >= gm * gm / 77.0);
        }

        #[test]
        fn focus_in_unit_interval(seed in 0u64..1000, f1 in 0.0f64..0.3, w in 0.05f64..0.4) {
            let img = bmode(lcg_image(8, 16, seed));
            // narrow rings can miss every bin of a small grid
            match focus(&img, (f1, f1 + w)) {
                Ok(r) => prop_assert!((0.0..=1.0 + 1e-12).contains(&r)),
                Err(e) => prop_assert_eq!(e, Error::EmptyFocusBand),
            }
        }

        #[test]
        fn entropy_bounded(seed in 0u64..1000, bins in 2usize..300) {
            let e = entropy(&bmode(lcg_image(9, 13, seed)), bins);
            prop_assert!(e >= 0.0 && e <= (bins as f64).log2() + 1e-12);
        }
    }
}
