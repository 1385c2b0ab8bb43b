use super::same_grid;
use crate::error::{Error, Result};
use crate::model::RfImage;

/// Relative cut-off below which a pixel's mean magnitude is treated as empty.
const SKIP_FRACTION: f64 = 1e-12;

/// Sum over pixels of the across-frame standard deviation (population form)
/// divided by the across-frame mean of absolute values. Pixels whose mean
/// magnitude falls below `1e-12` of the global peak are skipped.
///
/// Returned unnegated; the estimator maximises `-CV`.
pub fn coefficient_of_variation(frames: &[RfImage]) -> Result<f64> {
    if frames.len() < 2 {
        return Err(Error::invalid(
            "coefficient of variation",
            format!("needs at least 2 frames, got {}", frames.len()),
        ));
    }
    for f in &frames[1..] {
        same_grid(&frames[0], f)?;
    }
    let slices: Vec<&[f32]> = frames
        .iter()
        .map(|f| f.values.as_slice().expect("standard layout"))
        .collect();
    let peak = slices
        .iter()
        .flat_map(|s| s.iter())
        .fold(0.0f32, |m, v| m.max(v.abs())) as f64;
    let eps = SKIP_FRACTION * peak;
    let k = frames.len() as f64;
    let n = slices[0].len();

    let mut cv = 0.0;
    for p in 0..n {
        let (mut sum, mut sum_abs) = (0.0f64, 0.0f64);
        for s in &slices {
            let v = s[p] as f64;
            sum += v;
            sum_abs += v.abs();
        }
        let mean_abs = sum_abs / k;
        if mean_abs == 0.0 || mean_abs < eps {
            continue;
        }
        let mean = sum / k;
        let var = slices
            .iter()
            .map(|s| {
                let d = s[p] as f64 - mean;
                d * d
            })
            .sum::<f64>()
            / k;
        cv += var.sqrt() / mean_abs;
    }
    Ok(cv)
}
