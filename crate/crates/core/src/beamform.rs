//! Delay-and-sum beamforming for virtual-source diverging-wave transmits.
//!
//! A pixel at `p` sums, over every receive element `e`, the channel sample at
//! `tx_delay(p) + rx_delay(p, e) - t0`. Taps that fall outside the record
//! contribute zero. Every element is weighted equally.

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ImageGrid, RfChannelData, RfImage, SosSearchSpec, TxEvent};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Interpolation {
    Nearest,
    #[default]
    Linear,
}

impl std::str::FromStr for Interpolation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "nearest" => Ok(Interpolation::Nearest),
            "linear" => Ok(Interpolation::Linear),
            other => Err(Error::invalid(
                "interpolation",
                format!("unknown mode {other:?} (expected nearest or linear)"),
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BeamformConfig {
    pub grid: ImageGrid,
    #[serde(default)]
    pub interpolation: Interpolation,
}

impl BeamformConfig {
    pub fn new(grid: ImageGrid) -> Self {
        BeamformConfig {
            grid,
            interpolation: Interpolation::Linear,
        }
    }
}

impl Default for BeamformConfig {
    fn default() -> Self {
        Self::new(ImageGrid::standard())
    }
}

/// Transmit delay from the virtual source, zero where the spherical front
/// crosses the face on the source axis.
#[inline]
pub fn tx_delay(pixel: (f64, f64), tx: &TxEvent, sos: f64) -> f64 {
    let (dx, dz) = (pixel.0 - tx.vs_x, pixel.1 - tx.vs_z);
    ((dx * dx + dz * dz).sqrt() - tx.vs_z.abs()) / sos
}

#[inline]
pub fn rx_delay(pixel: (f64, f64), element_x: f64, sos: f64) -> f64 {
    let dx = pixel.0 - element_x;
    (dx * dx + pixel.1 * pixel.1).sqrt() / sos
}

/// Beamforms one transmit event.
pub fn das_beamform(
    rf: &RfChannelData,
    tx_index: usize,
    sos: f64,
    config: &BeamformConfig,
) -> Result<RfImage> {
    Ok(beamform_frames(rf, &[tx_index], sos, config)?
        .pop()
        .expect("one frame requested"))
}

/// Beamforms several transmit events at the same SoS.
///
/// Receive path lengths are shared between frames, so this is cheaper than
/// separate calls, and gives bit-identical images.
pub fn beamform_frames(
    rf: &RfChannelData,
    tx_indices: &[usize],
    sos: f64,
    config: &BeamformConfig,
) -> Result<Vec<RfImage>> {
    if !(sos > 0.0 && sos.is_finite()) {
        return Err(Error::invalid(
            "beamforming SoS",
            format!("{sos} m/s is not > 0"),
        ));
    }
    let grid = config.grid;
    grid.validate()?;
    if grid.is_empty() {
        return Err(Error::invalid("grid", "empty"));
    }
    if let Some(&bad) = tx_indices.iter().find(|&&t| t >= rf.n_tx()) {
        return Err(Error::invalid(
            "tx index",
            format!("{bad} out of range for {} events", rf.n_tx()),
        ));
    }

    let n_z = grid.n_z;
    let n_tx = tx_indices.len();
    let z: Vec<f32> = grid.z_coords().iter().map(|&v| v as f32).collect();
    let elements = rf.probe().element_x_positions();
    let events: Vec<TxEvent> = tx_indices.iter().map(|&t| rf.tx_events()[t]).collect();
    let samples = rf.samples();
    let scale = (rf.sampling_frequency() / sos) as f32;
    let offset = (rf.t0() * rf.sampling_frequency()) as f32;
    let interpolation = config.interpolation;

    let lines: Vec<Vec<f32>> = (0..grid.n_x)
        .into_par_iter()
        .map(|ix| {
            let x = grid.x_at(ix);
            // transmit path minus the source depth, per frame and depth
            let tx_path: Vec<Vec<f32>> = events
                .iter()
                .map(|tx| {
                    (0..n_z)
                        .map(|iz| (tx_delay((x, grid.z_at(iz)), tx, 1.0)) as f32)
                        .collect()
                })
                .collect();
            let mut acc = vec![0.0f32; n_tx * n_z];
            let mut rx_path = vec![0.0f32; n_z];
            for (e, &ex) in elements.iter().enumerate() {
                let dx = (x - ex) as f32;
                let dx2 = dx * dx;
                for (r, &zz) in rx_path.iter_mut().zip(&z) {
                    *r = (dx2 + zz * zz).sqrt();
                }
                for (f, &t) in tx_indices.iter().enumerate() {
                    let channel = samples.slice(ndarray::s![t, e, ..]);
                    let taps = Taps {
                        tx_path: &tx_path[f],
                        rx_path: &rx_path,
                        scale,
                        offset,
                        channel: channel.as_slice().expect("standard layout"),
                    };
                    let out = &mut acc[f * n_z..(f + 1) * n_z];
                    match interpolation {
                        Interpolation::Linear => taps.accumulate_linear(out),
                        Interpolation::Nearest => taps.accumulate_nearest(out),
                    }
                }
            }
            acc
        })
        .collect();

    (0..n_tx)
        .map(|f| {
            let mut values = Array2::<f32>::zeros((grid.n_x, n_z));
            for (mut row, line) in values.outer_iter_mut().zip(&lines) {
                row.as_slice_mut()
                    .expect("standard layout")
                    .copy_from_slice(&line[f * n_z..(f + 1) * n_z]);
            }
            Ok(RfImage {
                grid,
                values,
                beamform_sos: sos,
                tx_index: tx_indices[f],
            })
        })
        .collect()
}

/// Channel trace and path lengths for one (line, element, frame) triple.
/// Sample position is `(tx_path + rx_path) * scale - offset`.
struct Taps<'a> {
    tx_path: &'a [f32],
    rx_path: &'a [f32],
    scale: f32,
    offset: f32,
    channel: &'a [f32],
}

// Both kernels are branch-free so the gathers pipeline. Out-of-record taps
// read sample 0 and are masked to zero.
impl Taps<'_> {
    #[inline]
    fn accumulate_linear(&self, out: &mut [f32]) {
        let ch = self.channel;
        if ch.len() < 2 {
            return;
        }
        let last = (ch.len() - 1) as f32;
        for ((o, &a), &b) in out.iter_mut().zip(self.tx_path).zip(self.rx_path) {
            let p = (a + b) * self.scale - self.offset;
            let valid = p >= 0.0 && p < last;
            let p = if valid { p } else { 0.0 };
            // SAFETY: 0 <= p < len - 1, so the cast is exact and i + 1 < len.
            let i = unsafe { p.to_int_unchecked::<i32>() } as usize;
            let (s0, s1) = unsafe { (*ch.get_unchecked(i), *ch.get_unchecked(i + 1)) };
            let v = s0 + (p - i as f32) * (s1 - s0);
            *o += if valid { v } else { 0.0 };
        }
    }

    #[inline]
    fn accumulate_nearest(&self, out: &mut [f32]) {
        let ch = self.channel;
        if ch.is_empty() {
            return;
        }
        let end = ch.len() as f32;
        for ((o, &a), &b) in out.iter_mut().zip(self.tx_path).zip(self.rx_path) {
            let r = (a + b) * self.scale - self.offset + 0.5;
            let valid = r >= 0.0 && r < end;
            let r = if valid { r } else { 0.0 };
            // SAFETY: 0 <= r < len, so the cast is exact and in bounds.
            let i = unsafe { r.to_int_unchecked::<i32>() } as usize;
            let v = unsafe { *ch.get_unchecked(i) };
            *o += if valid { v } else { 0.0 };
        }
    }
}

/// Images beamformed at every candidate SoS, `images[candidate][frame]`.
#[derive(Debug, Clone)]
pub struct BeamformSweep {
    pub tx_indices: Vec<usize>,
    pub candidates: Vec<f64>,
    pub images: Vec<Vec<RfImage>>,
}

impl BeamformSweep {
    pub fn get(&self, tx_index: usize, candidate: usize) -> Option<&RfImage> {
        let f = self.tx_indices.iter().position(|&t| t == tx_index)?;
        self.images.get(candidate)?.get(f)
    }
}

/// One image per (tx, candidate). Candidates run concurrently; results are
/// gathered in candidate order.
pub fn beamform_sweep(
    rf: &RfChannelData,
    tx_indices: &[usize],
    spec: &SosSearchSpec,
    config: &BeamformConfig,
) -> Result<BeamformSweep> {
    spec.validate()?;
    let candidates = spec.candidates();
    let images = candidates
        .par_iter()
        .map(|&s| beamform_frames(rf, tx_indices, s, config))
        .collect::<Result<Vec<_>>>()?;
    Ok(BeamformSweep {
        tx_indices: tx_indices.to_vec(),
        candidates,
        images,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{standard_tx_events, tx_event_at, FrameSelection, ProbeGeometry};
    use crate::sim::{simulate_channel_data, ScattererField, SimConfig};
    use ndarray::Array3;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn tx_delay_examples() {
        let probe = ProbeGeometry::linear_128();
        let tx = tx_event_at(&probe, 0.0, 31);
        assert!(close(
            tx_delay((0.0, 20e-3), &tx, 1500.0),
            20e-3 / 1500.0,
            1e-15
        ));
        assert!(close(tx_delay((0.0, 20e-3), &tx, 1500.0), 13.333e-6, 1e-9));
        assert_eq!(tx_delay((0.0, 0.0), &tx, 1500.0), 0.0);
        let p = (3e-3, 17e-3);
        assert!(close(
            tx_delay(p, &tx, 3000.0),
            tx_delay(p, &tx, 1500.0) / 2.0,
            1e-18
        ));
    }

    #[test]
    fn rx_delay_examples() {
        assert!(close(rx_delay((0.0, 30e-3), 0.0, 1500.0), 20e-6, 1e-15));
        assert!(close(rx_delay((3e-3, 4e-3), 0.0, 1000.0), 5e-6, 1e-15));
        assert_eq!(
            rx_delay((0.0, 9e-3), -1e-3, 1540.0),
            rx_delay((0.0, 9e-3), 1e-3, 1540.0)
        );
    }

    fn zero_rf(n_tx: usize) -> RfChannelData {
        let probe = ProbeGeometry::new(16, 300e-6, 5e6).unwrap();
        let tx = standard_tx_events(&probe, FrameSelection::Full)
            .into_iter()
            .take(n_tx)
            .map(|t| tx_event_at(&probe, t.vs_x.clamp(-2e-3, 2e-3), 5))
            .collect();
        RfChannelData::new(Array3::zeros((n_tx, 16, 500)), 40e6, 0.0, tx, probe).unwrap()
    }

    #[test]
    fn zero_data_zero_image() {
        let rf = zero_rf(2);
        let cfg = BeamformConfig::new(ImageGrid::new(8, 16, (-2e-3, 2e-3), (5e-3, 9e-3)).unwrap());
        let img = das_beamform(&rf, 1, 1540.0, &cfg).unwrap();
        assert!(img.values.iter().all(|&v| v == 0.0));
        assert_eq!(img.beamform_sos, 1540.0);
        assert_eq!(img.tx_index, 1);
    }

    #[test]
    fn rejects_bad_inputs() {
        let rf = zero_rf(1);
        let cfg = BeamformConfig::new(ImageGrid::new(4, 4, (-1e-3, 1e-3), (5e-3, 6e-3)).unwrap());
        assert!(das_beamform(&rf, 0, 0.0, &cfg).is_err());
        assert!(das_beamform(&rf, 0, -1.0, &cfg).is_err());
        assert!(das_beamform(&rf, 3, 1500.0, &cfg).is_err());
        let mut bad = cfg;
        bad.grid.n_x = 0;
        assert!(das_beamform(&rf, 0, 1500.0, &bad).is_err());
    }

    fn scatterer_rf(z: f64) -> RfChannelData {
        let probe = ProbeGeometry::new(64, 300e-6, 5e6).unwrap();
        let tx = vec![tx_event_at(&probe, 0.0, 31)];
        let cfg = SimConfig {
            true_sos: 1500.0,
            width: 20e-3,
            depth: 30e-3,
            ..SimConfig::default()
        };
        simulate_channel_data(
            &ScattererField::single(0.0, z, 1.0).unwrap(),
            &probe,
            &tx,
            &cfg,
        )
        .unwrap()
    }

    #[test]
    fn linear_in_channel_data() {
        let rf = scatterer_rf(15e-3);
        let cfg =
            BeamformConfig::new(ImageGrid::new(9, 64, (-1e-3, 1e-3), (14e-3, 16e-3)).unwrap());
        let a = das_beamform(&rf, 0, 1510.0, &cfg).unwrap();
        let b = das_beamform(&rf.scaled(4.0), 0, 1510.0, &cfg).unwrap();
        assert_eq!(a.values.mapv(|v| v * 4.0), b.values);
    }

    #[test]
    fn multi_frame_matches_single_frame() {
        let probe = ProbeGeometry::new(32, 300e-6, 5e6).unwrap();
        let tx = standard_tx_events(&probe, FrameSelection::Dual)
            .into_iter()
            .map(|t| tx_event_at(&probe, t.vs_x, 9))
            .collect::<Vec<_>>();
        let cfg = SimConfig {
            true_sos: 1500.0,
            width: 10e-3,
            depth: 20e-3,
            scatterer_density: 0.01,
            ..SimConfig::default()
        };
        let field = crate::sim::make_scatterer_field(&cfg).unwrap();
        let rf = simulate_channel_data(&field, &probe, &tx, &cfg).unwrap();
        let bf =
            BeamformConfig::new(ImageGrid::new(16, 128, (-3e-3, 3e-3), (8e-3, 16e-3)).unwrap());
        let both = beamform_frames(&rf, &[1, 0], 1490.0, &bf).unwrap();
        assert_eq!(both[0], das_beamform(&rf, 1, 1490.0, &bf).unwrap());
        assert_eq!(both[1], das_beamform(&rf, 0, 1490.0, &bf).unwrap());
    }

    #[test]
    fn sweep_counts_and_consistency() {
        let rf = scatterer_rf(12e-3);
        let cfg =
            BeamformConfig::new(ImageGrid::new(4, 32, (-1e-3, 1e-3), (11e-3, 13e-3)).unwrap());
        let spec = SosSearchSpec::new(1500.0, 1500.5, 0.5).unwrap();
        let sweep = beamform_sweep(&rf, &[0], &spec, &cfg).unwrap();
        assert_eq!(sweep.candidates, vec![1500.0, 1500.5]);
        assert_eq!(sweep.images.len(), 2);
        assert_eq!(
            sweep.get(0, 0).unwrap(),
            &das_beamform(&rf, 0, 1500.0, &cfg).unwrap()
        );
        assert_eq!(SosSearchSpec::standard().candidates().len(), 301);
    }

    #[test]
    fn t0_shifts_the_image() {
        // moving t0 later by the two-way time of dz must pull the peak up by dz
        let rf = scatterer_rf(15e-3);
        let grid = ImageGrid::new(1, 401, (0.0, 0.0), (13e-3, 17e-3)).unwrap();
        let cfg = BeamformConfig::new(grid);
        let peak_z = |rf: &RfChannelData| {
            let img = das_beamform(rf, 0, 1500.0, &cfg).unwrap();
            let env = crate::imaging::envelope(&img).unwrap();
            let (iz, _) = env
                .values
                .row(0)
                .iter()
                .enumerate()
                .fold((0, f32::MIN), |b, (i, &v)| if v > b.1 { (i, v) } else { b });
            grid.z_at(iz)
        };
        let base = peak_z(&rf);
        let dz = 0.5e-3;
        let shifted = peak_z(&rf.clone().with_t0(2.0 * dz / 1500.0));
        assert!((base - 15e-3).abs() <= grid.dz() + 1e-12, "{base}");
        assert!(
            (shifted - (base + dz)).abs() <= 2.0 * grid.dz(),
            "{shifted} vs {}",
            base + dz
        );
    }

    #[test]
    fn nearest_and_linear_agree_roughly() {
        let rf = scatterer_rf(15e-3);
        let grid = ImageGrid::new(1, 201, (0.0, 0.0), (14e-3, 16e-3)).unwrap();
        let lin = das_beamform(&rf, 0, 1500.0, &BeamformConfig::new(grid)).unwrap();
        let near = das_beamform(
            &rf,
            0,
            1500.0,
            &BeamformConfig {
                grid,
                interpolation: Interpolation::Nearest,
            },
        )
        .unwrap();
        let peak = lin.values.iter().fold(0.0f32, |m, v| m.max(v.abs()));
        let diff = lin
            .values
            .iter()
            .zip(near.values.iter())
            .fold(0.0f32, |m, (a, b)| m.max((a - b).abs()));
        assert!(diff < 0.5 * peak);
        assert!(diff > 0.0);
    }
}
