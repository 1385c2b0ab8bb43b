//! Point-scatterer time-of-flight simulator for homogeneous media.
//!
//! Each scatterer contributes one echo per (transmit, element) pair, delayed
//! by the virtual-source transmit path plus the straight receive path. There
//! is no directivity, attenuation or multiple scattering, so the output is
//! exactly linear in the scatterer amplitudes when noise is off.

use ndarray::{Array3, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::beamform::{rx_delay, tx_delay};
use crate::error::{Error, Result};
use crate::model::{standard_tx_events, FrameSelection, ProbeGeometry, RfChannelData, TxEvent};

/// Pulse table oversampling factor relative to the sampling rate.
const PULSE_OVERSAMPLE: usize = 64;
/// Gaussian window truncation in standard deviations.
const PULSE_SUPPORT_SIGMAS: f64 = 4.0;
/// Seed offset for the noise stream, so noise and scatterers never share draws.
const NOISE_STREAM: u64 = 0x9e37_79b9_7f4a_7c15;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    /// Ground-truth speed of sound, m/s.
    pub true_sos: f64,
    /// Lateral extent of the medium, centred on x = 0 (m).
    pub width: f64,
    /// Depth of the medium below the face (m).
    pub depth: f64,
    /// Fraction of lattice sites holding a scatterer.
    pub scatterer_density: f64,
    /// Spacing of the candidate scatterer lattice (m).
    pub lattice_spacing: f64,
    /// Scatterer amplitudes are `amplitude_scale * N(0, 1)`.
    pub amplitude_scale: f64,
    /// Cycles under the full width at half maximum of the Gaussian window.
    pub pulse_cycles: u32,
    pub sampling_frequency: f64,
    /// Additive white noise std relative to the noiseless peak magnitude.
    pub noise_std: f64,
    pub seed: u64,
    pub max_record_samples: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            true_sos: 1540.0,
            width: 40e-3,
            depth: 55e-3,
            scatterer_density: 0.10,
            lattice_spacing: 75e-6,
            amplitude_scale: DEFAULT_AMPLITUDE_SCALE,
            pulse_cycles: 3,
            sampling_frequency: 40e6,
            noise_std: 0.0,
            seed: 0,
            max_record_samples: 1 << 16,
        }
    }
}

/// Brings the per-channel RMS of the default 40 x 55 mm, 10 % density medium
/// to roughly 1 with the standard probe and a centred transmit.
pub const DEFAULT_AMPLITUDE_SCALE: f64 = 0.10;

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64, what: &str| -> Result<()> {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::invalid("sim config", format!("{what} must be > 0")))
            }
        };
        positive(self.true_sos, "true_sos")?;
        positive(self.width, "width")?;
        positive(self.depth, "depth")?;
        positive(self.lattice_spacing, "lattice_spacing")?;
        positive(self.sampling_frequency, "sampling_frequency")?;
        if self.scatterer_density <= 0.0 {
            return Err(Error::EmptyMedium);
        }
        if !(self.scatterer_density <= 1.0) {
            return Err(Error::invalid(
                "sim config",
                "scatterer_density must be in (0, 1]",
            ));
        }
        if self.pulse_cycles < 1 {
            return Err(Error::invalid("sim config", "pulse_cycles must be >= 1"));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::invalid("sim config", "noise_std must be >= 0"));
        }
        if !self.amplitude_scale.is_finite() {
            return Err(Error::invalid(
                "sim config",
                "amplitude_scale must be finite",
            ));
        }
        Ok(())
    }

    /// Lattice sites along (x, z). The face row z = 0 is excluded.
    pub fn lattice_dims(&self) -> (usize, usize) {
        let nx = (self.width / self.lattice_spacing + 1e-9).floor() as usize + 1;
        let nz = (self.depth / self.lattice_spacing + 1e-9).floor() as usize;
        (nx, nz)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScattererField {
    positions: Vec<(f64, f64)>,
    amplitudes: Vec<f64>,
    seed: u64,
}

impl ScattererField {
    pub fn new(positions: Vec<(f64, f64)>, amplitudes: Vec<f64>, seed: u64) -> Result<Self> {
        if positions.len() != amplitudes.len() {
            return Err(Error::invalid(
                "scatterer field",
                "positions and amplitudes differ in length",
            ));
        }
        if positions
            .iter()
            .any(|&(x, z)| !x.is_finite() || !(z > 0.0 && z.is_finite()))
        {
            return Err(Error::invalid(
                "scatterer field",
                "scatterers must lie at z > 0",
            ));
        }
        if amplitudes.iter().any(|a| !a.is_finite()) {
            return Err(Error::invalid("scatterer field", "non-finite amplitude"));
        }
        Ok(ScattererField {
            positions,
            amplitudes,
            seed,
        })
    }

    pub fn single(x: f64, z: f64, amplitude: f64) -> Result<Self> {
        Self::new(vec![(x, z)], vec![amplitude], 0)
    }

    pub fn empty() -> Self {
        ScattererField {
            positions: Vec::new(),
            amplitudes: Vec::new(),
            seed: 0,
        }
    }

    pub fn positions(&self) -> &[(f64, f64)] {
        &self.positions
    }

    pub fn amplitudes(&self) -> &[f64] {
        &self.amplitudes
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Concatenation of two fields.
    pub fn union(&self, other: &ScattererField) -> ScattererField {
        ScattererField {
            positions: [self.positions.as_slice(), &other.positions].concat(),
            amplitudes: [self.amplitudes.as_slice(), &other.amplitudes].concat(),
            seed: self.seed,
        }
    }

    pub fn map_amplitudes(&self, f: impl Fn(f64) -> f64) -> ScattererField {
        ScattererField {
            amplitudes: self.amplitudes.iter().map(|&a| f(a)).collect(),
            ..self.clone()
        }
    }

    pub fn map_positions(&self, f: impl Fn((f64, f64)) -> (f64, f64)) -> ScattererField {
        ScattererField {
            positions: self.positions.iter().map(|&p| f(p)).collect(),
            ..self.clone()
        }
    }
}

/// Occupies each lattice site with probability `scatterer_density`.
pub fn make_scatterer_field(config: &SimConfig) -> Result<ScattererField> {
    config.validate()?;
    let (nx, nz) = config.lattice_dims();
    let d = config.lattice_spacing;
    let x0 = -config.width / 2.0;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let full = config.scatterer_density >= 1.0;

    let mut positions = Vec::new();
    let mut amplitudes = Vec::new();
    for ix in 0..nx {
        let x = x0 + ix as f64 * d;
        for iz in 1..=nz {
            if full || rng.random::<f64>() < config.scatterer_density {
                let a: f64 = StandardNormal.sample(&mut rng);
                positions.push((x, iz as f64 * d));
                amplitudes.push(config.amplitude_scale * a);
            }
        }
    }
    if positions.is_empty() {
        return Err(Error::EmptyMedium);
    }
    ScattererField::new(positions, amplitudes, config.seed)
}

/// Gaussian-windowed sinusoid tabulated at `PULSE_OVERSAMPLE` sub-sample
/// phases. Row `k` holds the pulse at `k / PULSE_OVERSAMPLE + j - half_support`
/// samples from its centre, for `j = 0, 1, ..`.
struct PulseTable {
    rows: Vec<Vec<f64>>,
    /// Half support in samples at the simulation rate.
    half_support: f64,
}

impl PulseTable {
    fn new(center_frequency: f64, cycles: u32, fs: f64) -> Self {
        let fwhm = cycles as f64 / center_frequency;
        let sigma = fwhm / (2.0 * (2.0 * std::f64::consts::LN_2).sqrt());
        let half_support = PULSE_SUPPORT_SIGMAS * sigma * fs;
        let len = (2.0 * half_support).floor() as usize + 2;
        let rows = (0..=PULSE_OVERSAMPLE)
            .map(|k| {
                (0..len)
                    .map(|j| {
                        let t = (k as f64 / PULSE_OVERSAMPLE as f64 + j as f64 - half_support) / fs;
                        pulse(t, center_frequency, sigma)
                    })
                    .collect()
            })
            .collect();
        PulseTable { rows, half_support }
    }

    /// Adds `amp * pulse(t - center)` to every sample of `trace` within the support.
    #[inline]
    fn accumulate(&self, trace: &mut [f64], center: f64, amp: f64) {
        let first = (center - self.half_support).ceil();
        let last = (center + self.half_support).floor();
        if last < 0.0 || trace.is_empty() {
            return;
        }
        let phase = ((first - center + self.half_support) * PULSE_OVERSAMPLE as f64).max(0.0);
        let k = (phase as usize).min(PULSE_OVERSAMPLE - 1);
        let frac = phase - k as f64;
        let skip = (-first).max(0.0) as usize;
        let start = first.max(0.0) as usize;
        let end = (last as usize).min(trace.len() - 1);
        if start > end {
            return;
        }
        let (r0, r1) = (&self.rows[k][skip..], &self.rows[k + 1][skip..]);
        for ((slot, &a), &b) in trace[start..=end].iter_mut().zip(r0).zip(r1) {
            *slot += amp * (a + frac * (b - a));
        }
    }
}

#[inline]
fn pulse(t: f64, f0: f64, sigma: f64) -> f64 {
    (-t * t / (2.0 * sigma * sigma)).exp() * (2.0 * std::f64::consts::PI * f0 * t).cos()
}

/// Time of the echo from `scatterer` on element at `element_x`, relative to
/// the transmit wavefront crossing the face on the virtual-source axis.
#[inline]
pub fn echo_time(scatterer: (f64, f64), tx: &TxEvent, element_x: f64, sos: f64) -> f64 {
    tx_delay(scatterer, tx, sos) + rx_delay(scatterer, element_x, sos)
}

/// Samples needed to hold every echo from anywhere in the configured domain.
pub fn record_length(probe: &ProbeGeometry, tx_events: &[TxEvent], config: &SimConfig) -> usize {
    let table_half = {
        let fwhm = config.pulse_cycles as f64 / probe.center_frequency;
        PULSE_SUPPORT_SIGMAS * fwhm / (2.0 * (2.0 * std::f64::consts::LN_2).sqrt())
    };
    let hw = config.width / 2.0;
    let corners = [
        (-hw, 0.0),
        (hw, 0.0),
        (-hw, config.depth),
        (hw, config.depth),
    ];
    let latest = tx_events
        .iter()
        .flat_map(|tx| {
            corners.iter().flat_map(move |&c| {
                [0, probe.element_count - 1]
                    .into_iter()
                    .map(move |e| echo_time(c, tx, probe.element_x(e), config.true_sos))
            })
        })
        .fold(0.0f64, f64::max);
    ((latest + table_half) * config.sampling_frequency).ceil() as usize + 2
}

/// Forward-simulates channel data for every transmit in `tx_events`.
pub fn simulate_channel_data(
    field: &ScattererField,
    probe: &ProbeGeometry,
    tx_events: &[TxEvent],
    config: &SimConfig,
) -> Result<RfChannelData> {
    config.validate()?;
    probe.validate()?;
    for tx in tx_events {
        tx.validate(probe)?;
    }
    let hw = config.width / 2.0 * (1.0 + 1e-9);
    let max_z = config.depth * (1.0 + 1e-9);
    if field
        .positions()
        .iter()
        .any(|&(x, z)| x.abs() > hw || z > max_z)
    {
        return Err(Error::invalid(
            "scatterer field",
            "scatterer outside the domain",
        ));
    }

    let n_samples = record_length(probe, tx_events, config);
    if n_samples > config.max_record_samples {
        return Err(Error::RecordTooLong {
            needed: n_samples,
            cap: config.max_record_samples,
        });
    }

    let fs = config.sampling_frequency;
    let table = PulseTable::new(probe.center_frequency, config.pulse_cycles, fs);
    let n_el = probe.element_count;
    let mut samples = Array3::<f32>::zeros((tx_events.len(), n_el, n_samples));

    samples
        .outer_iter_mut()
        .zip(tx_events)
        .for_each(|(mut plane, tx)| {
            let rows: Vec<Vec<f64>> = (0..n_el)
                .into_par_iter()
                .map(|e| channel_trace(field, tx, probe.element_x(e), config, &table, n_samples))
                .collect();
            for (mut dst, src) in plane.axis_iter_mut(Axis(0)).zip(rows) {
                dst.iter_mut().zip(src).for_each(|(d, s)| *d = s as f32);
            }
        });

    if config.noise_std > 0.0 {
        let peak = samples.iter().fold(0.0f32, |m, v| m.max(v.abs())) as f64;
        let sd = config.noise_std * peak;
        if sd > 0.0 {
            let normal = Normal::new(0.0, sd).expect("finite positive std");
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ NOISE_STREAM);
            samples
                .iter_mut()
                .for_each(|v| *v += normal.sample(&mut rng) as f32);
        }
    }

    RfChannelData::new(samples, fs, 0.0, tx_events.to_vec(), *probe)
}

fn channel_trace(
    field: &ScattererField,
    tx: &TxEvent,
    element_x: f64,
    config: &SimConfig,
    table: &PulseTable,
    n_samples: usize,
) -> Vec<f64> {
    let fs = config.sampling_frequency;
    let mut trace = vec![0.0f64; n_samples];
    for (&pos, &amp) in field.positions().iter().zip(field.amplitudes()) {
        table.accumulate(
            &mut trace,
            echo_time(pos, tx, element_x, config.true_sos) * fs,
            amp,
        );
    }
    trace
}

/// Random field from `config` recorded with the standard sequence for `selection`.
pub fn simulate_phantom(
    config: &SimConfig,
    probe: &ProbeGeometry,
    selection: FrameSelection,
) -> Result<(ScattererField, RfChannelData)> {
    let field = make_scatterer_field(config)?;
    let tx = standard_tx_events(probe, selection);
    let rf = simulate_channel_data(&field, probe, &tx, config)?;
    Ok((field, rf))
}
