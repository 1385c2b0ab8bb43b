//! Domain types shared by the simulator, beamformer, metrics and estimator.
//!
//! Coordinates are in metres. The origin sits at the geometric centre of the
//! element row, `x` runs laterally and `z` increases with depth, `z = 0` being
//! the transducer face. Images are stored lateral-major: `values[[ix, iz]]`,
//! so every axial line is a contiguous run.

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Linear array layout.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeGeometry {
    pub element_count: usize,
    pub pitch: f64,
    pub center_frequency: f64,
}

impl ProbeGeometry {
    pub fn new(element_count: usize, pitch: f64, center_frequency: f64) -> Result<Self> {
        let probe = ProbeGeometry {
            element_count,
            pitch,
            center_frequency,
        };
        probe.validate()?;
        Ok(probe)
    }

    /// 128 elements, 300 µm pitch, 5 MHz.
    pub fn linear_128() -> Self {
        ProbeGeometry {
            element_count: 128,
            pitch: 300e-6,
            center_frequency: 5e6,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.element_count < 2 {
            return Err(Error::invalid("probe", "element_count must be >= 2"));
        }
        if !(self.pitch > 0.0 && self.pitch.is_finite()) {
            return Err(Error::invalid("probe", "pitch must be > 0"));
        }
        if !(self.center_frequency > 0.0 && self.center_frequency.is_finite()) {
            return Err(Error::invalid("probe", "center_frequency must be > 0"));
        }
        Ok(())
    }

    /// Lateral position of element `i`: `(i - (n - 1) / 2) * pitch`.
    #[inline]
    pub fn element_x(&self, i: usize) -> f64 {
        (i as f64 - (self.element_count as f64 - 1.0) / 2.0) * self.pitch
    }

    pub fn element_x_positions(&self) -> Vec<f64> {
        (0..self.element_count).map(|i| self.element_x(i)).collect()
    }

    /// Total lateral extent covered by element centres.
    pub fn aperture_width(&self) -> f64 {
        (self.element_count - 1) as f64 * self.pitch
    }
}

/// A diverging-wave transmit from a virtual source behind the face.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TxEvent {
    pub vs_x: f64,
    pub vs_z: f64,
    pub aperture_center_element: usize,
    pub aperture_size: usize,
}

impl TxEvent {
    /// First and one-past-last element of the transmit aperture, if it fits
    /// on a probe with `element_count` elements.
    pub fn aperture_range(&self, element_count: usize) -> Option<std::ops::Range<usize>> {
        let half = (self.aperture_size.checked_sub(1)?) / 2;
        let start = self.aperture_center_element.checked_sub(half)?;
        let end = start + self.aperture_size;
        (end <= element_count).then_some(start..end)
    }

    pub fn validate(&self, probe: &ProbeGeometry) -> Result<()> {
        if self.aperture_size == 0 {
            return Err(Error::invalid("tx event", "aperture_size must be >= 1"));
        }
        if self.aperture_range(probe.element_count).is_none() {
            return Err(Error::invalid(
                "tx event",
                format!(
                    "aperture of {} elements centred on {} does not fit a {}-element probe",
                    self.aperture_size, self.aperture_center_element, probe.element_count
                ),
            ));
        }
        if !(self.vs_z < 0.0) || !self.vs_x.is_finite() {
            return Err(Error::invalid(
                "tx event",
                "virtual source must lie behind the face (vs_z < 0)",
            ));
        }
        Ok(())
    }
}

/// Which subset of a transmit sequence feeds a metric.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FrameSelection {
    /// One virtual source centred on the array.
    Single,
    /// Two virtual sources placed symmetrically around the centre.
    Dual,
    /// Every transmit event in the recording.
    Full,
}

impl FrameSelection {
    pub fn name(self) -> &'static str {
        match self {
            FrameSelection::Single => "single",
            FrameSelection::Dual => "dual",
            FrameSelection::Full => "full",
        }
    }

    /// Picks transmit indices out of a recorded sequence.
    ///
    /// `Single` takes the event closest to `vs_x = 0`. `Dual` takes the events
    /// closest to `∓DUAL_HALF_SEPARATION`, or both events of a two-event
    /// recording. `Full` takes everything.
    pub fn resolve(self, events: &[TxEvent]) -> Result<Vec<usize>> {
        if events.is_empty() {
            return Err(Error::invalid(
                "frame selection",
                "recording has no tx events",
            ));
        }
        let closest = |target: f64, skip: Option<usize>| {
            events
                .iter()
                .enumerate()
                .filter(|(i, _)| Some(*i) != skip)
                .min_by(|a, b| {
                    (a.1.vs_x - target)
                        .abs()
                        .total_cmp(&(b.1.vs_x - target).abs())
                })
                .map(|(i, _)| i)
        };
        match self {
            FrameSelection::Single => Ok(vec![closest(0.0, None).unwrap()]),
            FrameSelection::Dual => match events.len() {
                1 => Err(Error::invalid(
                    "frame selection",
                    "dual selection needs at least two tx events",
                )),
                2 => Ok(vec![0, 1]),
                _ => {
                    let left = closest(-DUAL_HALF_SEPARATION, None).unwrap();
                    let right = closest(DUAL_HALF_SEPARATION, Some(left)).unwrap();
                    let mut pair = vec![left, right];
                    pair.sort_unstable();
                    Ok(pair)
                }
            },
            FrameSelection::Full => Ok((0..events.len()).collect()),
        }
    }
}

impl std::fmt::Display for FrameSelection {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for FrameSelection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "single" => Ok(FrameSelection::Single),
            "dual" => Ok(FrameSelection::Dual),
            "full" => Ok(FrameSelection::Full),
            other => Err(Error::invalid(
                "frame selection",
                format!("unknown selection {other:?} (expected single, dual or full)"),
            )),
        }
    }
}

/// Virtual source depth behind the face.
pub const VIRTUAL_SOURCE_DEPTH: f64 = 9e-3;
/// Transmit aperture in elements.
pub const TX_APERTURE: usize = 31;
/// Half the lateral separation of the two dual transmits.
pub const DUAL_HALF_SEPARATION: f64 = 1.8e-3;
/// Number of transmits in the full sequence.
pub const FULL_TX_COUNT: usize = 17;

/// Builds the standard virtual-source sequence for `selection`.
///
/// Full uses 17 sources at 1.8 mm spacing centred on the array, so the two
/// dual sources are members of the full set.
pub fn standard_tx_events(probe: &ProbeGeometry, selection: FrameSelection) -> Vec<TxEvent> {
    let (count, spacing) = match selection {
        FrameSelection::Single => (1, 0.0),
        FrameSelection::Dual => (2, 2.0 * DUAL_HALF_SEPARATION),
        FrameSelection::Full => (FULL_TX_COUNT, DUAL_HALF_SEPARATION),
    };
    tx_sequence(probe, count, spacing, TX_APERTURE)
}

/// `count` virtual sources `spacing` apart, centred on the array axis.
pub fn tx_sequence(
    probe: &ProbeGeometry,
    count: usize,
    spacing: f64,
    aperture_size: usize,
) -> Vec<TxEvent> {
    let mid = (count as f64 - 1.0) / 2.0;
    (0..count)
        .map(|k| tx_event_at(probe, (k as f64 - mid) * spacing, aperture_size))
        .collect()
}

/// Virtual source at lateral `vs_x`, aperture centred on the nearest element
/// and shifted inward where it would overhang the array.
pub fn tx_event_at(probe: &ProbeGeometry, vs_x: f64, aperture_size: usize) -> TxEvent {
    let n = probe.element_count;
    let aperture_size = aperture_size.clamp(1, n);
    let half = (aperture_size - 1) / 2;
    let nearest = (vs_x / probe.pitch + (n as f64 - 1.0) / 2.0).round();
    let nearest = nearest.clamp(0.0, (n - 1) as f64) as usize;
    let center = nearest.clamp(half, n - (aperture_size - half));
    TxEvent {
        vs_x,
        vs_z: -VIRTUAL_SOURCE_DEPTH,
        aperture_center_element: center,
        aperture_size,
    }
}

/// Raw per-transmit element recordings, `samples[[tx, element, sample]]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RfChannelData {
    samples: Array3<f32>,
    sampling_frequency: f64,
    t0: f64,
    tx_events: Vec<TxEvent>,
    probe: ProbeGeometry,
}

impl RfChannelData {
    pub fn new(
        samples: Array3<f32>,
        sampling_frequency: f64,
        t0: f64,
        tx_events: Vec<TxEvent>,
        probe: ProbeGeometry,
    ) -> Result<Self> {
        probe.validate()?;
        let (n_tx, n_el, n_s) = samples.dim();
        if n_tx != tx_events.len() {
            return Err(Error::invalid(
                "rf channel data",
                format!("{n_tx} tx planes but {} tx events", tx_events.len()),
            ));
        }
        if n_el != probe.element_count {
            return Err(Error::invalid(
                "rf channel data",
                format!("{n_el} channels but probe has {}", probe.element_count),
            ));
        }
        if n_s == 0 {
            return Err(Error::invalid("rf channel data", "no samples"));
        }
        if !(sampling_frequency > 0.0 && sampling_frequency.is_finite()) {
            return Err(Error::invalid(
                "rf channel data",
                "sampling_frequency must be > 0",
            ));
        }
        if !t0.is_finite() {
            return Err(Error::invalid("rf channel data", "t0 must be finite"));
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("rf channel data", "non-finite sample"));
        }
        for tx in &tx_events {
            tx.validate(&probe)?;
        }
        Ok(RfChannelData {
            samples,
            sampling_frequency,
            t0,
            tx_events,
            probe,
        })
    }

    pub fn samples(&self) -> &Array3<f32> {
        &self.samples
    }

    pub fn sampling_frequency(&self) -> f64 {
        self.sampling_frequency
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn tx_events(&self) -> &[TxEvent] {
        &self.tx_events
    }

    pub fn probe(&self) -> &ProbeGeometry {
        &self.probe
    }

    pub fn n_tx(&self) -> usize {
        self.tx_events.len()
    }

    pub fn n_samples(&self) -> usize {
        self.samples.dim().2
    }

    /// Same recording with a different time offset.
    pub fn with_t0(mut self, t0: f64) -> Self {
        self.t0 = t0;
        self
    }

    /// Sample-wise scaling, mostly useful for linearity checks.
    pub fn scaled(&self, factor: f32) -> Self {
        let mut out = self.clone();
        out.samples.mapv_inplace(|v| v * factor);
        out
    }

    pub fn into_parts(self) -> (Array3<f32>, f64, f64, Vec<TxEvent>, ProbeGeometry) {
        (
            self.samples,
            self.sampling_frequency,
            self.t0,
            self.tx_events,
            self.probe,
        )
    }
}

/// Uniform pixel grid. Pixel centres include both extent endpoints, so the
/// spacing along x is `(x_max - x_min) / (n_x - 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImageGrid {
    pub n_x: usize,
    pub n_z: usize,
    pub x_min: f64,
    pub x_max: f64,
    pub z_min: f64,
    pub z_max: f64,
}

impl ImageGrid {
    pub fn new(n_x: usize, n_z: usize, x: (f64, f64), z: (f64, f64)) -> Result<Self> {
        let grid = ImageGrid {
            n_x,
            n_z,
            x_min: x.0,
            x_max: x.1,
            z_min: z.0,
            z_max: z.1,
        };
        grid.validate()?;
        Ok(grid)
    }

    /// 256 x 3072 pixels spanning 38 mm laterally and 8-40 mm in depth.
    pub fn standard() -> Self {
        Self::standard_with(256, 3072)
    }

    /// Standard field of view at a reduced pixel count.
    pub fn standard_with(n_x: usize, n_z: usize) -> Self {
        ImageGrid {
            n_x,
            n_z,
            x_min: -19e-3,
            x_max: 19e-3,
            z_min: 8e-3,
            z_max: 40e-3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let axis = |n: usize, lo: f64, hi: f64, name: &str| -> Result<()> {
            if n == 0 {
                return Err(Error::invalid(
                    "grid",
                    format!("{name} pixel count is zero"),
                ));
            }
            if !lo.is_finite() || !hi.is_finite() {
                return Err(Error::invalid(
                    "grid",
                    format!("{name} extent is not finite"),
                ));
            }
            // A single pixel may collapse to a point; otherwise the extent must be open.
            if (n == 1 && hi < lo) || (n > 1 && hi <= lo) {
                return Err(Error::invalid("grid", format!("{name} extent is empty")));
            }
            Ok(())
        };
        axis(self.n_x, self.x_min, self.x_max, "lateral")?;
        axis(self.n_z, self.z_min, self.z_max, "axial")
    }

    pub fn len(&self) -> usize {
        self.n_x * self.n_z
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.n_x, self.n_z)
    }

    pub fn dx(&self) -> f64 {
        spacing(self.n_x, self.x_min, self.x_max)
    }

    pub fn dz(&self) -> f64 {
        spacing(self.n_z, self.z_min, self.z_max)
    }

    #[inline]
    pub fn x_at(&self, ix: usize) -> f64 {
        self.x_min + ix as f64 * self.dx()
    }

    #[inline]
    pub fn z_at(&self, iz: usize) -> f64 {
        self.z_min + iz as f64 * self.dz()
    }

    pub fn x_coords(&self) -> Vec<f64> {
        (0..self.n_x).map(|i| self.x_at(i)).collect()
    }

    pub fn z_coords(&self) -> Vec<f64> {
        (0..self.n_z).map(|i| self.z_at(i)).collect()
    }

    /// Pixel-centre coordinates in lateral-major order: all depths of the
    /// first lateral line, then the second line, and so on.
    pub fn pixel_positions(&self) -> Vec<(f64, f64)> {
        let zs = self.z_coords();
        (0..self.n_x)
            .flat_map(|ix| {
                let x = self.x_at(ix);
                zs.iter().map(move |&z| (x, z))
            })
            .collect()
    }

    /// Sub-grid holding axial rows `rows`.
    pub fn axial_slice(&self, rows: std::ops::Range<usize>) -> ImageGrid {
        assert!(rows.start < rows.end && rows.end <= self.n_z);
        let z_min = self.z_at(rows.start);
        let z_max = self.z_at(rows.end - 1);
        ImageGrid {
            n_z: rows.len(),
            z_min,
            z_max,
            ..*self
        }
    }
}

fn spacing(n: usize, lo: f64, hi: f64) -> f64 {
    if n > 1 {
        (hi - lo) / (n - 1) as f64
    } else {
        0.0
    }
}

/// Beamformed, signed RF image.
#[derive(Debug, Clone, PartialEq)]
pub struct RfImage {
    pub grid: ImageGrid,
    pub values: Array2<f32>,
    pub beamform_sos: f64,
    pub tx_index: usize,
}

impl RfImage {
    pub fn new(
        grid: ImageGrid,
        values: Array2<f32>,
        beamform_sos: f64,
        tx_index: usize,
    ) -> Result<Self> {
        grid.validate()?;
        check_shape(&grid, &values)?;
        if !(beamform_sos > 0.0 && beamform_sos.is_finite()) {
            return Err(Error::invalid("rf image", "beamform_sos must be > 0"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("rf image", "non-finite pixel"));
        }
        Ok(RfImage {
            grid,
            values,
            beamform_sos,
            tx_index,
        })
    }

    /// Axial rows `rows` of this image, on the matching sub-grid.
    pub fn axial_slice(&self, rows: std::ops::Range<usize>) -> RfImage {
        RfImage {
            grid: self.grid.axial_slice(rows.clone()),
            values: self.values.slice(ndarray::s![.., rows]).to_owned(),
            beamform_sos: self.beamform_sos,
            tx_index: self.tx_index,
        }
    }
}

/// Log-compressed display image in dB, within `[-dynamic_range, 0]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BModeImage {
    pub grid: ImageGrid,
    pub values: Array2<f32>,
    pub dynamic_range: f64,
}

impl BModeImage {
    pub fn new(grid: ImageGrid, values: Array2<f32>, dynamic_range: f64) -> Result<Self> {
        grid.validate()?;
        check_shape(&grid, &values)?;
        if !(dynamic_range > 0.0 && dynamic_range.is_finite()) {
            return Err(Error::invalid("b-mode image", "dynamic_range must be > 0"));
        }
        let floor = -dynamic_range as f32;
        if values.iter().any(|&v| !(floor..=0.0).contains(&v)) {
            return Err(Error::invalid(
                "b-mode image",
                format!("values must lie within [{floor}, 0] dB"),
            ));
        }
        Ok(BModeImage {
            grid,
            values,
            dynamic_range,
        })
    }

    pub fn axial_slice(&self, rows: std::ops::Range<usize>) -> BModeImage {
        BModeImage {
            grid: self.grid.axial_slice(rows.clone()),
            values: self.values.slice(ndarray::s![.., rows]).to_owned(),
            dynamic_range: self.dynamic_range,
        }
    }
}

pub(crate) fn check_shape(grid: &ImageGrid, values: &Array2<f32>) -> Result<()> {
    if values.dim() != grid.shape() {
        return Err(Error::invalid(
            "image",
            format!(
                "values are {:?} but grid is {:?}",
                values.dim(),
                grid.shape()
            ),
        ));
    }
    Ok(())
}

/// Candidate SoS values `s_min, s_min + step, ..., s_max`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SosSearchSpec {
    pub s_min: f64,
    pub s_max: f64,
    pub step: f64,
}

impl SosSearchSpec {
    pub fn new(s_min: f64, s_max: f64, step: f64) -> Result<Self> {
        let spec = SosSearchSpec { s_min, s_max, step };
        spec.validate()?;
        Ok(spec)
    }

    /// 1450-1600 m/s in 0.5 m/s increments.
    pub fn standard() -> Self {
        SosSearchSpec {
            s_min: 1450.0,
            s_max: 1600.0,
            step: 0.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.s_min > 0.0 && self.s_max.is_finite() && self.s_min < self.s_max) {
            return Err(Error::invalid("search spec", "need 0 < s_min < s_max"));
        }
        if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(Error::invalid("search spec", "step must be > 0"));
        }
        if self.len() < 2 {
            return Err(Error::invalid("search spec", "fewer than two candidates"));
        }
        Ok(())
    }

    /// Number of candidates; a trailing partial step is dropped.
    pub fn len(&self) -> usize {
        let span = (self.s_max - self.s_min) / self.step;
        if !span.is_finite() || span < 0.0 {
            return 0;
        }
        (span + 1e-9).floor() as usize + 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn span(&self) -> f64 {
        self.s_max - self.s_min
    }

    pub fn candidates(&self) -> Vec<f64> {
        (0..self.len())
            .map(|i| self.s_min + i as f64 * self.step)
            .collect()
    }
}

/// Error summary for one metric (and layer depth) across repeated sweeps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricErrorSummary {
    pub metric: String,
    pub selection: FrameSelection,
    pub layer_depth_mm: f64,
    /// Every `s*` that went into the summary.
    pub estimates: Vec<f64>,
    /// Score at each `s*`.
    #[serde(with = "crate::nonfinite::vec")]
    pub optimum_scores: Vec<f64>,
    pub abs_errors: Vec<f64>,
    pub mean_abs_error: f64,
    /// Population standard deviation of the absolute errors.
    pub std_abs_error: f64,
    /// Mean error exceeds a quarter of the searched span.
    pub range_bound_suspect: bool,
    pub degenerate_count: usize,
    pub mean_eval_time_ms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub ground_truth_sos: f64,
    pub search_span: f64,
    pub flag_threshold: f64,
    pub metrics: Vec<MetricErrorSummary>,
}
