//! Declarative experiment description read from TOML.
//!
//! ```toml
//! seed = 1
//!
//! [simulate]
//! true_sos = 1500.0
//!
//! [acquisition]
//! sequence = "full"
//!
//! [beamform]
//! n_x = 128
//! n_z = 1024
//!
//! [search]
//! s_min = 1450.0
//! s_max = 1600.0
//! step = 0.5
//!
//! [sweep]
//! metrics = ["mse", "corr", "mi"]
//! inputs = "dual"
//!
//! [output]
//! dir = "out"
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sosest::estimator::PatchSpec;
use sosest::metrics::Arity;
use sosest::model::{standard_tx_events, DUAL_HALF_SEPARATION, TX_APERTURE};
use sosest::{
    tx_sequence, BeamformConfig, FrameSelection, ImageGrid, Interpolation, MetricId, MetricParams,
    ProbeGeometry, SimConfig, SosSearchSpec, SweepJob, TxEvent,
};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Overrides `simulate.seed` when set.
    #[serde(default)]
    pub seed: Option<u64>,
    /// Existing channel-data container; exclusive with `simulate`.
    #[serde(default)]
    pub input: Option<PathBuf>,
    #[serde(default)]
    pub simulate: Option<SimConfig>,
    #[serde(default = "ProbeGeometry::linear_128")]
    pub probe: ProbeGeometry,
    #[serde(default)]
    pub acquisition: Acquisition,
    #[serde(default)]
    pub beamform: GridConfig,
    #[serde(default = "SosSearchSpec::standard")]
    pub search: SosSearchSpec,
    #[serde(default)]
    pub sweep: SweepConfig,
    #[serde(default)]
    pub params: MetricParams,
    #[serde(default)]
    pub output: OutputConfig,
}

/// Transmit sequence used when simulating.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Acquisition {
    pub sequence: FrameSelection,
    /// Number of virtual sources; defaults to 1, 2 or 17 by sequence.
    pub count: Option<usize>,
    /// Lateral spacing between neighbouring virtual sources, mm.
    pub vs_spacing_mm: Option<f64>,
    /// Transmit aperture in elements.
    pub aperture: usize,
}

impl Default for Acquisition {
    fn default() -> Self {
        Acquisition {
            sequence: FrameSelection::Full,
            count: None,
            vs_spacing_mm: None,
            aperture: TX_APERTURE,
        }
    }
}

impl Acquisition {
    pub fn tx_events(&self, probe: &ProbeGeometry) -> Vec<TxEvent> {
        if self.count.is_none() && self.vs_spacing_mm.is_none() && self.aperture == TX_APERTURE {
            return standard_tx_events(probe, self.sequence);
        }
        let (count, spacing) = match self.sequence {
            FrameSelection::Single => (1, 0.0),
            FrameSelection::Dual => (2, 2.0 * DUAL_HALF_SEPARATION),
            FrameSelection::Full => (sosest::model::FULL_TX_COUNT, DUAL_HALF_SEPARATION),
        };
        tx_sequence(
            probe,
            self.count.unwrap_or(count),
            self.vs_spacing_mm.map_or(spacing, |mm| mm * 1e-3),
            self.aperture,
        )
    }

    fn validate(&self, probe: &ProbeGeometry) -> CliResult<()> {
        if self.count == Some(0) {
            return Err(CliError::Config("acquisition.count must be >= 1".into()));
        }
        if matches!(self.vs_spacing_mm, Some(s) if !(s >= 0.0 && s.is_finite())) {
            return Err(CliError::Config(
                "acquisition.vs_spacing_mm must be >= 0".into(),
            ));
        }
        if self.aperture == 0 || self.aperture > probe.element_count {
            return Err(CliError::Config(format!(
                "acquisition.aperture must lie in 1..={}",
                probe.element_count
            )));
        }
        for tx in self.tx_events(probe) {
            tx.validate(probe)?;
        }
        Ok(())
    }
}

/// Beamforming grid in millimetres.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub n_x: usize,
    pub n_z: usize,
    pub x_mm: (f64, f64),
    pub z_mm: (f64, f64),
    pub interpolation: Interpolation,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            n_x: 256,
            n_z: 3072,
            x_mm: (-19.0, 19.0),
            z_mm: (8.0, 40.0),
            interpolation: Interpolation::Linear,
        }
    }
}

impl GridConfig {
    pub fn grid(&self) -> CliResult<ImageGrid> {
        Ok(ImageGrid::new(
            self.n_x,
            self.n_z,
            (self.x_mm.0 * 1e-3, self.x_mm.1 * 1e-3),
            (self.z_mm.0 * 1e-3, self.z_mm.1 * 1e-3),
        )?)
    }

    pub fn beamform(&self) -> CliResult<BeamformConfig> {
        Ok(BeamformConfig {
            grid: self.grid()?,
            interpolation: self.interpolation,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub metrics: Vec<MetricId>,
    /// Frame selection for comparison and quality metrics.
    pub inputs: FrameSelection,
    /// Frame selection for the multi-frame metric.
    pub cv_inputs: FrameSelection,
    /// Layered analysis in addition to the global sweep.
    pub patch: Option<PatchSpec>,
    /// Thread count; `SOSEST_WORKERS` or all cores when unset.
    pub workers: Option<usize>,
    /// Degenerate curves fail the run.
    pub strict: bool,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            metrics: vec![MetricId::NegMse, MetricId::Correlation, MetricId::Mi],
            inputs: FrameSelection::Dual,
            cv_inputs: FrameSelection::Full,
            patch: None,
            workers: None,
            strict: false,
        }
    }
}

impl SweepConfig {
    pub fn selection_for(&self, metric: MetricId) -> FrameSelection {
        if metric.arity() == Arity::MultiFrame {
            self.cv_inputs
        } else {
            self.inputs
        }
    }

    /// One global job per metric, then one layered job per metric if a patch is set.
    pub fn jobs(&self) -> Vec<SweepJob> {
        let mut jobs: Vec<SweepJob> = self
            .metrics
            .iter()
            .map(|&m| SweepJob::global(m, self.selection_for(m)))
            .collect();
        if let Some(patch) = &self.patch {
            jobs.extend(
                self.metrics
                    .iter()
                    .map(|&m| SweepJob::layered(m, self.selection_for(m), patch.clone())),
            );
        }
        jobs
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: PathBuf,
    /// Also write B-mode PGM images at the best candidate of each global sweep.
    pub pgm: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            dir: PathBuf::from("out"),
            pgm: false,
        }
    }
}

/// Frames in a `selection` drawn from `count` recorded events, or `None` if it cannot resolve.
pub fn selected_frames(selection: FrameSelection, count: usize) -> Option<usize> {
    match (selection, count) {
        (_, 0) => None,
        (FrameSelection::Single, _) => Some(1),
        (FrameSelection::Dual, 1) => None,
        (FrameSelection::Dual, _) => Some(2),
        (FrameSelection::Full, n) => Some(n),
    }
}

/// Rejects a metric whose selection cannot feed it, naming both.
pub fn check_arity(metric: MetricId, selection: FrameSelection, recorded: usize) -> CliResult<()> {
    let frames = selected_frames(selection, recorded).ok_or_else(|| {
        CliError::Arity(format!(
            "metric {metric} with --inputs {selection}: recording has only {recorded} tx event(s)"
        ))
    })?;
    metric.check_frames(frames).map_err(|e| {
        CliError::Arity(format!(
            "metric {metric} with --inputs {selection} ({frames} frame(s)): {e}"
        ))
    })
}

impl RunConfig {
    /// Parses and validates a config file. A relative `input` is taken
    /// relative to the file's directory.
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut cfg = Self::parse(&text)?;
        if let (Some(input), Some(dir)) = (&cfg.input, path.parent()) {
            if input.is_relative() {
                cfg.input = Some(dir.join(input));
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn parse(text: &str) -> CliResult<Self> {
        toml::from_str(text).map_err(|e| CliError::Config(e.message().to_string()))
    }

    /// The simulator config with the top-level seed applied.
    pub fn sim_config(&self) -> Option<SimConfig> {
        self.simulate.clone().map(|mut s| {
            if let Some(seed) = self.seed {
                s.seed = seed;
            }
            s
        })
    }

    /// Every check that can run without touching channel data.
    pub fn validate(&self) -> CliResult<()> {
        match (&self.input, &self.simulate) {
            (Some(_), Some(_)) => {
                return Err(CliError::Config(
                    "set either `input` or `[simulate]`, not both".into(),
                ))
            }
            (None, None) => {
                return Err(CliError::Config(
                    "one of `input` or `[simulate]` is required".into(),
                ))
            }
            (Some(p), None) if !p.is_file() => {
                return Err(CliError::Config(format!(
                    "input {} does not exist",
                    p.display()
                )))
            }
            _ => {}
        }
        if let Some(sim) = self.sim_config() {
            sim.validate()?;
        }
        self.probe.validate()?;
        self.acquisition.validate(&self.probe)?;
        let grid = self.beamform.grid()?;
        self.search.validate()?;
        self.params.validate()?;
        if self.sweep.metrics.is_empty() {
            return Err(CliError::Config("sweep.metrics is empty".into()));
        }
        if self.sweep.workers == Some(0) {
            return Err(CliError::Config("sweep.workers must be >= 1".into()));
        }
        if let Some(patch) = &self.sweep.patch {
            patch.validate(&grid)?;
        }
        if self.simulate.is_some() {
            let recorded = self.acquisition.tx_events(&self.probe).len();
            for &m in &self.sweep.metrics {
                check_arity(m, self.sweep.selection_for(m), recorded)?;
            }
        }
        if self.output.dir.as_os_str().is_empty() {
            return Err(CliError::Config("output.dir is empty".into()));
        }
        Ok(())
    }
}
