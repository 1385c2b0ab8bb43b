//! Grid-search SoS estimation: beamform every candidate, score it, pick the
//! argmax, and summarise errors across repeated sweeps.

use std::ops::Range;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::beamform::{beamform_frames, BeamformConfig};
use crate::error::{Error, Result};
use crate::imaging::bmode;
use crate::metrics::{score, Arity, MetricId, MetricInput, MetricParams};
use crate::model::{
    BModeImage, EstimateReport, FrameSelection, ImageGrid, MetricErrorSummary, RfChannelData,
    RfImage, SosSearchSpec,
};

/// Tolerance used when matching millimetre depths against the grid.
const MM_EPS: f64 = 1e-6;

/// Fraction of the searched span above which a mean error is flagged.
pub const FLAG_FRACTION: f64 = 0.25;

/// Equi-depth layers of the imaged field, each shifted downward by
/// `0, 1, .., jitter_count - 1` times `jitter_step_mm`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatchSpec {
    pub layer_depths_mm: Vec<f64>,
    pub jitter_step_mm: f64,
    pub jitter_count: usize,
}

impl Default for PatchSpec {
    fn default() -> Self {
        PatchSpec {
            layer_depths_mm: vec![16.0, 8.0, 4.0, 2.0, 1.0],
            jitter_step_mm: 0.4,
            jitter_count: 4,
        }
    }
}

/// One axial band of the image.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub depth_mm: f64,
    pub index: usize,
    pub jitter_index: usize,
    pub rows: Range<usize>,
}

fn field_depth_mm(grid: &ImageGrid) -> f64 {
    (grid.z_max - grid.z_min) * 1e3
}

impl PatchSpec {
    /// The whole field as a single layer with no jitter.
    pub fn full_field(grid: &ImageGrid) -> Self {
        PatchSpec {
            layer_depths_mm: vec![field_depth_mm(grid)],
            jitter_step_mm: 0.4,
            jitter_count: 1,
        }
    }

    pub fn validate(&self, grid: &ImageGrid) -> Result<()> {
        let field = field_depth_mm(grid);
        if self.layer_depths_mm.is_empty() {
            return Err(Error::invalid("patch spec", "no layer depths"));
        }
        for &d in &self.layer_depths_mm {
            let count = field / d;
            if !(d > 0.0 && d <= field + MM_EPS) || (count - count.round()).abs() > MM_EPS {
                return Err(Error::invalid(
                    "patch spec",
                    format!("layer depth {d} mm does not divide the {field} mm field"),
                ));
            }
        }
        if !(self.jitter_step_mm > 0.0 && self.jitter_step_mm.is_finite()) {
            return Err(Error::invalid("patch spec", "jitter step must be > 0"));
        }
        if self.jitter_count == 0 {
            return Err(Error::invalid("patch spec", "jitter count must be >= 1"));
        }
        Ok(())
    }

    /// Every (depth, layer, jitter) band with its pixel rows. A jittered layer
    /// that would leave the field is moved up to end at the bottom edge.
    pub fn layers(&self, grid: &ImageGrid) -> Result<Vec<Layer>> {
        self.validate(grid)?;
        let field = field_depth_mm(grid);
        let dz_mm = grid.dz() * 1e3;
        let row_at = |mm: f64| -> usize {
            if mm >= field - MM_EPS {
                grid.n_z
            } else if dz_mm > 0.0 {
                ((mm / dz_mm - 1e-9).ceil().max(0.0) as usize).min(grid.n_z)
            } else {
                0
            }
        };
        let mut out = Vec::new();
        for &d in &self.layer_depths_mm {
            let count = (field / d).round() as usize;
            for index in 0..count {
                for jitter_index in 0..self.jitter_count {
                    let start = (index as f64 * d + jitter_index as f64 * self.jitter_step_mm)
                        .min(field - d);
                    out.push(Layer {
                        depth_mm: d,
                        index,
                        jitter_index,
                        rows: row_at(start)..row_at(start + d),
                    });
                }
            }
        }
        Ok(out)
    }
}

/// Scores over all candidates for one metric, selection and layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub metric: MetricId,
    pub selection: FrameSelection,
    pub layer_depth_mm: f64,
    pub layer_index: usize,
    pub jitter_index: usize,
    pub candidates: Vec<f64>,
    /// Larger is better; `-inf` where the metric is undefined.
    #[serde(with = "crate::nonfinite::vec")]
    pub scores: Vec<f64>,
    pub s_star: f64,
    #[serde(with = "crate::nonfinite")]
    pub score_at_opt: f64,
    /// Candidates sharing the optimal score.
    pub tie_count: usize,
    /// Candidates where the metric was undefined.
    pub undefined_count: usize,
}

impl SweepResult {
    /// Builds a result by first-maximum selection.
    pub fn from_scores(
        metric: MetricId,
        selection: FrameSelection,
        layer: &Layer,
        candidates: Vec<f64>,
        scores: Vec<f64>,
        undefined_count: usize,
    ) -> Self {
        let best = argmax(&scores);
        let score_at_opt = scores[best];
        let tie_count = scores.iter().filter(|&&s| s == score_at_opt).count();
        SweepResult {
            metric,
            selection,
            layer_depth_mm: layer.depth_mm,
            layer_index: layer.index,
            jitter_index: layer.jitter_index,
            s_star: candidates[best],
            candidates,
            scores,
            score_at_opt,
            tie_count,
            undefined_count,
        }
    }

    /// Every candidate scored the same.
    pub fn degenerate(&self) -> bool {
        self.tie_count == self.scores.len()
    }
}

/// Index of the first maximum; NaN never wins.
pub fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] || (scores[best].is_nan() && !s.is_nan()) {
            best = i;
        }
    }
    best
}

/// A sweep with the mean wall time of one metric evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct TimedResult {
    pub result: SweepResult,
    pub mean_eval_ms: f64,
}

/// One metric over one frame selection, optionally split into layers.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepJob {
    pub metric: MetricId,
    pub selection: FrameSelection,
    pub patch: Option<PatchSpec>,
}

impl SweepJob {
    pub fn global(metric: MetricId, selection: FrameSelection) -> Self {
        SweepJob {
            metric,
            selection,
            patch: None,
        }
    }

    pub fn layered(metric: MetricId, selection: FrameSelection, patch: PatchSpec) -> Self {
        SweepJob {
            metric,
            selection,
            patch: Some(patch),
        }
    }
}

/// Beamforming and metric settings shared by every job of a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepSettings {
    pub beamform: BeamformConfig,
    pub params: MetricParams,
    /// Thread count; `None` uses the global pool.
    pub workers: Option<usize>,
}

impl SweepSettings {
    pub fn new(beamform: BeamformConfig, params: MetricParams) -> Self {
        SweepSettings {
            beamform,
            params,
            workers: None,
        }
    }
}

struct Plan {
    metric: MetricId,
    selection: FrameSelection,
    /// Positions within the beamformed union of tx indices.
    frames: Vec<usize>,
    layers: Vec<Layer>,
}

/// Score, evaluation time in ms, and whether the score was undefined.
type Cell = (f64, f64, bool);

fn is_undefined(e: &Error) -> bool {
    matches!(e, Error::ZeroVariance | Error::NonPositivePeak(_))
}

/// Runs several jobs over one recording. Each candidate is beamformed once for
/// the union of frames all jobs need; every job and layer is then scored from
/// those images. Results come back job by job, layers in [`PatchSpec::layers`]
/// order.
pub fn run_sweep(
    rf: &RfChannelData,
    jobs: &[SweepJob],
    spec: &SosSearchSpec,
    settings: &SweepSettings,
) -> Result<Vec<TimedResult>> {
    spec.validate()?;
    settings.params.validate()?;
    let grid = settings.beamform.grid;
    grid.validate()?;

    let mut union: Vec<usize> = Vec::new();
    let mut resolved = Vec::with_capacity(jobs.len());
    for job in jobs {
        let tx = job.selection.resolve(rf.tx_events())?;
        job.metric.check_frames(tx.len())?;
        union.extend(&tx);
        resolved.push(tx);
    }
    union.sort_unstable();
    union.dedup();

    let mut plans = Vec::with_capacity(jobs.len());
    for (job, tx) in jobs.iter().zip(resolved) {
        let patch = job
            .patch
            .clone()
            .unwrap_or_else(|| PatchSpec::full_field(&grid));
        let layers = patch.layers(&grid)?;
        let min = job.metric.min_axial_rows();
        if let Some(l) = layers.iter().find(|l| l.rows.len() < min) {
            return Err(Error::PatchTooSmall {
                metric: job.metric,
                rows: l.rows.len(),
                min,
            });
        }
        plans.push(Plan {
            metric: job.metric,
            selection: job.selection,
            frames: tx
                .iter()
                .map(|t| union.binary_search(t).expect("in union"))
                .collect(),
            layers,
        });
    }

    let candidates = spec.candidates();
    let run = || -> Result<Vec<Vec<Vec<Cell>>>> {
        candidates
            .par_iter()
            .map(|&sos| evaluate_candidate(rf, &union, &plans, sos, settings))
            .collect()
    };
    let per_candidate = match settings.workers {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map_err(|e| Error::invalid("worker pool", e.to_string()))?
            .install(run)?,
        None => run()?,
    };

    let mut out = Vec::new();
    for (j, plan) in plans.iter().enumerate() {
        for (l, layer) in plan.layers.iter().enumerate() {
            let cells: Vec<Cell> = per_candidate.iter().map(|c| c[j][l]).collect();
            let scores: Vec<f64> = cells.iter().map(|c| c.0).collect();
            let undefined = cells.iter().filter(|c| c.2).count();
            let mean_eval_ms = cells.iter().map(|c| c.1).sum::<f64>() / cells.len() as f64;
            out.push(TimedResult {
                result: SweepResult::from_scores(
                    plan.metric,
                    plan.selection,
                    layer,
                    candidates.clone(),
                    scores,
                    undefined,
                ),
                mean_eval_ms,
            });
        }
    }
    Ok(out)
}

/// Scores of every (job, layer) at one candidate: (score, eval ms, undefined).
fn evaluate_candidate(
    rf: &RfChannelData,
    union: &[usize],
    plans: &[Plan],
    sos: f64,
    settings: &SweepSettings,
) -> Result<Vec<Vec<Cell>>> {
    let images = beamform_frames(rf, union, sos, &settings.beamform)?;
    let params = &settings.params;
    // compounded B-mode per frame set, shared by quality metrics
    let mut bmodes: Vec<(Vec<usize>, BModeImage)> = Vec::new();
    let mut out = Vec::with_capacity(plans.len());
    for plan in plans {
        let frames: Vec<&RfImage> = plan.frames.iter().map(|&f| &images[f]).collect();
        let full_bmode = if plan.metric.arity() == Arity::SingleImage {
            let pos = match bmodes.iter().position(|(k, _)| *k == plan.frames) {
                Some(p) => p,
                None => {
                    let owned: Vec<RfImage> = frames.iter().map(|&f| f.clone()).collect();
                    bmodes.push((plan.frames.clone(), bmode(&owned, params.dynamic_range)?));
                    bmodes.len() - 1
                }
            };
            Some(&bmodes[pos].1)
        } else {
            None
        };
        let mut row = Vec::with_capacity(plan.layers.len());
        for layer in &plan.layers {
            let full = layer.rows.start == 0 && layer.rows.end == settings.beamform.grid.n_z;
            let (value, ms) = match full_bmode {
                Some(b) => {
                    let sliced;
                    let img = if full {
                        b
                    } else {
                        sliced = b.axial_slice(layer.rows.clone());
                        &sliced
                    };
                    timed(|| score(plan.metric, MetricInput::BMode(img), params))
                }
                None => {
                    let sliced: Vec<RfImage> = frames
                        .iter()
                        .map(|f| {
                            if full {
                                (*f).clone()
                            } else {
                                f.axial_slice(layer.rows.clone())
                            }
                        })
                        .collect();
                    timed(|| score(plan.metric, MetricInput::Frames(&sliced), params))
                }
            };
            row.push(match value {
                Ok(v) if v.is_nan() => (f64::NEG_INFINITY, ms, true),
                Ok(v) => (v, ms, false),
                Err(e) if is_undefined(&e) => (f64::NEG_INFINITY, ms, true),
                Err(e) => return Err(e),
            });
        }
        out.push(row);
    }
    Ok(out)
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, f64) {
    let start = Instant::now();
    let v = f();
    (v, start.elapsed().as_secs_f64() * 1e3)
}

/// Whole-field sweep of one metric.
pub fn estimate_global(
    rf: &RfChannelData,
    metric: MetricId,
    spec: &SosSearchSpec,
    selection: FrameSelection,
    settings: &SweepSettings,
) -> Result<SweepResult> {
    let mut out = run_sweep(rf, &[SweepJob::global(metric, selection)], spec, settings)?;
    Ok(out.pop().expect("one layer").result)
}

/// Per-layer sweeps of one metric, beamforming each candidate once.
pub fn estimate_layered(
    rf: &RfChannelData,
    metric: MetricId,
    spec: &SosSearchSpec,
    selection: FrameSelection,
    patch: &PatchSpec,
    settings: &SweepSettings,
) -> Result<Vec<SweepResult>> {
    let job = SweepJob::layered(metric, selection, patch.clone());
    Ok(run_sweep(rf, &[job], spec, settings)?
        .into_iter()
        .map(|t| t.result)
        .collect())
}

/// `[gt - half_width, gt + half_width]` at the original step.
pub fn restrict_range(spec: &SosSearchSpec, gt: f64, half_width: f64) -> Result<SosSearchSpec> {
    if !(half_width > 0.0 && half_width.is_finite()) {
        return Err(Error::invalid("restricted range", "half width must be > 0"));
    }
    SosSearchSpec::new(gt - half_width, gt + half_width, spec.step)
}

/// The parts of a sweep that error statistics need.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepOutcome {
    pub metric: MetricId,
    pub selection: FrameSelection,
    pub layer_depth_mm: f64,
    pub layer_index: usize,
    pub jitter_index: usize,
    pub s_star: f64,
    #[serde(with = "crate::nonfinite")]
    pub score_at_opt: f64,
    pub tie_count: usize,
    pub candidate_count: usize,
    pub undefined_count: usize,
    pub degenerate: bool,
    pub search_span: f64,
    pub mean_eval_ms: Option<f64>,
}

impl SweepResult {
    pub fn outcome(&self) -> SweepOutcome {
        let (lo, hi) = self
            .candidates
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &c| {
                (a.min(c), b.max(c))
            });
        SweepOutcome {
            metric: self.metric,
            selection: self.selection,
            layer_depth_mm: self.layer_depth_mm,
            layer_index: self.layer_index,
            jitter_index: self.jitter_index,
            s_star: self.s_star,
            score_at_opt: self.score_at_opt,
            tie_count: self.tie_count,
            candidate_count: self.candidates.len(),
            undefined_count: self.undefined_count,
            degenerate: self.degenerate(),
            search_span: hi - lo,
            mean_eval_ms: None,
        }
    }
}

impl TimedResult {
    pub fn outcome(&self) -> SweepOutcome {
        SweepOutcome {
            mean_eval_ms: Some(self.mean_eval_ms),
            ..self.result.outcome()
        }
    }
}

/// Mean absolute error and population standard deviation per metric,
/// selection and layer depth, in order of first appearance. A group is
/// flagged when its mean error exceeds a quarter of the widest searched span
/// or any of its sweeps was degenerate.
pub fn aggregate_errors(results: &[SweepResult], gt: f64) -> Result<EstimateReport> {
    let outcomes: Vec<SweepOutcome> = results.iter().map(SweepResult::outcome).collect();
    aggregate_outcomes(&outcomes, gt)
}

/// [`aggregate_errors`] on stored outcomes, also averaging evaluation times.
pub fn aggregate_outcomes(outcomes: &[SweepOutcome], gt: f64) -> Result<EstimateReport> {
    if !(gt > 0.0 && gt.is_finite()) {
        return Err(Error::invalid(
            "ground truth",
            format!("{gt} m/s is not > 0"),
        ));
    }
    struct Group {
        key: (MetricId, FrameSelection, u64),
        summary: MetricErrorSummary,
        times: Vec<f64>,
    }
    let mut groups: Vec<Group> = Vec::new();
    let mut span: Option<f64> = None;
    for r in outcomes {
        span = Some(span.map_or(r.search_span, |s: f64| s.max(r.search_span)));
        let key = (r.metric, r.selection, r.layer_depth_mm.to_bits());
        let g = match groups.iter().position(|g| g.key == key) {
            Some(i) => &mut groups[i],
            None => {
                groups.push(Group {
                    key,
                    summary: MetricErrorSummary {
                        metric: r.metric.key().to_string(),
                        selection: r.selection,
                        layer_depth_mm: r.layer_depth_mm,
                        estimates: Vec::new(),
                        optimum_scores: Vec::new(),
                        abs_errors: Vec::new(),
                        mean_abs_error: 0.0,
                        std_abs_error: 0.0,
                        range_bound_suspect: false,
                        degenerate_count: 0,
                        mean_eval_time_ms: None,
                    },
                    times: Vec::new(),
                });
                groups.last_mut().expect("just pushed")
            }
        };
        g.summary.estimates.push(r.s_star);
        g.summary.optimum_scores.push(r.score_at_opt);
        g.summary.abs_errors.push((r.s_star - gt).abs());
        if r.degenerate {
            g.summary.degenerate_count += 1;
        }
        if let Some(t) = r.mean_eval_ms {
            g.times.push(t);
        }
    }
    let span = span.ok_or_else(|| Error::invalid("error aggregation", "no sweep results"))?;
    let threshold = FLAG_FRACTION * span;
    let metrics = groups
        .into_iter()
        .map(|g| {
            let mut s = g.summary;
            let n = s.abs_errors.len() as f64;
            s.mean_abs_error = s.abs_errors.iter().sum::<f64>() / n;
            s.std_abs_error = (s
                .abs_errors
                .iter()
                .map(|e| (e - s.mean_abs_error).powi(2))
                .sum::<f64>()
                / n)
                .sqrt();
            s.range_bound_suspect = s.mean_abs_error > threshold || s.degenerate_count > 0;
            if !g.times.is_empty() {
                s.mean_eval_time_ms = Some(g.times.iter().sum::<f64>() / g.times.len() as f64);
            }
            s
        })
        .collect();
    Ok(EstimateReport {
        ground_truth_sos: gt,
        search_span: span,
        flag_threshold: threshold,
        metrics,
    })
}

/// Maps scores affinely onto `[0, 1]`. Infinite scores are kept as end
/// points: `+inf` maps to 1 and `-inf` to 0, and the finite scores are then
/// squeezed into `[0.25, 0.75]` on the affected side so that order is kept.
/// A lone finite value takes the top of its range.
pub fn normalize_scores(result: &SweepResult) -> Result<Vec<f64>> {
    let scores = &result.scores;
    let finite = scores.iter().copied().filter(|s| s.is_finite());
    let (lo, hi) = finite.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), s| {
        (a.min(s), b.max(s))
    });
    let has_pos = scores.contains(&f64::INFINITY);
    let has_neg = scores.contains(&f64::NEG_INFINITY);
    let mut distinct = scores.clone();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < 2 || scores.iter().any(|s| s.is_nan()) {
        return Err(Error::DegenerateCurve);
    }
    let bottom = if has_neg { 0.25 } else { 0.0 };
    let top = if has_pos { 0.75 } else { 1.0 };
    Ok(scores
        .iter()
        .map(|&s| {
            if s == f64::INFINITY {
                1.0
            } else if s == f64::NEG_INFINITY {
                0.0
            } else if hi > lo {
                bottom + (top - bottom) * (s - lo) / (hi - lo)
            } else {
                top
            }
        })
        .collect())
}
