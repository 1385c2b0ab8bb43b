//! Subcommands. Each writes its human-readable output to `out`.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sosest::{
    aggregate_outcomes, beamform_frames, bmode, compound, make_scatterer_field, run_sweep,
    simulate_channel_data, BeamformConfig, EstimateReport, FrameSelection, ImageGrid,
    Interpolation, MetricId, MetricParams, PatchSpec, ProbeGeometry, RfChannelData, SimConfig,
    SosSearchSpec, SweepJob, SweepOutcome, SweepSettings, TimedResult,
};

use crate::config::{check_arity, Acquisition, RunConfig};
use crate::container::{self, read_json, sidecar_path, write_json};
use crate::error::{CliError, CliResult};
use crate::pgm;

pub const TOOL: &str = "sosest";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// CSV column order of sweep score dumps.
pub const CSV_HEADER: [&str; 6] = [
    "metric",
    "layer_depth_mm",
    "layer_index",
    "jitter_index",
    "s_candidate",
    "score",
];

#[derive(Debug, Parser)]
#[command(
    name = "sosest",
    version,
    about = "Global speed-of-sound estimation from ultrasound image metrics"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate channel data of a random scatterer phantom.
    Simulate(SimulateArgs),
    /// Beamform channel data at one SoS.
    Beamform(BeamformArgs),
    /// Sweep candidate SoS values and score each with image metrics.
    Sweep(SweepArgs),
    /// Summarise sweep results against a ground truth.
    Report(ReportArgs),
    /// Run a full experiment described by a TOML config.
    Run(RunArgs),
}

pub fn run(cli: Cli, out: &mut dyn Write) -> CliResult<()> {
    match cli.command {
        Command::Simulate(a) => simulate(&a, out),
        Command::Beamform(a) => beamform(&a, out),
        Command::Sweep(a) => sweep(&a, out),
        Command::Report(a) => report(&a, out),
        Command::Run(a) => run_config(&a, out),
    }
}

fn say(out: &mut dyn Write, text: std::fmt::Arguments<'_>) -> CliResult<()> {
    out.write_fmt(text)
        .and_then(|_| out.write_all(b"\n"))
        .map_err(|e| CliError::io("<stdout>", e))
}

/// Parses `NXxNZ`, e.g. `128x1024`.
pub fn parse_grid_size(s: &str) -> Result<(usize, usize), String> {
    let (a, b) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected NXxNZ, got {s:?}"))?;
    let n_x = a
        .trim()
        .parse()
        .map_err(|_| format!("bad lateral size {a:?}"))?;
    let n_z = b
        .trim()
        .parse()
        .map_err(|_| format!("bad axial size {b:?}"))?;
    Ok((n_x, n_z))
}

/// Metadata written next to simulated channel data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimSidecar {
    pub tool: String,
    pub version: String,
    pub true_sos: f64,
    pub scatterer_count: usize,
    pub seed: u64,
    pub sequence: FrameSelection,
    pub tx_count: usize,
    pub probe: ProbeGeometry,
    pub sim: SimConfig,
}

/// Ground truth recorded in the sidecar of `rf_path`, if any.
pub fn sidecar_true_sos(rf_path: &Path) -> Option<f64> {
    let meta: serde_json::Value = read_json(&sidecar_path(rf_path)).ok()?;
    meta.get("true_sos")?.as_f64()
}

// ---------------------------------------------------------------- simulate

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Experiment config; its `[simulate]`, `probe` and `[acquisition]` sections are used.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// True speed of sound, m/s.
    #[arg(long)]
    pub sos: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Fraction of lattice sites holding a scatterer.
    #[arg(long)]
    pub density: Option<f64>,
    /// Additive noise std relative to the noiseless peak.
    #[arg(long)]
    pub noise: Option<f64>,
    /// Transmit sequence: single, dual or full.
    #[arg(long)]
    pub sequence: Option<FrameSelection>,
    /// Output container path.
    #[arg(long, short)]
    pub out: PathBuf,
}

struct SimSetup {
    sim: SimConfig,
    probe: ProbeGeometry,
    acquisition: Acquisition,
}

fn simulate_to(setup: &SimSetup, path: &Path, out: &mut dyn Write) -> CliResult<RfChannelData> {
    setup.sim.validate()?;
    let field = make_scatterer_field(&setup.sim)?;
    let tx = setup.acquisition.tx_events(&setup.probe);
    let rf = simulate_channel_data(&field, &setup.probe, &tx, &setup.sim)?;
    container::write_rf(path, &rf)?;
    let meta = SimSidecar {
        tool: TOOL.into(),
        version: VERSION.into(),
        true_sos: setup.sim.true_sos,
        scatterer_count: field.len(),
        seed: setup.sim.seed,
        sequence: setup.acquisition.sequence,
        tx_count: tx.len(),
        probe: setup.probe,
        sim: setup.sim.clone(),
    };
    write_json(&sidecar_path(path), &meta)?;
    say(out, format_args!("scatterers: {}", field.len()))?;
    say(out, format_args!("true_sos: {} m/s", setup.sim.true_sos))?;
    say(
        out,
        format_args!("wrote {} ({} tx events)", path.display(), tx.len()),
    )?;
    Ok(rf)
}

pub fn simulate(args: &SimulateArgs, out: &mut dyn Write) -> CliResult<()> {
    let mut setup = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
            let cfg = RunConfig::parse(&text)?;
            SimSetup {
                sim: cfg.sim_config().ok_or_else(|| {
                    CliError::Config(format!("{} has no [simulate] section", path.display()))
                })?,
                probe: cfg.probe,
                acquisition: cfg.acquisition,
            }
        }
        None => SimSetup {
            sim: SimConfig::default(),
            probe: ProbeGeometry::linear_128(),
            acquisition: Acquisition::default(),
        },
    };
    if let Some(v) = args.sos {
        setup.sim.true_sos = v;
    }
    if let Some(v) = args.seed {
        setup.sim.seed = v;
    }
    if let Some(v) = args.density {
        setup.sim.scatterer_density = v;
    }
    if let Some(v) = args.noise {
        setup.sim.noise_std = v;
    }
    if let Some(v) = args.sequence {
        setup.acquisition.sequence = v;
    }
    setup.probe.validate()?;
    for tx in setup.acquisition.tx_events(&setup.probe) {
        tx.validate(&setup.probe)?;
    }
    simulate_to(&setup, &args.out, out).map(|_| ())
}

// ---------------------------------------------------------------- beamform

#[derive(Debug, Args)]
pub struct BeamformArgs {
    /// Channel-data container.
    pub rf: PathBuf,
    /// Beamforming speed of sound, m/s.
    #[arg(long)]
    pub sos: f64,
    /// Frames to beamform and compound.
    #[arg(long, default_value = "single", conflicts_with = "tx")]
    pub inputs: FrameSelection,
    /// Explicit transmit indices instead of `--inputs`.
    #[arg(long, value_delimiter = ',')]
    pub tx: Vec<usize>,
    /// Pixel counts as NXxNZ over the standard field of view.
    #[arg(long, default_value = "256x3072", value_parser = parse_grid_size)]
    pub grid: (usize, usize),
    #[arg(long, default_value = "linear")]
    pub interp: Interpolation,
    /// Compounded RF image container.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
    /// B-mode image container.
    #[arg(long)]
    pub bmode: Option<PathBuf>,
    /// B-mode image as 8-bit PGM.
    #[arg(long)]
    pub pgm: Option<PathBuf>,
    /// Log-compression range, dB.
    #[arg(long, default_value_t = 60.0)]
    pub dynamic_range: f64,
}

pub fn beamform(args: &BeamformArgs, out: &mut dyn Write) -> CliResult<()> {
    if args.out.is_none() && args.bmode.is_none() && args.pgm.is_none() {
        return Err(CliError::Config(
            "nothing to write: pass --out, --bmode or --pgm".into(),
        ));
    }
    if !(args.dynamic_range > 0.0 && args.dynamic_range.is_finite()) {
        return Err(CliError::Config("--dynamic-range must be > 0".into()));
    }
    let config = BeamformConfig {
        grid: ImageGrid::standard_with(args.grid.0, args.grid.1),
        interpolation: args.interp,
    };
    config.grid.validate()?;
    let rf = container::read_rf(&args.rf)?;
    let tx = if args.tx.is_empty() {
        args.inputs.resolve(rf.tx_events())?
    } else {
        args.tx.clone()
    };
    let frames = beamform_frames(&rf, &tx, args.sos, &config)?;
    if let Some(path) = &args.out {
        container::write_rf_image(path, &compound(&frames)?)?;
        say(out, format_args!("wrote {}", path.display()))?;
    }
    if args.bmode.is_some() || args.pgm.is_some() {
        let img = bmode(&frames, args.dynamic_range)?;
        if let Some(path) = &args.bmode {
            container::write_bmode(path, &img)?;
            say(out, format_args!("wrote {}", path.display()))?;
        }
        if let Some(path) = &args.pgm {
            pgm::write(path, &img)?;
            say(out, format_args!("wrote {}", path.display()))?;
        }
    }
    Ok(())
}

// ---------------------------------------------------------------- sweep

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Channel-data container.
    pub rf: PathBuf,
    /// Comma-separated metric keys.
    #[arg(long, value_delimiter = ',', default_value = "mse,corr,mi")]
    pub metrics: Vec<MetricId>,
    /// Frame selection fed to every metric.
    #[arg(long, default_value = "dual")]
    pub inputs: FrameSelection,
    #[arg(long, default_value_t = 1450.0)]
    pub sos_min: f64,
    #[arg(long, default_value_t = 1600.0)]
    pub sos_max: f64,
    #[arg(long, default_value_t = 0.5)]
    pub step: f64,
    /// Layer depths in mm for a layered analysis in addition to the global sweep.
    #[arg(long, value_delimiter = ',')]
    pub layers: Vec<f64>,
    /// Jitter positions per layer.
    #[arg(long, default_value_t = 4)]
    pub jitter: usize,
    /// Jitter increment, mm.
    #[arg(long, default_value_t = 0.4)]
    pub jitter_step: f64,
    /// Pixel counts as NXxNZ over the standard field of view.
    #[arg(long, default_value = "256x3072", value_parser = parse_grid_size)]
    pub grid: (usize, usize),
    #[arg(long, default_value = "linear")]
    pub interp: Interpolation,
    /// TOML file with metric parameters.
    #[arg(long)]
    pub params: Option<PathBuf>,
    /// Worker threads; all cores when unset.
    #[arg(long, env = "SOSEST_WORKERS")]
    pub workers: Option<usize>,
    /// Per-candidate scores.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Per-sweep summary.
    #[arg(long)]
    pub json: Option<PathBuf>,
    /// Fail with exit code 5 if any sweep is degenerate.
    #[arg(long)]
    pub strict: bool,
    /// Directory for B-mode PGM images at each global optimum.
    #[arg(long)]
    pub pgm_dir: Option<PathBuf>,
}

/// Summary written by `sweep` and `run`, read back by `report`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub tool: String,
    pub version: String,
    pub input: String,
    pub true_sos: Option<f64>,
    pub search: SosSearchSpec,
    pub grid: ImageGrid,
    pub results: Vec<SweepOutcome>,
}

struct SweepPlan {
    jobs: Vec<SweepJob>,
    spec: SosSearchSpec,
    settings: SweepSettings,
    strict: bool,
}

fn load_params(path: Option<&Path>) -> CliResult<MetricParams> {
    let Some(path) = path else {
        return Ok(MetricParams::default());
    };
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let params: MetricParams = toml::from_str(&text)
        .map_err(|e| CliError::Config(format!("{}: {}", path.display(), e.message())))?;
    params.validate()?;
    Ok(params)
}

impl SweepArgs {
    fn plan(&self) -> CliResult<SweepPlan> {
        if self.metrics.is_empty() {
            return Err(CliError::Config("--metrics is empty".into()));
        }
        if self.workers == Some(0) {
            return Err(CliError::Config("--workers must be >= 1".into()));
        }
        let spec = SosSearchSpec::new(self.sos_min, self.sos_max, self.step)?;
        let beamform = BeamformConfig {
            grid: ImageGrid::standard_with(self.grid.0, self.grid.1),
            interpolation: self.interp,
        };
        beamform.grid.validate()?;
        let mut jobs: Vec<SweepJob> = self
            .metrics
            .iter()
            .map(|&m| SweepJob::global(m, self.inputs))
            .collect();
        if !self.layers.is_empty() {
            let patch = PatchSpec {
                layer_depths_mm: self.layers.clone(),
                jitter_step_mm: self.jitter_step,
                jitter_count: self.jitter,
            };
            patch.validate(&beamform.grid)?;
            jobs.extend(
                self.metrics
                    .iter()
                    .map(|&m| SweepJob::layered(m, self.inputs, patch.clone())),
            );
        }
        let mut settings = SweepSettings::new(beamform, load_params(self.params.as_deref())?);
        settings.workers = self.workers;
        Ok(SweepPlan {
            jobs,
            spec,
            settings,
            strict: self.strict,
        })
    }
}

fn execute(rf: &RfChannelData, plan: &SweepPlan) -> CliResult<Vec<TimedResult>> {
    for job in &plan.jobs {
        check_arity(job.metric, job.selection, rf.n_tx())?;
    }
    Ok(run_sweep(rf, &plan.jobs, &plan.spec, &plan.settings)?)
}

/// Per-candidate scores as CSV.
pub fn sweep_csv(results: &[TimedResult]) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_HEADER).expect("in-memory write");
    for r in results.iter().map(|t| &t.result) {
        for (s, v) in r.candidates.iter().zip(&r.scores) {
            w.write_record([
                r.metric.key().to_string(),
                r.layer_depth_mm.to_string(),
                r.layer_index.to_string(),
                r.jitter_index.to_string(),
                s.to_string(),
                v.to_string(),
            ])
            .expect("in-memory write");
        }
    }
    w.into_inner().expect("in-memory flush")
}

fn print_outcomes(out: &mut dyn Write, results: &[SweepOutcome]) -> CliResult<()> {
    say(
        out,
        format_args!(
            "{:<10} {:<9} {:>8} {:>5} {:>6} {:>9} {:>5} {:>9}",
            "metric", "selection", "layer_mm", "layer", "jitter", "s*", "ties", "ms/eval"
        ),
    )?;
    for o in results {
        say(
            out,
            format_args!(
                "{:<10} {:<9} {:>8} {:>5} {:>6} {:>9.1} {:>5} {:>9.3}{}",
                o.metric.key(),
                o.selection.name(),
                o.layer_depth_mm,
                o.layer_index,
                o.jitter_index,
                o.s_star,
                o.tie_count,
                o.mean_eval_ms.unwrap_or(f64::NAN),
                if o.degenerate { "  degenerate" } else { "" }
            ),
        )?;
    }
    Ok(())
}

fn write_pgms(
    dir: &Path,
    rf: &RfChannelData,
    results: &[TimedResult],
    settings: &SweepSettings,
) -> CliResult<()> {
    let full_field = PatchSpec::full_field(&settings.beamform.grid).layer_depths_mm[0];
    for r in results.iter().map(|t| &t.result) {
        if r.layer_depth_mm != full_field || r.layer_index != 0 || r.jitter_index != 0 {
            continue;
        }
        let tx = r.selection.resolve(rf.tx_events())?;
        let frames = beamform_frames(rf, &tx, r.s_star, &settings.beamform)?;
        let img = bmode(&frames, settings.params.dynamic_range)?;
        let name = format!("{}_{}.pgm", r.metric.key(), r.selection.name());
        pgm::write(&dir.join(name), &img)?;
    }
    Ok(())
}

fn degenerate_check(strict: bool, results: &[SweepOutcome]) -> CliResult<()> {
    let bad: Vec<String> = results
        .iter()
        .filter(|o| o.degenerate)
        .map(|o| {
            format!(
                "{} ({}, layer {} mm #{})",
                o.metric, o.selection, o.layer_depth_mm, o.layer_index
            )
        })
        .collect();
    if strict && !bad.is_empty() {
        return Err(CliError::Degenerate(format!(
            "all candidates tie for {}",
            bad.join(", ")
        )));
    }
    Ok(())
}

pub fn sweep(args: &SweepArgs, out: &mut dyn Write) -> CliResult<()> {
    let plan = args.plan()?;
    let rf = container::read_rf(&args.rf)?;
    let results = execute(&rf, &plan)?;
    let outcomes: Vec<SweepOutcome> = results.iter().map(TimedResult::outcome).collect();
    if let Some(path) = &args.csv {
        container::write_text(path, &sweep_csv(&results))?;
    }
    if let Some(path) = &args.json {
        let report = SweepReport {
            tool: TOOL.into(),
            version: VERSION.into(),
            input: args.rf.display().to_string(),
            true_sos: sidecar_true_sos(&args.rf),
            search: plan.spec,
            grid: plan.settings.beamform.grid,
            results: outcomes.clone(),
        };
        write_json(path, &report)?;
    }
    if let Some(dir) = &args.pgm_dir {
        write_pgms(dir, &rf, &results, &plan.settings)?;
    }
    print_outcomes(out, &outcomes)?;
    degenerate_check(plan.strict, &outcomes)
}

// ---------------------------------------------------------------- report

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Sweep JSON files.
    #[arg(required = true)]
    pub sweeps: Vec<PathBuf>,
    /// Ground-truth SoS; defaults to the value recorded in the sweep files.
    #[arg(long)]
    pub gt: Option<f64>,
    /// Write the report as JSON.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

/// Mean absolute error table, one line per metric, selection and layer depth.
pub fn format_report(report: &EstimateReport) -> String {
    let mut s = format!(
        "ground truth {} m/s, span {} m/s, flag above {} m/s\n{:<10} {:<9} {:>8} {:>3} {:>17} {:>4} {:>9}\n",
        report.ground_truth_sos,
        report.search_span,
        report.flag_threshold,
        "metric",
        "selection",
        "layer_mm",
        "n",
        "MAE ± std [m/s]",
        "flag",
        "ms/eval"
    );
    for m in &report.metrics {
        let mae = format!("{:.2} ± {:.2}", m.mean_abs_error, m.std_abs_error);
        let ms = m
            .mean_eval_time_ms
            .map_or("-".to_string(), |t| format!("{t:.3}"));
        s.push_str(&format!(
            "{:<10} {:<9} {:>8} {:>3} {:>17} {:>4} {:>9}\n",
            m.metric,
            m.selection.name(),
            m.layer_depth_mm,
            m.estimates.len(),
            mae,
            if m.range_bound_suspect { "!" } else { "" },
            ms
        ));
    }
    s
}

fn resolve_gt(explicit: Option<f64>, recorded: &[Option<f64>]) -> CliResult<f64> {
    if let Some(gt) = explicit {
        return Ok(gt);
    }
    let mut known = recorded.iter().flatten();
    let first = *known.next().ok_or_else(|| {
        CliError::Config("no ground truth: pass --gt or use sweeps of simulated data".into())
    })?;
    if known.any(|&v| v != first) {
        return Err(CliError::Config(
            "sweep files record different ground truths; pass --gt".into(),
        ));
    }
    Ok(first)
}

pub fn report(args: &ReportArgs, out: &mut dyn Write) -> CliResult<()> {
    let sweeps = args
        .sweeps
        .iter()
        .map(|p| read_json::<SweepReport>(p))
        .collect::<CliResult<Vec<_>>>()?;
    let gt = resolve_gt(
        args.gt,
        &sweeps.iter().map(|s| s.true_sos).collect::<Vec<_>>(),
    )?;
    let outcomes: Vec<SweepOutcome> = sweeps.into_iter().flat_map(|s| s.results).collect();
    let report = aggregate_outcomes(&outcomes, gt)?;
    if let Some(path) = &args.out {
        write_json(path, &report)?;
    }
    out.write_all(format_report(&report).as_bytes())
        .map_err(|e| CliError::io("<stdout>", e))
}

// ---------------------------------------------------------------- run

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Experiment config (TOML).
    #[arg(long, short)]
    pub config: PathBuf,
    /// Overrides `output.dir`.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Overrides `sweep.workers`.
    #[arg(long, env = "SOSEST_WORKERS")]
    pub workers: Option<usize>,
}

/// File names written by `run` inside the output directory.
pub const RUN_RF: &str = "rf.sos";
pub const RUN_CSV: &str = "sweep.csv";
pub const RUN_SWEEP: &str = "sweep.json";
pub const RUN_REPORT: &str = "report.json";

pub fn run_config(args: &RunArgs, out: &mut dyn Write) -> CliResult<()> {
    let mut cfg = RunConfig::load(&args.config)?;
    if let Some(dir) = &args.out_dir {
        cfg.output.dir = dir.clone();
    }
    if args.workers.is_some() {
        cfg.sweep.workers = args.workers;
    }
    cfg.validate()?;
    let dir = cfg.output.dir.clone();

    let (rf, input) = match (&cfg.input, cfg.sim_config()) {
        (Some(path), _) => (container::read_rf(path)?, path.clone()),
        (None, Some(sim)) => {
            let setup = SimSetup {
                sim,
                probe: cfg.probe,
                acquisition: cfg.acquisition.clone(),
            };
            let path = dir.join(RUN_RF);
            (simulate_to(&setup, &path, out)?, path)
        }
        (None, None) => unreachable!("validated"),
    };

    let mut settings = SweepSettings::new(cfg.beamform.beamform()?, cfg.params);
    settings.workers = cfg.sweep.workers;
    let plan = SweepPlan {
        jobs: cfg.sweep.jobs(),
        spec: cfg.search,
        settings,
        strict: cfg.sweep.strict,
    };
    let results = execute(&rf, &plan)?;
    let outcomes: Vec<SweepOutcome> = results.iter().map(TimedResult::outcome).collect();
    container::write_text(&dir.join(RUN_CSV), &sweep_csv(&results))?;
    let true_sos = cfg
        .sim_config()
        .map(|s| s.true_sos)
        .or_else(|| sidecar_true_sos(&input));
    let sweep_report = SweepReport {
        tool: TOOL.into(),
        version: VERSION.into(),
        input: input.display().to_string(),
        true_sos,
        search: plan.spec,
        grid: plan.settings.beamform.grid,
        results: outcomes.clone(),
    };
    write_json(&dir.join(RUN_SWEEP), &sweep_report)?;
    if cfg.output.pgm {
        write_pgms(&dir, &rf, &results, &plan.settings)?;
    }
    print_outcomes(out, &outcomes)?;
    if let Some(gt) = true_sos {
        let report = aggregate_outcomes(&outcomes, gt)?;
        write_json(&dir.join(RUN_REPORT), &report)?;
        out.write_all(format_report(&report).as_bytes())
            .map_err(|e| CliError::io("<stdout>", e))?;
    }
    degenerate_check(plan.strict, &outcomes)
}
