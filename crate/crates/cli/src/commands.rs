use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use vdl_core::calibrate::{calibrate_recording, find_plateaus, FitRecord, PlateauOptions, PressureMinimum, TubeLawFit};
use vdl_core::config::ProjectConfig;
use vdl_core::ingest::{parse_recording, select_window, to_si, FlipRecording};
use vdl_core::inverse::invert_window;
use vdl_core::metrics::{analyze_window, EgjRegion, ManualEgj, MetricsRecord};
use vdl_core::neural::{VaeArch, VaeTrainConfig, WorkTrainConfig};
use vdl_core::pipeline::{self as pl, MechanicsDataset, Prediction, SolveOptions, Solved, Task};
use vdl_core::plot;
use vdl_core::synth::{generate_cohort, write_cohort, CohortSpec};
use vdl_core::vdl::distance::distance_matrix;
use vdl_core::vdl::forest::Forest;
use vdl_core::vdl::reduce::{lda_reduce, pca_reduce, LdaOptions, ReducedSpace};
use vdl_core::vdl::traverse::{band_contrast, decode_point, extrapolate_trajectory, traverse_latent, treatment_vector};
use vdl_core::vdl::{centroid, coords, LabelSet, VdlVector};
use vdl_core::{Error, Matrix};

use crate::output::{parameter_boxes, predictions_csv, sibling, slug};
use crate::Failure;

type Outcome = std::result::Result<Value, Failure>;

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Validate a recording, summarise it and optionally cut an analysis window.
    Ingest(IngestArgs),
    /// Generate a sealed synthetic cohort.
    Synth(SynthArgs),
    /// Fit the tube law from the fill plateaus of a recording.
    Calibrate(CalibrateArgs),
    /// Recover flow, pressure and activation for one window or a whole cohort.
    Solve(SolveArgs),
    /// Junction work and the discrete parameters of one window.
    Metrics(MetricsArgs),
    /// Train the autoencoder on solved activation fields.
    TrainVae(TrainVaeArgs),
    /// Build landscape vectors with a trained autoencoder.
    Embed(EmbedArgs),
    /// Train the work-metric regressor on landscape vectors.
    TrainWorknet(TrainWorknetArgs),
    /// PCA or LDA projection of the landscape.
    Reduce(ReduceArgs),
    /// Row-normalised distance matrix between label groups.
    Distmat(DistmatArgs),
    /// Random forest on landscape vectors.
    TrainForest(TrainForestArgs),
    /// Apply a trained forest to landscape vectors.
    Classify(ClassifyArgs),
    /// Decode evenly spaced points between two landscape vectors.
    Traverse(TraverseArgs),
    /// Extrapolate the landscape trajectory of one subject.
    Track(TrackArgs),
    /// Displacement between a pre- and a post-treatment vector.
    Treatment(TreatmentArgs),
}

pub fn run(cmd: Command, cfg: &ProjectConfig) -> Outcome {
    match cmd {
        Command::Ingest(a) => ingest(a, cfg),
        Command::Synth(a) => synth(a, cfg),
        Command::Calibrate(a) => calibrate(a, cfg),
        Command::Solve(a) => solve(a, cfg),
        Command::Metrics(a) => metrics(a, cfg),
        Command::TrainVae(a) => train_vae(a, cfg),
        Command::Embed(a) => embed(a, cfg),
        Command::TrainWorknet(a) => train_worknet(a, cfg),
        Command::Reduce(a) => reduce(a, cfg),
        Command::Distmat(a) => distmat(a, cfg),
        Command::TrainForest(a) => train_forest(a, cfg),
        Command::Classify(a) => classify(a, cfg),
        Command::Traverse(a) => traverse(a, cfg),
        Command::Track(a) => track(a, cfg),
        Command::Treatment(a) => treatment(a, cfg),
    }
}

// ---------------------------------------------------------------------------
// Shared pieces

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TaskArg {
    Disease,
    Peristalsis,
}

impl TaskArg {
    fn task(self) -> Task {
        match self {
            TaskArg::Disease => Task::Disease,
            TaskArg::Peristalsis => Task::Peristalsis,
        }
    }

    fn name(self) -> &'static str {
        match self {
            TaskArg::Disease => "disease",
            TaskArg::Peristalsis => "peristalsis",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Pca,
    Lda,
}

fn artifact(cfg: &ProjectConfig, given: Option<PathBuf>, name: &str) -> PathBuf {
    given.unwrap_or_else(|| cfg.paths.artifacts_dir.join(name))
}

fn parent_dirs(path: &Path) -> std::io::Result<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => fs::create_dir_all(p),
        _ => Ok(()),
    }
}

fn spacing(cfg: &ProjectConfig, given: Option<f64>) -> f64 {
    given.unwrap_or(cfg.physics.sensor_spacing_cm)
}

fn pair<T: std::str::FromStr>(s: &str) -> std::result::Result<(T, T), String> {
    let (a, b) = s.split_once(':').ok_or_else(|| format!("expected A:B, got '{s}'"))?;
    let p = |x: &str| x.trim().parse::<T>().map_err(|_| format!("cannot parse '{x}'"));
    Ok((p(a)?, p(b)?))
}

fn cells(s: &str) -> std::result::Result<(usize, usize), String> {
    pair(s)
}

fn times(s: &str) -> std::result::Result<(f64, f64), String> {
    pair(s)
}

/// On-disk calibration: the fit plus the plateau minima it came from.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct CalibrationFile {
    #[serde(flatten)]
    fit: FitRecord,
    fit_id: String,
    minima: Vec<PressureMinimum>,
}

fn load_fit(path: &Path) -> vdl_core::Result<TubeLawFit> {
    let f: CalibrationFile = pl::read_json_artifact(path)?;
    TubeLawFit::from_record(&f.fit)
}

/// Solves one window, calibrating from the recording itself unless a fit is given.
fn solve_window(rec: &FlipRecording, t_start: f64, t_end: f64, fit: Option<&Path>, cfg: &ProjectConfig) -> vdl_core::Result<Solved> {
    match fit {
        None => pl::solve_recording(rec, t_start, t_end, cfg.physics.fluid(), PlateauOptions::default()),
        Some(p) => {
            let fit = load_fit(p)?;
            let window = select_window(&to_si(rec), t_start, t_end, &fit)?;
            let state = invert_window(&window, &fit)?;
            Ok(Solved { fit, window, state })
        }
    }
}

fn load_mechanics(path: &Path) -> vdl_core::Result<MechanicsDataset> {
    pl::read_json_artifact(path)
}

fn originals(rows: Vec<VdlVector>) -> Vec<VdlVector> {
    rows.into_iter().filter(|r| !r.augmented).collect()
}

fn find<'a>(rows: &'a [VdlVector], id: &str) -> vdl_core::Result<&'a VdlVector> {
    rows.iter().find(|r| r.id == id).ok_or_else(|| Error::Invalid(format!("no landscape vector with id '{id}'")))
}

/// Labels of `task` for each row under the configured label set.
fn task_labels(task: TaskArg, rows: &[VdlVector], cfg: &ProjectConfig) -> vdl_core::Result<(LabelSet, Vec<Option<usize>>)> {
    let set = cfg.labels.resolve(rows.iter().filter_map(|r| r.disease.as_deref()));
    task.task().labels(rows, &set)
}

fn label_name(task: TaskArg, r: &VdlVector) -> Option<String> {
    match task {
        TaskArg::Disease => r.disease.clone(),
        TaskArg::Peristalsis => r.peristalsis.map(|p| if p > 0 { "peristaltic" } else { "non-peristaltic" }.to_string()),
    }
}

// ---------------------------------------------------------------------------
// Mechanics

#[derive(Args, Debug)]
pub struct IngestArgs {
    /// Recording CSV in clinical units.
    #[arg(long = "in", value_name = "CSV")]
    input: PathBuf,
    /// Sensor spacing, cm (default from the config).
    #[arg(long)]
    spacing: Option<f64>,
    /// Window start, s. Cuts a window together with --t-end.
    #[arg(long, requires = "t_end")]
    t_start: Option<f64>,
    #[arg(long, requires = "t_start")]
    t_end: Option<f64>,
    /// Calibration used to scale the window; calibrates from the recording when absent.
    #[arg(long, requires = "t_start")]
    fit: Option<PathBuf>,
    #[arg(long, value_name = "JSON")]
    out: Option<PathBuf>,
}

fn range(v: impl Iterator<Item = f64>) -> [f64; 2] {
    v.fold([f64::INFINITY, f64::NEG_INFINITY], |[lo, hi], x| [lo.min(x), hi.max(x)])
}

fn ingest(a: IngestArgs, cfg: &ProjectConfig) -> Outcome {
    let rec = parse_recording(&a.input, spacing(cfg, a.spacing))?;
    let si = to_si(&rec);
    let summary = json!({
        "samples": rec.len(),
        "t_start": rec.time_s[0],
        "t_end": rec.time_s[rec.len() - 1],
        "sensor_spacing_cm": rec.sensor_spacing_cm,
        "diameter_mm": range(rec.diameters_mm.as_slice().iter().copied()),
        "distal_pressure_mmhg": range(rec.distal_pressure_mmhg.iter().copied()),
        "volume_ml": range(rec.volume_ml.iter().copied()),
        "plateaus": find_plateaus(&si, PlateauOptions::default()).len(),
    });
    let window = match (a.t_start, a.t_end) {
        (Some(t0), Some(t1)) => {
            let fit = match &a.fit {
                Some(p) => load_fit(p)?,
                None => calibrate_recording(&si, cfg.physics.fluid(), PlateauOptions::default())?.0,
            };
            Some(select_window(&si, t0, t1, &fit)?)
        }
        _ => None,
    };
    let out = artifact(cfg, a.out, "ingest.json");
    let sha = pl::write_json_artifact(&out, &json!({ "summary": summary, "window": window }))?;
    Ok(json!({
        "out": out,
        "sha256": sha,
        "summary": summary,
        "window_warnings": window.as_ref().map(|w| w.warnings.clone()),
    }))
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Cohort specification (JSON).
    #[arg(long, value_name = "JSON")]
    spec: PathBuf,
    /// Generation seed (default from the config).
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; must be empty or absent.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

fn synth(a: SynthArgs, cfg: &ProjectConfig) -> Outcome {
    let spec: CohortSpec = serde_json::from_slice(&fs::read(&a.spec)?).map_err(|e| Error::Schema(format!("{}: {e}", a.spec.display())))?;
    spec.validate()?;
    let seed = a.seed.unwrap_or(cfg.seed);
    let out = a.out.unwrap_or_else(|| cfg.paths.data_dir.join("cohort"));
    if out.exists() && fs::read_dir(&out)?.next().is_some() {
        return Err(Error::Invalid(format!("{} is not empty", out.display())).into());
    }
    let samples = generate_cohort(&spec, seed)?;
    write_cohort(&samples, &spec, seed, &out)?;
    let seal = pl::seal_dir(&out)?;
    Ok(json!({ "out": out, "samples": samples.len(), "seed": seed, "seal": seal }))
}

#[derive(Args, Debug)]
pub struct CalibrateArgs {
    #[arg(long = "in", value_name = "CSV")]
    input: PathBuf,
    #[arg(long)]
    spacing: Option<f64>,
    #[arg(long, value_name = "JSON")]
    out: Option<PathBuf>,
}

fn calibrate(a: CalibrateArgs, cfg: &ProjectConfig) -> Outcome {
    let rec = parse_recording(&a.input, spacing(cfg, a.spacing))?;
    let (fit, minima) = calibrate_recording(&to_si(&rec), cfg.physics.fluid(), PlateauOptions::default())?;
    let file = CalibrationFile { fit: fit.to_record(), fit_id: fit.fit_id(), minima };
    let out = artifact(cfg, a.out, "fit.json");
    let sha = pl::write_json_artifact(&out, &file)?;
    Ok(json!({
        "out": out,
        "sha256": sha,
        "fit_id": file.fit_id,
        "k_over_ao_pa_per_m2": file.fit.k_over_ao_pa_per_m2,
        "po_minus_k_pa": file.fit.po_minus_k_pa,
        "r2": file.fit.r2,
        "plateaus": file.minima.len(),
    }))
}

#[derive(Args, Debug)]
pub struct SolveArgs {
    /// Sealed cohort directory (default: <data_dir>/cohort).
    #[arg(long, value_name = "DIR", conflicts_with = "input")]
    cohort: Option<PathBuf>,
    /// Solve a single recording window instead of a cohort.
    #[arg(long = "in", value_name = "CSV", requires_all = ["t_start", "t_end"])]
    input: Option<PathBuf>,
    #[arg(long)]
    t_start: Option<f64>,
    #[arg(long)]
    t_end: Option<f64>,
    /// Calibration to use for a single recording.
    #[arg(long, requires = "input")]
    fit: Option<PathBuf>,
    /// Add augmented replicas of every cohort window.
    #[arg(long, conflicts_with = "input")]
    augment: bool,
    /// Replicas per window (default from the config).
    #[arg(long, requires = "augment")]
    replicas: Option<usize>,
    #[arg(long)]
    spacing: Option<f64>,
    /// mechanics JSON for a cohort, state directory for a single window.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn solve(a: SolveArgs, cfg: &ProjectConfig) -> Outcome {
    if let Some(input) = &a.input {
        let rec = parse_recording(input, spacing(cfg, a.spacing))?;
        let s = solve_window(&rec, a.t_start.unwrap(), a.t_end.unwrap(), a.fit.as_deref(), cfg)?;
        let out = artifact(cfg, a.out, "state");
        s.state.save_dir(&out)?;
        fs::write(out.join("window.json"), serde_json::to_vec_pretty(&s.window)?)?;
        let seal = pl::seal_dir(&out)?;
        return Ok(json!({
            "out": out,
            "seal": seal,
            "fit_id": s.fit.fit_id(),
            "clamp_fraction": s.state.clamp_fraction,
            "unreliable": s.state.unreliable,
            "mass_drift": s.state.check_mass_conservation(),
            "warnings": s.window.warnings,
        }));
    }
    let dir = a.cohort.unwrap_or_else(|| cfg.paths.data_dir.join("cohort"));
    let mut augment = cfg.augment;
    if let Some(r) = a.replicas {
        augment.replicas_per_sample = r;
    }
    let opts = SolveOptions {
        fluid: cfg.physics.fluid(),
        sensor_spacing_cm: spacing(cfg, a.spacing),
        plateau: PlateauOptions::default(),
        augment: a.augment.then_some((augment, cfg.seed)),
    };
    let ds = pl::solve_cohort(&dir, &opts)?;
    let out = artifact(cfg, a.out, "mechanics.json");
    let sha = pl::write_json_artifact(&out, &ds)?;
    let boxes = sibling(&out, "_box.csv");
    plot::write_rows(&boxes, &parameter_boxes(&ds))?;
    Ok(json!({
        "out": out,
        "sha256": sha,
        "box_summary": boxes,
        "records": ds.records.len(),
        "originals": ds.originals().count(),
        "failures": ds.failures.len(),
        "without_work": ds.records.iter().filter(|r| r.work.is_none()).count(),
        "unreliable": ds.records.iter().filter(|r| r.unreliable).count(),
    }))
}

#[derive(Args, Debug)]
pub struct MetricsArgs {
    #[arg(long = "in", value_name = "CSV")]
    input: PathBuf,
    #[arg(long)]
    t_start: f64,
    #[arg(long)]
    t_end: f64,
    #[arg(long)]
    fit: Option<PathBuf>,
    /// Junction cells FIRST:LAST, zero-based and inclusive; detected when absent.
    #[arg(long, value_parser = cells, value_name = "FIRST:LAST")]
    egj_cells: Option<(usize, usize)>,
    /// Opening interval T1:T2 in seconds; needs --egj-cells.
    #[arg(long, value_parser = times, value_name = "T1:T2", requires = "egj_cells")]
    egj_times: Option<(f64, f64)>,
    #[arg(long)]
    spacing: Option<f64>,
    #[arg(long, value_name = "JSON")]
    out: Option<PathBuf>,
}

#[derive(Serialize)]
struct MetricsFile {
    fit_id: String,
    t_start: f64,
    t_end: f64,
    metrics: MetricsRecord,
    region: EgjRegion,
}

fn metrics(a: MetricsArgs, cfg: &ProjectConfig) -> Outcome {
    let rec = parse_recording(&a.input, spacing(cfg, a.spacing))?;
    let s = solve_window(&rec, a.t_start, a.t_end, a.fit.as_deref(), cfg)?;
    let manual = a.egj_cells.map(|(first_cell, last_cell)| ManualEgj {
        first_cell,
        last_cell,
        t1: a.egj_times.map(|t| t.0),
        t2: a.egj_times.map(|t| t.1),
    });
    let m = analyze_window(&s.window, &s.state, &s.fit, manual)?;
    let file = MetricsFile { fit_id: s.fit.fit_id(), t_start: a.t_start, t_end: a.t_end, metrics: m.to_record(), region: m.region };
    let out = artifact(cfg, a.out, "metrics.json");
    let sha = pl::write_json_artifact(&out, &file)?;
    Ok(json!({ "out": out, "sha256": sha, "metrics": file.metrics, "region": file.region }))
}

// ---------------------------------------------------------------------------
// Networks

#[derive(Args, Debug)]
pub struct TrainVaeArgs {
    #[arg(long, value_name = "JSON")]
    mechanics: Option<PathBuf>,
    /// Use the short desk schedule with this many epochs instead of the configured one.
    #[arg(long)]
    epochs: Option<usize>,
    /// Checkpoint path; a `.json` sidecar and `_curve.csv` are written next to it.
    #[arg(long, value_name = "BIN")]
    out: Option<PathBuf>,
}

fn train_vae(a: TrainVaeArgs, cfg: &ProjectConfig) -> Outcome {
    let ds = load_mechanics(&artifact(cfg, a.mechanics, "mechanics.json"))?;
    let vcfg = match a.epochs {
        Some(n) => VaeTrainConfig { seed: cfg.vae.seed, beta: cfg.vae.beta, ..VaeTrainConfig::desk(n) },
        None => cfg.vae.clone(),
    };
    let run = pl::train_vae(&ds, VaeArch::desk(), &vcfg)?;
    let out = artifact(cfg, a.out, "vae.bin");
    parent_dirs(&out)?;
    let sha = pl::save_vae(&out, &run.vae, &run.norm, &vcfg)?;
    let curve = sibling(&out, "_curve.csv");
    plot::write_rows(&curve, &run.curve)?;
    Ok(json!({ "out": out, "params_sha256": sha, "curve": curve, "images": ds.records.len(), "final": run.curve.last() }))
}

#[derive(Args, Debug)]
pub struct EmbedArgs {
    #[arg(long, value_name = "JSON")]
    mechanics: Option<PathBuf>,
    #[arg(long, value_name = "BIN")]
    model: Option<PathBuf>,
    #[arg(long, value_name = "CSV")]
    out: Option<PathBuf>,
}

fn embed(a: EmbedArgs, cfg: &ProjectConfig) -> Outcome {
    let ds = load_mechanics(&artifact(cfg, a.mechanics, "mechanics.json"))?;
    let (vae, norm) = pl::load_vae(&artifact(cfg, a.model, "vae.bin"))?;
    let rows = pl::embed(&ds, &vae, &norm)?;
    let out = artifact(cfg, a.out, "vdl.csv");
    let sha = pl::write_vdl(&out, &rows)?;
    Ok(json!({
        "out": out,
        "sha256": sha,
        "rows": rows.len(),
        "originals": rows.iter().filter(|r| !r.augmented).count(),
        "stats_id": rows.first().map(|r| r.stats_id.clone()),
    }))
}

#[derive(Args, Debug)]
pub struct TrainWorknetArgs {
    #[arg(long, value_name = "CSV")]
    vdl: Option<PathBuf>,
    #[arg(long, value_name = "JSON")]
    mechanics: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long, value_name = "BIN")]
    out: Option<PathBuf>,
}

fn train_worknet(a: TrainWorknetArgs, cfg: &ProjectConfig) -> Outcome {
    let rows = pl::read_vdl(&artifact(cfg, a.vdl, "vdl.csv"))?;
    let ds = load_mechanics(&artifact(cfg, a.mechanics, "mechanics.json"))?;
    let wcfg = WorkTrainConfig { epochs: a.epochs.unwrap_or(cfg.worknet.epochs), ..cfg.worknet.clone() };
    let run = pl::train_worknet(&rows, &ds, &wcfg, cfg.worknet_validation)?;
    let out = artifact(cfg, a.out, "worknet.bin");
    parent_dirs(&out)?;
    let sha = pl::save_worknet(&out, &run, &wcfg)?;
    let curve = sibling(&out, "_curve.csv");
    plot::write_rows(&curve, &run.curve)?;
    let report = sibling(&out, "_report.json");
    pl::write_json_artifact(&report, &run.report)?;
    Ok(json!({ "out": out, "params_sha256": sha, "curve": curve, "report": run.report }))
}

// ---------------------------------------------------------------------------
// Landscape analytics

#[derive(Args, Debug)]
pub struct ReduceArgs {
    #[arg(long, value_enum)]
    method: MethodArg,
    #[arg(long, default_value_t = 3)]
    dims: usize,
    /// Labels used by LDA and written to the scatter table.
    #[arg(long, value_enum, default_value = "disease")]
    task: TaskArg,
    #[arg(long, value_name = "CSV")]
    vdl: Option<PathBuf>,
    /// Projection JSON; `_points.csv` is written next to it.
    #[arg(long, value_name = "JSON")]
    out: Option<PathBuf>,
}

fn reduce(a: ReduceArgs, cfg: &ProjectConfig) -> Outcome {
    let mut rows = originals(pl::read_vdl(&artifact(cfg, a.vdl, "vdl.csv"))?);
    let space = match a.method {
        MethodArg::Pca => pca_reduce(&coords(&rows), a.dims)?,
        MethodArg::Lda => {
            let (_, y) = task_labels(a.task, &rows, cfg)?;
            let keep: Vec<bool> = y.iter().map(Option::is_some).collect();
            let mut k = keep.iter();
            rows.retain(|_| *k.next().unwrap());
            let y: Vec<usize> = y.into_iter().flatten().collect();
            lda_reduce(&coords(&rows), &y, a.dims, LdaOptions::default())?
        }
    };
    let name = match a.method {
        MethodArg::Pca => "pca",
        MethodArg::Lda => "lda",
    };
    let out = artifact(cfg, a.out, &format!("reduced_{name}.json"));
    let sha = pl::write_json_artifact(&out, &space)?;
    let points = space.project_all(&coords(&rows))?;
    let ids: Vec<String> = rows.iter().map(|r| r.id.clone()).collect();
    let labels: Vec<String> = rows.iter().map(|r| label_name(a.task, r).unwrap_or_default()).collect();
    let scatter = sibling(&out, "_points.csv");
    pl::write_artifact(&scatter, &plot::scatter_csv(&ids, &labels, &points)?)?;
    Ok(json!({ "out": out, "sha256": sha, "scatter": scatter, "rows": rows.len(), "explained": space.explained }))
}

#[derive(Args, Debug)]
pub struct DistmatArgs {
    #[arg(long, value_name = "CSV")]
    vdl: Option<PathBuf>,
    /// Reduced space to measure in (default: <artifacts>/reduced_lda.json).
    #[arg(long, value_name = "JSON")]
    reduced: Option<PathBuf>,
    /// Measure in the full 30-dimensional landscape instead.
    #[arg(long, conflicts_with = "reduced")]
    full: bool,
    #[arg(long, value_enum, default_value = "disease")]
    task: TaskArg,
    /// Heatmap CSV.
    #[arg(long, value_name = "CSV")]
    out: Option<PathBuf>,
}

fn distmat(a: DistmatArgs, cfg: &ProjectConfig) -> Outcome {
    let rows = originals(pl::read_vdl(&artifact(cfg, a.vdl, "vdl.csv"))?);
    let (set, y) = task_labels(a.task, &rows, cfg)?;
    let rows: Vec<&VdlVector> = rows.iter().zip(&y).filter(|(_, l)| l.is_some()).map(|(r, _)| r).collect();
    let (set, y) = set.compact(&y.into_iter().flatten().collect::<Vec<_>>());
    let raw: Vec<Vec<f64>> = rows.iter().map(|r| r.coords.clone()).collect();
    let points = if a.full {
        raw
    } else {
        let space: ReducedSpace = pl::read_json_artifact(&artifact(cfg, a.reduced, "reduced_lda.json"))?;
        space.project_all(&raw)?
    };
    let dm = distance_matrix(&points, &y, &set.names)?;
    let mut bytes = Vec::new();
    dm.write_csv(&mut bytes)?;
    let out = artifact(cfg, a.out, "distances.csv");
    let sha = pl::write_artifact(&out, &bytes)?;
    Ok(json!({
        "out": out,
        "sha256": sha,
        "space": if a.full { "full" } else { "reduced" },
        "groups": dm.groups,
        "values": dm.values,
    }))
}

/// On-disk forest: the task it answers plus the trees.
#[derive(Serialize, Deserialize)]
struct ForestFile {
    task: Task,
    forest: Forest,
}

#[derive(Args, Debug)]
pub struct TrainForestArgs {
    #[arg(long, value_enum)]
    task: TaskArg,
    #[arg(long, value_name = "CSV")]
    vdl: Option<PathBuf>,
    /// Also train on augmented rows of the training subjects.
    #[arg(long)]
    with_augmented: bool,
    /// Forest JSON; `_report.json` and `_test.csv` are written next to it.
    #[arg(long, value_name = "JSON")]
    out: Option<PathBuf>,
}

fn train_forest(a: TrainForestArgs, cfg: &ProjectConfig) -> Outcome {
    let mut rows = pl::read_vdl(&artifact(cfg, a.vdl, "vdl.csv"))?;
    if !a.with_augmented {
        rows = originals(rows);
    }
    let set = cfg.labels.resolve(rows.iter().filter_map(|r| r.disease.as_deref()));
    let run = pl::train_forest(&rows, a.task.task(), &set, &cfg.forest, cfg.forest_test_fraction)?;
    let out = artifact(cfg, a.out, &format!("forest_{}.json", a.task.name()));
    let sha = pl::write_json_artifact(&out, &ForestFile { task: a.task.task(), forest: run.forest })?;
    let report = sibling(&out, "_report.json");
    pl::write_json_artifact(&report, &run.report)?;
    let test = sibling(&out, "_test.csv");
    pl::write_artifact(&test, &predictions_csv(&run.report.classes, &run.test_predictions)?)?;
    Ok(json!({ "out": out, "sha256": sha, "test_predictions": test, "report": run.report }))
}

#[derive(Args, Debug)]
pub struct ClassifyArgs {
    #[arg(long, value_name = "JSON")]
    forest: PathBuf,
    #[arg(long, value_name = "CSV")]
    vdl: Option<PathBuf>,
    #[arg(long)]
    with_augmented: bool,
    #[arg(long, value_name = "CSV")]
    out: Option<PathBuf>,
}

fn classify(a: ClassifyArgs, cfg: &ProjectConfig) -> Outcome {
    let ff: ForestFile = pl::read_json_artifact(&a.forest)?;
    let mut rows = pl::read_vdl(&artifact(cfg, a.vdl, "vdl.csv"))?;
    if !a.with_augmented {
        rows = originals(rows);
    }
    let task = match ff.task {
        Task::Disease => TaskArg::Disease,
        Task::Peristalsis => TaskArg::Peristalsis,
    };
    let truth: Vec<Option<usize>> =
        rows.iter().map(|r| label_name(task, r).and_then(|n| ff.forest.classes.iter().position(|c| *c == n))).collect();
    let preds: Vec<Prediction> = pl::predict_rows(&ff.forest, &rows, &truth)?;
    let scored: Vec<&Prediction> = preds.iter().filter(|p| p.truth.is_some()).collect();
    let accuracy =
        (!scored.is_empty()).then(|| scored.iter().filter(|p| p.truth.as_ref() == Some(&p.predicted)).count() as f64 / scored.len() as f64);
    let out = artifact(cfg, a.out, &format!("predictions_{}.csv", task.name()));
    let sha = pl::write_artifact(&out, &predictions_csv(&ff.forest.classes, &preds)?)?;
    Ok(json!({ "out": out, "sha256": sha, "rows": preds.len(), "labelled": scored.len(), "accuracy": accuracy }))
}

#[derive(Args, Debug)]
pub struct TraverseArgs {
    #[arg(long, value_name = "ID")]
    from: String,
    #[arg(long, value_name = "ID")]
    to: String,
    /// Points along the path, both ends included.
    #[arg(long, value_parser = clap::value_parser!(u64).range(2..))]
    steps: u64,
    #[arg(long, value_name = "CSV")]
    vdl: Option<PathBuf>,
    #[arg(long, value_name = "BIN")]
    model: Option<PathBuf>,
    /// Regressor checkpoint; adds predicted work along the path.
    #[arg(long, value_name = "BIN")]
    worknet: Option<PathBuf>,
    /// Distal rows left out of the band contrast.
    #[arg(long, default_value_t = 3)]
    junction_cells: usize,
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

fn traverse(a: TraverseArgs, cfg: &ProjectConfig) -> Outcome {
    let rows = pl::read_vdl(&artifact(cfg, a.vdl, "vdl.csv"))?;
    let (from, to) = (find(&rows, &a.from)?, find(&rows, &a.to)?);
    let (vae, norm) = pl::load_vae(&artifact(cfg, a.model, "vae.bin"))?;
    if a.junction_cells >= vae.arch.grid {
        return Err(Failure::Usage(format!("--junction-cells must be below {}", vae.arch.grid)));
    }
    let work = a.worknet.as_deref().map(pl::load_worknet).transpose()?;
    let points = traverse_latent(&from.coords, &to.coords, a.steps as usize, &vae, work.as_ref().map(|w| &w.0))?;
    let out = a.out.unwrap_or_else(|| cfg.paths.artifacts_dir.join(format!("traverse_{}_{}", slug(&a.from), slug(&a.to))));
    fs::create_dir_all(&out)?;
    pl::write_json_artifact(&out.join("traversal.json"), &points)?;
    let theta: Vec<Matrix> = points.iter().map(|p| norm.theta.invert(&p.image)).collect();
    plot::write_grids(&out, "theta", &theta)?;
    let grids: Vec<String> = (0..theta.len()).map(|k| format!("theta_{k:02}.csv")).collect();
    let contrast: Vec<f64> = points.iter().map(|p| band_contrast(&p.image, a.junction_cells)).collect();
    Ok(json!({
        "out": out,
        "steps": points.len(),
        "theta_grids": grids,
        "band_contrast": contrast,
        "work": points.iter().map(|p| p.work.clone()).collect::<Vec<_>>(),
    }))
}

#[derive(Args, Debug)]
pub struct TrackArgs {
    #[arg(long, value_name = "ID")]
    subject: String,
    /// Time to evaluate the trajectory at, in the unit of the visit times.
    #[arg(long)]
    at: f64,
    #[arg(long, value_name = "CSV")]
    vdl: Option<PathBuf>,
    /// Autoencoder to decode the extrapolated point with.
    #[arg(long, value_name = "BIN")]
    model: Option<PathBuf>,
    #[arg(long, value_name = "JSON")]
    out: Option<PathBuf>,
}

fn track(a: TrackArgs, cfg: &ProjectConfig) -> Outcome {
    let rows = originals(pl::read_vdl(&artifact(cfg, a.vdl, "vdl.csv"))?);
    let mut visits: Vec<(f64, Vec<f64>)> = rows
        .iter()
        .filter(|r| r.subject.as_deref() == Some(a.subject.as_str()))
        .filter_map(|r| r.time.map(|t| (t, r.coords.clone())))
        .collect();
    visits.sort_by(|x, y| x.0.total_cmp(&y.0));
    let ex = extrapolate_trajectory(&visits, a.at)?;
    let out = artifact(cfg, a.out, &format!("track_{}.json", slug(&a.subject)));
    let sha = pl::write_json_artifact(&out, &ex)?;
    let theta = match a.model {
        Some(m) => {
            let (vae, norm) = pl::load_vae(&m)?;
            let grid = norm.theta.invert(&decode_point(&vae, &ex.coords)?);
            let mut bytes = Vec::new();
            grid.write_csv(&mut bytes)?;
            let p = sibling(&out, "_theta.csv");
            pl::write_artifact(&p, &bytes)?;
            Some(p)
        }
        None => None,
    };
    Ok(json!({
        "out": out,
        "sha256": sha,
        "visits": visits.len(),
        "time": ex.time,
        "extrapolated": ex.extrapolated,
        "theta_grid": theta,
        "coords": ex.coords,
    }))
}

#[derive(Args, Debug)]
pub struct TreatmentArgs {
    #[arg(long, value_name = "ID")]
    pre: String,
    #[arg(long, value_name = "ID")]
    post: String,
    #[arg(long, value_name = "CSV")]
    vdl: Option<PathBuf>,
    /// Reduced space to report the displacement in as well.
    #[arg(long, value_name = "JSON")]
    reduced: Option<PathBuf>,
    /// Disease group whose centroid the distance change is measured against.
    #[arg(long, value_name = "GROUP")]
    reference: Option<String>,
    #[arg(long, value_name = "JSON")]
    out: Option<PathBuf>,
}

fn treatment(a: TreatmentArgs, cfg: &ProjectConfig) -> Outcome {
    let rows = pl::read_vdl(&artifact(cfg, a.vdl, "vdl.csv"))?;
    let (pre, post) = (find(&rows, &a.pre)?, find(&rows, &a.post)?);
    let reduced: Option<ReducedSpace> = a.reduced.as_deref().map(pl::read_json_artifact).transpose()?;
    let reference = match &a.reference {
        Some(g) => {
            let members = rows.iter().filter(|r| !r.augmented && r.disease.as_deref() == Some(g.as_str()));
            let c = centroid(members.map(|r| r.coords.as_slice()))
                .ok_or_else(|| Error::Invalid(format!("reference group '{g}' has no members")))?;
            Some((g.as_str(), c))
        }
        None => None,
    };
    let report = treatment_vector(pre, post, reduced.as_ref(), reference.as_ref().map(|(g, c)| (*g, c.as_slice())))?;
    let out = artifact(cfg, a.out, &format!("treatment_{}_{}.json", slug(&a.pre), slug(&a.post)));
    let sha = pl::write_json_artifact(&out, &report)?;
    Ok(json!({ "out": out, "sha256": sha, "report": report }))
}
