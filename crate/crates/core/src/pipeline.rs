//! Artifact hashing and the multi-step stages behind the command line.
//!
//! A directory artifact is sealed by a `SHA256SUMS` file in `sha256sum`
//! format; a single-file artifact gets a `<file>.sha256` sidecar. Stages that
//! read an upstream artifact verify it first.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::calibrate::{calibrate_recording, FitRecord, FluidProperties, PlateauOptions, TubeLawFit};
use crate::error::{Error, Result};
use crate::ingest::{parse_recording, select_window, to_si, AnalysisWindow, FlipRecording};
use crate::inverse::{invert_window, MechanicsState};
use crate::matrix::Matrix;
use crate::metrics::{analyze_window, discrete_params, ManualEgj, PrimaryParams, WorkMetrics};
use crate::neural::checkpoint::{self, ModelKind, RawCheckpoint};
use crate::neural::train::{train_network1, train_network2, VaeEpoch, WorkEpoch};
use crate::neural::{ThetaScale, Vae, VaeArch, VaeTrainConfig, WorkArch, WorkPredictor, WorkTrainConfig};
use crate::stats::MinMax;
use crate::synth::{augment_field, augment_scalars, stream_rng, AugmentSpec, CohortManifest, ManifestEntry, ScalarInputs};
use crate::vdl::forest::{jaccard, subset_accuracy};
use crate::vdl::{assemble_vdl, coords, train_test_split, DiscreteStats, Forest, ForestConfig, LabelSet, VdlVector};
use crate::GRID;

pub const SUMS_FILE: &str = "SHA256SUMS";

// ---------------------------------------------------------------------------
// Hashing

pub fn file_sha256(path: &Path) -> Result<String> {
    Ok(checkpoint::sha256_hex(&fs::read(path)?))
}

fn list_files(root: &Path, rel: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    for e in fs::read_dir(root.join(rel))? {
        let e = e?;
        let r = rel.join(e.file_name());
        if e.file_type()?.is_dir() {
            list_files(root, &r, out)?;
        } else if r != Path::new(SUMS_FILE) {
            out.push(r);
        }
    }
    Ok(())
}

fn rel_name(p: &Path) -> String {
    p.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/")
}

/// Hashes every file below `dir` into `dir/SHA256SUMS`; returns the hash of that file.
pub fn seal_dir(dir: &Path) -> Result<String> {
    let mut files = Vec::new();
    list_files(dir, Path::new(""), &mut files)?;
    let mut names: Vec<String> = files.iter().map(|p| rel_name(p)).collect();
    names.sort();
    let mut text = String::new();
    for n in &names {
        text.push_str(&format!("{}  {n}\n", file_sha256(&dir.join(n))?));
    }
    fs::write(dir.join(SUMS_FILE), &text)?;
    Ok(checkpoint::sha256_hex(text.as_bytes()))
}

pub fn is_sealed(dir: &Path) -> bool {
    dir.join(SUMS_FILE).is_file()
}

/// Checks every entry of `dir/SHA256SUMS`; returns the hash of the sums file.
pub fn verify_dir(dir: &Path) -> Result<String> {
    let sums_path = dir.join(SUMS_FILE);
    let text = fs::read_to_string(&sums_path)
        .map_err(|e| Error::Integrity { path: sums_path.clone(), reason: format!("cannot read checksums: {e}") })?;
    for (k, line) in text.lines().enumerate() {
        let (hash, name) = line
            .split_once("  ")
            .ok_or_else(|| Error::Integrity { path: sums_path.clone(), reason: format!("malformed line {}", k + 1) })?;
        let path = dir.join(name);
        let actual = file_sha256(&path).map_err(|e| Error::Integrity { path: path.clone(), reason: e.to_string() })?;
        if actual != hash {
            return Err(Error::Integrity { path, reason: format!("hash {actual} does not match {hash}") });
        }
    }
    Ok(checkpoint::sha256_hex(text.as_bytes()))
}

pub fn hash_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".sha256");
    PathBuf::from(s)
}

/// Writes `bytes` to `path` plus a `<path>.sha256` sidecar; returns the hash.
pub fn write_artifact(path: &Path, bytes: &[u8]) -> Result<String> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    let sha = checkpoint::sha256_hex(bytes);
    fs::write(path, bytes)?;
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    fs::write(hash_path(path), format!("{sha}  {name}\n"))?;
    Ok(sha)
}

/// Reads an artifact written by [`write_artifact`] and checks its sidecar.
pub fn read_artifact(path: &Path) -> Result<Vec<u8>> {
    let side = hash_path(path);
    let expected = fs::read_to_string(&side)
        .map_err(|e| Error::Integrity { path: path.to_path_buf(), reason: format!("missing hash sidecar: {e}") })?;
    let expected = expected.split_whitespace().next().unwrap_or_default().to_string();
    let bytes = fs::read(path)?;
    let actual = checkpoint::sha256_hex(&bytes);
    if actual != expected {
        return Err(Error::Integrity { path: path.to_path_buf(), reason: format!("hash {actual} does not match {expected}") });
    }
    Ok(bytes)
}

pub fn write_json_artifact<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<String> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_artifact(path, &bytes)
}

pub fn read_json_artifact<T: DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_slice(&read_artifact(path)?)?)
}

// ---------------------------------------------------------------------------
// Mechanics

/// One solved window, the unit of the mechanics dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MechanicsRecord {
    pub id: String,
    /// The original window for augmented replicas, else `id`.
    pub source: String,
    pub subject: String,
    pub time: Option<f64>,
    pub disease: String,
    pub peristalsis: u8,
    pub augmented: bool,
    pub fit: FitRecord,
    pub params: PrimaryParams,
    /// `None` when no junction could be located.
    pub work: Option<WorkMetrics>,
    pub clamp_fraction: f64,
    pub unreliable: bool,
    /// 16 × 16 activation, cells × time, row-major.
    pub theta: Vec<f64>,
}

impl MechanicsRecord {
    pub fn theta_grid(&self) -> Result<Matrix> {
        Matrix::from_vec(GRID, GRID, self.theta.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveFailure {
    pub id: String,
    pub kind: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MechanicsDataset {
    /// Hash of the cohort's `SHA256SUMS`, when it was sealed.
    pub cohort_seal: Option<String>,
    pub fluid: FluidProperties,
    pub augment: Option<AugmentSpec>,
    pub augment_seed: Option<u64>,
    pub records: Vec<MechanicsRecord>,
    pub failures: Vec<SolveFailure>,
}

impl MechanicsDataset {
    pub fn originals(&self) -> impl Iterator<Item = &MechanicsRecord> {
        self.records.iter().filter(|r| !r.augmented)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveOptions {
    pub fluid: FluidProperties,
    pub sensor_spacing_cm: f64,
    pub plateau: PlateauOptions,
    /// Replicas drawn per window, with the seed of their RNG streams.
    pub augment: Option<(AugmentSpec, u64)>,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            fluid: FluidProperties::default(),
            sensor_spacing_cm: crate::ingest::DEFAULT_SENSOR_SPACING_CM,
            plateau: PlateauOptions::default(),
            augment: None,
        }
    }
}

/// Calibration, window selection and inversion of one recording.
#[derive(Debug, Clone, PartialEq)]
pub struct Solved {
    pub fit: TubeLawFit,
    pub window: AnalysisWindow,
    pub state: MechanicsState,
}

pub fn solve_recording(rec: &FlipRecording, t_start: f64, t_end: f64, fluid: FluidProperties, plateau: PlateauOptions) -> Result<Solved> {
    let si = to_si(rec);
    let (fit, _) = calibrate_recording(&si, fluid, plateau)?;
    let window = select_window(&si, t_start, t_end, &fit)?;
    let state = invert_window(&window, &fit)?;
    Ok(Solved { fit, window, state })
}

struct Meta<'a> {
    entry: &'a ManifestEntry,
    id: String,
    augmented: bool,
}

fn make_record(m: Meta<'_>, s: &Solved, manual: Option<ManualEgj>) -> Result<MechanicsRecord> {
    let work = match analyze_window(&s.window, &s.state, &s.fit, manual) {
        Ok(w) => Some(w.work),
        Err(e @ Error::NoJunction) => {
            log::warn!("{}: {e}", m.id);
            None
        }
        Err(e) => return Err(e),
    };
    Ok(MechanicsRecord {
        id: m.id,
        source: m.entry.id.clone(),
        subject: m.entry.subject.clone().unwrap_or_else(|| m.entry.id.clone()),
        time: m.entry.time,
        disease: m.entry.disease.clone(),
        peristalsis: m.entry.peristalsis,
        augmented: m.augmented,
        fit: s.fit.to_record(),
        params: discrete_params(&s.window, &s.state, &s.fit),
        work,
        clamp_fraction: s.state.clamp_fraction,
        unreliable: s.state.unreliable,
        theta: s.state.theta.as_slice().to_vec(),
    })
}

/// Re-solves a perturbed copy of a window. The field transforms act on the
/// dimensional area, then the scalars are drawn; both from stream
/// `(seed, index << 16 | replica)`.
pub fn augment_window(base: &Solved, spec: &AugmentSpec, seed: u64, index: usize, replica: usize) -> Result<Solved> {
    let mut rng = stream_rng(seed, ((index as u64) << 16) | replica as u64);
    let w = &base.window;
    let a_s = base.fit.area_scale();
    let area = augment_field(&w.alpha_grid.map(|a| a * a_s), &spec.field, &mut rng);
    let x =
        ScalarInputs { k_over_ao: base.fit.k_over_ao, po_minus_k: base.fit.po_minus_k, pd_series: w.pd_series.clone(), t_max: w.duration };
    let y = augment_scalars(&x, spec, &mut rng);
    let fit = TubeLawFit::from_params(y.k_over_ao, y.po_minus_k, base.fit.fluid, w.length_m);
    let a_s2 = fit.area_scale();
    let window = AnalysisWindow::from_grid(area.map(|a| a / a_s2), y.pd_series, y.t_max, w.volume_m3, w.length_m, &fit)?;
    let state = invert_window(&window, &fit)?;
    Ok(Solved { fit, window, state })
}

fn failure(id: String, e: &Error) -> SolveFailure {
    log::warn!("{id}: {e}");
    SolveFailure { id, kind: e.kind().into(), message: e.to_string() }
}

/// The original window must solve; a replica that fails is reported on its own.
/// Records and per-replica failures of one manifest entry.
type EntryOutcome = (Vec<MechanicsRecord>, Vec<SolveFailure>);

fn solve_entry(dir: &Path, entry: &ManifestEntry, opts: &SolveOptions) -> Result<EntryOutcome> {
    let rec = parse_recording(dir.join(&entry.recording), opts.sensor_spacing_cm)?;
    let base = solve_recording(&rec, entry.t_start, entry.t_end, opts.fluid, opts.plateau)?;
    let mut out = vec![make_record(Meta { entry, id: entry.id.clone(), augmented: false }, &base, None)?];
    let mut failed = Vec::new();
    if let Some((spec, seed)) = &opts.augment {
        for r in 0..spec.replicas_per_sample {
            let id = format!("{}~a{r:02}", entry.id);
            let rec = augment_window(&base, spec, *seed, entry.index, r)
                .and_then(|s| make_record(Meta { entry, id: id.clone(), augmented: true }, &s, None));
            match rec {
                Ok(m) => out.push(m),
                Err(e) => failed.push(failure(id, &e)),
            }
        }
    }
    Ok((out, failed))
}

pub fn read_manifest(dir: &Path) -> Result<CohortManifest> {
    Ok(serde_json::from_slice(&fs::read(dir.join("manifest.json"))?)?)
}

/// Solves every window of a cohort directory. Windows that fail are listed
/// in `failures`; it is an error only when none succeed.
pub fn solve_cohort(dir: &Path, opts: &SolveOptions) -> Result<MechanicsDataset> {
    let cohort_seal = if is_sealed(dir) {
        Some(verify_dir(dir)?)
    } else {
        log::warn!("{} carries no {SUMS_FILE}; inputs are not verified", dir.display());
        None
    };
    let manifest = read_manifest(dir)?;
    let results: Vec<(String, Result<EntryOutcome>)> =
        manifest.samples.par_iter().map(|e| (e.id.clone(), solve_entry(dir, e, opts))).collect();
    let mut records = Vec::new();
    let mut failures = Vec::new();
    for (id, r) in results {
        match r {
            Ok((v, f)) => {
                records.extend(v);
                failures.extend(f);
            }
            Err(e) => failures.push(failure(id, &e)),
        }
    }
    if records.is_empty() {
        return Err(Error::Invalid(format!("no window of {} could be solved", dir.display())));
    }
    Ok(MechanicsDataset {
        cohort_seal,
        fluid: opts.fluid,
        augment: opts.augment.map(|a| a.0),
        augment_seed: opts.augment.map(|a| a.1),
        records,
        failures,
    })
}

// ---------------------------------------------------------------------------
// Autoencoder

/// Everything needed to turn a θ grid and its parameters into a landscape vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VaeNormalization {
    pub theta: ThetaScale,
    pub discrete: DiscreteStats,
}

pub fn theta_image(rec: &MechanicsRecord, scale: &ThetaScale) -> Result<Vec<f32>> {
    Ok(scale.apply(&rec.theta_grid()?).as_slice().iter().map(|&v| v as f32).collect())
}

pub struct VaeRun {
    pub vae: Vae<f32>,
    pub curve: Vec<VaeEpoch>,
    pub norm: VaeNormalization,
}

pub fn train_vae(ds: &MechanicsDataset, arch: VaeArch, cfg: &VaeTrainConfig) -> Result<VaeRun> {
    if arch.grid != GRID {
        return Err(Error::Invalid(format!("the mechanics grid is {GRID}×{GRID}, architecture expects {}", arch.grid)));
    }
    let grids = ds.records.iter().map(|r| r.theta_grid()).collect::<Result<Vec<_>>>()?;
    let theta = ThetaScale::fit(grids.iter());
    let params: Vec<PrimaryParams> = ds.records.iter().map(|r| r.params).collect();
    let norm = VaeNormalization { theta, discrete: DiscreteStats::fit(&params)? };
    let images = ds.records.iter().map(|r| theta_image(r, &theta)).collect::<Result<Vec<_>>>()?;
    let (vae, curve) = train_network1(&images, arch, cfg)?;
    Ok(VaeRun { vae, curve, norm })
}

pub fn save_vae(bin: &Path, vae: &Vae<f32>, norm: &VaeNormalization, cfg: &VaeTrainConfig) -> Result<String> {
    let ck = RawCheckpoint { kind: ModelKind::Autoencoder, descriptor: vae.arch.descriptor(), params: vae.params.clone() };
    checkpoint::save(bin, &ck, cfg.seed, serde_json::to_value(cfg)?, serde_json::to_value(norm)?)
}

pub fn load_vae(bin: &Path) -> Result<(Vae<f32>, VaeNormalization)> {
    let (ck, side) = checkpoint::load(bin, ModelKind::Autoencoder)?;
    let norm: VaeNormalization =
        serde_json::from_value(side.normalization).map_err(|e| Error::Checkpoint(format!("autoencoder normalisation statistics: {e}")))?;
    Ok((Vae::with_params(VaeArch::from_descriptor(&ck.descriptor)?, ck.params)?, norm))
}

/// Landscape vector of every record: latent mean plus normalised parameters.
pub fn embed(ds: &MechanicsDataset, vae: &Vae<f32>, norm: &VaeNormalization) -> Result<Vec<VdlVector>> {
    ds.records
        .par_iter()
        .map(|r| {
            let (mu, _) = vae.encode(&theta_image(r, &norm.theta)?)?;
            let mu: Vec<f64> = mu.iter().map(|&v| v as f64).collect();
            let mut v = assemble_vdl(&r.id, &mu, &r.params, &norm.discrete)?;
            v.subject = Some(r.subject.clone());
            v.time = r.time;
            v.disease = Some(r.disease.clone());
            v.peristalsis = Some(r.peristalsis);
            v.augmented = r.augmented;
            Ok(v)
        })
        .collect()
}

pub fn write_vdl(path: &Path, rows: &[VdlVector]) -> Result<String> {
    let mut buf = Vec::new();
    crate::vdl::write_dataset(&mut buf, rows)?;
    write_artifact(path, &buf)
}

pub fn read_vdl(path: &Path) -> Result<Vec<VdlVector>> {
    crate::vdl::read_dataset(read_artifact(path)?.as_slice())
}

// ---------------------------------------------------------------------------
// Splits

/// Splits rows by subject so no subject lands on both sides. The held-out
/// side keeps only original windows; augmented replicas of training
/// subjects stay in training.
pub fn subject_split(rows: &[VdlVector], test_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let subject = |r: &VdlVector| r.subject.clone().unwrap_or_else(|| r.id.clone());
    let mut seen = BTreeSet::new();
    let subjects: Vec<String> = rows.iter().map(subject).filter(|s| seen.insert(s.clone())).collect();
    let (_, test) = train_test_split(subjects.len(), test_fraction, seed);
    let held: BTreeSet<&str> = test.iter().map(|&i| subjects[i].as_str()).collect();
    let (mut tr, mut te) = (Vec::new(), Vec::new());
    for (i, r) in rows.iter().enumerate() {
        match (held.contains(subject(r).as_str()), r.augmented) {
            (false, _) => tr.push(i),
            (true, false) => te.push(i),
            (true, true) => {}
        }
    }
    (tr, te)
}

// ---------------------------------------------------------------------------
// Work regressor

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkNormalization {
    pub input: MinMax,
    pub output: MinMax,
    pub stats_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkReport {
    pub n_train: usize,
    pub n_val: usize,
    pub train_mse: f64,
    /// Normalised units.
    pub val_mse: Option<f64>,
    pub skipped_without_work: usize,
}

pub struct WorkRun {
    pub predictor: WorkPredictor,
    pub norm: WorkNormalization,
    pub curve: Vec<WorkEpoch>,
    pub report: WorkReport,
}

/// Trains the regressor from landscape vectors onto the four work metrics of
/// the matching mechanics records.
pub fn train_worknet(rows: &[VdlVector], ds: &MechanicsDataset, cfg: &WorkTrainConfig, val_fraction: f64) -> Result<WorkRun> {
    let by_id: std::collections::BTreeMap<&str, &MechanicsRecord> = ds.records.iter().map(|r| (r.id.as_str(), r)).collect();
    let mut kept = Vec::new();
    let mut targets = Vec::new();
    for r in rows {
        if let Some(w) = by_id.get(r.id.as_str()).and_then(|m| m.work) {
            kept.push(r.clone());
            targets.push(w.to_array().to_vec());
        }
    }
    let skipped = rows.len() - kept.len();
    if kept.len() < 2 {
        return Err(Error::Invalid("fewer than two windows carry work metrics".into()));
    }
    let stats_id = kept[0].stats_id.clone();
    if kept.iter().any(|r| r.stats_id != stats_id) {
        return Err(Error::Invalid("landscape vectors were normalised with different statistics".into()));
    }
    let (tr, va) = if val_fraction > 0.0 { subject_split(&kept, val_fraction, cfg.seed) } else { ((0..kept.len()).collect(), vec![]) };
    let x = coords(&kept);
    let input = MinMax::fit(tr.iter().map(|&i| x[i].as_slice()))?;
    let output = MinMax::fit(tr.iter().map(|&i| targets[i].as_slice()))?;
    let to32 = |v: Vec<f64>| v.into_iter().map(|a| a as f32).collect::<Vec<f32>>();
    let xs = |idx: &[usize]| idx.iter().map(|&i| input.normalize_clipped(&x[i]).map(to32)).collect::<Result<Vec<_>>>();
    let ys = |idx: &[usize]| idx.iter().map(|&i| output.normalize(&targets[i]).map(to32)).collect::<Result<Vec<_>>>();
    let (txs, tys, vxs, vys) = (xs(&tr)?, ys(&tr)?, xs(&va)?, ys(&va)?);
    let val = (!va.is_empty()).then_some((vxs.as_slice(), vys.as_slice()));
    let (net, curve) = train_network2((&txs, &tys), val, WorkArch::desk(), cfg)?;
    let last = curve.last().copied();
    let report = WorkReport {
        n_train: tr.len(),
        n_val: va.len(),
        train_mse: crate::neural::train::evaluate_worknet(&net, (&txs, &tys))?,
        val_mse: last.and_then(|e| e.val_mse),
        skipped_without_work: skipped,
    };
    let norm = WorkNormalization { input: input.clone(), output: output.clone(), stats_id };
    Ok(WorkRun { predictor: WorkPredictor { net, input_scale: input, output_scale: output }, norm, curve, report })
}

pub fn save_worknet(bin: &Path, run: &WorkRun, cfg: &WorkTrainConfig) -> Result<String> {
    let net = &run.predictor.net;
    let ck = RawCheckpoint { kind: ModelKind::Regressor, descriptor: net.arch.descriptor(), params: net.params.clone() };
    checkpoint::save(bin, &ck, cfg.seed, serde_json::to_value(cfg)?, serde_json::to_value(&run.norm)?)
}

pub fn load_worknet(bin: &Path) -> Result<(WorkPredictor, WorkNormalization)> {
    let (ck, side) = checkpoint::load(bin, ModelKind::Regressor)?;
    let norm: WorkNormalization =
        serde_json::from_value(side.normalization).map_err(|e| Error::Checkpoint(format!("regressor normalisation statistics: {e}")))?;
    let net = crate::neural::WorkNet::with_params(WorkArch::from_descriptor(&ck.descriptor)?, ck.params)?;
    Ok((WorkPredictor { net, input_scale: norm.input.clone(), output_scale: norm.output.clone() }, norm))
}

// ---------------------------------------------------------------------------
// Classification

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    Disease,
    Peristalsis,
}

impl Task {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "disease" => Ok(Task::Disease),
            "peristalsis" => Ok(Task::Peristalsis),
            _ => Err(Error::Invalid(format!("unknown task '{s}'"))),
        }
    }

    /// Label index of each row in `labels`, `None` when unlabelled.
    pub fn labels(self, rows: &[VdlVector], labels: &LabelSet) -> Result<(LabelSet, Vec<Option<usize>>)> {
        match self {
            Task::Disease => {
                let y = rows.iter().map(|r| r.disease.as_deref().map(|d| labels.index(d)).transpose()).collect::<Result<_>>()?;
                Ok((labels.clone(), y))
            }
            Task::Peristalsis => {
                let set = LabelSet { names: vec!["non-peristaltic".into(), "peristaltic".into()] };
                let y = rows.iter().map(|r| r.peristalsis.map(|p| (p > 0) as usize)).collect();
                Ok((set, y))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub id: String,
    pub truth: Option<String>,
    pub predicted: String,
    pub probabilities: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestReport {
    pub task: Task,
    pub classes: Vec<String>,
    pub n_train: usize,
    pub n_test: usize,
    pub subset_accuracy: Option<f64>,
    /// Binary tasks only.
    pub jaccard: Option<f64>,
}

pub struct ForestRun {
    pub forest: Forest,
    pub report: ForestReport,
    pub test_predictions: Vec<Prediction>,
}

pub fn predict_rows(forest: &Forest, rows: &[VdlVector], truth: &[Option<usize>]) -> Result<Vec<Prediction>> {
    rows.iter()
        .zip(truth)
        .map(|(r, t)| {
            let p = forest.predict_proba(&r.coords)?;
            let best = crate::vdl::forest::argmax(&p);
            Ok(Prediction {
                id: r.id.clone(),
                truth: t.map(|k| forest.classes[k].clone()),
                predicted: forest.classes[best].clone(),
                probabilities: p,
            })
        })
        .collect()
}

/// Subject-level split, fit on the training side, scores on held-out originals.
pub fn train_forest(rows: &[VdlVector], task: Task, labels: &LabelSet, cfg: &ForestConfig, test_fraction: f64) -> Result<ForestRun> {
    let (set, y) = task.labels(rows, labels)?;
    let labelled: Vec<VdlVector> = rows.iter().zip(&y).filter(|(_, l)| l.is_some()).map(|(r, _)| r.clone()).collect();
    let y: Vec<usize> = y.into_iter().flatten().collect();
    if labelled.is_empty() {
        return Err(Error::Invalid("no labelled rows".into()));
    }
    let (set, y) = set.compact(&y);
    let (tr, te) = subject_split(&labelled, test_fraction, cfg.seed);
    let x = coords(&labelled);
    let pick = |idx: &[usize]| (idx.iter().map(|&i| x[i].clone()).collect::<Vec<_>>(), idx.iter().map(|&i| y[i]).collect::<Vec<_>>());
    let (xtr, ytr) = pick(&tr);
    let forest = Forest::train(&xtr, &ytr, &set.names, cfg)?;
    let test_rows: Vec<VdlVector> = te.iter().map(|&i| labelled[i].clone()).collect();
    let yte: Vec<usize> = te.iter().map(|&i| y[i]).collect();
    let test_predictions = predict_rows(&forest, &test_rows, &yte.iter().map(|&k| Some(k)).collect::<Vec<_>>())?;
    let pred: Vec<usize> = test_predictions.iter().map(|p| set.index(&p.predicted)).collect::<Result<_>>()?;
    let report = ForestReport {
        task,
        classes: set.names.clone(),
        n_train: tr.len(),
        n_test: te.len(),
        subset_accuracy: (!te.is_empty()).then(|| subset_accuracy(&pred, &yte)),
        jaccard: (!te.is_empty() && set.len() == 2).then(|| jaccard(&pred, &yte)),
    };
    Ok(ForestRun { forest, report, test_predictions })
}
