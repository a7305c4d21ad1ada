//! Forward simulation of the closed flexible tube, synthetic phenotypes,
//! calibration protocols, cohorts and data augmentation.
//!
//! The forward scheme lives on the same staggered grid as the inverse solver:
//! area ratios in cells, flow rates on interfaces. Each sub-step first
//! advances `q` with the momentum balance (friction treated implicitly), then
//! updates `α` from the new fluxes, so `Σ α Δχ` telescopes and is conserved to
//! round-off.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibrate::{FluidProperties, TubeLawFit};
use crate::error::{invalid, Error, Result};
use crate::ingest::{area_to_diameter, m3_to_ml, ml_to_m3, pa_to_mmhg, FlipRecording, WindowDescriptor};
use crate::inverse::StaggeredGrid;
use crate::matrix::{interp1, linspace, Matrix};
use crate::metrics::PrimaryParams;
use crate::{GRID, N_SENSORS};

/// Output sampling of simulated recordings, Hz.
pub const SAMPLE_HZ: f64 = 10.0;
/// Window durations are multiples of this so that the 16 grid times land on samples.
pub const DURATION_QUANTUM_S: f64 = 1.5;
/// Number of distal cells forming the junction.
pub const EGJ_CELLS: usize = 3;

/// Seeded stream for item `index` of a run seeded with `seed`.
pub fn stream_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

// ---------------------------------------------------------------------------
// Activation fields

/// Prescribed θ at a cell and a time (seconds from the field's origin).
pub trait ActivationField {
    fn n_cells(&self) -> usize;
    fn theta(&self, cell: usize, t: f64) -> f64;

    fn theta_column(&self, t: f64) -> Vec<f64> {
        (0..self.n_cells()).map(|i| self.theta(i, t)).collect()
    }

    /// θ sampled on the `[cells × 16]` window grid.
    fn grid(&self, duration: f64) -> Matrix {
        let times = linspace(0.0, duration, GRID);
        Matrix::from_fn(self.n_cells(), GRID, |i, k| self.theta(i, times[k]))
    }
}

/// Uniform θ.
#[derive(Debug, Clone, Copy)]
pub struct UniformActivation {
    pub n_cells: usize,
    pub theta: f64,
}

impl ActivationField for UniformActivation {
    fn n_cells(&self) -> usize {
        self.n_cells
    }

    fn theta(&self, _cell: usize, _t: f64) -> f64 {
        self.theta
    }
}

/// θ given on a `[cells × T]` grid spanning `[0, duration]`, linear in time.
#[derive(Debug, Clone)]
pub struct GridActivation {
    grid: Matrix,
    times: Vec<f64>,
}

impl GridActivation {
    pub fn new(grid: Matrix, duration: f64) -> Result<Self> {
        if grid.cols() < 2 || !(duration > 0.0) {
            return invalid("activation grid needs two or more time columns and a positive duration");
        }
        if grid.as_slice().iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return invalid("activation grid must be strictly positive and finite");
        }
        let times = linspace(0.0, duration, grid.cols());
        Ok(GridActivation { grid, times })
    }
}

impl ActivationField for GridActivation {
    fn n_cells(&self) -> usize {
        self.grid.rows()
    }

    fn theta(&self, cell: usize, t: f64) -> f64 {
        interp1(&self.times, self.grid.row(cell), t)
    }
}

/// Relaxed rest, then a smooth ramp from θ ≡ 1 into the field's first column,
/// then the field itself.
pub struct Scheduled<'a> {
    pub field: &'a dyn ActivationField,
    pub rest_s: f64,
    pub ramp_s: f64,
}

impl Scheduled<'_> {
    pub fn field_start(&self) -> f64 {
        self.rest_s + self.ramp_s
    }
}

impl ActivationField for Scheduled<'_> {
    fn n_cells(&self) -> usize {
        self.field.n_cells()
    }

    fn theta(&self, cell: usize, t: f64) -> f64 {
        if t <= self.rest_s {
            return 1.0;
        }
        let s = t - self.rest_s;
        if s < self.ramp_s {
            let e = 0.5 - 0.5 * (PI * s / self.ramp_s).cos();
            return 1.0 + e * (self.field.theta(cell, 0.0) - 1.0);
        }
        self.field.theta(cell, s - self.ramp_s)
    }
}

// ---------------------------------------------------------------------------
// Phenotypes

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PhenotypeKind {
    NormalPeristaltic,
    AbsentContractility,
    TightEgj,
    Spastic,
    WeakPeristaltic,
}

impl PhenotypeKind {
    pub const ALL: [PhenotypeKind; 5] = [
        PhenotypeKind::NormalPeristaltic,
        PhenotypeKind::AbsentContractility,
        PhenotypeKind::TightEgj,
        PhenotypeKind::Spastic,
        PhenotypeKind::WeakPeristaltic,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PhenotypeKind::NormalPeristaltic => "normal-peristaltic",
            PhenotypeKind::AbsentContractility => "absent-contractility",
            PhenotypeKind::TightEgj => "tight-egj",
            PhenotypeKind::Spastic => "spastic",
            PhenotypeKind::WeakPeristaltic => "weak-peristaltic",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s).ok_or_else(|| Error::Invalid(format!("unknown phenotype '{s}'")))
    }

    /// Propagating contraction band present.
    pub fn peristaltic(self) -> bool {
        matches!(self, PhenotypeKind::NormalPeristaltic | PhenotypeKind::WeakPeristaltic)
    }

    pub fn index(self) -> usize {
        Self::ALL.iter().position(|k| *k == self).unwrap()
    }
}

impl std::fmt::Display for PhenotypeKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Phenotype {
    pub kind: PhenotypeKind,
    /// Depth of the contraction, θ drops to `1 − amplitude`.
    pub contraction_amplitude: f64,
    /// Band speed, cm/s (zero for non-propagating kinds).
    pub wave_speed_cm_s: f64,
    /// Resting junction θ.
    pub egj_tone: f64,
    /// Peak θ in the relaxation lobe ahead of the band.
    pub relaxation_peak: f64,
    /// Band half-width (Gaussian σ), cm.
    pub band_width_cm: f64,
    /// Peak junction θ during opening.
    pub egj_open: f64,
    /// Window duration, s.
    pub duration_s: f64,
}

fn quantized_duration(seconds: f64) -> f64 {
    let n = (seconds / DURATION_QUANTUM_S).ceil().max(2.0);
    n * DURATION_QUANTUM_S
}

impl Phenotype {
    pub fn validate(&self) -> Result<()> {
        let a = self.contraction_amplitude;
        if !(a > 0.0 && a <= 1.0) {
            return invalid(format!("contraction amplitude {a} outside (0, 1]"));
        }
        if !(self.egj_tone > 0.0 && self.egj_tone <= 1.0) {
            return invalid(format!("junction tone {} outside (0, 1]", self.egj_tone));
        }
        if !(self.relaxation_peak >= 1.0) {
            return invalid(format!("relaxation peak {} below 1", self.relaxation_peak));
        }
        if !(self.duration_s > 0.0) || !(self.band_width_cm > 0.0) || self.egj_open < self.egj_tone {
            return invalid("phenotype needs a positive duration and band width, and an opening above the tone");
        }
        if self.kind.peristaltic() && !(self.wave_speed_cm_s > 0.0) {
            return invalid("propagating phenotype needs a positive wave speed");
        }
        Ok(())
    }

    /// Draws a phenotype of `kind` with per-sample jitter.
    pub fn sample<R: Rng + ?Sized>(kind: PhenotypeKind, segment_cm: f64, rng: &mut R) -> Self {
        let body_cm = segment_cm * (N_SENSORS - EGJ_CELLS) as f64 / N_SENSORS as f64;
        let mut p = Phenotype {
            kind,
            contraction_amplitude: 0.05,
            wave_speed_cm_s: 0.0,
            egj_tone: rng.random_range(0.1..0.16),
            relaxation_peak: 1.0,
            band_width_cm: rng.random_range(2.0..3.0),
            egj_open: 0.0,
            duration_s: DURATION_QUANTUM_S * rng.random_range(2..=4) as f64,
        };
        p.egj_open = p.egj_tone + rng.random_range(0.3..0.45);
        match kind {
            PhenotypeKind::NormalPeristaltic | PhenotypeKind::WeakPeristaltic => {
                let weak = kind == PhenotypeKind::WeakPeristaltic;
                p.contraction_amplitude = if weak { rng.random_range(0.2..0.4) } else { rng.random_range(0.6..0.85) };
                p.relaxation_peak = 1.0 + rng.random_range(0.3..0.6) * p.contraction_amplitude.min(0.5);
                p.wave_speed_cm_s = rng.random_range(2.5..4.5);
                p.duration_s = quantized_duration(body_cm / p.wave_speed_cm_s);
            }
            PhenotypeKind::AbsentContractility => {
                p.contraction_amplitude = rng.random_range(0.02..0.08);
            }
            PhenotypeKind::TightEgj => {
                p.contraction_amplitude = rng.random_range(0.02..0.08);
                p.egj_tone = rng.random_range(0.08..0.14);
                p.egj_open = p.egj_tone + rng.random_range(0.03..0.08);
            }
            PhenotypeKind::Spastic => {
                p.contraction_amplitude = rng.random_range(0.5..0.8);
            }
        }
        p
    }

    /// Centre of the jitter ranges.
    pub fn nominal(kind: PhenotypeKind) -> Self {
        let mut p = Phenotype {
            kind,
            contraction_amplitude: 0.05,
            wave_speed_cm_s: 0.0,
            egj_tone: 0.13,
            relaxation_peak: 1.0,
            band_width_cm: 2.5,
            egj_open: 0.5,
            duration_s: 4.5,
        };
        match kind {
            PhenotypeKind::NormalPeristaltic => {
                p.contraction_amplitude = 0.72;
                p.relaxation_peak = 1.22;
                p.wave_speed_cm_s = 3.5;
            }
            PhenotypeKind::WeakPeristaltic => {
                p.contraction_amplitude = 0.3;
                p.relaxation_peak = 1.14;
                p.wave_speed_cm_s = 3.5;
            }
            PhenotypeKind::TightEgj => {
                p.egj_tone = 0.11;
                p.egj_open = 0.165;
            }
            PhenotypeKind::Spastic => p.contraction_amplitude = 0.65,
            PhenotypeKind::AbsentContractility => {}
        }
        p
    }
}

/// Analytic θ(x, t) of a phenotype on an `n_cells` segment of `segment_cm`.
#[derive(Debug, Clone, Copy)]
pub struct PhenotypeField {
    pub phenotype: Phenotype,
    pub n_cells: usize,
    pub segment_cm: f64,
}

impl PhenotypeField {
    pub fn new(phenotype: Phenotype, n_cells: usize, segment_cm: f64) -> Self {
        PhenotypeField { phenotype, n_cells, segment_cm }
    }

    pub fn egj_cells(&self) -> std::ops::Range<usize> {
        self.n_cells - EGJ_CELLS..self.n_cells
    }

    fn band_centre_cm(&self, t: f64) -> f64 {
        self.phenotype.wave_speed_cm_s * t
    }

    /// Time the junction opening peaks.
    pub fn opening_time(&self) -> f64 {
        let p = &self.phenotype;
        let d = p.duration_s;
        if p.kind.peristaltic() {
            let body_end = self.segment_cm * (self.n_cells - EGJ_CELLS) as f64 / self.n_cells as f64;
            (body_end / p.wave_speed_cm_s).clamp(0.3 * d, 0.8 * d)
        } else if p.kind == PhenotypeKind::Spastic {
            0.75 * d
        } else {
            0.5 * d
        }
    }
}

fn gauss(s: f64, w: f64) -> f64 {
    (-0.5 * (s / w).powi(2)).exp()
}

impl ActivationField for PhenotypeField {
    fn n_cells(&self) -> usize {
        self.n_cells
    }

    fn theta(&self, cell: usize, t: f64) -> f64 {
        let p = &self.phenotype;
        let d = p.duration_s;
        if cell >= self.n_cells - EGJ_CELLS {
            let bump = gauss(t - self.opening_time(), 0.1 * d);
            return p.egj_tone + (p.egj_open - p.egj_tone) * bump;
        }
        let x = (cell as f64 + 0.5) * self.segment_cm / self.n_cells as f64;
        let a = p.contraction_amplitude;
        match p.kind {
            PhenotypeKind::NormalPeristaltic | PhenotypeKind::WeakPeristaltic => {
                let w = p.band_width_cm;
                let xc = self.band_centre_cm(t);
                1.0 - a * gauss(x - xc, w) + (p.relaxation_peak - 1.0) * gauss(x - xc - 2.0 * w, w)
            }
            PhenotypeKind::Spastic => 1.0 - a * gauss(t - 0.3 * d, 0.12 * d),
            PhenotypeKind::AbsentContractility | PhenotypeKind::TightEgj => 1.0 - a * (PI * t / d).sin().powi(2),
        }
    }
}

// ---------------------------------------------------------------------------
// Forward solver

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForwardOptions {
    pub sample_hz: f64,
    /// Target CFL number for automatic sub-stepping.
    pub cfl: f64,
    /// Fixed non-dimensional sub-step; sub-stepping is then not adapted and a
    /// CFL violation is an error.
    pub fixed_dtau: Option<f64>,
}

impl Default for ForwardOptions {
    fn default() -> Self {
        ForwardOptions { sample_hz: SAMPLE_HZ, cfl: 0.5, fixed_dtau: None }
    }
}

/// Explicit forward-backward integrator.
pub struct ForwardSolver<'a> {
    field: &'a dyn ActivationField,
    grid: StaggeredGrid,
    alpha: Vec<f64>,
    q: Vec<f64>,
    t: f64,
    steps: usize,
    p_b: f64,
    phi: f64,
    tau_per_s: f64,
    opts: ForwardOptions,
}

impl<'a> ForwardSolver<'a> {
    /// Starts from rest in pressure equilibrium with the field at `t = 0`,
    /// holding `volume_m3` over the fit's segment length.
    pub fn at_equilibrium(field: &'a dyn ActivationField, fit: &TubeLawFit, volume_m3: f64, opts: ForwardOptions) -> Result<Self> {
        if !(volume_m3 > 0.0) {
            return invalid("volume must be positive");
        }
        let n = field.n_cells();
        let grid = StaggeredGrid::new(n);
        let total = volume_m3 / (fit.length_m * fit.area_scale());
        let theta = field.theta_column(0.0);
        let s = total / (theta.iter().sum::<f64>() * grid.d_chi);
        let alpha = theta.iter().map(|th| th * s).collect();
        Self::with_state(field, fit, alpha, opts)
    }

    pub fn with_state(field: &'a dyn ActivationField, fit: &TubeLawFit, alpha: Vec<f64>, opts: ForwardOptions) -> Result<Self> {
        if !(fit.k_over_ao > 0.0) || !(fit.length_m > 0.0) {
            return Err(Error::Calibration("forward model needs positive stiffness and length".into()));
        }
        let n = field.n_cells();
        if alpha.len() != n || alpha.iter().any(|a| !(*a > 0.0)) {
            return invalid("initial area ratios must be positive, one per cell");
        }
        Ok(ForwardSolver {
            field,
            grid: StaggeredGrid::new(n),
            alpha,
            q: vec![0.0; n + 1],
            t: 0.0,
            steps: 0,
            p_b: fit.scaled_intercept(),
            phi: fit.gamma(),
            tau_per_s: fit.fluid.c / fit.length_m,
            opts,
        })
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn q(&self) -> &[f64] {
        &self.q
    }

    pub fn time(&self) -> f64 {
        self.t
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn total(&self) -> f64 {
        self.alpha.iter().sum::<f64>() * self.grid.d_chi
    }

    /// Scaled cell pressure `α/θ + p_b` at the current time.
    pub fn pressure(&self) -> Vec<f64> {
        let theta = self.field.theta_column(self.t);
        self.alpha.iter().zip(&theta).map(|(a, th)| a / th + self.p_b).collect()
    }

    fn wave_speed(&self, theta: &[f64]) -> f64 {
        let c = self.alpha.iter().zip(theta).map(|(a, th)| (a / th).sqrt()).fold(0.0, f64::max);
        let ai = crate::inverse::interface_alpha(&self.alpha);
        let u = self.q.iter().zip(&ai).map(|(q, a)| (q / a).abs()).fold(0.0, f64::max);
        c + u
    }

    fn substep(&mut self, d_tau: f64, theta: &[f64]) {
        let n = self.grid.n_cells;
        let dx = self.grid.d_chi;
        let p: Vec<f64> = self.alpha.iter().zip(theta).map(|(a, th)| a / th + self.p_b).collect();
        // donor-cell momentum flux: cell velocity times the upwind face flow
        let flux: Vec<f64> = (0..n)
            .map(|c| {
                let u = 0.5 * (self.q[c] + self.q[c + 1]) / self.alpha[c];
                u * if u > 0.0 { self.q[c] } else { self.q[c + 1] }
            })
            .collect();
        for i in 1..n {
            let af = 0.5 * (self.alpha[i - 1] + self.alpha[i]);
            let rhs = -(flux[i] - flux[i - 1]) / dx - af * (p[i] - p[i - 1]) / dx;
            self.q[i] = (self.q[i] + d_tau * rhs) / (1.0 + d_tau * self.phi / af);
        }
        for c in 0..n {
            self.alpha[c] -= d_tau / dx * (self.q[c + 1] - self.q[c]);
        }
        self.steps += 1;
    }

    /// Integrates up to physical time `t_end` (seconds). Sub-steps adapt to
    /// the current wave speed; with a fixed step, exceeding the CFL target is
    /// an error.
    pub fn advance_to(&mut self, t_end: f64) -> Result<()> {
        let dx = self.grid.d_chi;
        if let Some(h) = self.opts.fixed_dtau {
            if !(h > 0.0) {
                return invalid(format!("fixed step must be positive, got {h}"));
            }
        }
        loop {
            let remaining = (t_end - self.t) * self.tau_per_s;
            if remaining <= 1e-12 * self.tau_per_s * t_end.abs().max(1.0) {
                self.t = t_end.max(self.t);
                return Ok(());
            }
            let theta = self.field.theta_column(self.t);
            let speed = self.wave_speed(&theta);
            let d_tau = match self.opts.fixed_dtau {
                Some(h) => {
                    let d_tau = h.min(remaining);
                    let cfl = d_tau * speed / dx;
                    if cfl > self.opts.cfl {
                        return Err(Error::SolverDivergence {
                            step: self.steps,
                            dtau: d_tau,
                            reason: format!("CFL number {cfl:.3} exceeds {}", self.opts.cfl),
                        });
                    }
                    d_tau
                }
                None => {
                    let limit = self.opts.cfl * dx / speed;
                    // equal steps to the target keep sample times exact
                    remaining / (remaining / limit).ceil()
                }
            };
            self.substep(d_tau, &theta);
            if d_tau >= remaining {
                self.t = t_end;
            } else {
                self.t += d_tau / self.tau_per_s;
            }
            if let Some(c) = self.alpha.iter().position(|a| !(*a > 0.0) || !a.is_finite()) {
                return Err(Error::SolverDivergence {
                    step: self.steps,
                    dtau: d_tau,
                    reason: format!("area ratio in cell {c} became {}", self.alpha[c]),
                });
            }
        }
    }
}

/// Sampled output of a forward run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForwardRun {
    pub time_s: Vec<f64>,
    /// `[cells × T]`.
    pub alpha: Matrix,
    /// `[interfaces × T]`.
    pub q: Matrix,
    /// `[cells × T]`, Pa.
    pub pressure_pa: Matrix,
    /// `[cells × T]`, m².
    pub area_m2: Matrix,
    pub distal_pressure_pa: Vec<f64>,
    pub volume_m3: f64,
    pub length_m: f64,
    pub substeps: usize,
}

impl ForwardRun {
    /// Largest relative change of `Σ α Δχ` between consecutive samples.
    pub fn max_step_drift(&self) -> f64 {
        let totals: Vec<f64> = (0..self.alpha.cols()).map(|k| self.alpha.col(k).iter().sum::<f64>()).collect();
        totals.windows(2).map(|w| ((w[1] - w[0]) / w[0]).abs()).fold(0.0, f64::max)
    }
}

/// Runs `field` from equilibrium for `duration` seconds, sampling at `opts.sample_hz`.
pub fn forward_solve(
    field: &dyn ActivationField,
    fit: &TubeLawFit,
    volume_m3: f64,
    duration: f64,
    opts: ForwardOptions,
) -> Result<ForwardRun> {
    if !(duration > 0.0) {
        return invalid("duration must be positive");
    }
    let mut solver = ForwardSolver::at_equilibrium(field, fit, volume_m3, opts)?;
    let n = field.n_cells();
    let n_samples = (duration * opts.sample_hz).round() as usize + 1;
    let times: Vec<f64> = (0..n_samples).map(|k| k as f64 / opts.sample_hz).collect();
    let mut alpha = Matrix::zeros(n, n_samples);
    let mut q = Matrix::zeros(n + 1, n_samples);
    let mut p = Matrix::zeros(n, n_samples);
    let scale = fit.fluid.pressure_scale();
    for (k, &t) in times.iter().enumerate() {
        solver.advance_to(t)?;
        alpha.set_col(k, solver.alpha());
        q.set_col(k, solver.q());
        let pk: Vec<f64> = solver.pressure().iter().map(|v| v * scale).collect();
        p.set_col(k, &pk);
    }
    let area_scale = fit.area_scale();
    Ok(ForwardRun {
        distal_pressure_pa: p.row(n - 1).to_vec(),
        area_m2: alpha.map(|a| a * area_scale),
        time_s: times,
        alpha,
        q,
        pressure_pa: p,
        volume_m3,
        length_m: fit.length_m,
        substeps: solver.steps(),
    })
}

/// Forward run of a `[16 × 16]` θ grid spanning `duration`, wrapped as an
/// analysis window covering the whole run.
pub fn forward_solve_grid(
    theta: &Matrix,
    fit: &TubeLawFit,
    volume_m3: f64,
    duration: f64,
) -> Result<(crate::ingest::AnalysisWindow, ForwardRun)> {
    let field = GridActivation::new(theta.clone(), duration)?;
    let run = forward_solve(&field, fit, volume_m3, duration, ForwardOptions::default())?;
    let rec = crate::ingest::to_si(&run_to_recording(&run, fit.length_m / N_SENSORS as f64 * 100.0)?);
    let window = crate::ingest::select_window(&rec, 0.0, run.time_s[run.time_s.len() - 1], fit)?;
    Ok((window, run))
}

/// Clinical-unit recording of a forward run.
pub fn run_to_recording(run: &ForwardRun, spacing_cm: f64) -> Result<FlipRecording> {
    if run.area_m2.rows() != N_SENSORS {
        return invalid(format!("recordings carry {N_SENSORS} sensors, run has {}", run.area_m2.rows()));
    }
    let n = run.time_s.len();
    FlipRecording::new(
        run.time_s.clone(),
        run.area_m2.map(|a| area_to_diameter(a) * 1e3),
        run.distal_pressure_pa.iter().map(|&p| pa_to_mmhg(p)).collect(),
        vec![m3_to_ml(run.volume_m3); n],
        spacing_cm,
    )
}

// ---------------------------------------------------------------------------
// Calibration protocol

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Protocol {
    /// Fill volumes, mL, in order.
    pub fill_volumes_ml: Vec<f64>,
    /// Fill that hosts the analysis window.
    pub window_fill: usize,
    pub rest_s: f64,
    pub ramp_in_s: f64,
    /// Linear volume change between fills.
    pub transition_s: f64,
}

impl Protocol {
    /// Four fills spaced around `volume_ml`, the window in the second.
    pub fn around(volume_ml: f64) -> Self {
        Protocol {
            fill_volumes_ml: vec![volume_ml - 10.0, volume_ml, volume_ml + 10.0, volume_ml + 20.0],
            window_fill: 1,
            rest_s: 1.5,
            ramp_in_s: 1.0,
            transition_s: 1.0,
        }
    }
}

/// A simulated multi-fill recording with its ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticRecording {
    pub recording: FlipRecording,
    pub t_start: f64,
    pub t_end: f64,
    /// Forward-model pressure field inside the window, `[cells × T]`, Pa.
    pub window_pressure_pa: Matrix,
}

fn sample_index(t: f64, hz: f64) -> usize {
    (t * hz).round() as usize
}

/// Simulates every fill of `protocol` with `field` (θ ≡ 1 rest, ramp-in,
/// then `duration` seconds of the field) and joins them with volume ramps.
pub fn simulate_protocol(
    field: &dyn ActivationField,
    duration: f64,
    fit: &TubeLawFit,
    protocol: &Protocol,
    spacing_cm: f64,
) -> Result<SyntheticRecording> {
    if protocol.fill_volumes_ml.is_empty() || protocol.window_fill >= protocol.fill_volumes_ml.len() {
        return invalid("protocol needs at least one fill and a valid window fill");
    }
    let hz = SAMPLE_HZ;
    let sched = Scheduled { field, rest_s: protocol.rest_s, ramp_s: protocol.ramp_in_s };
    let fill_len = sched.field_start() + duration;
    let trans = sample_index(protocol.transition_s, hz);

    let mut diam: Vec<Vec<f64>> = Vec::new();
    let mut pd = Vec::new();
    let mut vol = Vec::new();
    let mut window = (0, 0);
    let mut window_pressure = Matrix::zeros(0, 0);
    for (j, &v_ml) in protocol.fill_volumes_ml.iter().enumerate() {
        let run = forward_solve(&sched, fit, ml_to_m3(v_ml), fill_len, ForwardOptions::default())?;
        let d = run.area_m2.map(|a| area_to_diameter(a) * 1e3);
        if j > 0 {
            // linear joins from the previous fill's last sample to this fill's first
            let (d0, p0, v0) = (diam.last().cloned().unwrap(), *pd.last().unwrap(), *vol.last().unwrap());
            let d1 = d.col(0);
            for s in 1..trans {
                let w = s as f64 / trans as f64;
                diam.push(d0.iter().zip(&d1).map(|(a, b)| a + w * (b - a)).collect());
                pd.push(p0 + w * (pa_to_mmhg(run.distal_pressure_pa[0]) - p0));
                vol.push(v0 + w * (v_ml - v0));
            }
        }
        let offset = pd.len();
        if j == protocol.window_fill {
            let s = sample_index(sched.field_start(), hz);
            let e = s + sample_index(duration, hz);
            window = (offset + s, offset + e);
            window_pressure = Matrix::from_fn(run.pressure_pa.rows(), e - s + 1, |i, k| run.pressure_pa.get(i, s + k));
        }
        for k in 0..run.time_s.len() {
            diam.push(d.col(k));
            pd.push(pa_to_mmhg(run.distal_pressure_pa[k]));
            vol.push(v_ml);
        }
    }
    let n = pd.len();
    let time: Vec<f64> = (0..n).map(|k| k as f64 / hz).collect();
    let diameters = Matrix::from_fn(N_SENSORS, n, |i, k| diam[k][i]);
    let recording = FlipRecording::new(time, diameters, pd, vol, spacing_cm)?;
    Ok(SyntheticRecording { t_start: window.0 as f64 / hz, t_end: window.1 as f64 / hz, recording, window_pressure_pa: window_pressure })
}

// ---------------------------------------------------------------------------
// Cohorts

/// Ranges the ground-truth tube law and fill volume are drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorRanges {
    pub k_over_ao: (f64, f64),
    pub po_minus_k: (f64, f64),
    pub volume_ml: (f64, f64),
}

impl Default for PriorRanges {
    fn default() -> Self {
        PriorRanges { k_over_ao: (0.8e7, 1.6e7), po_minus_k: (-1200.0, -200.0), volume_ml: (30.0, 50.0) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CohortEntry {
    pub phenotype: PhenotypeKind,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortSpec {
    pub entries: Vec<CohortEntry>,
    #[serde(default)]
    pub priors: PriorRanges,
    #[serde(default = "default_spacing")]
    pub sensor_spacing_cm: f64,
    #[serde(default)]
    pub fluid: FluidProperties,
}

fn default_spacing() -> f64 {
    crate::ingest::DEFAULT_SENSOR_SPACING_CM
}

impl CohortSpec {
    pub fn new(entries: Vec<CohortEntry>) -> Self {
        CohortSpec { entries, priors: PriorRanges::default(), sensor_spacing_cm: default_spacing(), fluid: FluidProperties::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.entries.is_empty() {
            return invalid("cohort spec is empty");
        }
        if let Some(e) = self.entries.iter().find(|e| e.count == 0) {
            return invalid(format!("cohort entry {} has count 0", e.phenotype));
        }
        if !(self.sensor_spacing_cm > 0.0) {
            return invalid("sensor spacing must be positive");
        }
        Ok(())
    }

    pub fn total(&self) -> usize {
        self.entries.iter().map(|e| e.count).sum()
    }
}

/// One synthetic subject window and its ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortSample {
    pub id: String,
    pub index: usize,
    pub seed: u64,
    pub phenotype: Phenotype,
    pub disease: String,
    pub peristalsis: u8,
    pub true_fit: TubeLawFit,
    pub protocol: Protocol,
    pub synthetic: SyntheticRecording,
    /// Prescribed θ on the 16 × 16 window grid.
    pub theta_grid: Matrix,
    /// Generation values of the discrete parameters.
    pub params: PrimaryParams,
}

impl CohortSample {
    pub fn window(&self, fit_id: &str) -> WindowDescriptor {
        WindowDescriptor { t_start: self.synthetic.t_start, t_end: self.synthetic.t_end, fit_id: fit_id.to_string() }
    }
}

/// Draws and simulates sample `index` of a cohort.
pub fn generate_sample(spec: &CohortSpec, kind: PhenotypeKind, index: usize, seed: u64) -> Result<CohortSample> {
    let mut rng = stream_rng(seed, index as u64);
    let segment_cm = spec.sensor_spacing_cm * N_SENSORS as f64;
    let phen = Phenotype::sample(kind, segment_cm, &mut rng);
    phen.validate()?;
    let pr = &spec.priors;
    let k = rng.random_range(pr.k_over_ao.0..pr.k_over_ao.1);
    let b = rng.random_range(pr.po_minus_k.0..pr.po_minus_k.1);
    let v_ml = rng.random_range(pr.volume_ml.0..pr.volume_ml.1);
    let fit = TubeLawFit::from_params(k, b, spec.fluid, segment_cm * 1e-2);
    let mut protocol = Protocol::around(v_ml);
    for v in protocol.fill_volumes_ml.iter_mut().skip(2) {
        *v += rng.random_range(-2.0..2.0);
    }
    let field = PhenotypeField::new(phen, N_SENSORS, segment_cm);
    let synthetic = simulate_protocol(&field, phen.duration_s, &fit, &protocol, spec.sensor_spacing_cm)?;
    let theta_grid = field.grid(phen.duration_s);
    let pd_max = synthetic.window_pressure_pa.row(N_SENSORS - 1).iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let params = PrimaryParams {
        k_over_ao: k,
        po_minus_k: b,
        p_max: pd_max,
        t_max: phen.duration_s,
        volume: ml_to_m3(v_ml),
        theta_max: theta_grid.max(),
    };
    Ok(CohortSample {
        id: format!("s{index:05}"),
        index,
        seed,
        phenotype: phen,
        disease: kind.name().to_string(),
        peristalsis: kind.peristaltic() as u8,
        true_fit: fit,
        protocol,
        synthetic,
        theta_grid,
        params,
    })
}

/// Deterministic cohort; sample `i` depends only on `(seed, i)`.
pub fn generate_cohort(spec: &CohortSpec, seed: u64) -> Result<Vec<CohortSample>> {
    spec.validate()?;
    let kinds: Vec<PhenotypeKind> = spec.entries.iter().flat_map(|e| std::iter::repeat_n(e.phenotype, e.count)).collect();
    // Each sample owns RNG stream (seed, index), so the parallel map matches a serial run.
    kinds.par_iter().enumerate().map(|(index, &kind)| generate_sample(spec, kind, index, seed)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub recording: String,
    pub theta_grid: String,
    pub truth: String,
    pub disease: String,
    pub peristalsis: u8,
    pub seed: u64,
    pub index: usize,
    pub t_start: f64,
    pub t_end: f64,
    /// Follow-up bookkeeping for real cohorts; synthetic samples leave these unset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subject: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortManifest {
    pub seed: u64,
    pub spec: CohortSpec,
    pub samples: Vec<ManifestEntry>,
}

/// Ground truth written next to each recording.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleTruth {
    pub phenotype: Phenotype,
    pub fit: crate::calibrate::FitRecord,
    pub params: PrimaryParams,
    pub protocol: Protocol,
}

/// Writes recordings, θ grids, truth files and `manifest.json` into `dir`.
pub fn write_cohort(samples: &[CohortSample], spec: &CohortSpec, seed: u64, dir: &Path) -> Result<CohortManifest> {
    fs::create_dir_all(dir)?;
    let mut entries = Vec::with_capacity(samples.len());
    for s in samples {
        let rec = format!("{}.csv", s.id);
        let grid = format!("{}_theta.csv", s.id);
        let truth = format!("{}_truth.json", s.id);
        crate::ingest::write_recording(&s.synthetic.recording, fs::File::create(dir.join(&rec))?)?;
        s.theta_grid.write_csv(fs::File::create(dir.join(&grid))?)?;
        let t = SampleTruth { phenotype: s.phenotype, fit: s.true_fit.to_record(), params: s.params, protocol: s.protocol.clone() };
        fs::write(dir.join(&truth), serde_json::to_vec_pretty(&t)?)?;
        entries.push(ManifestEntry {
            id: s.id.clone(),
            recording: rec,
            theta_grid: grid,
            truth,
            disease: s.disease.clone(),
            peristalsis: s.peristalsis,
            seed: s.seed,
            index: s.index,
            t_start: s.synthetic.t_start,
            t_end: s.synthetic.t_end,
            subject: None,
            time: None,
        });
    }
    let manifest = CohortManifest { seed, spec: spec.clone(), samples: entries };
    fs::write(dir.join("manifest.json"), serde_json::to_vec_pretty(&manifest)?)?;
    Ok(manifest)
}

// ---------------------------------------------------------------------------
// Augmentation

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldTransforms {
    pub grid_distort_p: f64,
    /// Largest control-node displacement, in cells.
    pub grid_distort_limit: f64,
    pub elastic_p: f64,
    /// Displacement magnitude, in cells.
    pub elastic_alpha: f64,
    /// Gaussian smoothing of the displacement field, in cells.
    pub elastic_sigma: f64,
    pub blur_p: f64,
    pub blur_min: usize,
    pub blur_max: usize,
}

impl Default for FieldTransforms {
    fn default() -> Self {
        FieldTransforms {
            grid_distort_p: 0.9,
            grid_distort_limit: 0.2,
            elastic_p: 0.8,
            elastic_alpha: 1.0,
            elastic_sigma: 2.0,
            blur_p: 0.7,
            blur_min: 3,
            blur_max: 6,
        }
    }
}

impl FieldTransforms {
    pub fn none() -> Self {
        FieldTransforms { grid_distort_p: 0.0, elastic_p: 0.0, blur_p: 0.0, ..Self::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentSpec {
    pub scalar_sigma: f64,
    pub normal_clip: f64,
    pub field: FieldTransforms,
    pub replicas_per_sample: usize,
}

impl Default for AugmentSpec {
    fn default() -> Self {
        AugmentSpec { scalar_sigma: 0.05, normal_clip: 2.0, field: FieldTransforms::default(), replicas_per_sample: 31 }
    }
}

/// Standard normal draw resampled until `|N| < clip`.
pub fn truncated_normal<R: Rng + ?Sized>(rng: &mut R, clip: f64) -> f64 {
    assert!(clip > 0.0);
    loop {
        let n: f64 = StandardNormal.sample(rng);
        if n.abs() < clip {
            return n;
        }
    }
}

/// Scalars perturbed by multiplicative factors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalarInputs {
    pub k_over_ao: f64,
    pub po_minus_k: f64,
    pub pd_series: Vec<f64>,
    pub t_max: f64,
}

/// Applies `f = 1 + σN` with the given normals (K/A_o, P_o−K, P_d, T_max).
pub fn augment_scalars_with(x: &ScalarInputs, sigma: f64, normals: [f64; 4]) -> ScalarInputs {
    let f = normals.map(|n| 1.0 + sigma * n);
    ScalarInputs {
        k_over_ao: x.k_over_ao * f[0],
        po_minus_k: x.po_minus_k * f[1],
        pd_series: x.pd_series.iter().map(|p| p * f[2]).collect(),
        t_max: x.t_max * f[3],
    }
}

pub fn augment_scalars<R: Rng + ?Sized>(x: &ScalarInputs, spec: &AugmentSpec, rng: &mut R) -> ScalarInputs {
    let normals = [(); 4].map(|_| truncated_normal(rng, spec.normal_clip));
    augment_scalars_with(x, spec.scalar_sigma, normals)
}

/// Bilinear sample of `m` at fractional `(row, col)`, clamped to the edges.
fn sample_clamped(m: &Matrix, r: f64, c: f64) -> f64 {
    let r = r.clamp(0.0, (m.rows() - 1) as f64);
    let c = c.clamp(0.0, (m.cols() - 1) as f64);
    let (r0, c0) = (r.floor() as usize, c.floor() as usize);
    let (r1, c1) = ((r0 + 1).min(m.rows() - 1), (c0 + 1).min(m.cols() - 1));
    let (wr, wc) = (r - r0 as f64, c - c0 as f64);
    let top = m.get(r0, c0) * (1.0 - wc) + m.get(r0, c1) * wc;
    let bot = m.get(r1, c0) * (1.0 - wc) + m.get(r1, c1) * wc;
    top * (1.0 - wr) + bot * wr
}

fn warp(m: &Matrix, dr: &Matrix, dc: &Matrix) -> Matrix {
    Matrix::from_fn(m.rows(), m.cols(), |i, j| sample_clamped(m, i as f64 + dr.get(i, j), j as f64 + dc.get(i, j)))
}

/// Smooth distortion from random displacements on a 4 × 4 control lattice.
pub fn grid_distort<R: Rng + ?Sized>(m: &Matrix, limit: f64, rng: &mut R) -> Matrix {
    let lattice = |rng: &mut R| Matrix::from_fn(4, 4, |_, _| rng.random_range(-limit..=limit));
    let (lr, lc) = (lattice(rng), lattice(rng));
    let up = |l: &Matrix| {
        Matrix::from_fn(m.rows(), m.cols(), |i, j| {
            let r = 3.0 * i as f64 / (m.rows() - 1).max(1) as f64;
            let c = 3.0 * j as f64 / (m.cols() - 1).max(1) as f64;
            sample_clamped(l, r, c)
        })
    };
    warp(m, &up(&lr), &up(&lc))
}

fn gaussian_smooth(m: &Matrix, sigma: f64) -> Matrix {
    let rad = (3.0 * sigma).ceil() as isize;
    let kernel: Vec<f64> = (-rad..=rad).map(|o| gauss(o as f64, sigma)).collect();
    let norm: f64 = kernel.iter().sum();
    let pass = |src: &Matrix, along_rows: bool| {
        Matrix::from_fn(src.rows(), src.cols(), |i, j| {
            let mut acc = 0.0;
            for (o, w) in (-rad..=rad).zip(&kernel) {
                let (ii, jj) = if along_rows { (i as isize + o, j as isize) } else { (i as isize, j as isize + o) };
                let ii = ii.clamp(0, src.rows() as isize - 1) as usize;
                let jj = jj.clamp(0, src.cols() as isize - 1) as usize;
                acc += w * src.get(ii, jj);
            }
            acc / norm
        })
    };
    pass(&pass(m, true), false)
}

/// Elastic warp: uniform random displacements, Gaussian smoothed and scaled.
pub fn elastic<R: Rng + ?Sized>(m: &Matrix, alpha: f64, sigma: f64, rng: &mut R) -> Matrix {
    let field = |rng: &mut R| {
        let raw = Matrix::from_fn(m.rows(), m.cols(), |_, _| rng.random_range(-1.0..=1.0));
        let s = gaussian_smooth(&raw, sigma);
        let peak = s.as_slice().iter().fold(0.0f64, |a, v| a.max(v.abs())).max(f64::MIN_POSITIVE);
        s.map(|v| alpha * v / peak)
    };
    let dr = field(rng);
    let dc = field(rng);
    warp(m, &dr, &dc)
}

/// Box filter of `width` samples along time, edge samples replicated.
pub fn blur_time(m: &Matrix, width: usize) -> Matrix {
    if width <= 1 {
        return m.clone();
    }
    let lo = -((width / 2) as isize);
    let hi = lo + width as isize;
    let last = m.cols() as isize - 1;
    Matrix::from_fn(m.rows(), m.cols(), |i, j| {
        (lo..hi).map(|o| m.get(i, (j as isize + o).clamp(0, last) as usize)).sum::<f64>() / width as f64
    })
}

/// Grid distortion, then elastic warp, then temporal blur, each with its own probability.
pub fn augment_field<R: Rng + ?Sized>(grid: &Matrix, tr: &FieldTransforms, rng: &mut R) -> Matrix {
    let mut out = grid.clone();
    if rng.random_bool(tr.grid_distort_p) {
        out = grid_distort(&out, tr.grid_distort_limit, rng);
    }
    if rng.random_bool(tr.elastic_p) {
        out = elastic(&out, tr.elastic_alpha, tr.elastic_sigma, rng);
    }
    if rng.random_bool(tr.blur_p) {
        let w = rng.random_range(tr.blur_min..=tr.blur_max);
        out = blur_time(&out, w);
    }
    let floor = 1e-6 * grid.mean();
    out.map(|v| v.max(floor))
}
