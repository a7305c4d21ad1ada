//! Inverse flow model on a staggered finite-volume grid.
//!
//! Cell `I` (area ratio `α_I`) sits between interfaces `i = I` and `i = I+1`;
//! the flow rate `q` and scaled pressure `p = P / ρc²` live on interfaces.
//! Each time level solves two tridiagonal systems: the differentiated
//! continuity equation for `q` with `q = 0` at both closed ends, then the
//! differentiated momentum equation for `p` with zero gradient proximally and
//! the measured distal pressure as a Dirichlet value. The activation follows
//! from the tube law, `θ = (K/A_o)·A / (P − (P_o − K))`.
//!
//! Pressure is scaled by ρc² rather than by K, since only K/A_o is
//! identifiable from the calibration.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::calibrate::TubeLawFit;
use crate::error::{invalid, Error, Result};
use crate::ingest::AnalysisWindow;
use crate::matrix::{resample_bilinear, Matrix};
use crate::tridiag::Tridiagonal;
use crate::GRID;

pub const THETA_MIN: f64 = 0.05;
pub const THETA_MAX: f64 = 5.0;
/// Clamped-cell fraction above which a window is reported unreliable.
pub const UNRELIABLE_CLAMP_FRACTION: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StaggeredGrid {
    pub n_cells: usize,
    pub d_chi: f64,
}

impl StaggeredGrid {
    pub fn new(n_cells: usize) -> Self {
        assert!(n_cells >= 2, "grid needs at least two cells");
        StaggeredGrid { n_cells, d_chi: 1.0 / n_cells as f64 }
    }

    pub fn n_interfaces(&self) -> usize {
        self.n_cells + 1
    }

    pub fn cell_centers(&self) -> Vec<f64> {
        (0..self.n_cells).map(|i| (i as f64 + 0.5) * self.d_chi).collect()
    }

    pub fn interfaces(&self) -> Vec<f64> {
        (0..=self.n_cells).map(|i| i as f64 * self.d_chi).collect()
    }
}

/// Area ratio at interfaces: mean of the neighbouring cells, one-sided at the walls.
pub fn interface_alpha(alpha: &[f64]) -> Vec<f64> {
    let n = alpha.len();
    (0..=n)
        .map(|i| match i {
            0 => alpha[0],
            i if i == n => alpha[n - 1],
            i => 0.5 * (alpha[i - 1] + alpha[i]),
        })
        .collect()
}

/// Continuity system for the flow rate at one time level.
pub fn flow_rate_system(alpha_prev: &[f64], alpha_now: &[f64], grid: &StaggeredGrid, d_tau: f64) -> Tridiagonal {
    let n = grid.n_cells;
    assert_eq!(alpha_prev.len(), n);
    assert_eq!(alpha_now.len(), n);
    let mut sys = Tridiagonal::with_size(n + 1);
    sys.diag[0] = 1.0;
    sys.diag[n] = 1.0;
    let coef = grid.d_chi / (2.0 * d_tau);
    for i in 1..n {
        sys.lower[i] = -0.5;
        sys.diag[i] = 1.0;
        sys.upper[i] = -0.5;
        sys.rhs[i] = coef * (alpha_now[i] - alpha_now[i - 1] - alpha_prev[i] + alpha_prev[i - 1]);
    }
    sys
}

/// Flow rate on interfaces given the area ratio at two consecutive levels.
pub fn solve_flow_rate(alpha_prev: &[f64], alpha_now: &[f64], grid: &StaggeredGrid, d_tau: f64) -> Result<Vec<f64>> {
    if !(d_tau > 0.0) {
        return invalid(format!("time step must be positive, got {d_tau}"));
    }
    let mut q = flow_rate_system(alpha_prev, alpha_now, grid, d_tau).solve()?;
    q[0] = 0.0;
    q[grid.n_cells] = 0.0;
    Ok(q)
}

/// Inputs of the pressure system at one time level.
#[derive(Debug, Clone, Copy)]
pub struct PressureLevel<'a> {
    pub q_prev: &'a [f64],
    pub q_now: &'a [f64],
    /// Cell area ratios at the current level.
    pub alpha: &'a [f64],
    /// Distal pressure, scaled by ρc².
    pub p_distal: f64,
    /// Friction parameter.
    pub phi: f64,
    pub d_tau: f64,
}

pub fn pressure_system(level: &PressureLevel<'_>, grid: &StaggeredGrid) -> Result<Tridiagonal> {
    let n = grid.n_cells;
    let PressureLevel { q_prev, q_now, alpha, p_distal, phi, d_tau } = *level;
    assert_eq!(alpha.len(), n);
    assert_eq!(q_now.len(), n + 1);
    assert_eq!(q_prev.len(), n + 1);
    if let Some(c) = alpha.iter().position(|a| !(*a > 0.0)) {
        return Err(Error::Degenerate(format!("collapsed cell {c}: area ratio {}", alpha[c])));
    }
    let ai = interface_alpha(alpha);
    let mut sys = Tridiagonal::with_size(n + 1);
    // zero gradient at the proximal wall
    sys.diag[0] = 1.0;
    sys.upper[0] = -1.0;
    let dq = grid.d_chi / (2.0 * d_tau);
    for i in 1..n {
        let (left, right) = (alpha[i - 1], alpha[i]);
        sys.lower[i] = -left;
        sys.diag[i] = left + right;
        sys.upper[i] = -right;
        let unsteady = dq * (q_now[i + 1] - q_now[i - 1] - q_prev[i + 1] + q_prev[i - 1]);
        let convective = q_now[i + 1].powi(2) / ai[i + 1] + q_now[i - 1].powi(2) / ai[i - 1] - 2.0 * q_now[i].powi(2) / ai[i];
        let friction = 0.5 * phi * grid.d_chi * (q_now[i + 1] / ai[i + 1] - q_now[i - 1] / ai[i - 1]);
        sys.rhs[i] = unsteady + convective + friction;
    }
    sys.diag[n] = 1.0;
    sys.rhs[n] = p_distal;
    Ok(sys)
}

/// Scaled interface pressure at one level.
pub fn solve_pressure(level: &PressureLevel<'_>, grid: &StaggeredGrid) -> Result<Vec<f64>> {
    let mut p = pressure_system(level, grid)?.solve()?;
    p[grid.n_cells] = level.p_distal;
    Ok(p)
}

/// θ recovered from pressure and area fields of the same shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Activation {
    pub theta: Matrix,
    /// Row-major, same shape as `theta`.
    pub clamp_mask: Vec<bool>,
    pub clamp_fraction: f64,
    pub unreliable: bool,
}

pub fn recover_activation(pressure_pa: &Matrix, area_m2: &Matrix, fit: &TubeLawFit) -> Activation {
    assert_eq!((pressure_pa.rows(), pressure_pa.cols()), (area_m2.rows(), area_m2.cols()));
    let mut mask = Vec::with_capacity(area_m2.as_slice().len());
    let theta = Matrix::from_fn(area_m2.rows(), area_m2.cols(), |r, c| {
        let denom = pressure_pa.get(r, c) - fit.po_minus_k;
        let raw = if denom > 0.0 { fit.k_over_ao * area_m2.get(r, c) / denom } else { f64::INFINITY };
        let clamped = if raw.is_nan() { THETA_MAX } else { raw.clamp(THETA_MIN, THETA_MAX) };
        mask.push(clamped != raw);
        clamped
    });
    let clamp_fraction = mask.iter().filter(|m| **m).count() as f64 / mask.len().max(1) as f64;
    let unreliable = clamp_fraction > UNRELIABLE_CLAMP_FRACTION;
    if unreliable {
        log::warn!("{:.0}% of activation cells clamped; window unreliable", clamp_fraction * 100.0);
    }
    Activation { theta, clamp_mask: mask, clamp_fraction, unreliable }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MechanicsState {
    pub grid: StaggeredGrid,
    pub time_s: Vec<f64>,
    /// `[cells × T]`.
    pub alpha: Matrix,
    /// `[interfaces × T]`, non-dimensional flow rate.
    pub q: Matrix,
    /// `[interfaces × T]`, pressure scaled by ρc².
    pub p: Matrix,
    /// `[cells × T]`, dimensional pressure at cell centres.
    pub pressure_pa: Matrix,
    /// `[cells × T]`.
    pub area_m2: Matrix,
    /// `[cells × T]`, activation at native resolution.
    pub theta_native: Matrix,
    /// 16 × 16 activation resampled onto the window grid.
    pub theta: Matrix,
    pub clamp_mask: Vec<bool>,
    pub clamp_fraction: f64,
    pub unreliable: bool,
    pub fit_id: String,
    pub t_start: f64,
    pub t_end: f64,
}

/// Runs both linear solves level by level and recovers θ.
pub fn invert_window(window: &AnalysisWindow, fit: &TubeLawFit) -> Result<MechanicsState> {
    let native = &window.native;
    let n_cells = native.area_m2.rows();
    let nt = native.time_s.len();
    if nt < 2 {
        return invalid("inverse solve needs at least two time levels");
    }
    let grid = StaggeredGrid::new(n_cells);
    let area_scale = fit.area_scale();
    let p_scale = fit.fluid.pressure_scale();
    let phi = fit.gamma();
    let tau_per_s = fit.fluid.c / window.length_m;
    let alpha = native.area_m2.map(|a| a / area_scale);

    let mut q = Matrix::zeros(n_cells + 1, nt);
    for k in 1..nt {
        let d_tau = (native.time_s[k] - native.time_s[k - 1]) * tau_per_s;
        let qk = solve_flow_rate(&alpha.col(k - 1), &alpha.col(k), &grid, d_tau)?;
        q.set_col(k, &qk);
    }
    let first = q.col(1);
    q.set_col(0, &first);

    let mut p = Matrix::zeros(n_cells + 1, nt);
    for k in 0..nt {
        let (kp, d_tau) = if k == 0 {
            (0, (native.time_s[1] - native.time_s[0]) * tau_per_s)
        } else {
            (k - 1, (native.time_s[k] - native.time_s[k - 1]) * tau_per_s)
        };
        let (q_prev, q_now, a) = (q.col(kp), q.col(k), alpha.col(k));
        let level =
            PressureLevel { q_prev: &q_prev, q_now: &q_now, alpha: &a, p_distal: native.distal_pressure_pa[k] / p_scale, phi, d_tau };
        let pk = solve_pressure(&level, &grid).map_err(|e| match e {
            Error::Degenerate(m) => Error::Degenerate(format!("time level {k}: {m}")),
            other => other,
        })?;
        p.set_col(k, &pk);
    }

    let pressure_pa = Matrix::from_fn(n_cells, nt, |i, k| 0.5 * (p.get(i, k) + p.get(i + 1, k)) * p_scale);
    let act = recover_activation(&pressure_pa, &native.area_m2, fit);
    let cells: Vec<f64> = (0..n_cells).map(|i| i as f64).collect();
    let grid_x = crate::matrix::linspace(0.0, (n_cells - 1) as f64, GRID);
    let theta = resample_bilinear(&act.theta, &cells, &native.time_s, &grid_x, &window.grid_times());

    Ok(MechanicsState {
        grid,
        time_s: native.time_s.clone(),
        alpha,
        q,
        p,
        pressure_pa,
        area_m2: native.area_m2.clone(),
        theta_native: act.theta,
        theta,
        clamp_mask: act.clamp_mask,
        clamp_fraction: act.clamp_fraction,
        unreliable: act.unreliable,
        fit_id: fit.fit_id(),
        t_start: window.t_start,
        t_end: window.t_end,
    })
}

/// Largest relative change of the total area ratio over time.
pub fn mass_drift(alpha: &Matrix, d_chi: f64) -> f64 {
    let total = |k: usize| -> f64 { (0..alpha.rows()).map(|i| alpha.get(i, k)).sum::<f64>() * d_chi };
    let initial = total(0);
    (0..alpha.cols()).map(|k| (total(k) - initial).abs()).fold(0.0, f64::max) / initial.abs()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct StateManifest {
    n_cells: usize,
    d_chi: f64,
    fit_id: String,
    clamp_fraction: f64,
    unreliable: bool,
    t_start: f64,
    t_end: f64,
    files: Vec<String>,
}

impl MechanicsState {
    pub fn check_mass_conservation(&self) -> f64 {
        mass_drift(&self.alpha, self.grid.d_chi)
    }

    /// Largest |q| on the two end interfaces over all levels.
    pub fn end_flow_rate(&self) -> f64 {
        let n = self.grid.n_cells;
        (0..self.q.cols()).map(|k| self.q.get(0, k).abs().max(self.q.get(n, k).abs())).fold(0.0, f64::max)
    }

    /// Writes CSV matrices plus `manifest.json` into `dir`.
    pub fn save_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mask = Matrix::from_vec(
            self.theta_native.rows(),
            self.theta_native.cols(),
            self.clamp_mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect(),
        )?;
        let time = Matrix::from_vec(1, self.time_s.len(), self.time_s.clone())?;
        let files: [(&str, &Matrix); 9] = [
            ("time.csv", &time),
            ("alpha.csv", &self.alpha),
            ("q.csv", &self.q),
            ("p.csv", &self.p),
            ("pressure_pa.csv", &self.pressure_pa),
            ("area_m2.csv", &self.area_m2),
            ("theta_native.csv", &self.theta_native),
            ("theta.csv", &self.theta),
            ("clamp_mask.csv", &mask),
        ];
        for (name, m) in files {
            m.write_csv(fs::File::create(dir.join(name))?)?;
        }
        let manifest = StateManifest {
            n_cells: self.grid.n_cells,
            d_chi: self.grid.d_chi,
            fit_id: self.fit_id.clone(),
            clamp_fraction: self.clamp_fraction,
            unreliable: self.unreliable,
            t_start: self.t_start,
            t_end: self.t_end,
            files: files.iter().map(|f| f.0.to_string()).collect(),
        };
        fs::write(dir.join("manifest.json"), serde_json::to_vec_pretty(&manifest)?)?;
        Ok(())
    }

    pub fn load_dir(dir: &Path) -> Result<Self> {
        let manifest: StateManifest = serde_json::from_slice(&fs::read(dir.join("manifest.json"))?)?;
        let read = |name: &str| -> Result<Matrix> { Matrix::read_csv(fs::File::open(dir.join(name))?) };
        let theta_native = read("theta_native.csv")?;
        Ok(MechanicsState {
            grid: StaggeredGrid { n_cells: manifest.n_cells, d_chi: manifest.d_chi },
            time_s: read("time.csv")?.into_vec(),
            alpha: read("alpha.csv")?,
            q: read("q.csv")?,
            p: read("p.csv")?,
            pressure_pa: read("pressure_pa.csv")?,
            area_m2: read("area_m2.csv")?,
            theta: read("theta.csv")?,
            clamp_mask: read("clamp_mask.csv")?.as_slice().iter().map(|&v| v != 0.0).collect(),
            theta_native,
            clamp_fraction: manifest.clamp_fraction,
            unreliable: manifest.unreliable,
            fit_id: manifest.fit_id,
            t_start: manifest.t_start,
            t_end: manifest.t_end,
        })
    }
}
