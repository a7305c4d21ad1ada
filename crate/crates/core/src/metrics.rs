//! Discrete mechanics parameters and junction work metrics.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::calibrate::TubeLawFit;
use crate::error::{invalid, Error, Result};
use crate::ingest::AnalysisWindow;
use crate::inverse::MechanicsState;
use crate::matrix::Matrix;

/// Closed and fully open junction diameters, m.
pub const EGJ_CLOSED_DIAMETER_M: f64 = 3.0e-3;
pub const EGJ_OPEN_DIAMETER_M: f64 = 22.0e-3;
/// Junction cells are narrower than this fraction of the proximal body.
pub const EGJ_NARROWING_FRACTION: f64 = 0.6;

pub fn egj_closed_area() -> f64 {
    PI * (0.5 * EGJ_CLOSED_DIAMETER_M).powi(2)
}

pub fn egj_open_area() -> f64 {
    PI * (0.5 * EGJ_OPEN_DIAMETER_M).powi(2)
}

/// The six discrete parameters appended to the latent mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrimaryParams {
    /// Pa/m².
    pub k_over_ao: f64,
    /// Pa.
    pub po_minus_k: f64,
    /// Pa.
    pub p_max: f64,
    /// s.
    pub t_max: f64,
    /// m³.
    pub volume: f64,
    pub theta_max: f64,
}

impl PrimaryParams {
    pub const NAMES: [&'static str; 6] = ["k_over_ao", "po_minus_k", "p_max", "t_max", "volume", "theta_max"];

    pub fn to_array(&self) -> [f64; 6] {
        [self.k_over_ao, self.po_minus_k, self.p_max, self.t_max, self.volume, self.theta_max]
    }

    pub fn from_array(v: [f64; 6]) -> Self {
        PrimaryParams { k_over_ao: v[0], po_minus_k: v[1], p_max: v[2], t_max: v[3], volume: v[4], theta_max: v[5] }
    }
}

/// Junction work, J.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorkMetrics {
    pub egjw: f64,
    /// θ̂ taken at the opening start.
    pub egjrow1: f64,
    /// θ̂ the median over the opening.
    pub egjrow2: f64,
    /// θ̂ the minimum over the opening.
    pub egjrow3: f64,
}

impl WorkMetrics {
    pub const NAMES: [&'static str; 4] = ["egjw", "egjrow1", "egjrow2", "egjrow3"];

    pub fn to_array(&self) -> [f64; 4] {
        [self.egjw, self.egjrow1, self.egjrow2, self.egjrow3]
    }

    pub fn from_array(v: [f64; 4]) -> Self {
        WorkMetrics { egjw: v[0], egjrow1: v[1], egjrow2: v[2], egjrow3: v[3] }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EgjRegion {
    pub first_cell: usize,
    pub last_cell: usize,
    /// Proximal and distal bounds (cell centres), m.
    pub x1: f64,
    pub x2: f64,
    /// Native sample indices of the opening interval.
    pub i1: usize,
    pub i2: usize,
    pub t1: f64,
    pub t2: f64,
    pub a1: f64,
    pub a2: f64,
}

/// Manually chosen junction bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ManualEgj {
    pub first_cell: usize,
    pub last_cell: usize,
    /// Opening interval, s; detected from the diameters when absent.
    pub t1: Option<f64>,
    pub t2: Option<f64>,
}

fn diameters(area: &Matrix) -> Matrix {
    area.map(|a| (4.0 * a / PI).sqrt())
}

fn nearest_index(times: &[f64], t: f64) -> usize {
    (0..times.len()).min_by(|&a, &b| (times[a] - t).abs().total_cmp(&(times[b] - t).abs())).expect("non-empty time axis")
}

/// Opening interval from the region's mean diameter: the widest point, then
/// the lowest point before it.
fn opening_interval(d: &Matrix, first: usize, last: usize) -> Result<(usize, usize)> {
    let nt = d.cols();
    if nt < 2 {
        return invalid("opening interval needs at least two samples");
    }
    let n = (last - first + 1) as f64;
    let mean: Vec<f64> = (0..nt).map(|k| (first..=last).map(|i| d.get(i, k)).sum::<f64>() / n).collect();
    let argmin = |r: std::ops::Range<usize>| r.min_by(|&a, &b| mean[a].total_cmp(&mean[b]));
    let argmax = |r: std::ops::Range<usize>| r.max_by(|&a, &b| mean[a].total_cmp(&mean[b]).then(b.cmp(&a)));
    let i2 = argmax(0..nt).unwrap();
    if i2 > 0 {
        return Ok((argmin(0..i2).unwrap(), i2));
    }
    // widest at the very start: the junction only closes, so take the low and the widest after it
    let i1 = argmin(0..nt).unwrap();
    if i1 + 1 >= nt {
        return Err(Error::Degenerate("junction never opens inside the window".into()));
    }
    Ok((i1, argmax(i1 + 1..nt).unwrap()))
}

fn region_from(state: &MechanicsState, cell_width_m: f64, first: usize, last: usize, i1: usize, i2: usize) -> EgjRegion {
    let centre = |i: usize| (i as f64 + 0.5) * cell_width_m;
    EgjRegion {
        first_cell: first,
        last_cell: last,
        x1: centre(first),
        x2: centre(last),
        i1,
        i2,
        t1: state.time_s[i1],
        t2: state.time_s[i2],
        a1: egj_closed_area(),
        a2: egj_open_area(),
    }
}

/// Finds the junction as the distal run of cells whose time-averaged
/// diameter stays below 60% of the proximal-half average.
pub fn locate_egj(state: &MechanicsState, cell_width_m: f64) -> Result<EgjRegion> {
    let d = diameters(&state.area_m2);
    let (n, nt) = (d.rows(), d.cols());
    let avg: Vec<f64> = (0..n).map(|i| d.row(i).iter().sum::<f64>() / nt as f64).collect();
    let half = n / 2;
    let body = avg[..half].iter().sum::<f64>() / half as f64;
    let threshold = EGJ_NARROWING_FRACTION * body;
    let m = (half..n).min_by(|&a, &b| avg[a].total_cmp(&avg[b])).expect("non-empty distal half");
    if avg[m] >= threshold {
        return Err(Error::NoJunction);
    }
    let mut first = m;
    while first > half && avg[first - 1] < threshold {
        first -= 1;
    }
    let mut last = m;
    while last + 1 < n && avg[last + 1] < threshold {
        last += 1;
    }
    if first == last {
        return Err(Error::Degenerate(format!("junction narrowing is a single cell ({first}); pass explicit bounds")));
    }
    let (i1, i2) = opening_interval(&d, first, last)?;
    Ok(region_from(state, cell_width_m, first, last, i1, i2))
}

pub fn manual_egj(state: &MechanicsState, cell_width_m: f64, manual: ManualEgj) -> Result<EgjRegion> {
    let n = state.area_m2.rows();
    if manual.first_cell >= manual.last_cell || manual.last_cell >= n {
        return invalid(format!("junction cells [{}, {}] outside 0..{n} or empty", manual.first_cell, manual.last_cell));
    }
    let (i1, i2) = match (manual.t1, manual.t2) {
        (Some(a), Some(b)) => (nearest_index(&state.time_s, a), nearest_index(&state.time_s, b)),
        _ => opening_interval(&diameters(&state.area_m2), manual.first_cell, manual.last_cell)?,
    };
    if i1 >= i2 {
        return invalid(format!("junction opening interval is empty (samples {i1}..{i2})"));
    }
    Ok(region_from(state, cell_width_m, manual.first_cell, manual.last_cell, i1, i2))
}

/// Time derivative by central differences, one-sided at the ends.
pub fn time_derivative(field: &Matrix, t: &[f64]) -> Matrix {
    let nt = field.cols();
    assert!(nt >= 2 && t.len() == nt);
    Matrix::from_fn(field.rows(), nt, |i, k| {
        let (a, b) = match k {
            0 => (0, 1),
            k if k == nt - 1 => (nt - 2, nt - 1),
            k => (k - 1, k + 1),
        };
        (field.get(i, b) - field.get(i, a)) / (t[b] - t[a])
    })
}

fn trapezoid(x: &[f64], y: &[f64]) -> f64 {
    x.windows(2).zip(y.windows(2)).map(|(x, y)| 0.5 * (x[1] - x[0]) * (y[0] + y[1])).sum()
}

/// ∫∫ P ∂A/∂t dx dt over cells `first..=last` and samples `i1..=i2`, trapezoidal in both directions.
pub fn compute_egjw(pressure: &Matrix, area: &Matrix, x: &[f64], t: &[f64], region: &EgjRegion) -> Result<f64> {
    let (n, nt) = (area.rows(), area.cols());
    if (pressure.rows(), pressure.cols()) != (n, nt) || x.len() != n || t.len() != nt {
        return invalid("pressure, area and coordinates disagree in shape");
    }
    if region.last_cell >= n || region.i2 >= nt || region.first_cell > region.last_cell || region.i1 > region.i2 {
        return invalid("junction region lies outside the solved domain");
    }
    let dadt = time_derivative(area, t);
    let xs = &x[region.first_cell..=region.last_cell];
    let per_time: Vec<f64> = (region.i1..=region.i2)
        .map(|k| {
            let f: Vec<f64> = (region.first_cell..=region.last_cell).map(|i| pressure.get(i, k) * dadt.get(i, k)).collect();
            trapezoid(xs, &f)
        })
        .collect();
    Ok(trapezoid(&t[region.i1..=region.i2], &per_time))
}

/// ∫_{A1}^{A2} [(K/A_o)A/θ̂ + (P_o − K)] ℓ dA in closed form.
pub fn egjrow_closed_form(k_over_ao: f64, po_minus_k: f64, theta_hat: f64, a1: f64, a2: f64, length: f64) -> f64 {
    assert!(theta_hat > 0.0, "activation must be positive, got {theta_hat}");
    length * (k_over_ao * (a2 * a2 - a1 * a1) / (2.0 * theta_hat) + po_minus_k * (a2 - a1))
}

/// The three θ̂ statistics of the junction: spatial median first, then the
/// value at the opening start, the temporal median and the temporal minimum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThetaHat {
    pub at_t1: f64,
    pub median: f64,
    pub min: f64,
}

pub fn median(values: &[f64]) -> f64 {
    assert!(!values.is_empty());
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

pub fn region_theta(theta: &Matrix, region: &EgjRegion) -> ThetaHat {
    let series: Vec<f64> = (region.i1..=region.i2)
        .map(|k| {
            let cells: Vec<f64> = (region.first_cell..=region.last_cell).map(|i| theta.get(i, k)).collect();
            median(&cells)
        })
        .collect();
    ThetaHat { at_t1: series[0], median: median(&series), min: series.iter().copied().fold(f64::INFINITY, f64::min) }
}

pub fn compute_egjrow(theta: &Matrix, fit: &TubeLawFit, region: &EgjRegion) -> (f64, f64, f64) {
    let h = region_theta(theta, region);
    let len = region.x2 - region.x1;
    let row = |th: f64| egjrow_closed_form(fit.k_over_ao, fit.po_minus_k, th, region.a1, region.a2, len);
    (row(h.at_t1), row(h.median), row(h.min))
}

pub fn discrete_params(window: &AnalysisWindow, state: &MechanicsState, fit: &TubeLawFit) -> PrimaryParams {
    PrimaryParams {
        k_over_ao: fit.k_over_ao,
        po_minus_k: fit.po_minus_k,
        p_max: window.native.distal_pressure_pa.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        t_max: window.duration,
        volume: window.volume_m3,
        theta_max: state.theta.max(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowMetrics {
    pub params: PrimaryParams,
    pub work: WorkMetrics,
    pub region: EgjRegion,
}

/// Flat JSON form of [`WindowMetrics`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub egjw_j: f64,
    pub egjrow1_j: f64,
    pub egjrow2_j: f64,
    pub egjrow3_j: f64,
    pub p_max_pa: f64,
    pub t_max_s: f64,
    pub theta_max: f64,
    pub volume_m3: f64,
    pub k_over_ao: f64,
    pub po_minus_k: f64,
}

impl WindowMetrics {
    pub fn to_record(&self) -> MetricsRecord {
        let (p, w) = (&self.params, &self.work);
        MetricsRecord {
            egjw_j: w.egjw,
            egjrow1_j: w.egjrow1,
            egjrow2_j: w.egjrow2,
            egjrow3_j: w.egjrow3,
            p_max_pa: p.p_max,
            t_max_s: p.t_max,
            theta_max: p.theta_max,
            volume_m3: p.volume,
            k_over_ao: p.k_over_ao,
            po_minus_k: p.po_minus_k,
        }
    }
}

/// Junction detection (or manual bounds), work metrics and discrete parameters.
pub fn analyze_window(
    window: &AnalysisWindow,
    state: &MechanicsState,
    fit: &TubeLawFit,
    manual: Option<ManualEgj>,
) -> Result<WindowMetrics> {
    let dx = window.cell_width_m();
    let region = match manual {
        Some(m) => manual_egj(state, dx, m)?,
        None => locate_egj(state, dx)?,
    };
    let x: Vec<f64> = (0..state.area_m2.rows()).map(|i| (i as f64 + 0.5) * dx).collect();
    let egjw = compute_egjw(&state.pressure_pa, &state.area_m2, &x, &state.time_s, &region)?;
    let (egjrow1, egjrow2, egjrow3) = compute_egjrow(&state.theta_native, fit, &region);
    Ok(WindowMetrics { params: discrete_params(window, state, fit), work: WorkMetrics { egjw, egjrow1, egjrow2, egjrow3 }, region })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn region(first: usize, last: usize, i1: usize, i2: usize, x: &[f64], t: &[f64]) -> EgjRegion {
        EgjRegion {
            first_cell: first,
            last_cell: last,
            x1: x[first],
            x2: x[last],
            i1,
            i2,
            t1: t[i1],
            t2: t[i2],
            a1: egj_closed_area(),
            a2: egj_open_area(),
        }
    }

    #[test]
    fn fixed_junction_areas() {
        assert_relative_eq!(egj_closed_area(), PI * 1.5e-3 * 1.5e-3, max_relative = 1e-15);
        assert_relative_eq!(egj_open_area(), PI * 11e-3 * 11e-3, max_relative = 1e-15);
    }

    #[test]
    fn closed_form_worked_example() {
        assert_relative_eq!(egjrow_closed_form(2.0, 5.0, 1.0, 1.0, 3.0, 1.0), 18.0, max_relative = 1e-15);
        let big = egjrow_closed_form(2.0, 5.0, 1e12, 1.0, 3.0, 1.0);
        assert_relative_eq!(big, 10.0, max_relative = 1e-10);
    }

    #[test]
    fn constant_pressure_linear_opening() {
        let x = [0.0, 0.01, 0.02, 0.03];
        let t = [0.0, 0.5, 1.0, 1.5, 2.0];
        let (a1, a2, p0) = (egj_closed_area(), egj_open_area(), 3000.0);
        let area = Matrix::from_fn(4, 5, |_, k| a1 + (a2 - a1) * t[k] / 2.0);
        let pressure = Matrix::filled(4, 5, p0);
        let r = region(0, 3, 0, 4, &x, &t);
        let w = compute_egjw(&pressure, &area, &x, &t, &r).unwrap();
        assert_relative_eq!(w, p0 * (a2 - a1) * 0.03, max_relative = 1e-12);
        let still = Matrix::filled(4, 5, a1);
        assert_eq!(compute_egjw(&pressure, &still, &x, &t, &r).unwrap(), 0.0);
    }

    #[test]
    fn reversed_opening_flips_sign() {
        let x = [0.0, 0.01, 0.02];
        let t: Vec<f64> = (0..9).map(|k| k as f64 * 0.1).collect();
        let area = Matrix::from_fn(3, 9, |i, k| 1e-4 * (1.0 + (k as f64 * 0.7 + i as f64).sin().powi(2)));
        let p = Matrix::from_fn(3, 9, |i, k| 2000.0 + 100.0 * (k as f64 * 0.3 - i as f64).cos());
        let rev = |m: &Matrix| Matrix::from_fn(3, 9, |i, k| m.get(i, 8 - k));
        let r = region(0, 2, 0, 8, &x, &t);
        let fwd = compute_egjw(&p, &area, &x, &t, &r).unwrap();
        let back = compute_egjw(&rev(&p), &rev(&area), &x, &t, &r).unwrap();
        assert_relative_eq!(fwd, -back, max_relative = 1e-12);
    }

    #[test]
    fn median_even_and_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn region_theta_statistics() {
        // cells 1..=3, samples 1..=4
        let theta = Matrix::from_rows(&[
            vec![9.0, 9.0, 9.0, 9.0, 9.0, 9.0],
            vec![1.0, 0.4, 0.5, 0.9, 0.6, 1.0],
            vec![1.0, 0.3, 0.2, 0.8, 0.7, 1.0],
            vec![1.0, 0.5, 0.6, 0.7, 0.5, 1.0],
        ])
        .unwrap();
        let x = [0.0, 0.01, 0.02, 0.03];
        let t = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5];
        let h = region_theta(&theta, &region(1, 3, 1, 4, &x, &t));
        // spatial medians: 0.4, 0.5, 0.8, 0.6
        assert_eq!(h.at_t1, 0.4);
        assert_relative_eq!(h.median, 0.55, max_relative = 1e-15);
        assert_eq!(h.min, 0.4);
    }

    #[test]
    fn time_derivative_is_exact_for_lines() {
        let t = [0.0, 0.2, 0.5, 0.9];
        let f = Matrix::from_fn(2, 4, |i, k| 3.0 * t[k] + i as f64);
        let d = time_derivative(&f, &t);
        for v in d.as_slice() {
            assert_relative_eq!(*v, 3.0, max_relative = 1e-12);
        }
    }
}
