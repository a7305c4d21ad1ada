//! Relaxed-state tube-law calibration.
//!
//! With the wall relaxed (θ = 1) the tube law reduces to a straight line
//! `P = (K/A_o)·A + (P_o − K)`. Lowest distal pressures of each constant
//! volume plateau are taken as relaxed instants and paired with the plateau's
//! cylinder area `V / L`; ordinary least squares then gives the slope and the
//! intercept.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::ingest::{reference_area, SiRecording};

/// Saline and scaling constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FluidProperties {
    /// Density, kg/m³.
    pub rho: f64,
    /// Dynamic viscosity, Pa·s.
    pub mu: f64,
    /// Velocity scale, m/s (speed of a peristaltic wave).
    pub c: f64,
}

impl Default for FluidProperties {
    fn default() -> Self {
        FluidProperties { rho: 1000.0, mu: 1.0e-3, c: 0.03 }
    }
}

impl FluidProperties {
    /// Pressure scale ρc², Pa.
    pub fn pressure_scale(&self) -> f64 {
        self.rho * self.c * self.c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TubeLawFit {
    /// Stiffness measure K/A_o, Pa/m².
    pub k_over_ao: f64,
    /// Intercept P_o − K, Pa.
    pub po_minus_k: f64,
    pub r_squared: f64,
    /// `(A_r m², P_d Pa)` pairs used for the regression.
    pub support_points: Vec<(f64, f64)>,
    pub fluid: FluidProperties,
    pub length_m: f64,
    /// Set when the regression slope is not positive.
    pub negative_slope: bool,
    /// Friction parameter, kept as stored so that a reloaded fit keeps its id.
    pub gamma: f64,
}

/// γ = 8πμL/(ρ²c³) · K/A_o.
pub fn friction_parameter(fluid: FluidProperties, length_m: f64, k_over_ao: f64) -> f64 {
    let FluidProperties { rho, mu, c } = fluid;
    8.0 * PI * mu * length_m / (rho * rho * c * c * c) * k_over_ao
}

/// On-disk form of a fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitRecord {
    pub k_over_ao_pa_per_m2: f64,
    pub po_minus_k_pa: f64,
    pub r2: f64,
    pub c_m_per_s: f64,
    pub rho: f64,
    pub mu: f64,
    pub gamma: f64,
}

impl TubeLawFit {
    /// A fit with known parameters (synthetic ground truth).
    pub fn from_params(k_over_ao: f64, po_minus_k: f64, fluid: FluidProperties, length_m: f64) -> Self {
        TubeLawFit {
            k_over_ao,
            po_minus_k,
            r_squared: 1.0,
            support_points: vec![],
            fluid,
            length_m,
            negative_slope: k_over_ao <= 0.0,
            gamma: friction_parameter(fluid, length_m, k_over_ao),
        }
    }

    /// Area scale A_s = ρc² A_o / K, m².
    pub fn area_scale(&self) -> f64 {
        self.fluid.pressure_scale() / self.k_over_ao
    }

    pub fn velocity_scale(&self) -> f64 {
        self.fluid.c
    }

    /// Friction parameter γ.
    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// Tube-law pressure for area `a` (m²) and activation `theta`.
    pub fn pressure(&self, a: f64, theta: f64) -> f64 {
        self.k_over_ao * a / theta + self.po_minus_k
    }

    /// Intercept in units of ρc².
    pub fn scaled_intercept(&self) -> f64 {
        self.po_minus_k / self.fluid.pressure_scale()
    }

    pub fn to_record(&self) -> FitRecord {
        FitRecord {
            k_over_ao_pa_per_m2: self.k_over_ao,
            po_minus_k_pa: self.po_minus_k,
            r2: self.r_squared,
            c_m_per_s: self.fluid.c,
            rho: self.fluid.rho,
            mu: self.fluid.mu,
            gamma: self.gamma(),
        }
    }

    /// Rebuilds a fit; the segment length is recovered from γ.
    pub fn from_record(r: &FitRecord) -> Result<Self> {
        if !(r.k_over_ao_pa_per_m2 > 0.0) || !(r.rho > 0.0) || !(r.mu > 0.0) || !(r.c_m_per_s > 0.0) {
            return Err(Error::Invalid("fit record has non-positive physical constants".into()));
        }
        let fluid = FluidProperties { rho: r.rho, mu: r.mu, c: r.c_m_per_s };
        let length_m = r.gamma * r.rho * r.rho * r.c_m_per_s.powi(3) / (8.0 * PI * r.mu * r.k_over_ao_pa_per_m2);
        Ok(TubeLawFit {
            k_over_ao: r.k_over_ao_pa_per_m2,
            po_minus_k: r.po_minus_k_pa,
            r_squared: r.r2,
            support_points: vec![],
            fluid,
            length_m,
            negative_slope: false,
            gamma: r.gamma,
        })
    }

    /// Stable identifier: first 16 hex digits of the SHA-256 of the record JSON.
    pub fn fit_id(&self) -> String {
        let json = serde_json::to_vec(&self.to_record()).expect("fit record serializes");
        hex::encode(&Sha256::digest(&json)[..8])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PressureMinimum {
    pub t: f64,
    pub sample: usize,
    /// Plateau reference area V/L, m².
    pub area_ref: f64,
    /// Distal pressure, Pa.
    pub pressure: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlateauOptions {
    /// Shortest plateau kept, seconds.
    pub min_duration_s: f64,
    /// Largest sample-to-sample relative volume change inside a plateau.
    pub volume_rel_tol: f64,
}

impl Default for PlateauOptions {
    fn default() -> Self {
        PlateauOptions { min_duration_s: 1.0, volume_rel_tol: 2e-3 }
    }
}

/// Constant-volume plateaus as inclusive sample ranges.
pub fn find_plateaus(rec: &SiRecording, opts: PlateauOptions) -> Vec<(usize, usize)> {
    let v = &rec.volume_m3;
    let mut runs = Vec::new();
    let mut start = 0;
    for k in 1..=v.len() {
        let breaks = k == v.len() || (v[k] - v[k - 1]).abs() > opts.volume_rel_tol * v[k - 1].abs().max(f64::MIN_POSITIVE);
        if breaks {
            if rec.time_s[k - 1] - rec.time_s[start] >= opts.min_duration_s - 1e-9 {
                runs.push((start, k - 1));
            }
            start = k;
        }
    }
    runs
}

/// Lowest distal pressure of every constant-volume plateau, paired with the
/// plateau's cylinder area.
pub fn find_pressure_minima(rec: &SiRecording, opts: PlateauOptions) -> Result<Vec<PressureMinimum>> {
    let plateaus = find_plateaus(rec, opts);
    if plateaus.len() < 2 {
        return Err(Error::Calibration(format!("need at least 2 constant-volume plateaus, found {}", plateaus.len())));
    }
    let length = rec.length_m();
    plateaus
        .into_iter()
        .map(|(a, b)| {
            let k = (a..=b).min_by(|&i, &j| rec.distal_pressure_pa[i].total_cmp(&rec.distal_pressure_pa[j])).expect("non-empty plateau");
            let vmean = rec.volume_m3[a..=b].iter().sum::<f64>() / (b - a + 1) as f64;
            Ok(PressureMinimum {
                t: rec.time_s[k],
                sample: k,
                area_ref: reference_area(vmean, length)?,
                pressure: rec.distal_pressure_pa[k],
            })
        })
        .collect()
}

/// Ordinary least squares of pressure on reference area.
pub fn fit_tube_law(points: &[(f64, f64)], fluid: FluidProperties, length_m: f64) -> Result<TubeLawFit> {
    if points.len() < 2 {
        return Err(Error::Calibration("tube-law fit needs at least two points".into()));
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if !(sxx > f64::EPSILON * mx * mx * n) {
        return Err(Error::Degenerate("all reference areas are identical; slope is not identifiable".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_tot: f64 = points.iter().map(|p| (p.1 - my).powi(2)).sum();
    let ss_res: f64 = points.iter().map(|p| (p.1 - slope * p.0 - intercept).powi(2)).sum();
    let r_squared = if ss_tot > 0.0 { (1.0 - ss_res / ss_tot).clamp(0.0, 1.0) } else { 1.0 };
    let negative_slope = slope <= 0.0;
    if negative_slope {
        log::warn!("tube-law slope {slope} is not positive; stiffness is non-physical");
    }
    Ok(TubeLawFit {
        k_over_ao: slope,
        po_minus_k: intercept,
        r_squared,
        support_points: points.to_vec(),
        fluid,
        length_m,
        negative_slope,
        gamma: friction_parameter(fluid, length_m, slope),
    })
}

/// Minima search followed by the straight-line fit.
pub fn calibrate_recording(rec: &SiRecording, fluid: FluidProperties, opts: PlateauOptions) -> Result<(TubeLawFit, Vec<PressureMinimum>)> {
    let minima = find_pressure_minima(rec, opts)?;
    let points: Vec<(f64, f64)> = minima.iter().map(|m| (m.area_ref, m.pressure)).collect();
    let fit = fit_tube_law(&points, fluid, rec.length_m())?;
    Ok((fit, minima))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::Matrix;
    use crate::N_SENSORS;
    use approx::assert_relative_eq;

    #[test]
    fn exact_line() {
        let pts = [(1.0, 7.0), (2.0, 9.0), (3.5, 12.0), (4.0, 13.0)];
        let fit = fit_tube_law(&pts, FluidProperties::default(), 0.16).unwrap();
        assert_relative_eq!(fit.k_over_ao, 2.0, max_relative = 1e-14);
        assert_relative_eq!(fit.po_minus_k, 5.0, max_relative = 1e-14);
        assert_eq!(fit.r_squared, 1.0);
    }

    #[test]
    fn two_points_interpolate() {
        let pts = [(2.0e-4, 3000.0), (3.0e-4, 4200.0)];
        let fit = fit_tube_law(&pts, FluidProperties::default(), 0.16).unwrap();
        for (a, p) in pts {
            assert_relative_eq!(fit.pressure(a, 1.0), p, max_relative = 1e-12);
        }
        assert_relative_eq!(fit.r_squared, 1.0);
    }

    #[test]
    fn identical_areas_rejected() {
        let pts = [(2.0, 3.0), (2.0, 4.0)];
        assert!(matches!(fit_tube_law(&pts, FluidProperties::default(), 0.16), Err(Error::Degenerate(_))));
    }

    #[test]
    fn negative_slope_is_flagged() {
        let pts = [(1.0, 5.0), (2.0, 3.0)];
        let fit = fit_tube_law(&pts, FluidProperties::default(), 0.16).unwrap();
        assert!(fit.negative_slope);
    }

    #[test]
    fn gamma_and_scale_are_consistent() {
        let fluid = FluidProperties::default();
        let fit = TubeLawFit::from_params(1.3e7, -800.0, fluid, 0.16);
        assert_relative_eq!(fit.area_scale(), 1000.0 * 0.03 * 0.03 / 1.3e7, max_relative = 1e-14);
        let g = 8.0 * PI * 1e-3 * 0.16 / (1e6 * 0.03f64.powi(3)) * 1.3e7;
        assert_relative_eq!(fit.gamma(), g, max_relative = 1e-14);
        let back = TubeLawFit::from_record(&fit.to_record()).unwrap();
        assert_relative_eq!(back.length_m, 0.16, max_relative = 1e-12);
        assert_eq!(back.fit_id(), fit.fit_id());
    }

    fn plateau_recording(traces: &[&[f64]], volumes_ml: &[f64]) -> SiRecording {
        let mut time = Vec::new();
        let mut pd = Vec::new();
        let mut vol = Vec::new();
        let mut t = 0.0;
        for (trace, v) in traces.iter().zip(volumes_ml) {
            for p in trace.iter() {
                time.push(t);
                pd.push(crate::ingest::mmhg_to_pa(*p));
                vol.push(v * 1e-6);
                t += 0.5;
            }
        }
        let n = time.len();
        SiRecording {
            time_s: time,
            diameters_m: Matrix::filled(N_SENSORS, n, 0.018),
            distal_pressure_pa: pd,
            volume_m3: vol,
            sensor_spacing_m: 0.01,
        }
    }

    #[test]
    fn minima_per_plateau() {
        let rec = plateau_recording(&[&[10.0, 8.0, 9.0], &[14.0, 11.0, 13.0]], &[30.0, 40.0]);
        let m = find_pressure_minima(&rec, PlateauOptions::default()).unwrap();
        assert_eq!(m.len(), 2);
        assert_relative_eq!(m[0].pressure, crate::ingest::mmhg_to_pa(8.0));
        assert_relative_eq!(m[1].pressure, crate::ingest::mmhg_to_pa(11.0));
        assert_relative_eq!(m[0].area_ref, 30e-6 / 0.16, max_relative = 1e-12);
    }

    #[test]
    fn single_plateau_fails() {
        let rec = plateau_recording(&[&[10.0, 8.0, 9.0]], &[30.0]);
        assert!(matches!(find_pressure_minima(&rec, PlateauOptions::default()), Err(Error::Calibration(_))));
    }

    #[test]
    fn short_plateaus_are_ignored() {
        // second plateau lasts 0.5 s
        let rec = plateau_recording(&[&[10.0, 8.0, 9.0], &[14.0, 11.0], &[20.0, 18.0, 19.0]], &[30.0, 40.0, 50.0]);
        let p = find_plateaus(&rec, PlateauOptions::default());
        assert_eq!(p, vec![(0, 2), (5, 7)]);
    }
}
