//! Recording ingestion: CSV parsing, unit conversion and analysis windows.
//!
//! Sensor `d01` is the most proximal channel and `d16` sits at the distal
//! end next to the pressure transducer. Each sensor is taken to represent one
//! finite-volume cell of width `sensor_spacing`, so the modelled segment has
//! length `16 × sensor_spacing` and the bag volume equals the sum of cell
//! areas times the spacing.

use std::f64::consts::PI;
use std::fs::File;
use std::io::{BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::calibrate::TubeLawFit;
use crate::error::{invalid, Error, Result};
use crate::matrix::{linspace, resample_bilinear, Matrix};
use crate::{GRID, N_SENSORS};

pub const MMHG_TO_PA: f64 = 133.322;
pub const DEFAULT_SENSOR_SPACING_CM: f64 = 1.0;
/// Relative bag-volume drift inside a window that triggers a warning.
pub const VOLUME_DRIFT_WARN: f64 = 0.02;

pub fn mmhg_to_pa(p: f64) -> f64 {
    p * MMHG_TO_PA
}

pub fn pa_to_mmhg(p: f64) -> f64 {
    p / MMHG_TO_PA
}

pub fn ml_to_m3(v: f64) -> f64 {
    v * 1e-6
}

pub fn m3_to_ml(v: f64) -> f64 {
    v * 1e6
}

/// Lumen area of a circular cross-section.
pub fn diameter_to_area(d: f64) -> f64 {
    PI * d * d / 4.0
}

pub fn area_to_diameter(a: f64) -> f64 {
    (4.0 * a / PI).sqrt()
}

/// Area of the bag when it takes the shape of a perfect cylinder, `V / L`.
pub fn reference_area(volume_m3: f64, length_m: f64) -> Result<f64> {
    if !(volume_m3 > 0.0) || !(length_m > 0.0) {
        return invalid(format!("reference area needs positive volume and length, got V={volume_m3}, L={length_m}"));
    }
    Ok(volume_m3 / length_m)
}

/// Raw recording in clinical units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlipRecording {
    pub time_s: Vec<f64>,
    /// `[16 sensors × T samples]`, millimetres.
    pub diameters_mm: Matrix,
    pub distal_pressure_mmhg: Vec<f64>,
    pub volume_ml: Vec<f64>,
    pub sensor_spacing_cm: f64,
}

impl FlipRecording {
    pub fn new(
        time_s: Vec<f64>,
        diameters_mm: Matrix,
        distal_pressure_mmhg: Vec<f64>,
        volume_ml: Vec<f64>,
        sensor_spacing_cm: f64,
    ) -> Result<Self> {
        let rec = FlipRecording { time_s, diameters_mm, distal_pressure_mmhg, volume_ml, sensor_spacing_cm };
        rec.validate()?;
        Ok(rec)
    }

    pub fn validate(&self) -> Result<()> {
        let t = self.time_s.len();
        if self.diameters_mm.rows() != N_SENSORS {
            return Err(Error::Schema(format!("expected {N_SENSORS} sensors, got {}", self.diameters_mm.rows())));
        }
        if self.diameters_mm.cols() != t || self.distal_pressure_mmhg.len() != t || self.volume_ml.len() != t {
            return Err(Error::Schema("series lengths differ".into()));
        }
        if t == 0 {
            return Err(Error::Schema("recording has no samples".into()));
        }
        if let Some(w) = self.time_s.windows(2).position(|w| !(w[1] > w[0])) {
            return Err(Error::Schema(format!("time is not strictly increasing at sample {}", w + 1)));
        }
        if let Some(i) = self.diameters_mm.as_slice().iter().position(|d| !(*d > 0.0) || !d.is_finite()) {
            let (s, k) = (i / t, i % t);
            return Err(Error::Invalid(format!("non-positive or non-finite diameter at sensor {} sample {k}", s + 1)));
        }
        if self.distal_pressure_mmhg.iter().chain(&self.volume_ml).any(|v| !v.is_finite()) {
            return Err(Error::Invalid("non-finite pressure or volume".into()));
        }
        if !(self.sensor_spacing_cm > 0.0) {
            return invalid("sensor spacing must be positive");
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.time_s.len()
    }

    pub fn is_empty(&self) -> bool {
        self.time_s.is_empty()
    }
}

pub fn csv_header() -> String {
    let mut cols = vec!["time_s".to_string()];
    cols.extend((1..=N_SENSORS).map(|i| format!("d{i:02}_mm")));
    cols.push("p_distal_mmhg".into());
    cols.push("volume_ml".into());
    cols.join(",")
}

pub fn parse_recording(path: impl AsRef<Path>, sensor_spacing_cm: f64) -> Result<FlipRecording> {
    let f = File::open(path.as_ref())?;
    parse_recording_from(BufReader::new(f), sensor_spacing_cm)
}

pub fn parse_recording_from<R: Read>(reader: R, sensor_spacing_cm: f64) -> Result<FlipRecording> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let expected = csv_header();
    if header.join(",") != expected {
        return Err(Error::Schema(format!("header mismatch: expected `{expected}`, got `{}`", header.join(","))));
    }
    let mut time = Vec::new();
    let mut diam: Vec<Vec<f64>> = vec![Vec::new(); N_SENSORS];
    let mut pd = Vec::new();
    let mut vol = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::Schema(format!("row {}: {e}", line + 2)))?;
        if rec.len() != N_SENSORS + 3 {
            return Err(Error::Schema(format!("row {} has {} fields", line + 2, rec.len())));
        }
        let vals = rec
            .iter()
            .map(|f| f.parse::<f64>().map_err(|e| Error::Schema(format!("row {}: bad number {f:?}: {e}", line + 2))))
            .collect::<Result<Vec<_>>>()?;
        time.push(vals[0]);
        for s in 0..N_SENSORS {
            diam[s].push(vals[1 + s]);
        }
        pd.push(vals[N_SENSORS + 1]);
        vol.push(vals[N_SENSORS + 2]);
    }
    FlipRecording::new(time, Matrix::from_rows(&diam)?, pd, vol, sensor_spacing_cm)
}

pub fn write_recording<W: Write>(rec: &FlipRecording, mut w: W) -> Result<()> {
    writeln!(w, "{}", csv_header())?;
    for k in 0..rec.len() {
        let mut fields = vec![format!("{}", rec.time_s[k])];
        fields.extend((0..N_SENSORS).map(|s| format!("{}", rec.diameters_mm.get(s, k))));
        fields.push(format!("{}", rec.distal_pressure_mmhg[k]));
        fields.push(format!("{}", rec.volume_ml[k]));
        writeln!(w, "{}", fields.join(","))?;
    }
    Ok(())
}

/// Recording converted to SI units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiRecording {
    pub time_s: Vec<f64>,
    pub diameters_m: Matrix,
    pub distal_pressure_pa: Vec<f64>,
    pub volume_m3: Vec<f64>,
    pub sensor_spacing_m: f64,
}

impl SiRecording {
    pub fn len(&self) -> usize {
        self.time_s.len()
    }

    pub fn is_empty(&self) -> bool {
        self.time_s.is_empty()
    }

    pub fn length_m(&self) -> f64 {
        N_SENSORS as f64 * self.sensor_spacing_m
    }

    pub fn area_m2(&self, sensor: usize, sample: usize) -> f64 {
        diameter_to_area(self.diameters_m.get(sensor, sample))
    }

    pub fn areas(&self) -> Matrix {
        self.diameters_m.map(diameter_to_area)
    }

    /// Sensor (cell-centre) positions along the segment, metres.
    pub fn sensor_positions_m(&self) -> Vec<f64> {
        (0..N_SENSORS).map(|i| (i as f64 + 0.5) * self.sensor_spacing_m).collect()
    }

    pub fn to_clinical(&self) -> FlipRecording {
        FlipRecording {
            time_s: self.time_s.clone(),
            diameters_mm: self.diameters_m.map(|d| d * 1e3),
            distal_pressure_mmhg: self.distal_pressure_pa.iter().map(|&p| pa_to_mmhg(p)).collect(),
            volume_ml: self.volume_m3.iter().map(|&v| m3_to_ml(v)).collect(),
            sensor_spacing_cm: self.sensor_spacing_m * 1e2,
        }
    }
}

pub fn to_si(rec: &FlipRecording) -> SiRecording {
    SiRecording {
        time_s: rec.time_s.clone(),
        diameters_m: rec.diameters_mm.map(|d| d * 1e-3),
        distal_pressure_pa: rec.distal_pressure_mmhg.iter().map(|&p| mmhg_to_pa(p)).collect(),
        volume_m3: rec.volume_ml.iter().map(|&v| ml_to_m3(v)).collect(),
        sensor_spacing_m: rec.sensor_spacing_cm * 1e-2,
    }
}

/// Window descriptor persisted as JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowDescriptor {
    pub t_start: f64,
    pub t_end: f64,
    pub fit_id: String,
}

/// Native-resolution samples of one window, the input of the inverse solver.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NativeWindow {
    pub time_s: Vec<f64>,
    /// `[cells × T]`, m².
    pub area_m2: Matrix,
    pub distal_pressure_pa: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisWindow {
    pub t_start: f64,
    pub t_end: f64,
    pub duration: f64,
    /// Non-dimensional area `A / A_s` on the 16 × 16 `[space × time]` grid.
    pub alpha_grid: Matrix,
    /// Distal pressure at the 16 grid times, Pa.
    pub pd_series: Vec<f64>,
    pub volume_m3: f64,
    pub length_m: f64,
    pub area_scale_m2: f64,
    pub native: NativeWindow,
    pub warnings: Vec<String>,
}

impl AnalysisWindow {
    pub fn grid_times(&self) -> Vec<f64> {
        linspace(self.t_start, self.t_end, GRID)
    }

    pub fn cell_width_m(&self) -> f64 {
        self.length_m / self.native.area_m2.rows() as f64
    }

    /// Builds a window directly from a 16 × 16 area-ratio grid, treating the
    /// grid columns as the native samples. Used for augmented samples.
    pub fn from_grid(
        alpha_grid: Matrix,
        pd_series: Vec<f64>,
        duration: f64,
        volume_m3: f64,
        length_m: f64,
        fit: &TubeLawFit,
    ) -> Result<Self> {
        if alpha_grid.cols() != pd_series.len() || alpha_grid.cols() < 2 {
            return invalid("grid window needs matching, non-trivial time axes");
        }
        if !(duration > 0.0) {
            return invalid("window duration must be positive");
        }
        let area_scale = fit.area_scale();
        let time = linspace(0.0, duration, alpha_grid.cols());
        Ok(AnalysisWindow {
            t_start: 0.0,
            t_end: duration,
            duration,
            native: NativeWindow { time_s: time, area_m2: alpha_grid.map(|a| a * area_scale), distal_pressure_pa: pd_series.clone() },
            alpha_grid,
            pd_series,
            volume_m3,
            length_m,
            area_scale_m2: area_scale,
            warnings: vec![],
        })
    }
}

/// Cuts `[t_start, t_end]` out of a recording, non-dimensionalises areas with
/// the fit's area scale and resamples onto the 16 × 16 grid.
pub fn select_window(rec: &SiRecording, t_start: f64, t_end: f64, fit: &TubeLawFit) -> Result<AnalysisWindow> {
    if !(t_end > t_start) {
        return invalid(format!("degenerate window [{t_start}, {t_end}]"));
    }
    let (first, last) = (rec.time_s[0], rec.time_s[rec.len() - 1]);
    let eps = 1e-9 * (last - first).abs().max(1.0);
    if t_start < first - eps || t_end > last + eps {
        return invalid(format!("window [{t_start}, {t_end}] outside recording [{first}, {last}]"));
    }
    if !(fit.k_over_ao > 0.0) {
        return Err(Error::Calibration(format!("non-physical stiffness {} in fit", fit.k_over_ao)));
    }
    let idx: Vec<usize> = (0..rec.len()).filter(|&k| rec.time_s[k] >= t_start - eps && rec.time_s[k] <= t_end + eps).collect();
    if idx.len() < 2 {
        return invalid("window holds fewer than two samples");
    }

    let area_scale = fit.area_scale();
    let time: Vec<f64> = idx.iter().map(|&k| rec.time_s[k]).collect();
    let area = Matrix::from_fn(N_SENSORS, idx.len(), |s, j| rec.area_m2(s, idx[j]));
    let pd: Vec<f64> = idx.iter().map(|&k| rec.distal_pressure_pa[k]).collect();

    let mut warnings = Vec::new();
    let vols: Vec<f64> = idx.iter().map(|&k| rec.volume_m3[k]).collect();
    let vmean = vols.iter().sum::<f64>() / vols.len() as f64;
    let drift = vols.iter().map(|v| (v - vmean).abs()).fold(0.0, f64::max) / vmean.abs().max(f64::MIN_POSITIVE);
    if drift > VOLUME_DRIFT_WARN {
        let msg = format!("bag volume drifts {:.1}% inside window", drift * 100.0);
        log::warn!("{msg}");
        warnings.push(msg);
    }

    let grid_t = linspace(t_start, t_end, GRID);
    let alpha_native = area.map(|a| a / area_scale);
    let sensors: Vec<f64> = (0..N_SENSORS).map(|i| i as f64).collect();
    let grid_x = linspace(0.0, (N_SENSORS - 1) as f64, GRID);
    let alpha_grid = resample_bilinear(&alpha_native, &sensors, &time, &grid_x, &grid_t);
    let pd_series = grid_t.iter().map(|&t| crate::matrix::interp1(&time, &pd, t)).collect();

    Ok(AnalysisWindow {
        t_start,
        t_end,
        duration: t_end - t_start,
        alpha_grid,
        pd_series,
        volume_m3: vmean,
        length_m: rec.length_m(),
        area_scale_m2: area_scale,
        native: NativeWindow { time_s: time, area_m2: area, distal_pressure_pa: pd },
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calibrate::FluidProperties;

    fn uniform_recording(n: usize, d_mm: f64) -> FlipRecording {
        FlipRecording::new((0..n).map(|k| k as f64 * 0.1).collect(), Matrix::filled(N_SENSORS, n, d_mm), vec![10.0; n], vec![40.0; n], 1.0)
            .unwrap()
    }

    fn csv_text(rows: &[Vec<f64>]) -> String {
        let mut s = csv_header();
        s.push('\n');
        for r in rows {
            let f: Vec<String> = r.iter().map(|v| v.to_string()).collect();
            s.push_str(&f.join(","));
            s.push('\n');
        }
        s
    }

    fn row(t: f64, d: f64) -> Vec<f64> {
        let mut r = vec![t];
        r.extend(std::iter::repeat_n(d, N_SENSORS));
        r.extend([12.0, 40.0]);
        r
    }

    #[test]
    fn parses_minimal_csv() {
        let text = csv_text(&[row(0.0, 20.0), row(0.1, 21.0), row(0.2, 19.5)]);
        let rec = parse_recording_from(text.as_bytes(), 1.0).unwrap();
        assert_eq!(rec.len(), 3);
        assert_eq!(rec.diameters_mm.get(15, 1), 21.0);
    }

    #[test]
    fn rejects_fifteen_sensor_header() {
        let mut text = String::from("time_s");
        for i in 1..=15 {
            text.push_str(&format!(",d{i:02}_mm"));
        }
        text.push_str(",p_distal_mmhg,volume_ml\n");
        let err = parse_recording_from(text.as_bytes(), 1.0).unwrap_err();
        assert!(matches!(err, Error::Schema(_)), "{err}");
    }

    #[test]
    fn rejects_bad_rows() {
        let text = csv_text(&[row(0.0, 20.0), row(0.0, 21.0)]);
        assert!(matches!(parse_recording_from(text.as_bytes(), 1.0), Err(Error::Schema(_))));
        let text = csv_text(&[row(0.0, 20.0), row(0.1, -1.0)]);
        assert!(matches!(parse_recording_from(text.as_bytes(), 1.0), Err(Error::Invalid(_))));
        let text = csv_text(&[row(0.0, 20.0), row(0.1, f64::NAN)]);
        assert!(parse_recording_from(text.as_bytes(), 1.0).is_err());
        let mut short = csv_text(&[row(0.0, 20.0)]);
        short.push_str("0.1,1,2\n");
        assert!(matches!(parse_recording_from(short.as_bytes(), 1.0), Err(Error::Schema(_))));
    }

    #[test]
    fn unit_conversions() {
        assert_eq!(mmhg_to_pa(1.0), 133.322);
        assert_eq!(mmhg_to_pa(0.0), 0.0);
        approx::assert_relative_eq!(diameter_to_area(20e-3), 3.14159e-4, max_relative = 1e-5);
    }

    #[test]
    fn reference_area_examples() {
        approx::assert_relative_eq!(reference_area(40e-6, 0.16).unwrap(), 2.5e-4, max_relative = 1e-12);
        approx::assert_relative_eq!(reference_area(60e-6, 0.15).unwrap(), 4.0e-4, max_relative = 1e-12);
        assert!(reference_area(0.0, 0.16).is_err());
        assert!(reference_area(1e-6, -1.0).is_err());
    }

    #[test]
    fn uniform_window_gives_constant_alpha() {
        let fit = TubeLawFit::from_params(1.3e7, -500.0, FluidProperties::default(), 0.16);
        let rec = to_si(&uniform_recording(40, 10.0));
        let w = select_window(&rec, 0.5, 2.7, &fit).unwrap();
        let expected = (PI * 25e-6) / fit.area_scale();
        for &a in w.alpha_grid.as_slice() {
            approx::assert_relative_eq!(a, expected, max_relative = 1e-12);
        }
        assert_eq!(w.pd_series.len(), GRID);
        approx::assert_relative_eq!(w.duration, 2.2, max_relative = 1e-12);
    }

    #[test]
    fn sixteen_sample_window_is_identity_in_time() {
        let fit = TubeLawFit::from_params(1.3e7, -500.0, FluidProperties::default(), 0.16);
        let n = 30;
        let mut rec = uniform_recording(n, 10.0);
        rec.time_s = (0..n).map(|k| k as f64 * 0.25).collect();
        for k in 0..n {
            for s in 0..N_SENSORS {
                rec.diameters_mm.set(s, k, 10.0 + (s * 7 + k * 3) as f64 % 5.0);
            }
        }
        let rec = to_si(&rec);
        let w = select_window(&rec, rec.time_s[4], rec.time_s[19], &fit).unwrap();
        assert_eq!(w.native.time_s.len(), 16);
        for s in 0..N_SENSORS {
            for j in 0..GRID {
                assert_eq!(w.alpha_grid.get(s, j), rec.area_m2(s, 4 + j) / fit.area_scale());
            }
        }
    }

    #[test]
    fn window_errors() {
        let fit = TubeLawFit::from_params(1.3e7, -500.0, FluidProperties::default(), 0.16);
        let rec = to_si(&uniform_recording(20, 10.0));
        assert!(select_window(&rec, 1.0, 1.0, &fit).is_err());
        assert!(select_window(&rec, -1.0, 1.0, &fit).is_err());
        assert!(select_window(&rec, 0.0, 5.0, &fit).is_err());
    }

    #[test]
    fn drifting_volume_warns() {
        let fit = TubeLawFit::from_params(1.3e7, -500.0, FluidProperties::default(), 0.16);
        let mut rec = uniform_recording(20, 10.0);
        rec.volume_ml = (0..20).map(|k| 40.0 + k as f64).collect();
        let w = select_window(&to_si(&rec), 0.0, 1.9, &fit).unwrap();
        assert_eq!(w.warnings.len(), 1);
    }
}
