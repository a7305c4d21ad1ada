//! WebAssembly bindings for the static page in `www/`.
//!
//! Each export returns a JSON string; the `*_json` functions behind them are
//! plain Rust so they can be tested off the browser.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use serde_json::json;
use wasm_bindgen::prelude::*;

use vdl_core::calibrate::{calibrate_recording, FluidProperties, PlateauOptions, TubeLawFit};
use vdl_core::ingest::{pa_to_mmhg, parse_recording_from, to_si, write_recording, DEFAULT_SENSOR_SPACING_CM};
use vdl_core::pipeline::solve_recording;
use vdl_core::synth::{generate_sample, CohortEntry, CohortSpec, PhenotypeKind};
use vdl_core::{Matrix, Result, N_SENSORS};

fn rows(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.rows()).map(|r| m.row(r).to_vec()).collect()
}

/// Pressure (mmHg) against diameter for each activation level in `thetas`.
pub fn tube_law_json(k_over_ao: f64, po_minus_k: f64, thetas: &[f64], d_min_mm: f64, d_max_mm: f64, n: usize) -> Result<String> {
    if !(k_over_ao > 0.0) || !(d_max_mm > d_min_mm) || d_min_mm <= 0.0 || n < 2 {
        return Err(vdl_core::Error::Invalid("need K/A_o > 0, 0 < d_min < d_max and n ≥ 2".into()));
    }
    if thetas.iter().any(|t| !(*t > 0.0)) {
        return Err(vdl_core::Error::Invalid("θ must be positive".into()));
    }
    let length = N_SENSORS as f64 * DEFAULT_SENSOR_SPACING_CM * 1e-2;
    let fit = TubeLawFit::from_params(k_over_ao, po_minus_k, FluidProperties::default(), length);
    let d: Vec<f64> = (0..n).map(|i| d_min_mm + (d_max_mm - d_min_mm) * i as f64 / (n - 1) as f64).collect();
    let curves: Vec<Vec<f64>> = thetas
        .iter()
        .map(|&th| {
            d.iter()
                .map(|&dm| {
                    let r = dm * 1e-3 / 2.0;
                    pa_to_mmhg(fit.pressure(std::f64::consts::PI * r * r, th))
                })
                .collect()
        })
        .collect();
    Ok(json!({ "diameter_mm": d, "theta": thetas, "pressure_mmhg": curves }).to_string())
}

/// Simulates one synthetic window of `phenotype`, then calibrates and inverts
/// it as if it were a recording.
pub fn round_trip_json(phenotype: &str, seed: u64) -> Result<String> {
    let kind = PhenotypeKind::parse(phenotype)?;
    let spec = CohortSpec::new(vec![CohortEntry { phenotype: kind, count: 1 }]);
    let s = generate_sample(&spec, kind, 0, seed)?;
    let solved = solve_recording(&s.synthetic.recording, s.synthetic.t_start, s.synthetic.t_end, spec.fluid, PlateauOptions::default())?;
    let rec = solved.state.theta.as_slice();
    let linf = rec.iter().zip(s.theta_grid.as_slice()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let alpha = &solved.window.alpha_grid;
    Ok(json!({
        "phenotype": kind.name(),
        "peristaltic": kind.peristaltic(),
        "t_start": s.synthetic.t_start,
        "t_end": s.synthetic.t_end,
        "alpha": rows(alpha),
        "theta_true": rows(&s.theta_grid),
        "theta_recovered": rows(&solved.state.theta),
        "theta_linf": linf,
        "k_over_ao_true": s.true_fit.k_over_ao,
        "k_over_ao_fit": solved.fit.k_over_ao,
        "po_minus_k_true": s.true_fit.po_minus_k,
        "po_minus_k_fit": solved.fit.po_minus_k,
        "r2": solved.fit.r_squared,
        "mass_drift": solved.state.check_mass_conservation(),
        "clamp_fraction": solved.state.clamp_fraction,
    })
    .to_string())
}

/// Fits the tube law to a recording CSV pasted into the page.
pub fn calibrate_json(csv: &str, spacing_cm: f64) -> Result<String> {
    let rec = parse_recording_from(csv.as_bytes(), spacing_cm)?;
    let (fit, minima) = calibrate_recording(&to_si(&rec), FluidProperties::default(), PlateauOptions::default())?;
    let points: Vec<[f64; 2]> = minima.iter().map(|m| [m.area_ref * 1e6, pa_to_mmhg(m.pressure)]).collect();
    Ok(json!({
        "k_over_ao": fit.k_over_ao,
        "po_minus_k": fit.po_minus_k,
        "r2": fit.r_squared,
        "fit_id": fit.fit_id(),
        "samples": rec.len(),
        "plateaus": points,
    })
    .to_string())
}

/// A synthetic multi-fill recording as CSV, for the calibration form.
pub fn example_recording_csv(seed: u64) -> Result<String> {
    let kind = PhenotypeKind::NormalPeristaltic;
    let spec = CohortSpec::new(vec![CohortEntry { phenotype: kind, count: 1 }]);
    let s = generate_sample(&spec, kind, 0, seed)?;
    let mut buf = Vec::new();
    write_recording(&s.synthetic.recording, &mut buf)?;
    Ok(String::from_utf8(buf).expect("CSV writer emits UTF-8"))
}

fn js<T>(r: Result<T>) -> std::result::Result<T, JsError> {
    r.map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen(js_name = tubeLaw)]
pub fn tube_law(
    k_over_ao: f64,
    po_minus_k: f64,
    thetas: Vec<f64>,
    d_min_mm: f64,
    d_max_mm: f64,
    n: usize,
) -> std::result::Result<String, JsError> {
    js(tube_law_json(k_over_ao, po_minus_k, &thetas, d_min_mm, d_max_mm, n))
}

#[wasm_bindgen(js_name = roundTrip)]
pub fn round_trip(phenotype: &str, seed: u32) -> std::result::Result<String, JsError> {
    js(round_trip_json(phenotype, seed as u64))
}

#[wasm_bindgen]
pub fn calibrate(csv: &str, spacing_cm: f64) -> std::result::Result<String, JsError> {
    js(calibrate_json(csv, spacing_cm))
}

#[wasm_bindgen(js_name = exampleRecording)]
pub fn example_recording(seed: u32) -> std::result::Result<String, JsError> {
    js(example_recording_csv(seed as u64))
}

#[wasm_bindgen]
pub fn phenotypes() -> Vec<String> {
    PhenotypeKind::ALL.iter().map(|k| k.name().to_string()).collect()
}
