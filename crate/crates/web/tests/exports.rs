use serde_json::Value;
use vdl_web::{calibrate_json, example_recording_csv, round_trip_json, tube_law_json};

fn parse(s: String) -> Value {
    serde_json::from_str(&s).unwrap()
}

#[test]
fn tube_law_is_linear_in_area_over_theta() {
    let v = parse(tube_law_json(1.2e7, -600.0, &[1.0, 2.0], 10.0, 30.0, 5).unwrap());
    let p = &v["pressure_mmhg"];
    let d: Vec<f64> = v["diameter_mm"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect();
    assert_eq!(d, vec![10.0, 15.0, 20.0, 25.0, 30.0]);
    // Same intercept, half the slope at twice the activation.
    let p1: Vec<f64> = p[0].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect();
    let p2: Vec<f64> = p[1].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect();
    let b = -600.0 / vdl_core::ingest::MMHG_TO_PA;
    for (a, c) in p1.iter().zip(&p2) {
        assert!(((a - b) - 2.0 * (c - b)).abs() < 1e-9);
    }
    assert!(tube_law_json(1.2e7, 0.0, &[0.0], 10.0, 30.0, 5).is_err());
    assert!(tube_law_json(1.2e7, 0.0, &[1.0], 30.0, 10.0, 5).is_err());
}

#[test]
fn round_trip_recovers_theta() {
    let v = parse(round_trip_json("normal-peristaltic", 3).unwrap());
    assert!(v["theta_linf"].as_f64().unwrap() < 5e-2, "{}", v["theta_linf"]);
    assert_eq!(v["theta_recovered"].as_array().unwrap().len(), 16);
    let (k, k0) = (v["k_over_ao_fit"].as_f64().unwrap(), v["k_over_ao_true"].as_f64().unwrap());
    assert!((k - k0).abs() / k0 < 0.02);
    assert!(round_trip_json("unknown", 3).is_err());
}

#[test]
fn calibrates_the_example_recording() {
    let csv = example_recording_csv(9).unwrap();
    assert!(csv.starts_with("time_s,d01_mm"));
    let v = parse(calibrate_json(&csv, 1.0).unwrap());
    assert!(v["r2"].as_f64().unwrap() > 0.99);
    assert!(v["plateaus"].as_array().unwrap().len() >= 2);
    assert!(calibrate_json("time_s\n0\n", 1.0).is_err());
}
