//! Artifact naming and the plot-ready tables.

use std::path::{Path, PathBuf};

use vdl_core::metrics::{PrimaryParams, WorkMetrics};
use vdl_core::pipeline::{MechanicsDataset, Prediction};
use vdl_core::plot::{box_rows, BoxRow};
use vdl_core::Result;

/// `dir/stem.ext` → `dir/stem{suffix}`.
pub fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}{suffix}"))
}

/// File-name safe form of a sample or subject id.
pub fn slug(id: &str) -> String {
    id.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect()
}

/// Box summaries of the discrete parameters and work metrics per disease group,
/// originals only.
pub fn parameter_boxes(ds: &MechanicsDataset) -> Vec<BoxRow> {
    let mut groups: Vec<String> = Vec::new();
    for r in ds.originals() {
        if !groups.contains(&r.disease) {
            groups.push(r.disease.clone());
        }
    }
    let mut rows = Vec::new();
    for (k, name) in PrimaryParams::NAMES.iter().enumerate() {
        let g: Vec<(String, Vec<f64>)> = groups
            .iter()
            .map(|d| (d.clone(), ds.originals().filter(|r| &r.disease == d).map(|r| r.params.to_array()[k]).collect()))
            .collect();
        rows.extend(box_rows(&g, name));
    }
    for (k, name) in WorkMetrics::NAMES.iter().enumerate() {
        let g: Vec<(String, Vec<f64>)> = groups
            .iter()
            .map(|d| {
                let v = ds.originals().filter(|r| &r.disease == d).filter_map(|r| r.work.map(|w| w.to_array()[k]));
                (d.clone(), v.collect())
            })
            .collect();
        rows.extend(box_rows(&g, name));
    }
    rows
}

/// One row per prediction, one probability column per class.
pub fn predictions_csv(classes: &[String], preds: &[Prediction]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["id".to_string(), "truth".into(), "predicted".into()];
    header.extend(classes.iter().map(|c| format!("p_{c}")));
    w.write_record(&header)?;
    for p in preds {
        let mut rec = vec![p.id.clone(), p.truth.clone().unwrap_or_default(), p.predicted.clone()];
        rec.extend(p.probabilities.iter().map(|v| format!("{v}")));
        w.write_record(&rec)?;
    }
    w.into_inner().map_err(|e| vdl_core::Error::Io(e.into_error()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sibling_names() {
        assert_eq!(sibling(Path::new("a/b/vae.bin"), "_curve.csv"), PathBuf::from("a/b/vae_curve.csv"));
        assert_eq!(slug("s01~a03/x"), "s01_a03_x");
    }

    #[test]
    fn prediction_table() {
        let p = Prediction { id: "x".into(), truth: None, predicted: "b".into(), probabilities: vec![0.25, 0.75] };
        let s = String::from_utf8(predictions_csv(&["a".into(), "b".into()], &[p]).unwrap()).unwrap();
        assert_eq!(s, "id,truth,predicted,p_a,p_b\nx,,b,0.25,0.75\n");
    }
}
