use std::fs;

use proptest::prelude::*;
use rand::Rng;

use vdl_core::inverse::{flow_rate_system, StaggeredGrid};
use vdl_core::neural::{VaeArch, VaeTrainConfig};
use vdl_core::pipeline::*;
use vdl_core::synth::*;

fn small_cohort(dir: &std::path::Path) -> CohortSpec {
    let spec = CohortSpec::new(vec![
        CohortEntry { phenotype: PhenotypeKind::NormalPeristaltic, count: 3 },
        CohortEntry { phenotype: PhenotypeKind::Spastic, count: 3 },
    ]);
    write_cohort(&generate_cohort(&spec, 2).unwrap(), &spec, 2, dir).unwrap();
    seal_dir(dir).unwrap();
    spec
}

#[test]
fn cohort_solves_and_embeds() {
    let d = tempfile::tempdir().unwrap();
    small_cohort(d.path());
    let ds = solve_cohort(d.path(), &SolveOptions::default()).unwrap();
    assert_eq!(ds.records.len(), 6);
    assert!(ds.failures.is_empty());
    assert!(ds.cohort_seal.is_some());
    for r in &ds.records {
        assert_eq!(r.theta.len(), 256);
        assert!(r.work.is_some(), "{} has no junction work", r.id);
    }
    let run = train_vae(&ds, VaeArch::desk(), &VaeTrainConfig::desk(5)).unwrap();
    let rows = embed(&ds, &run.vae, &run.norm).unwrap();
    assert!(rows.iter().all(|r| r.coords.len() == vdl_core::VDL_DIM && r.coords.iter().all(|v| v.is_finite())));

    let path = d.path().join("vdl.csv");
    write_vdl(&path, &rows).unwrap();
    assert_eq!(read_vdl(&path).unwrap(), rows);
}

#[test]
fn tampered_cohort_is_refused() {
    let d = tempfile::tempdir().unwrap();
    small_cohort(d.path());
    let man = read_manifest(d.path()).unwrap();
    let victim = d.path().join(&man.samples[0].recording);
    let mut text = fs::read_to_string(&victim).unwrap();
    text.push('\n');
    fs::write(&victim, text).unwrap();
    let err = solve_cohort(d.path(), &SolveOptions::default()).unwrap_err();
    assert_eq!(err.kind(), "integrity");
}

#[test]
fn augmented_replicas_keep_their_source() {
    let d = tempfile::tempdir().unwrap();
    small_cohort(d.path());
    let spec = AugmentSpec { replicas_per_sample: 2, ..Default::default() };
    let ds = solve_cohort(d.path(), &SolveOptions { augment: Some((spec, 4)), ..Default::default() }).unwrap();
    assert_eq!(ds.originals().count(), 6);
    assert_eq!(ds.records.len() + ds.failures.len(), 18);
    for r in ds.records.iter().filter(|r| r.augmented) {
        assert!(r.id.starts_with(&r.source) && r.id != r.source);
    }
}

proptest! {
    #[test]
    fn continuity_residual_vanishes(n in 4usize..17, seed in 0u64..1000, d_tau in 0.01f64..1.0) {
        let mut rng = stream_rng(seed, 0);
        let a0: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..2.0)).collect();
        let a1: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..2.0)).collect();
        let sys = flow_rate_system(&a0, &a1, &StaggeredGrid::new(n), d_tau);
        let x = sys.solve().unwrap();
        let r = sys.apply(&x);
        for (a, b) in r.iter().zip(&sys.rhs) {
            prop_assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()));
        }
    }
}
