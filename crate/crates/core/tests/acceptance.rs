//! Acceptance suite. Runs every criterion at its pinned tolerance and prints
//! one PASS/FAIL line each. Criteria listed in `KNOWN_GAPS` are reported but
//! do not fail the run; any other failure exits nonzero.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use vdl_core::calibrate::PlateauOptions;
use vdl_core::inverse::{flow_rate_system, mass_drift, pressure_system, PressureLevel, StaggeredGrid};
use vdl_core::metrics::{compute_egjw, egj_closed_area, egj_open_area, egjrow_closed_form, EgjRegion};
use vdl_core::neural::gradcheck::max_relative_error;
use vdl_core::neural::{kld_closed_form, Vae, VaeArch, VaeTrainConfig, WorkArch, WorkNet, WorkTrainConfig};
use vdl_core::pipeline::*;
use vdl_core::synth::*;
use vdl_core::tridiag::Tridiagonal;
use vdl_core::vdl::distance::distance_matrix;
use vdl_core::vdl::forest::ForestConfig;
use vdl_core::vdl::probe::LinearProbe;
use vdl_core::vdl::reduce::{fisher_criterion, lda_reduce, pca_reduce, LdaOptions};
use vdl_core::vdl::traverse::{band_contrast, decode_point, extrapolate_trajectory, traverse_latent};
use vdl_core::vdl::{centroid, LabelSet, VdlVector};
use vdl_core::{Matrix, Result};

/// Regressor error at desk scale; see the decisions ledger.
const KNOWN_GAPS: &[usize] = &[7];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Result<Outcome> {
    Ok(Outcome { pass, detail })
}

fn max_abs(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

// ---------------------------------------------------------------------------
// 1, 2: forward and inverse physics

fn random_windows(n: usize, seed: u64) -> Result<(CohortSpec, Vec<CohortSample>)> {
    let spec = CohortSpec::new(PhenotypeKind::ALL.iter().map(|&k| CohortEntry { phenotype: k, count: 1 }).collect());
    let mut rng = stream_rng(seed, 0);
    let samples = (0..n)
        .map(|i| {
            let kind = PhenotypeKind::ALL[rng.random_range(0..PhenotypeKind::ALL.len())];
            generate_sample(&spec, kind, i, seed)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((spec, samples))
}

fn round_trip() -> Result<Outcome> {
    let (spec, samples) = random_windows(20, 101)?;
    let span = spec.priors.po_minus_k.1 - spec.priors.po_minus_k.0;
    let (mut k_err, mut b_err, mut linf) = (0.0f64, 0.0f64, 0.0f64);
    for s in &samples {
        let solved =
            solve_recording(&s.synthetic.recording, s.synthetic.t_start, s.synthetic.t_end, spec.fluid, PlateauOptions::default())?;
        k_err = k_err.max((solved.fit.k_over_ao - s.true_fit.k_over_ao).abs() / s.true_fit.k_over_ao);
        b_err = b_err.max((solved.fit.po_minus_k - s.true_fit.po_minus_k).abs() / span);
        linf = linf.max(solved.state.theta.max_abs_diff(&s.theta_grid));
    }
    outcome(
        k_err < 0.02 && b_err < 0.05 && linf < 5e-2,
        format!("worst K/A_o error {:.2e}, worst P_o-K error {:.2e} of span, worst θ L∞ {linf:.3e}", k_err, b_err),
    )
}

fn conservation() -> Result<Outcome> {
    let (spec, samples) = random_windows(20, 202)?;
    let segment = vdl_core::N_SENSORS as f64 * spec.sensor_spacing_cm;
    let d_chi = StaggeredGrid::new(vdl_core::N_SENSORS).d_chi;
    let (mut drift, mut end_q) = (0.0f64, 0.0f64);
    for s in &samples {
        let field = PhenotypeField::new(s.phenotype, vdl_core::N_SENSORS, segment);
        let volume = vdl_core::ingest::ml_to_m3(s.protocol.fill_volumes_ml[s.protocol.window_fill]);
        let run = forward_solve(&field, &s.true_fit, volume, s.phenotype.duration_s, ForwardOptions::default())?;
        drift = drift.max(mass_drift(&run.alpha, d_chi));
        let last = run.q.rows() - 1;
        end_q = end_q.max(run.q.row(0).iter().chain(run.q.row(last)).map(|v| v.abs()).fold(0.0, f64::max));
        // The inverse solve of the same window closes its ends exactly too.
        let solved =
            solve_recording(&s.synthetic.recording, s.synthetic.t_start, s.synthetic.t_end, spec.fluid, PlateauOptions::default())?;
        end_q = end_q.max(solved.state.end_flow_rate());
    }
    outcome(drift < 1e-8 && end_q == 0.0, format!("worst relative mass drift {drift:.2e}, largest end-interface |q| {end_q:e}"))
}

// ---------------------------------------------------------------------------
// 3: banded solves against dense LU

fn dense_solve(sys: &Tridiagonal) -> Vec<f64> {
    let n = sys.len();
    let a = DMatrix::from_fn(n, n, |i, j| match j as isize - i as isize {
        0 => sys.diag[i],
        -1 => sys.lower[i],
        1 => sys.upper[i],
        _ => 0.0,
    });
    a.lu().solve(&DVector::from_vec(sys.rhs.clone())).expect("dense system is singular").iter().copied().collect()
}

fn linear_solver_oracle() -> Result<Outcome> {
    let mut rng = stream_rng(303, 0);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let n = rng.random_range(4..=16);
        let grid = StaggeredGrid::new(n);
        let d_tau = rng.random_range(0.01..0.5);
        let a0: Vec<f64> = (0..n).map(|_| rng.random_range(0.3..3.0)).collect();
        let a1: Vec<f64> = (0..n).map(|_| rng.random_range(0.3..3.0)).collect();
        let qp: Vec<f64> = (0..=n).map(|_| rng.random_range(-0.2..0.2)).collect();
        let qn: Vec<f64> = (0..=n).map(|_| rng.random_range(-0.2..0.2)).collect();
        let level = PressureLevel {
            q_prev: &qp,
            q_now: &qn,
            alpha: &a1,
            p_distal: rng.random_range(-1.0..1.0),
            phi: rng.random_range(0.0..2.0),
            d_tau,
        };
        for sys in [flow_rate_system(&a0, &a1, &grid, d_tau), pressure_system(&level, &grid)?] {
            let x = sys.solve()?;
            let y = dense_solve(&sys);
            let scale = y.iter().map(|v| v.abs()).fold(0.0, f64::max).max(1.0);
            worst = worst.max(max_abs(&x, &y) / scale);
        }
    }
    outcome(worst < 1e-12, format!("worst relative difference {worst:.2e} over 200 systems"))
}

// ---------------------------------------------------------------------------
// 4, 5: neural building blocks

fn kld_monte_carlo() -> Result<Outcome> {
    let mut rng = stream_rng(404, 0);
    let draws = 1_000_000;
    let (mut worst_z, mut misses) = (0.0f64, 0);
    for _ in 0..50 {
        let mu: f64 = rng.random_range(-2.0..2.0);
        let sigma: f64 = rng.random_range(0.3..2.0);
        let log_var = 2.0 * sigma.ln();
        // log q(z) − log p(z) with z = μ + σε
        let (mut s, mut s2) = (0.0, 0.0);
        for _ in 0..draws {
            let e: f64 = rng.sample(StandardNormal);
            let z = mu + sigma * e;
            let v = -sigma.ln() - 0.5 * e * e + 0.5 * z * z;
            s += v;
            s2 += v * v;
        }
        let n = draws as f64;
        let mean = s / n;
        let se = ((s2 / n - mean * mean) / (n - 1.0)).sqrt();
        let z = (kld_closed_form(&[mu], &[log_var]) - mean).abs() / se;
        worst_z = worst_z.max(z);
        misses += (z > 3.0) as usize;
    }
    let zero = kld_closed_form(&[0.0f64], &[0.0]) == 0.0 && kld_closed_form(&[0.0f32], &[0.0]) == 0.0;
    outcome(misses == 0 && zero, format!("largest deviation {worst_z:.2} standard errors over 50 pairs, KLD(0, 1) = 0 exactly: {zero}"))
}

fn gradients() -> Result<Outcome> {
    let mut rng = stream_rng(505, 0);
    let (mut vae_err, mut work_err) = (0.0f64, 0.0f64);
    for rep in 0..20u64 {
        let arch = VaeArch {
            grid: [4, 8][rng.random_range(0..2)],
            c1: rng.random_range(1..=3),
            c2: rng.random_range(1..=3),
            latent: rng.random_range(1..=4),
        };
        let mut v = Vae::<f64>::new(arch, rep)?;
        for p in v.params.iter_mut() {
            *p += 0.05 * rng.random_range(-1.0..1.0);
        }
        let x: Vec<f64> = (0..arch.n_pixels()).map(|_| rng.random_range(0.0..1.0)).collect();
        let eps = v.sample_eps(&mut rng);
        let beta = 1000.0;
        let mut g = vec![0.0; v.n_params()];
        v.loss_grad(&x, &eps, beta, 1.0, &mut g)?;
        let (e, _) =
            max_relative_error(&v.params, &g, 1e-5, |p| Vae::with_params(arch, p.to_vec()).unwrap().loss(&x, &eps, beta).unwrap().total);
        vae_err = vae_err.max(e);

        let hidden: Vec<usize> = (0..rng.random_range(1..=3)).map(|_| rng.random_range(2..=8)).collect();
        let arch = WorkArch { input: rng.random_range(2..=8), hidden, output: rng.random_range(1..=4) };
        let w = WorkNet::<f64>::new(arch.clone(), rep);
        let x: Vec<f64> = (0..arch.input).map(|_| rng.random_range(0.0..1.0)).collect();
        let y: Vec<f64> = (0..arch.output).map(|_| rng.random_range(0.0..1.0)).collect();
        let mut g = vec![0.0; w.n_params()];
        w.loss_grad(&x, &y, 1.0, &mut g)?;
        let (e, _) =
            max_relative_error(&w.params, &g, 1e-5, |p| WorkNet::with_params(arch.clone(), p.to_vec()).unwrap().loss(&x, &y).unwrap());
        work_err = work_err.max(e);
    }
    outcome(vae_err < 1e-4 && work_err < 1e-4, format!("worst relative error: autoencoder {vae_err:.2e}, regressor {work_err:.2e}"))
}

// ---------------------------------------------------------------------------
// 6, 7, 12: desk-scale training on a two-phenotype cohort

struct Desk {
    ds: MechanicsDataset,
    run: VaeRun,
    rows: Vec<VdlVector>,
}

fn cohort(dir: &Path, entries: &[(PhenotypeKind, usize)], seed: u64) -> Result<MechanicsDataset> {
    let spec = CohortSpec::new(entries.iter().map(|&(phenotype, count)| CohortEntry { phenotype, count }).collect());
    let samples = generate_cohort(&spec, seed)?;
    write_cohort(&samples, &spec, seed, dir)?;
    seal_dir(dir)?;
    solve_cohort(dir, &SolveOptions::default())
}

fn desk(dir: &Path) -> Result<Desk> {
    let t = Instant::now();
    let ds = cohort(dir, &[(PhenotypeKind::NormalPeristaltic, 1000), (PhenotypeKind::AbsentContractility, 1000)], 11)?;
    println!("        (cohort of {} windows solved in {:.0?}, {} failures)", ds.records.len(), t.elapsed(), ds.failures.len());
    let run = train_vae(&ds, VaeArch::desk(), &VaeTrainConfig::desk(60))?;
    let rows = embed(&ds, &run.vae, &run.norm)?;
    println!("        (autoencoder trained in {:.0?})", t.elapsed());
    Ok(Desk { ds, run, rows })
}

fn vae_training(d: &Desk) -> Result<Outcome> {
    let last = d.run.curve.last().unwrap();
    let smoothed = vdl_core::stats::smooth(&d.run.curve.iter().map(|e| e.eval_loss).collect::<Vec<_>>(), 2);
    let half = smoothed.len() / 2;
    let monotone = smoothed[half..].windows(2).all(|w| w[1] <= w[0]);

    let (tr, te) = subject_split(&d.rows, 0.25, 5);
    let pick = |idx: &[usize]| -> (Vec<Vec<f64>>, Vec<bool>) {
        (idx.iter().map(|&i| d.rows[i].latent().to_vec()).collect(), idx.iter().map(|&i| d.rows[i].peristalsis == Some(1)).collect())
    };
    let (xtr, ytr) = pick(&tr);
    let (xte, yte) = pick(&te);
    let probe = LinearProbe::fit(&xtr, &ytr, 1e-3)?;
    let acc = probe.accuracy(&xte, &yte);
    outcome(
        last.recon_mse < 1e-2 && monotone && acc >= 0.9,
        format!(
            "{} images, final recon MSE {:.2e}, smoothed loss monotone over last half: {monotone}, probe accuracy {acc:.3} on {} held out",
            d.ds.records.len(),
            last.recon_mse,
            te.len()
        ),
    )
}

fn worknet(d: &Desk) -> Result<Outcome> {
    let cfg = WorkTrainConfig { epochs: 1000, batch_size: 32, lr: 1e-4, seed: 3 };
    let w = train_worknet(&d.rows, &d.ds, &cfg, 0.2)?;
    let val = w.report.val_mse.unwrap_or(f64::INFINITY);
    outcome(val < 1e-3, format!("normalised validation MSE {val:.3e} on {} windows (train {:.3e})", w.report.n_val, w.report.train_mse))
}

fn traversal(d: &Desk) -> Result<Outcome> {
    let group = |name: &str| centroid(d.rows.iter().filter(|r| r.disease.as_deref() == Some(name)).map(|r| r.coords.as_slice())).unwrap();
    let a = group(PhenotypeKind::NormalPeristaltic.name());
    let b = group(PhenotypeKind::AbsentContractility.name());
    let path = traverse_latent(&a, &b, 5, &d.run.vae, None)?;
    let exact = path[0].image == decode_point(&d.run.vae, &a)? && path[4].image == decode_point(&d.run.vae, &b)?;
    let contrast: Vec<f64> = path.iter().map(|p| band_contrast(&p.image, 3)).collect();
    let monotone = contrast.windows(2).all(|w| w[1] <= w[0]);

    let mut rng = stream_rng(1212, 0);
    let p0: Vec<f64> = (0..a.len()).map(|_| rng.random_range(0.0..1.0)).collect();
    let v: Vec<f64> = (0..a.len()).map(|_| rng.random_range(-0.2..0.2)).collect();
    let at = |t: f64| -> Vec<f64> { p0.iter().zip(&v).map(|(p, v)| p + t * v).collect() };
    let visits: Vec<(f64, Vec<f64>)> = [0.0, 1.0, 3.0].iter().map(|&t| (t, at(t))).collect();
    let ex = extrapolate_trajectory(&visits, 5.5)?;
    let line_err = max_abs(&ex.coords, &at(5.5));
    let shown: Vec<String> = contrast.iter().map(|c| format!("{c:.4}")).collect();
    outcome(
        exact && monotone && line_err < 1e-8,
        format!("endpoints bit-exact: {exact}, band contrast [{}], extrapolation error {line_err:.1e}", shown.join(", ")),
    )
}

// ---------------------------------------------------------------------------
// 8: work metrics

fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let inner: f64 = (1..n).map(|i| f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 }).sum();
    h / 3.0 * (f(a) + inner + f(b))
}

fn work_metrics() -> Result<Outcome> {
    let mut rng = stream_rng(808, 0);
    let mut row_err = 0.0f64;
    for _ in 0..100 {
        let k = rng.random_range(5e6..2e7);
        let b = rng.random_range(-1200.0..-200.0);
        let th = rng.random_range(0.05..3.0);
        let a1 = egj_closed_area() * rng.random_range(0.5..2.0);
        let a2 = egj_open_area() * rng.random_range(0.5..2.0);
        let len = rng.random_range(0.01..0.05);
        let closed = egjrow_closed_form(k, b, th, a1, a2, len);
        let quad = simpson(|a| (k * a / th + b) * len, a1, a2, 2000);
        row_err = row_err.max((closed - quad).abs() / closed.abs());
    }

    // Constant pressure while the junction opens smoothly: W = P (A2 − A1) ℓ.
    let (a1, a2, p0) = (egj_closed_area(), egj_open_area(), 2500.0);
    let x = [0.0, 0.01, 0.02];
    let nt = 4001;
    let t: Vec<f64> = (0..nt).map(|k| 2.0 * k as f64 / (nt - 1) as f64).collect();
    let area = Matrix::from_fn(3, nt, |_, k| a1 + (a2 - a1) * 0.5 * (1.0 - (std::f64::consts::PI * t[k] / 2.0).cos()));
    let pressure = Matrix::filled(3, nt, p0);
    let region = EgjRegion { first_cell: 0, last_cell: 2, x1: 0.0, x2: 0.02, i1: 0, i2: nt - 1, t1: 0.0, t2: 2.0, a1, a2 };
    let w = compute_egjw(&pressure, &area, &x, &t, &region)?;
    let exact = p0 * (a2 - a1) * 0.02;
    let w_err = (w - exact).abs() / exact;
    outcome(row_err < 1e-10 && w_err < 1e-6, format!("EGJROW worst relative error {row_err:.2e}, EGJW constant-pressure error {w_err:.2e}"))
}

// ---------------------------------------------------------------------------
// 9, 10: reduction and distances

fn reduction() -> Result<Outcome> {
    let mut rng = stream_rng(909, 0);
    let d = 6;
    let mix = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
    let scales = [5.0, 3.0, 2.0, 1.2, 0.6, 0.2];
    let rows: Vec<Vec<f64>> = (0..300)
        .map(|_| {
            let z = DVector::from_fn(d, |i, _| scales[i] * rng.sample::<f64, _>(StandardNormal));
            (&mix * z).iter().map(|v| v + 3.0).collect()
        })
        .collect();
    let pca = pca_reduce(&rows, d)?;
    // Oracle: right singular vectors of the centred data matrix.
    let x = DMatrix::from_fn(rows.len(), d, |i, j| rows[i][j] - pca.mean[j]);
    let svd = x.svd(false, true);
    let vt = svd.v_t.unwrap();
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let total: f64 = svd.singular_values.iter().map(|s| s * s).sum();
    let mut pca_err = 0.0f64;
    for (k, &j) in order.iter().enumerate() {
        let v: Vec<f64> = vt.row(j).iter().copied().collect();
        let neg: Vec<f64> = v.iter().map(|x| -x).collect();
        pca_err = pca_err.max(max_abs(&pca.directions[k], &v).min(max_abs(&pca.directions[k], &neg)));
        pca_err = pca_err.max((pca.explained[k] - svd.singular_values[j].powi(2) / total).abs());
    }

    // Four shifted Gaussian classes in 8-d with a shared anisotropic spread.
    let d = 8;
    let means: Vec<Vec<f64>> = (0..4).map(|_| (0..d).map(|_| rng.random_range(-4.0..4.0)).collect()).collect();
    let spread: Vec<f64> = (0..d).map(|_| rng.random_range(0.3..2.0)).collect();
    let (mut pts, mut labels) = (Vec::new(), Vec::new());
    for (c, m) in means.iter().enumerate() {
        for _ in 0..60 {
            pts.push((0..d).map(|i| m[i] + spread[i] * rng.sample::<f64, _>(StandardNormal)).collect::<Vec<f64>>());
            labels.push(c);
        }
    }
    let lda = lda_reduce(&pts, &labels, 3, LdaOptions::default())?;
    let best = fisher_criterion(&pts, &labels, &lda.directions)?;
    let mut beaten = 0;
    let mut best_random = 0.0f64;
    for _ in 0..100 {
        let w: Vec<Vec<f64>> = (0..3).map(|_| (0..d).map(|_| rng.sample(StandardNormal)).collect()).collect();
        let f = fisher_criterion(&pts, &labels, &w)?;
        best_random = best_random.max(f);
        beaten += (best > f) as usize;
    }
    outcome(
        pca_err < 1e-8 && beaten == 100,
        format!(
            "PCA vs SVD oracle {pca_err:.2e}; LDA Fisher criterion {best:.3} beats {beaten}/100 random projections (best {best_random:.3})"
        ),
    )
}

fn distances() -> Result<Outcome> {
    let mut rng = stream_rng(1010, 0);
    let groups: Vec<String> = (0..5).map(|g| format!("g{g}")).collect();
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let pts: Vec<Vec<f64>> = (0..100).map(|_| (0..3).map(|_| rng.random_range(-5.0..5.0)).collect()).collect();
        let labels: Vec<usize> = (0..100).map(|i| i % 5).collect();
        let m = distance_matrix(&pts, &labels, &groups)?;
        for row in &m.values {
            worst = worst.max((row.iter().sum::<f64>() - 100.0).abs());
        }
    }
    // Toy case: A = {0, 2}, B = {4, 6}, C = {9, 11, 13}; centroids 1, 5, 11.
    let pts: Vec<Vec<f64>> = [0.0, 2.0, 4.0, 6.0, 9.0, 11.0, 13.0].iter().map(|&v| vec![v]).collect();
    let labels = [0, 0, 1, 1, 2, 2, 2];
    let names: Vec<String> = ["A", "B", "C"].iter().map(|s| s.to_string()).collect();
    let m = distance_matrix(&pts, &labels, &names)?;
    let raw = vec![vec![1.0, 4.0, 10.0], vec![4.0, 1.0, 6.0], vec![10.0, 6.0, 2.0]];
    let expected = vec![
        vec![100.0 / 15.0, 400.0 / 15.0, 1000.0 / 15.0],
        vec![400.0 / 11.0, 100.0 / 11.0, 600.0 / 11.0],
        vec![1000.0 / 18.0, 600.0 / 18.0, 200.0 / 18.0],
    ];
    let toy = m.raw == raw && m.values == expected;
    outcome(worst <= 1e-9 && toy, format!("worst row-sum deviation {worst:.1e}, toy case exact: {toy}"))
}

// ---------------------------------------------------------------------------
// 11: forest on five phenotypes

fn forest(dir: &Path) -> Result<Outcome> {
    let entries: Vec<(PhenotypeKind, usize)> = PhenotypeKind::ALL.iter().map(|&k| (k, 80)).collect();
    let ds = cohort(dir, &entries, 23)?;
    let run = train_vae(&ds, VaeArch::desk(), &VaeTrainConfig::desk(60))?;
    let rows = embed(&ds, &run.vae, &run.norm)?;
    let labels = LabelSet::observed(rows.iter().filter_map(|r| r.disease.as_deref()));
    let cfg = ForestConfig { n_estimators: 1000, seed: 7, ..Default::default() };
    let disease = train_forest(&rows, Task::Disease, &labels, &cfg, 0.25)?;
    let peristalsis = train_forest(&rows, Task::Peristalsis, &labels, &cfg, 0.25)?;
    let acc = disease.report.subset_accuracy.unwrap_or(0.0);
    let jac = peristalsis.report.jaccard.unwrap_or(0.0);

    let mut rng = stream_rng(1111, 0);
    let mut sum_err = 0.0f64;
    let noise: Vec<Vec<f64>> = (0..200).map(|_| (0..vdl_core::VDL_DIM).map(|_| rng.random_range(-2.0..3.0)).collect()).collect();
    for f in [&disease.forest, &peristalsis.forest] {
        for x in rows.iter().map(|r| &r.coords).chain(&noise) {
            sum_err = sum_err.max((f.predict_proba(x)?.iter().sum::<f64>() - 1.0).abs());
        }
    }
    outcome(
        jac >= 0.90 && acc >= 0.85 && sum_err < 1e-12,
        format!(
            "{} windows, {} held out: peristalsis Jaccard {jac:.3}, disease subset accuracy {acc:.3}, worst |Σp − 1| {sum_err:.1e}",
            rows.len(),
            disease.report.n_test
        ),
    )
}

// ---------------------------------------------------------------------------
// 13: determinism

fn pipeline_once(dir: &Path) -> Result<()> {
    let cohort_dir = dir.join("cohort");
    let spec = CohortSpec::new(vec![
        CohortEntry { phenotype: PhenotypeKind::NormalPeristaltic, count: 8 },
        CohortEntry { phenotype: PhenotypeKind::TightEgj, count: 8 },
    ]);
    write_cohort(&generate_cohort(&spec, 5)?, &spec, 5, &cohort_dir)?;
    seal_dir(&cohort_dir)?;
    let aug = AugmentSpec { replicas_per_sample: 2, ..Default::default() };
    let ds = solve_cohort(&cohort_dir, &SolveOptions { augment: Some((aug, 9)), ..Default::default() })?;
    write_json_artifact(&dir.join("mechanics.json"), &ds)?;
    let cfg = VaeTrainConfig::desk(5);
    let run = train_vae(&ds, VaeArch::desk(), &cfg)?;
    save_vae(&dir.join("vae.bin"), &run.vae, &run.norm, &cfg)?;
    let rows = embed(&ds, &run.vae, &run.norm)?;
    write_vdl(&dir.join("vdl.csv"), &rows)?;
    let wcfg = WorkTrainConfig { epochs: 20, seed: 1, ..Default::default() };
    let w = train_worknet(&rows, &ds, &wcfg, 0.2)?;
    save_worknet(&dir.join("worknet.bin"), &w, &wcfg)?;
    let originals: Vec<&VdlVector> = rows.iter().filter(|r| !r.augmented).collect();
    let x: Vec<Vec<f64>> = originals.iter().map(|r| r.coords.clone()).collect();
    let labels = LabelSet::observed(originals.iter().filter_map(|r| r.disease.as_deref()));
    let y: Vec<usize> = originals.iter().map(|r| labels.index(r.disease.as_deref().unwrap())).collect::<Result<_>>()?;
    write_json_artifact(&dir.join("reduced_pca.json"), &pca_reduce(&x, 3)?)?;
    let lda = lda_reduce(&x, &y, 1, LdaOptions::default())?;
    write_json_artifact(&dir.join("reduced_lda.json"), &lda)?;
    let mut buf = Vec::new();
    distance_matrix(&lda.project_all(&x)?, &y, &labels.names)?.write_csv(&mut buf)?;
    write_artifact(&dir.join("distances.csv"), &buf)?;
    let f = train_forest(&rows, Task::Disease, &labels, &ForestConfig { n_estimators: 50, ..Default::default() }, 0.25)?;
    write_json_artifact(&dir.join("forest.json"), &f.forest)?;
    write_json_artifact(&dir.join("forest_report.json"), &(&f.report, &f.test_predictions))?;
    let path = traverse_latent(&x[0], &x[x.len() - 1], 4, &run.vae, Some(&w.predictor))?;
    write_json_artifact(&dir.join("traversal.json"), &path)?;
    Ok(())
}

fn files(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

fn determinism(base: &Path) -> Result<Outcome> {
    let (a, b) = (base.join("a"), base.join("b"));
    pipeline_once(&a)?;
    pipeline_once(&b)?;
    let (fa, fb) = (files(&a), files(&b));
    let differing: Vec<String> =
        fa.iter().filter(|p| fs::read(a.join(p)).ok() != fs::read(b.join(p)).ok()).map(|p| p.display().to_string()).collect();
    outcome(fa == fb && differing.is_empty(), format!("{} artifacts compared, {} differ {:?}", fa.len(), differing.len(), differing))
}

// ---------------------------------------------------------------------------

fn report(n: usize, name: &str, r: Result<Outcome>, t: Instant, failed: &mut Vec<usize>) {
    let (pass, detail) = match r {
        Ok(o) => (o.pass, o.detail),
        Err(e) => (false, format!("error: {e}")),
    };
    let status = match (pass, KNOWN_GAPS.contains(&n)) {
        (true, _) => "PASS",
        (false, true) => "FAIL (known gap)",
        (false, false) => {
            failed.push(n);
            "FAIL"
        }
    };
    println!("{n:>2} {status:<16} {name}: {detail} [{:.1?}]", t.elapsed());
}

fn main() {
    let start = Instant::now();
    let tmp = tempfile::tempdir().expect("temporary directory");
    let mut failed = Vec::new();
    macro_rules! run {
        ($n:expr, $name:expr, $e:expr) => {{
            let t = Instant::now();
            report($n, $name, $e, t, &mut failed);
        }};
    }
    println!("acceptance suite");
    run!(1, "forward-inverse round trip", round_trip());
    run!(2, "conservation", conservation());
    run!(3, "linear-solver oracle", linear_solver_oracle());
    run!(4, "KLD against Monte Carlo", kld_monte_carlo());
    run!(5, "gradients against finite differences", gradients());
    let t = Instant::now();
    match desk(&tmp.path().join("desk")) {
        Ok(d) => {
            run!(6, "desk-scale autoencoder", vae_training(&d));
            run!(7, "work regressor", worknet(&d));
            run!(12, "traversal and trajectory", traversal(&d));
        }
        Err(e) => {
            for (n, name) in [(6, "desk-scale autoencoder"), (7, "work regressor"), (12, "traversal and trajectory")] {
                report(n, name, Err(vdl_core::Error::Invalid(format!("desk cohort: {e}"))), t, &mut failed);
            }
        }
    }
    run!(8, "work metrics", work_metrics());
    run!(9, "PCA and LDA", reduction());
    run!(10, "distance matrix", distances());
    run!(11, "random forest", forest(&tmp.path().join("five")));
    run!(13, "determinism", determinism(&tmp.path().join("repeat")));
    println!("finished in {:.0?}", start.elapsed());
    if !failed.is_empty() {
        println!("unexpected failures: {failed:?}");
        std::process::exit(1);
    }
}
