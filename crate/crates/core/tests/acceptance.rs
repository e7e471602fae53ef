//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails.

mod support;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use micon_core::dataset::{gen_synthetic, split_id_by_batch, Dataset, SplitSpec, SynthConfig, WellKey, DMSO};
use micon_core::eval::{
    evaluate_retrieval, mad_normalize, permutation_test, spherize, t_test_one_tailed, Constraint, Embedder,
    EvalConfig, RetrievalReport, WellEmbedding,
};
use micon_core::math::{Matrix, Mode, SeedTree};
use micon_core::model::{
    cf_paclr_loss, clip_loss, evaluate, paclr_loss, simclr_loss, train, trained_parts, write_checkpoint, Checkpoint,
    HyperParams, Method, ModelParams, Part, StepInputs,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// 1. Gradients

/// Largest `|analytic - central difference| / max(1, |analytic|)`.
fn fd_error(f: &dyn Fn(&[f64]) -> (f64, Vec<f64>), x: &[f64]) -> f64 {
    let h = 1e-5;
    let (_, g) = f(x);
    assert_eq!(g.len(), x.len());
    let mut y = x.to_vec();
    let mut worst: f64 = 0.0;
    for i in 0..x.len() {
        y[i] = x[i] + h;
        let up = f(&y).0;
        y[i] = x[i] - h;
        let down = f(&y).0;
        y[i] = x[i];
        let numeric = (up - down) / (2.0 * h);
        worst = worst.max((g[i] - numeric).abs() / g[i].abs().max(1.0));
    }
    worst
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn binary_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.gen_range(0..2) as f64).collect()).unwrap()
}

fn flat_params(p: &ModelParams, parts: &[Part]) -> Vec<f64> {
    parts
        .iter()
        .flat_map(|&part| p.net(part).params().into_iter().flatten().copied().collect::<Vec<_>>())
        .collect()
}

fn load_params(p: &mut ModelParams, parts: &[Part], v: &[f64]) {
    let mut off = 0;
    for &part in parts {
        for t in p.net_mut(part).params_mut() {
            let n = t.len();
            t.copy_from_slice(&v[off..off + n]);
            off += n;
        }
    }
}

fn gradients() -> Outcome {
    let mut worst = [0.0f64; 5];
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = rng.gen_range(2..=32);
        let tau = rng.gen_range(0.1..1.0);

        let n = 2 * rng.gen_range(2..=8);
        let reps = random_matrix(&mut rng, n, d);
        let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..3)).collect();
        let f = |x: &[f64]| {
            let r = paclr_loss(&Matrix::from_vec(n, d, x.to_vec()).unwrap(), &labels, tau).unwrap();
            (r.loss, r.grad.into_vec())
        };
        worst[0] = worst[0].max(fd_error(&f, reps.data()));

        let f = |x: &[f64]| {
            let r = simclr_loss(&Matrix::from_vec(n, d, x.to_vec()).unwrap(), tau).unwrap();
            (r.loss, r.grad.into_vec())
        };
        worst[2] = worst[2].max(fd_error(&f, reps.data()));

        let m = rng.gen_range(2..=16);
        let k = rng.gen_range(2..=16);
        let mut x = random_matrix(&mut rng, m, d).into_vec();
        x.extend(random_matrix(&mut rng, k, d).into_vec());
        let real_labels: Vec<usize> = (0..m).map(|i| i % 3).collect();
        let cf_labels: Vec<usize> = (0..k).map(|_| rng.gen_range(0..3)).collect();
        let f = |x: &[f64]| {
            let r = cf_paclr_loss(
                &Matrix::from_vec(m, d, x[..m * d].to_vec()).unwrap(),
                &real_labels,
                &Matrix::from_vec(k, d, x[m * d..].to_vec()).unwrap(),
                &cf_labels,
                tau,
            )
            .unwrap();
            let mut g = r.grad_a.into_vec();
            g.extend(r.grad_b.into_vec());
            (r.loss, g)
        };
        worst[1] = worst[1].max(fd_error(&f, &x));

        let mut x = random_matrix(&mut rng, m, d).into_vec();
        x.extend(random_matrix(&mut rng, m, d).into_vec());
        let f = |x: &[f64]| {
            let r = clip_loss(
                &Matrix::from_vec(m, d, x[..m * d].to_vec()).unwrap(),
                &Matrix::from_vec(m, d, x[m * d..].to_vec()).unwrap(),
                tau,
            )
            .unwrap();
            let mut g = r.grad_a.into_vec();
            g.extend(r.grad_b.into_vec());
            (r.loss, g)
        };
        worst[3] = worst[3].max(fd_error(&f, &x));

        // Full forward pass: encoder, projection, compound encoder and fusion.
        let hp = HyperParams {
            image_hidden: vec![rng.gen_range(2..=8), rng.gen_range(2..=8)],
            proj_hidden: rng.gen_range(2..=8),
            compound_hidden: vec![rng.gen_range(2..=8), rng.gen_range(2..=8)],
            fusion_hidden: rng.gen_range(2..=8),
            proj_dim: rng.gen_range(2..=8),
            ..HyperParams::synthetic()
        };
        let (feat, bits) = (rng.gen_range(2..=16), rng.gen_range(4..=16));
        let t = rng.gen_range(2..=5);
        let c = rng.gen_range(2..=16 - 2 * t);
        let pair_labels: Vec<usize> = (0..t).map(|i| 1 + i % 3).collect();
        let labels: Vec<usize> = pair_labels.iter().chain(&pair_labels).copied().chain(std::iter::repeat(0).take(c)).collect();
        let inputs = StepInputs::Micon {
            features: random_matrix(&mut rng, 2 * t + c, feat),
            labels,
            n_perturbed: t,
            cf_controls: (0..t).map(|_| rng.gen_range(0..c)).collect(),
            fingerprints: binary_matrix(&mut rng, t, bits),
        };
        let base = ModelParams::new(feat, bits, &hp, &SeedTree::new(seed)).unwrap();
        let parts = trained_parts(Method::Micon, 1.0);
        let f = |v: &[f64]| {
            let mut p = base.clone();
            load_params(&mut p, &parts, v);
            let out = evaluate(&mut p, &inputs, Method::Micon, tau, 1.0, Mode::Train).unwrap();
            let g: Vec<f64> = out.grads.unwrap().into_iter().flat_map(|(_, g)| g.into_iter().flatten()).collect();
            (out.loss, g)
        };
        worst[4] = worst[4].max(fd_error(&f, &flat_params(&base, &parts)));
    }
    let names = ["paclr", "cf_paclr", "simclr", "clip", "micon"];
    let summary = names
        .iter()
        .zip(worst)
        .map(|(n, w)| format!("{n} {w:.1e}"))
        .collect::<Vec<_>>()
        .join(", ");
    check(worst.iter().all(|&w| w < 1e-4), || format!("max relative error: {summary}"))?;
    Ok(format!("max relative error: {summary}"))
}

// 2. Closed forms

fn closed_forms() -> Outcome {
    let m = |rows: &[[f64; 2]]| Matrix::from_rows(rows).unwrap();
    let three = m(&[[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]]);
    let four = m(&[[1.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.0, 1.0]]);
    let cases = [
        (paclr_loss(&three, &[0, 0, 1], 1.0).unwrap().loss, (1.0 + (-1f64).exp()).ln(), 0.313262),
        (paclr_loss(&three, &[0, 0, 1], 0.5).unwrap().loss, (1.0 + (-2f64).exp()).ln(), 0.126928),
        (simclr_loss(&four, 1.0).unwrap().loss, (1.0 + 2.0 * (-1f64).exp()).ln(), 0.551445),
    ];
    for (got, exact, rounded) in cases {
        check((got - exact).abs() < 1e-9 && (got - rounded).abs() < 5e-7, || {
            format!("{got} vs {exact}")
        })?;
    }
    Ok(format!("{} cases", cases.len()))
}

// 3. Ablation identity

fn small_dataset() -> (Dataset, SplitSpec) {
    let cfg = SynthConfig {
        n_sources: 2,
        wells_per_plate: 24,
        fovs_per_well: 2,
        n_compounds: 4,
        latent_dim: 8,
        feature_dim: 16,
        ..SynthConfig::default()
    };
    let ds = gen_synthetic(&cfg).unwrap();
    let split = split_id_by_batch(&ds, 0.34, 1, 0).unwrap();
    (ds, split)
}

fn tensor_bytes(ckpt: &Checkpoint) -> Vec<u8> {
    let mut buf = Vec::new();
    write_checkpoint(&mut buf, ckpt).unwrap();
    let header_len = u32::from_le_bytes(buf[8..12].try_into().unwrap()) as usize;
    buf.split_off(12 + header_len)
}

fn ablation_identity() -> Outcome {
    let (ds, split) = small_dataset();
    let hp = HyperParams {
        epochs: 3,
        batch_size: 16,
        image_hidden: vec![16],
        proj_hidden: 16,
        compound_hidden: vec![16],
        fusion_hidden: 16,
        proj_dim: 8,
        warmup_steps: 2,
        checkpoint_every: 3,
        val_batches: 1,
        ..HyperParams::synthetic()
    };
    let mut n = 0;
    for seed in 0..2 {
        let a = train(&ds, &split, &HyperParams { seed, cf_weight: 0.0, ..hp.clone() }, Method::Micon).unwrap();
        let b = train(&ds, &split, &HyperParams { seed, ..hp.clone() }, Method::PaclrOnly).unwrap();
        let ca = Checkpoint { method: Method::Micon, hp: hp.clone(), step: a.best_step, params: a.params };
        let cb = Checkpoint { method: Method::PaclrOnly, hp: hp.clone(), step: b.best_step, params: b.params };
        check(ca.step == cb.step, || format!("seed {seed}: best step {} vs {}", ca.step, cb.step))?;
        let (ta, tb) = (tensor_bytes(&ca), tensor_bytes(&cb));
        check(ta == tb, || format!("seed {seed}: checkpoint tensors differ"))?;
        check(a.log == b.log, || format!("seed {seed}: training logs differ"))?;
        n += ta.len();
    }
    Ok(format!("2 seeds, {n} tensor bytes identical"))
}

// 4. Retrieval

fn retrieval() -> Outcome {
    let checked = support::check_retrieval(100, 7);
    Ok(format!("100 instances, {checked} satisfiable instance-constraint pairs agree"))
}

// 5. Post-processing

fn plate_wells(rng: &mut ChaCha8Rng, plate: &str, d: usize, n_controls: usize) -> Vec<WellEmbedding> {
    let mix = random_matrix(rng, d, d);
    let shift: Vec<f64> = (0..d).map(|_| rng.gen_range(-3.0..3.0)).collect();
    (0..n_controls + 10)
        .map(|i| {
            let z: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let vector = (0..d)
                .map(|j| shift[j] + z[j] + (0..d).map(|k| mix.get(j, k) * z[k]).sum::<f64>())
                .collect();
            WellEmbedding {
                key: WellKey {
                    source: "s".into(),
                    batch: "b".into(),
                    plate: plate.into(),
                    row: (i / 24) as u32,
                    col: (i % 24) as u32,
                },
                perturbation: if i < n_controls { DMSO.into() } else { format!("c{}", i % 3) },
                vector,
            }
        })
        .collect()
}

fn control_covariance(embs: &[WellEmbedding], plate: &str) -> Vec<Vec<f64>> {
    let c: Vec<&Vec<f64>> = embs
        .iter()
        .filter(|e| e.key.plate == plate && e.perturbation == DMSO)
        .map(|e| &e.vector)
        .collect();
    let (n, d) = (c.len() as f64, c[0].len());
    let mean: Vec<f64> = (0..d).map(|j| c.iter().map(|v| v[j]).sum::<f64>() / n).collect();
    (0..d)
        .map(|a| {
            (0..d)
                .map(|b| c.iter().map(|v| (v[a] - mean[a]) * (v[b] - mean[b])).sum::<f64>() / (n - 1.0))
                .collect()
        })
        .collect()
}

fn postprocessing() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    let mut plates = 0;
    for trial in 0..5 {
        let d = rng.gen_range(2..=12);
        let mut embs = Vec::new();
        for p in 0..3 {
            let n_controls = d + rng.gen_range(5..40);
            embs.extend(plate_wells(&mut rng, &format!("p{trial}-{p}"), d, n_controls));
        }
        let mut whitened = embs.clone();
        spherize(&mut whitened, 0.0).unwrap();
        for p in 0..3 {
            let cov = control_covariance(&whitened, &format!("p{trial}-{p}"));
            for (a, row) in cov.iter().enumerate() {
                for (b, v) in row.iter().enumerate() {
                    worst = worst.max((v - if a == b { 1.0 } else { 0.0 }).abs());
                }
            }
            plates += 1;
        }

        // Odd control counts make the median unambiguous.
        let mut odd: Vec<WellEmbedding> = Vec::new();
        for p in 0..3 {
            let n_controls = 2 * rng.gen_range(3..20) + 1;
            odd.extend(plate_wells(&mut rng, &format!("m{trial}-{p}"), d, n_controls));
        }
        mad_normalize(&mut odd).unwrap();
        for p in 0..3 {
            let plate = format!("m{trial}-{p}");
            for j in 0..d {
                let mut col: Vec<f64> = odd
                    .iter()
                    .filter(|e| e.key.plate == plate && e.perturbation == DMSO)
                    .map(|e| e.vector[j])
                    .collect();
                col.sort_by(f64::total_cmp);
                let med = col[col.len() / 2];
                check(med == 0.0, || format!("plate {plate} coordinate {j}: control median {med:e}"))?;
            }
        }
    }
    check(worst < 1e-8, || format!("covariance deviates from identity by {worst:e}"))?;
    Ok(format!("{plates} plates, max |cov - I| {worst:.1e}; MAD control medians exactly 0"))
}

// 6. Fingerprints

fn fingerprints() -> Outcome {
    let counts = support::check_identifier_counts();
    check(counts >= 20, || format!("only {counts} fixture molecules"))?;
    let pairs = support::check_unfolded_tanimoto();
    let folded = support::check_folded_baseline();
    support::check_renumbering(50, 11);
    Ok(format!(
        "{counts} molecules and {pairs} Tanimoto pairs vs RDKit, {folded} folded baselines, 50 renumbered molecules"
    ))
}

// 7. Statistics

fn statistics() -> Outcome {
    let fx = support::stats_fixture();
    support::check_t_tests(&fx);
    support::check_rm_anovas(&fx);
    support::check_degenerate_stats();
    Ok(format!("{} t-tests, {} ANOVAs, degenerate conventions", fx.t_test.len(), fx.rm_anova.len()))
}

// 8 and 9. Synthetic benchmark

const SEEDS: [u64; 3] = [0, 1, 2];
const EPOCHS: usize = 30;
const CHANCE: f64 = 1.0 / 8.0;
const BUDGET: Duration = Duration::from_secs(15 * 60);

struct Benchmark {
    /// NSB reports per method, one per seed.
    nsb: Vec<(Method, Vec<RetrievalReport>)>,
    /// NSB reports of MICON with counterfactual queries.
    counterfactual: Vec<RetrievalReport>,
    elapsed: Duration,
    wells: usize,
}

fn run_benchmark() -> Benchmark {
    let t0 = Instant::now();
    let cfg = SynthConfig::default();
    let ds = gen_synthetic(&cfg).unwrap();
    let split = split_id_by_batch(&ds, 0.34, 1, 0).unwrap();
    let eval = EvalConfig {
        constraints: vec![Constraint::NotSameBatch],
        ..EvalConfig::synthetic()
    };
    let mut nsb = Vec::new();
    let mut counterfactual = Vec::new();
    for method in Method::ALL {
        let mut reports = Vec::new();
        for seed in SEEDS {
            let hp = HyperParams { epochs: EPOCHS, seed, ..HyperParams::synthetic() };
            let out = train(&ds, &split, &hp, method).unwrap();
            let embedder = Embedder::Model(&out.params);
            reports.extend(evaluate_retrieval(embedder, &ds, &split, &eval, false).unwrap());
            if method == Method::Micon {
                counterfactual.extend(evaluate_retrieval(embedder, &ds, &split, &eval, true).unwrap());
            }
        }
        nsb.push((method, reports));
    }
    Benchmark { nsb, counterfactual, elapsed: t0.elapsed(), wells: ds.wells.len() }
}

fn accuracies(reports: &[RetrievalReport]) -> Vec<f64> {
    reports.iter().map(|r| r.accuracy).collect()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn ordering(b: &Benchmark) -> Outcome {
    let cfg = SynthConfig::default();
    check(
        cfg.n_sources == 6 && cfg.n_compounds == 8 && b.wells == 864 && cfg.structure_signal == 0.8,
        || format!("default dataset: {} sources, {} compounds, {} wells", cfg.n_sources, cfg.n_compounds, b.wells),
    )?;
    let acc = |m: Method| accuracies(&b.nsb.iter().find(|(k, _)| *k == m).unwrap().1);
    let means: Vec<String> = b
        .nsb
        .iter()
        .map(|(m, r)| format!("{m} {:.3}", mean(&accuracies(r))))
        .collect();
    let detail = format!("NSB {}; {:.0}s", means.join(", "), b.elapsed.as_secs_f64());
    check(b.elapsed < BUDGET, || format!("took {:.0}s; {detail}", b.elapsed.as_secs_f64()))?;

    let micon = acc(Method::Micon);
    let perm = permutation_test(&b.nsb[0].1, 1000, 0).unwrap();
    check(mean(&micon) > CHANCE && perm.p_value < 0.05, || {
        format!("(a) micon {:.3} permutation p {:.4}; {detail}", mean(&micon), perm.p_value)
    })?;

    let paclr = mean(&acc(Method::PaclrOnly));
    let baseline = mean(&acc(Method::Simclr)).max(mean(&acc(Method::Clip)));
    check(mean(&micon) >= paclr && paclr >= baseline, || format!("(b) ordering violated; {detail}"))?;

    let t = t_test_one_tailed(&micon, &acc(Method::Simclr)).unwrap();
    check(t.p < 0.05, || format!("(c) micon vs simclr p {:.4}; {detail}", t.p))?;
    Ok(format!("{detail}; permutation p {:.4}, t-test p {:.4}", perm.p_value, t.p))
}

fn counterfactual(b: &Benchmark) -> Outcome {
    let acc = mean(&accuracies(&b.counterfactual));
    let perm = permutation_test(&b.counterfactual, 1000, 0).unwrap();
    let detail = format!("counterfactual NSB {acc:.3} (real {:.3}), permutation p {:.4}", mean(&accuracies(&b.nsb[0].1)), perm.p_value);
    check(acc > CHANCE && perm.p_value < 0.05, || detail.clone())?;
    Ok(detail)
}

fn run(id: usize, name: &str, f: impl FnOnce() -> Outcome) -> bool {
    let t = Instant::now();
    let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
        Err(e
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panicked".into()))
    });
    let secs = t.elapsed().as_secs_f64();
    match &outcome {
        Ok(msg) => println!("PASS {id} {name} ({secs:.1}s): {msg}"),
        Err(msg) => println!("FAIL {id} {name} ({secs:.1}s): {msg}"),
    }
    outcome.is_ok()
}

fn main() {
    std::panic::set_hook(Box::new(|_| {}));
    let mut ok = true;
    ok &= run(1, "gradient correctness", gradients);
    ok &= run(2, "closed-form losses", closed_forms);
    ok &= run(3, "ablation identity", ablation_identity);
    ok &= run(4, "retrieval oracle", retrieval);
    ok &= run(5, "spherizing and MAD", postprocessing);
    ok &= run(6, "fingerprints", fingerprints);
    ok &= run(7, "statistics", statistics);
    let bench = catch_unwind(run_benchmark);
    match &bench {
        Ok(b) => {
            ok &= run(8, "synthetic ordering", || ordering(b));
            ok &= run(9, "counterfactual retrieval", || counterfactual(b));
        }
        Err(_) => {
            ok &= run(8, "synthetic ordering", || Err("benchmark run panicked".into()));
            ok &= run(9, "counterfactual retrieval", || Err("benchmark run panicked".into()));
        }
    }
    if !ok {
        std::process::exit(1);
    }
}
