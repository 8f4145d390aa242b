//! Acceptance gate: one test per criterion, each printing a single
//! machine-greppable verdict line (run with `--nocapture` to see the lines
//! for passing criteria too).

mod common;

use std::time::Instant;

use common::{gradcheck, make_blobs, mean, sample_std};
use ndarray::{array, Array2};
use pll_core::generate::{
    entropy_of_t, generate_partial_dataset, sample_tmatrix_candidate_set,
    sample_uniform_candidate_set, uniform_marginal_tmatrix, uniform_mean_set_size,
    GenerationModel, TransitionMatrixModel, UniformGenerationModel,
};
use pll_core::io::load_idx_images;
use pll_core::model::{cc_loss_and_grad, rc_loss_and_grad, supervised_loss_and_grad, Model};
use pll_core::train::{train_cc, train_rc, train_supervised};
use pll_core::types::{CandidateSet, Method, ModelSpec, RunConfig, SupervisedDataset};
use pll_core::verify::{
    build_q, check_cc_fixed_point, check_lemma1, check_rc_equivalence, check_theorem1,
    check_theorem3, random_toy, DiscreteToyProblem,
};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn report(criterion: u32, label: &str, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    println!("acceptance {criterion:02} [{verdict}] {label}: {detail}");
    assert!(pass, "acceptance criterion {criterion} ({label}) failed: {detail}");
}

#[test]
fn criterion_01_oracle_suite() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(11);

    let mut worst_mass_gap = 0.0f64;
    let mut worst_t3 = 0.0f64;
    for k in 2..=8 {
        for _ in 0..20 {
            let m = rng.gen_range(2..=4);
            let toy = random_toy(m, k, &mut rng).unwrap();
            worst_mass_gap = worst_mass_gap.max((check_theorem1(&toy).unwrap() - 1.0).abs());
            worst_t3 = worst_t3.max(check_theorem3(&toy).unwrap());
        }
    }

    let mut worst_lemma = 0.0f64;
    for k in 2..=12 {
        worst_lemma = worst_lemma.max((check_lemma1(k).unwrap() - 0.5).abs());
    }

    // Containment: every sampled candidate set keeps the true label, under
    // both generation models.
    let mut contained = true;
    for i in 0..20_000 {
        let y = i % 6;
        let set = sample_uniform_candidate_set(6, y, &mut rng).unwrap();
        contained &= set.contains(y);
    }
    let t = Array2::from_shape_fn((5, 5), |(i, j)| {
        if i == j {
            1.0
        } else {
            0.1 + 0.16 * ((i * 5 + j) % 5) as f64
        }
    });
    let tmodel = TransitionMatrixModel::new(t).unwrap();
    for i in 0..20_000 {
        let y = i % 5;
        let set = sample_tmatrix_candidate_set(&tmodel, y, &mut rng).unwrap();
        contained &= set.contains(y);
    }

    let ranks_ok = (2..=12).all(|k| {
        let q = build_q(k).unwrap();
        q.rank() == k
    });

    let elapsed = started.elapsed().as_secs_f64();
    let pass = worst_mass_gap <= 1e-10
        && worst_lemma <= 1e-15
        && contained
        && worst_t3 < 1e-10
        && ranks_ok
        && elapsed < 30.0;
    report(
        1,
        "oracle suite",
        pass,
        &format!(
            "total-mass gap {worst_mass_gap:.2e}, half-count gap {worst_lemma:.2e}, \
             containment {}, conditioning gap {worst_t3:.2e}, rank(Q)=k {}, {elapsed:.1}s",
            if contained { "100%" } else { "violated" },
            if ranks_ok { "for k in [2,12]" } else { "violated" },
        ),
    );
}

#[test]
fn criterion_02_rc_risk_equivalence() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let k = rng.gen_range(2..=8);
        let m = rng.gen_range(2..=5);
        let toy = random_toy(m, k, &mut rng).unwrap();
        let logits = Array2::from_shape_fn((m, k), |_| rng.gen_range(-3.0..3.0));
        let (r, r_rc) = check_rc_equivalence(&toy, logits.view()).unwrap();
        worst = worst.max((r - r_rc).abs());
    }
    report(
        2,
        "reweighted risk identity",
        worst < 1e-10,
        &format!("max |R - R_rc| = {worst:.2e} over 50 random pairs"),
    );
}

#[test]
fn criterion_03_cc_fixed_point() {
    let started = Instant::now();
    let toy = DiscreteToyProblem::new(
        vec![0.5, 0.5],
        array![[0.7, 0.2, 0.1], [0.1, 0.3, 0.6]],
    )
    .unwrap();
    let result = check_cc_fixed_point(&toy, 20_000, 0.5);
    let elapsed = started.elapsed().as_secs_f64();
    match result {
        Ok(reportd) => {
            let pass = reportd.max_deviation < 1e-3 && elapsed < 10.0;
            report(
                3,
                "candidate-mass minimizer recovers the conditional",
                pass,
                &format!(
                    "max |g - p(y|x)| = {:.2e}, final grad norm {:.2e}, {elapsed:.1}s",
                    reportd.max_deviation, reportd.final_grad_norm
                ),
            );
        }
        Err(e) => report(3, "candidate-mass minimizer recovers the conditional", false, &format!("{e}")),
    }
}

#[test]
fn criterion_04_gradient_correctness() {
    let mut rng = ChaCha8Rng::seed_from_u64(44);
    let (d, k, b) = (4, 5, 6);
    let mut worst = 0.0f64;
    for draw in 0..60 {
        let spec = if draw % 2 == 0 {
            ModelSpec::Linear
        } else {
            ModelSpec::Mlp { hidden: 3 }
        };
        let model = Model::new(spec, d, k, &mut rng).unwrap();
        let x = Array2::from_shape_fn((b, d), |_| rng.gen_range(-2.0..2.0));
        let labels: Vec<usize> = (0..b).map(|_| rng.gen_range(0..k)).collect();
        let mut cands = Vec::with_capacity(b);
        let mut conf = Array2::zeros((b, k));
        for (o, &y) in labels.iter().enumerate() {
            let mut idx: Vec<usize> = (0..k)
                .filter(|&i| i == y || (i != y && rng.gen::<f64>() < 0.5))
                .collect();
            if idx.len() == k {
                idx.pop();
            }
            let set = CandidateSet::from_indices(k, &idx).unwrap();
            for i in set.iter() {
                conf[(o, i)] = rng.gen_range(0.2..1.0);
            }
            cands.push(set);
        }
        let cand_refs: Vec<&CandidateSet> = cands.iter().collect();
        let err = match draw % 3 {
            0 => gradcheck(&model, |m| {
                supervised_loss_and_grad(m, x.view(), &labels).unwrap()
            }),
            1 => gradcheck(&model, |m| {
                rc_loss_and_grad(m, x.view(), &cand_refs, conf.view()).unwrap()
            }),
            _ => gradcheck(&model, |m| cc_loss_and_grad(m, x.view(), &cand_refs).unwrap()),
        };
        worst = worst.max(err);
    }
    report(
        4,
        "analytic gradients vs central differences",
        worst < 1e-4,
        &format!("max relative error {worst:.2e} over 20 models per loss"),
    );
}

#[test]
fn criterion_05_sampler_exactness() {
    let k = 4;
    let n = 200_000usize;
    let p = 1.0 / 7.0;
    let sigma = (n as f64 * p * (1.0 - p)).sqrt();
    let mut worst_z = 0.0f64;
    for true_label in 0..k {
        let mut rng = ChaCha8Rng::seed_from_u64(5_500 + true_label as u64);
        let mut counts = vec![0usize; 1 << k];
        for _ in 0..n {
            let set = sample_uniform_candidate_set(k, true_label, &mut rng).unwrap();
            counts[set.mask_u64() as usize] += 1;
        }
        for mask in (1..(1usize << k) - 1).filter(|m| m & (1 << true_label) != 0) {
            let z = (counts[mask] as f64 - n as f64 * p).abs() / sigma;
            worst_z = worst_z.max(z);
        }
    }

    let exact = uniform_mean_set_size(10).unwrap();
    let draws = 100_000usize;
    let mut rng = ChaCha8Rng::seed_from_u64(5_600);
    let sizes: Vec<f64> = (0..draws)
        .map(|i| {
            sample_uniform_candidate_set(10, i % 10, &mut rng)
                .unwrap()
                .len() as f64
        })
        .collect();
    let m = mean(&sizes);
    let se = sample_std(&sizes) / (draws as f64).sqrt();
    let size_z = (m - exact).abs() / se;

    report(
        5,
        "sampler frequencies",
        worst_z < 4.0 && size_z < 3.0,
        &format!(
            "worst set-frequency z = {worst_z:.2} (limit 4), mean size {m:.4} vs {exact:.4} \
             at z = {size_z:.2} (limit 3)"
        ),
    );
}

#[test]
fn criterion_06_entropy_diagnostic() {
    let diag = Array2::from_shape_fn((5, 5), |(i, j)| if i == j { 1.0 } else { 0.0 });
    let e_diag = entropy_of_t(&diag).unwrap().entropy();

    let marginal = uniform_marginal_tmatrix(10).unwrap();
    let e = marginal.normalized_entropy().unwrap().entropy();
    let closed_form_gap = (e - 2.2715).abs();
    let reported_gap = (e - 2.257).abs();

    let pass = e_diag == 0.0 && closed_form_gap <= 1e-3 && reported_gap <= 0.05;
    report(
        6,
        "entropy diagnostic",
        pass,
        &format!(
            "diagonal T entropy {e_diag}, uniform-marginal k=10 entropy {e:.6} \
             (closed-form gap {closed_form_gap:.1e}, gap to externally reported 2.257 is \
             {reported_gap:.3}, accepted within 0.05)"
        ),
    );
}

fn desk_run(method: Method, n: usize, seed: u64, test: &SupervisedDataset) -> f64 {
    let k = 5;
    let train = make_blobs(n, k, 4.0, 9_000 + 31 * seed + n as u64);
    let gen = GenerationModel::Uniform(UniformGenerationModel::new(k).unwrap());
    let pds = generate_partial_dataset(&train, &gen, 70_000 + seed).unwrap();
    let cfg = RunConfig {
        seed,
        epochs: 50,
        batch_size: 256,
        learning_rate: 1e-2,
        weight_decay: 0.0,
        model: ModelSpec::Linear,
        method,
        trials: 1,
        validation_fraction: 0.0,
    };
    let (_, log) = match method {
        Method::Rc => train_rc(&pds, Some(test), &cfg, false),
        Method::Cc => train_cc(&pds, Some(test), &cfg, false),
        Method::Supervised => train_supervised(&pds, Some(test), &cfg, false),
    }
    .unwrap();
    100.0 * log.final_metric().expect("test accuracy recorded every epoch")
}

#[test]
fn criterion_07_desk_scale_learning() {
    let started = Instant::now();
    let test = make_blobs(2_000, 5, 4.0, 777);
    let seeds: Vec<u64> = (0..5).collect();

    let collect = |method: Method, n: usize| -> Vec<f64> {
        seeds.iter().map(|&s| desk_run(method, n, s, &test)).collect()
    };
    let sup5k = mean(&collect(Method::Supervised, 5_000));
    let rc5k = mean(&collect(Method::Rc, 5_000));
    let cc5k = mean(&collect(Method::Cc, 5_000));
    let rc500 = mean(&collect(Method::Rc, 500));
    let cc500 = mean(&collect(Method::Cc, 500));
    let elapsed = started.elapsed().as_secs_f64();

    let pass = (rc5k - sup5k).abs() <= 2.0
        && (cc5k - sup5k).abs() <= 2.0
        && rc5k >= cc5k - 0.5
        && (100.0 - rc5k) <= (100.0 - rc500)
        && (100.0 - cc5k) <= (100.0 - cc500)
        && elapsed < 300.0;
    report(
        7,
        "desk-scale learning",
        pass,
        &format!(
            "test acc (n=5000): supervised {sup5k:.2}, RC {rc5k:.2}, CC {cc5k:.2}; \
             (n=500): RC {rc500:.2}, CC {cc500:.2}; {elapsed:.0}s"
        ),
    );
}

#[test]
fn criterion_08_degenerate_singletons() {
    // Singleton candidate sets: partial supervision collapses to full
    // supervision.
    let ds = make_blobs(200, 4, 4.0, 88);
    let singleton = pll_core::types::PartialDataset::new(
        ds.features().clone(),
        ds.labels()
            .iter()
            .map(|&y| CandidateSet::from_indices(4, &[y]).unwrap())
            .collect(),
        Some(ds.labels().to_vec()),
        4,
    )
    .unwrap();

    let mut cfg = RunConfig {
        seed: 5,
        epochs: 12,
        batch_size: 64,
        learning_rate: 1e-2,
        weight_decay: 1e-4,
        model: ModelSpec::Linear,
        method: Method::Cc,
        trials: 1,
        validation_fraction: 0.0,
    };
    let (cc_model, cc_log) = train_cc(&singleton, None, &cfg, true).unwrap();
    cfg.method = Method::Supervised;
    let (sup_model, sup_log) = train_supervised(&singleton, None, &cfg, true).unwrap();
    let bitwise = cc_model
        .param_slices()
        .into_iter()
        .flatten()
        .zip(sup_model.param_slices().into_iter().flatten())
        .all(|(a, b)| a.to_bits() == b.to_bits());
    // Identical trajectories leave identical accuracy records; the losses
    // differ by exactly the additive constant ln(2^(k-1) - 1) = ln 7.
    let ln7 = 7f64.ln();
    let logs_equal = cc_log.records().len() == sup_log.records().len()
        && cc_log
            .records()
            .iter()
            .zip(sup_log.records())
            .all(|(c, s)| {
                c.transductive_accuracy == s.transductive_accuracy
                    && (c.train_loss - s.train_loss - ln7).abs() < 1e-12
            });

    // RC loss on singletons is exactly half the cross-entropy.
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let model = Model::new(ModelSpec::Linear, 3, 4, &mut rng).unwrap();
        let x = Array2::from_shape_fn((8, 3), |_| rng.gen_range(-2.0..2.0));
        let labels: Vec<usize> = (0..8).map(|_| rng.gen_range(0..4)).collect();
        let cands: Vec<CandidateSet> = labels
            .iter()
            .map(|&y| CandidateSet::from_indices(4, &[y]).unwrap())
            .collect();
        let cand_refs: Vec<&CandidateSet> = cands.iter().collect();
        let mut conf = Array2::zeros((8, 4));
        for (o, &y) in labels.iter().enumerate() {
            conf[(o, y)] = 1.0;
        }
        let (rc, _) = rc_loss_and_grad(&model, x.view(), &cand_refs, conf.view()).unwrap();
        let (ce, _) = supervised_loss_and_grad(&model, x.view(), &labels).unwrap();
        worst = worst.max((rc - 0.5 * ce).abs());
    }

    report(
        8,
        "singleton degeneracies",
        bitwise && logs_equal && worst < 1e-12,
        &format!(
            "CC params bit-identical to supervised: {bitwise}, logs identical: {logs_equal}, \
             max |RC - CE/2| = {worst:.2e}"
        ),
    );
}

/// Long-running protocol check against externally reported accuracy;
/// needs the four standard IDX files in $PLL_MNIST_DIR. Hours of runtime,
/// deliberately not part of the gate.
#[test]
#[ignore = "multi-hour MNIST run; set PLL_MNIST_DIR and run explicitly"]
fn criterion_09_mnist_protocol() {
    let Ok(dir) = std::env::var("PLL_MNIST_DIR") else {
        println!("acceptance 09 [SKIP] mnist protocol: PLL_MNIST_DIR not set");
        return;
    };
    let dir = std::path::Path::new(&dir);
    let train = load_idx_images(
        dir.join("train-images-idx3-ubyte"),
        dir.join("train-labels-idx1-ubyte"),
    )
    .unwrap();
    let test = load_idx_images(
        dir.join("t10k-images-idx3-ubyte"),
        dir.join("t10k-labels-idx1-ubyte"),
    )
    .unwrap();
    let gen = GenerationModel::Uniform(UniformGenerationModel::new(train.k()).unwrap());
    let pds = generate_partial_dataset(&train, &gen, 1).unwrap();
    let cfg = RunConfig {
        seed: 1,
        epochs: 250,
        batch_size: 256,
        learning_rate: 1e-3,
        weight_decay: 1e-5,
        model: ModelSpec::Mlp { hidden: 500 },
        method: Method::Rc,
        trials: 1,
        validation_fraction: 0.0,
    };
    let (_, rc_log) = train_rc(&pds, Some(&test), &cfg, false).unwrap();
    let rc = 100.0 * rc_log.final_metric().unwrap();
    let mut cc_cfg = cfg;
    cc_cfg.method = Method::Cc;
    let (_, cc_log) = train_cc(&pds, Some(&test), &cc_cfg, false).unwrap();
    let cc = 100.0 * cc_log.final_metric().unwrap();
    report(
        9,
        "image-benchmark protocol",
        (rc - 98.0).abs() <= 0.5 && (cc - 97.9).abs() <= 0.5,
        &format!("RC {rc:.2} (target 98.0 +/- 0.5), CC {cc:.2} (target 97.9 +/- 0.5)"),
    );
}

#[test]
fn criterion_10_determinism() {
    let ds = make_blobs(400, 5, 4.0, 123);
    let gen = GenerationModel::Uniform(UniformGenerationModel::new(5).unwrap());
    let dir = tempfile::tempdir().unwrap();
    let mut csv_bytes = Vec::new();
    for run in 0..2 {
        let pds = generate_partial_dataset(&ds, &gen, 42).unwrap();
        let path = dir.path().join(format!("run{run}.csv"));
        pll_core::io::save_partial_csv(&pds, &path).unwrap();
        csv_bytes.push(std::fs::read(&path).unwrap());
    }
    let datasets_identical = csv_bytes[0] == csv_bytes[1];

    let pds = generate_partial_dataset(&ds, &gen, 42).unwrap();
    let cfg = RunConfig {
        seed: 9,
        epochs: 15,
        batch_size: 128,
        learning_rate: 1e-2,
        weight_decay: 1e-5,
        model: ModelSpec::Linear,
        method: Method::Rc,
        trials: 1,
        validation_fraction: 0.1,
    };
    let (m1, l1) = train_rc(&pds, None, &cfg, true).unwrap();
    let (m2, l2) = train_rc(&pds, None, &cfg, true).unwrap();
    let logs_identical = l1.to_jsonl() == l2.to_jsonl();
    let params_identical = m1
        .param_slices()
        .into_iter()
        .flatten()
        .zip(m2.param_slices().into_iter().flatten())
        .all(|(a, b)| a.to_bits() == b.to_bits());

    report(
        10,
        "bitwise determinism",
        datasets_identical && logs_identical && params_identical,
        &format!(
            "generated CSVs byte-identical: {datasets_identical}, train logs identical: \
             {logs_identical}, parameters bit-identical: {params_identical}"
        ),
    );
}

/// Soft ordering on blobs with the nonlinear model: mean RC accuracy stays
/// within half a point of mean CC accuracy or better, over five seeds.
#[test]
fn mlp_rc_vs_cc_ordering_on_blobs() {
    let test = make_blobs(2_000, 5, 4.0, 778);
    let run = |method: Method, seed: u64| -> f64 {
        let train = make_blobs(5_000, 5, 4.0, 10_000 + seed);
        let gen = GenerationModel::Uniform(UniformGenerationModel::new(5).unwrap());
        let pds = generate_partial_dataset(&train, &gen, 80_000 + seed).unwrap();
        let cfg = RunConfig {
            seed,
            epochs: 50,
            batch_size: 256,
            learning_rate: 1e-3,
            weight_decay: 1e-5,
            model: ModelSpec::Mlp { hidden: 64 },
            method,
            trials: 1,
            validation_fraction: 0.0,
        };
        let (_, log) = match method {
            Method::Rc => train_rc(&pds, Some(&test), &cfg, false),
            Method::Cc => train_cc(&pds, Some(&test), &cfg, false),
            Method::Supervised => unreachable!(),
        }
        .unwrap();
        100.0 * log.final_metric().unwrap()
    };
    let rc: Vec<f64> = (0..5).map(|s| run(Method::Rc, s)).collect();
    let cc: Vec<f64> = (0..5).map(|s| run(Method::Cc, s)).collect();
    let (rc_mean, cc_mean) = (mean(&rc), mean(&cc));
    println!("mlp blobs: RC {rc_mean:.2}, CC {cc_mean:.2}");
    assert!(
        rc_mean >= cc_mean - 0.5,
        "RC {rc_mean:.2} fell more than half a point below CC {cc_mean:.2}"
    );
}
