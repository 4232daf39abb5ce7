mod common;

use dfda::autodiff::{Graph, Tensor};
use dfda::critic::CriticKind;
use dfda::data::{generate_pair, paired_batches, Batch, ShiftSpec};
use dfda::nn::{AdamConfig, AdamState};
use dfda::trainer::{
    apply_gradients, asl_loss, bench_em, evaluate_model, experiment_data, run_experiment, step_gradients, train,
    AslConfig, ExperimentConfig, LossTerms, Model,
};
use rand::Rng;

fn small_config() -> ExperimentConfig {
    ExperimentConfig {
        n_per_domain: 400,
        n_test: 200,
        epochs: 3,
        ..ExperimentConfig::default()
    }
}

fn first_pair(cfg: &ExperimentConfig) -> (Batch, Batch) {
    let data = experiment_data(cfg).unwrap();
    paired_batches(&data.source, &data.target_train, cfg.batch_size, cfg.seed, 0)
        .unwrap()
        .remove(0)
}

fn fresh_adam(model: &Model) -> AdamState {
    let tensors: Vec<Tensor> = model.named_tensors().into_iter().map(|(_, t)| t).collect();
    AdamState::new(&tensors, AdamConfig::new(1e-3, 100)).unwrap()
}

fn flat(model: &Model) -> Vec<Tensor> {
    model.named_tensors().into_iter().map(|(_, t)| t).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[test]
fn zero_lambda_matches_no_critic_exactly() {
    let base = small_config();
    let data = experiment_data(&base).unwrap();
    let run = |critic, lambda| {
        let cfg = ExperimentConfig {
            critic,
            lambda,
            ..base.clone()
        };
        train(&cfg, &data.source, &data.target_train).unwrap()
    };
    let (m_none, log_none) = run(CriticKind::None, 1.0);
    let (m_zero, log_zero) = run(CriticKind::W2, 0.0);
    assert_eq!(m_none, m_zero);
    assert_eq!(log_none.to_jsonl(), log_zero.to_jsonl());
}

#[test]
fn reversal_splits_the_min_max_game() {
    let cfg = ExperimentConfig {
        beta: 0.0,
        ..small_config()
    };
    let (src, tgt) = first_pair(&cfg);
    let model = Model::for_config(&cfg);
    let [n_g, n_c, ..] = model.param_groups();
    let adv_only = |grl| LossTerms {
        classification: false,
        adversarial: true,
        grl,
    };
    let plain = step_gradients(&model, &cfg, &src, &tgt, adv_only(None)).unwrap();
    let reversed = step_gradients(&model, &cfg, &src, &tgt, adv_only(Some(1.0))).unwrap();
    assert!(plain.l_adv.unwrap() > 0.0);

    // Reversal flips the feature extractor gradient and leaves the head alone.
    for i in 0..n_g {
        let (p, r) = (plain.grads[i].as_ref().unwrap(), reversed.grads[i].as_ref().unwrap());
        for (a, b) in p.data().iter().zip(r.data()) {
            assert_eq!(-a, *b);
        }
    }
    for i in n_g..n_g + n_c {
        assert_eq!(plain.grads[i], reversed.grads[i]);
    }

    let mut stepped = model.clone();
    let mut adam = fresh_adam(&model);
    apply_gradients(&mut stepped, &reversed.grads, &mut adam).unwrap();
    let (before, after) = (flat(&model), flat(&stepped));
    let mut inner = [0.0; 2];
    for (i, grad) in plain.grads.iter().enumerate().take(n_g + n_c) {
        let delta: Vec<f64> = after[i].data().iter().zip(before[i].data()).map(|(a, b)| a - b).collect();
        inner[usize::from(i >= n_g)] += dot(&delta, grad.as_ref().unwrap().data());
    }
    assert!(inner[0] > 0.0, "feature extractor should ascend: {}", inner[0]);
    assert!(inner[1] < 0.0, "classifier should descend: {}", inner[1]);
}

#[test]
fn training_log_is_reproducible() {
    let cfg = small_config();
    let data = experiment_data(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let mut files = Vec::new();
    for name in ["a.jsonl", "b.jsonl"] {
        let (_, log) = train(&cfg, &data.source, &data.target_train).unwrap();
        assert_eq!(log.epochs.len(), cfg.epochs);
        assert!(log.epochs.iter().all(|r| r.seconds_per_batch > 0.0));
        let path = dir.path().join(name);
        log.write_jsonl(std::fs::File::create(&path).unwrap()).unwrap();
        files.push(std::fs::read(&path).unwrap());
    }
    assert!(!files[0].is_empty());
    assert_eq!(files[0], files[1]);
}

#[test]
fn degenerate_batch_leaves_optimizer_state_alone() {
    // A zero head predicts 0.5 everywhere, so k-means has one distinct value.
    let cfg = ExperimentConfig {
        critic: CriticKind::Kmeans,
        ..small_config()
    };
    let (src, tgt) = first_pair(&cfg);
    let model = Model::for_config(&cfg).with_zero_head();
    let full = LossTerms {
        classification: true,
        adversarial: true,
        grl: Some(1.0),
    };
    let skipped = step_gradients(&model, &cfg, &src, &tgt, full).unwrap();
    assert!(skipped.skipped.is_some());
    assert!(skipped.l_adv.is_none());
    let cls_only = step_gradients(&model, &cfg, &src, &tgt, LossTerms { adversarial: false, ..full }).unwrap();
    assert_eq!(skipped.grads, cls_only.grads);

    let [n_g, n_c, n_e, _] = model.param_groups();
    let (mut m1, mut m2) = (model.clone(), model.clone());
    let (mut a1, mut a2) = (fresh_adam(&model), fresh_adam(&model));
    apply_gradients(&mut m1, &skipped.grads, &mut a1).unwrap();
    apply_gradients(&mut m2, &cls_only.grads, &mut a2).unwrap();
    assert_eq!(m1, m2);
    assert_eq!(a1, a2);
    // The E-block got no gradient at all, so its moments are still zero.
    let (first, second) = a1.moments();
    for t in first[n_g + n_c..n_g + n_c + n_e].iter().chain(&second[n_g + n_c..n_g + n_c + n_e]) {
        assert!(t.data().iter().all(|&v| v == 0.0));
    }
}

#[test]
fn asl_matches_scalar_recomputation() {
    let mut rng = common::rng(90);
    let z: Vec<f64> = (0..4).map(|_| rng.random_range(0.02..0.98)).collect();
    let y = [1.0, 0.0, 0.0, 1.0];
    let cfg = AslConfig::default();
    assert_eq!((cfg.gamma_pos, cfg.gamma_neg, cfg.margin), (0.0, 4.0, 0.05));

    let mut expected = 0.0;
    for (&zi, &yi) in z.iter().zip(&y) {
        expected += if yi == 1.0 {
            -zi.ln()
        } else {
            let zm = (zi - 0.05).max(1e-7);
            -zm.powi(4) * (1.0 - zm).ln()
        };
    }
    expected /= 4.0;

    let mut g = Graph::new();
    let zn = g.constant(Tensor::matrix(2, 2, z).unwrap());
    let yn = g.constant(Tensor::matrix(2, 2, y.to_vec()).unwrap());
    let l = asl_loss(&mut g, zn, yn, cfg).unwrap();
    assert!((g.scalar_value(l) - expected).abs() < 1e-14, "{} vs {expected}", g.scalar_value(l));
}

#[test]
fn zero_head_threshold_straddle() {
    let cfg = small_config();
    let data = experiment_data(&cfg).unwrap();
    let model = Model::for_config(&cfg).with_zero_head();
    assert_eq!(evaluate_model(&model, &data.target_test, 0.4).unwrap().or_, 1.0);
    assert_eq!(evaluate_model(&model, &data.target_test, 0.6).unwrap().or_, 0.0);
}

#[test]
fn trained_model_round_trip_and_source_fit() {
    let out = run_experiment(&ExperimentConfig::default()).unwrap();
    assert!(out.source.map >= 0.9, "source mAP {}", out.source.map);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.bin");
    out.model.save(&path).unwrap();
    let back = Model::load(&path).unwrap();
    let data = experiment_data(&ExperimentConfig::default()).unwrap();
    let a = evaluate_model(&out.model, &data.target_test, 0.5).unwrap();
    let b = evaluate_model(&back, &data.target_test, 0.5).unwrap();
    assert_eq!(a, b);
    assert_eq!(a, out.target);
}

#[test]
fn identity_shift_adversarial_loss_is_noise() {
    // Under no shift, source-vs-target loss should look like source-vs-source.
    let mut diffs = Vec::new();
    for seed in 0..20 {
        let cfg = ExperimentConfig {
            seed,
            shift: ShiftSpec::identity(0.05),
            ..small_config()
        };
        let (src, tgt) = generate_pair(seed, &cfg.generator(400)).unwrap();
        let pairs = paired_batches(&src, &tgt, cfg.batch_size, seed, 0).unwrap();
        let model = Model::for_config(&cfg);
        let terms = LossTerms {
            classification: false,
            adversarial: true,
            grl: Some(1.0),
        };
        let cross = step_gradients(&model, &cfg, &pairs[0].0, &pairs[0].1, terms).unwrap();
        let mut other = pairs[1].0.clone();
        other.labels = None;
        let within = step_gradients(&model, &cfg, &pairs[0].0, &other, terms).unwrap();
        diffs.push(cross.l_adv.unwrap() - within.l_adv.unwrap());
    }
    let n = diffs.len() as f64;
    let mean = diffs.iter().sum::<f64>() / n;
    let sd = (diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    assert!(mean.abs() <= 3.0 * sd / n.sqrt(), "mean {mean:e}, sd {sd:e}");
}

#[test]
fn bench_rejects_too_few_batches() {
    assert!(bench_em(&small_config(), 9, 1e-6).is_err());
}
