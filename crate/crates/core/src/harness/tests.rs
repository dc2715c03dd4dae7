use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::arch::{ModelConfig, Variant};
use crate::error::Error;
use crate::phantom::{generate, ManifestEntry, PhantomSpec};

fn entries(labels: &[u8]) -> Vec<ManifestEntry> {
    labels
        .iter()
        .enumerate()
        .map(|(i, &label)| ManifestEntry {
            id: format!("{i:04}"),
            label,
            path: format!("sample_{i:04}.mpv").into(),
        })
        .collect()
}

fn brute_auc(labels: &[u8], scores: &[f64]) -> f64 {
    let (mut hits, mut pairs) = (0.0, 0.0);
    for i in 0..labels.len() {
        for j in 0..labels.len() {
            if labels[i] == 0 && labels[j] == 1 {
                pairs += 1.0;
                hits += if scores[j] > scores[i] {
                    1.0
                } else if scores[j] == scores[i] {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    hits / pairs
}

pub(crate) fn tiny_model() -> ModelConfig {
    ModelConfig {
        roi_shape: [2, 16, 16],
        stem_channels: 2,
        stage_channels: [4, 4, 4, 4],
        stem_kernel: 3,
        d_state: 2,
        unified_dim: 4,
        heads: 2,
        ..ModelConfig::desk()
    }
}

fn tiny_phantoms(n: usize, seed: u64) -> Vec<crate::phantom::MultiPhaseSample> {
    let spec = PhantomSpec {
        shape: [4, 16, 16],
        radius_min: 1.0,
        radius_max: 1.5,
        ..PhantomSpec::default()
    };
    generate(&spec, n, seed).unwrap()
}

#[test]
fn config_rejects_unknown_keys() {
    let err = RunConfig::parse("epochs = 3\nlearning_rate = 1\n").unwrap_err();
    assert!(matches!(err, Error::ConfigInvalid(ref m) if m.contains("learning_rate")), "{err}");
    assert!(RunConfig::parse("epochs 3\n").is_err());
    assert!(RunConfig::parse("epochs = many\n").is_err());
}

#[test]
fn config_keys_are_unique_and_addressable() {
    let mut all: Vec<&str> = ModelConfig::KEYS.to_vec();
    all.extend(PhantomSpec::KEYS);
    all.extend(TrainConfig::KEYS);
    let unique: std::collections::HashSet<&str> = all.iter().copied().collect();
    assert_eq!(unique.len(), all.len());
    let cfg = RunConfig::default();
    let text = cfg.to_text();
    let listed: Vec<&str> = text
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| l.split(" = ").next().unwrap())
        .collect();
    assert_eq!(listed, all);
}

#[test]
fn config_text_round_trip() {
    let mut cfg = RunConfig::default();
    cfg.model.variant = Variant::C3;
    cfg.model.stage_channels = [8, 16, 32, 64];
    cfg.phantom.cyclic_curves = true;
    cfg.phantom.curves[1] = [1.5, 1.0, 0.5];
    cfg.train.lr_start = 3e-4;
    cfg.train.epochs = 7;
    let back = RunConfig::parse(&cfg.to_text()).unwrap();
    assert_eq!(back, cfg);
    let with_comment = RunConfig::parse("epochs = 4  # short\n\n# note\nvariant = c2\n").unwrap();
    assert_eq!((with_comment.train.epochs, with_comment.model.variant), (4, Variant::C2));
}

#[test]
fn folds_cover_each_sample_once() {
    let labels: Vec<u8> = (0..270).map(|i| u8::from(i % 3 == 0)).collect();
    let plan = split_folds(&entries(&labels), 5, 1).unwrap();
    let mut seen = vec![0; 270];
    for f in 0..5 {
        let test = plan.test_indices(f);
        assert_eq!(test.len(), 54);
        for &i in &test {
            seen[i] += 1;
        }
        let train = plan.train_indices(f);
        assert_eq!(train.len() + test.len(), 270);
        assert!(train.iter().all(|i| !test.contains(i)));
    }
    assert!(seen.iter().all(|&c| c == 1));
}

#[test]
fn folds_are_stratified_and_seeded() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..20 {
        let n = rng.random_range(20..200);
        let labels: Vec<u8> = (0..n).map(|_| u8::from(rng.random_bool(0.35))).collect();
        let ones = labels.iter().filter(|&&l| l == 1).count();
        if ones < 5 || n - ones < 5 {
            continue;
        }
        let e = entries(&labels);
        let plan = split_folds(&e, 5, 9).unwrap();
        let pos: Vec<usize> = (0..5)
            .map(|f| plan.test_indices(f).iter().filter(|&&i| labels[i] == 1).count())
            .collect();
        assert!(pos.iter().max().unwrap() - pos.iter().min().unwrap() <= 1, "{pos:?}");
        let sizes: Vec<usize> = (0..5).map(|f| plan.test_indices(f).len()).collect();
        assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1, "{sizes:?}");
        assert_eq!(plan, split_folds(&e, 5, 9).unwrap());
        assert_ne!(plan, split_folds(&e, 5, 10).unwrap());
    }
}

#[test]
fn folds_need_enough_samples() {
    let e = entries(&[0, 0, 0, 0, 0, 1, 1, 1]);
    assert!(matches!(split_folds(&e, 5, 0), Err(Error::TooFewSamples(_))));
    assert!(matches!(split_folds(&e, 1, 0), Err(Error::TooFewSamples(_))));
}

#[test]
fn fold_plan_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let labels: Vec<u8> = (0..30).map(|i| u8::from(i % 3 == 0)).collect();
    let plan = split_folds(&entries(&labels), 5, 2).unwrap();
    let path = dir.path().join("folds.txt");
    plan.save(&path).unwrap();
    assert_eq!(FoldPlan::load(&path).unwrap(), plan);
}

#[test]
fn cosine_schedule_endpoints() {
    assert_eq!(cosine_lr(1e-5, 1e-7, 0, 100), 1e-5);
    assert!((cosine_lr(1e-5, 1e-7, 99, 100) - 1e-7).abs() < 1e-18);
    let mid = cosine_lr(1.0, 0.0, 50, 101);
    assert!((mid - 0.5).abs() < 1e-12);
    assert_eq!(cosine_lr(2.0, 1.0, 0, 1), 2.0);
    let lrs: Vec<f64> = (0..20).map(|s| cosine_lr(1.0, 0.1, s, 20)).collect();
    assert!(lrs.windows(2).all(|w| w[1] <= w[0]));
}

#[test]
fn adam_first_step_is_signed_lr() {
    let mut p = crate::params::ParamStore::<f64>::new();
    p.insert("w", crate::tensor::Tensor::new(vec![3], vec![1.0, -2.0, 0.5]).unwrap()).unwrap();
    let mut g = p.zeros_like();
    g.get_mut("w").unwrap().data_mut().copy_from_slice(&[0.3, -4.0, 0.0]);
    let mut adam = Adam::new(&p, 0.9, 0.999, 1e-8);
    adam.step(&mut p, &g, 0.01);
    let w = p.get("w").unwrap().data();
    assert!((w[0] - 0.99).abs() < 1e-6 && (w[1] + 1.99).abs() < 1e-6 && w[2] == 0.5, "{w:?}");
    assert_eq!(adam.steps(), 1);
}

#[test]
fn adam_minimises_quadratic() {
    let mut p = crate::params::ParamStore::<f64>::new();
    p.insert("w", crate::tensor::Tensor::new(vec![2], vec![3.0, -1.0]).unwrap()).unwrap();
    let mut adam = Adam::new(&p, 0.9, 0.999, 1e-8);
    for step in 0..2000 {
        let mut g = p.zeros_like();
        let w = p.get("w").unwrap().data().to_vec();
        g.get_mut("w").unwrap().data_mut().copy_from_slice(&[2.0 * (w[0] - 1.0), 2.0 * (w[1] + 0.5)]);
        adam.step(&mut p, &g, cosine_lr(0.05, 1e-4, step, 2000));
    }
    let w = p.get("w").unwrap().data();
    assert!((w[0] - 1.0).abs() < 1e-3 && (w[1] + 0.5).abs() < 1e-3, "{w:?}");
}

#[test]
fn auc_examples() {
    let labels = [0, 0, 1, 1];
    assert_eq!(auc(&labels, &[0.1, 0.4, 0.35, 0.8]).unwrap(), 0.75);
    assert_eq!(brute_auc(&labels, &[0.1, 0.4, 0.35, 0.8]), 0.75);
    assert_eq!(auc(&labels, &[0.1, 0.2, 0.8, 0.9]).unwrap(), 1.0);
    assert_eq!(auc(&labels, &[0.9, 0.8, 0.2, 0.1]).unwrap(), 0.0);
    assert_eq!(auc(&labels, &[0.5; 4]).unwrap(), 0.5);
    assert!(matches!(auc(&[1, 1], &[0.2, 0.3]), Err(Error::SingleClass)));
    assert!(matches!(auc(&[0, 1], &[0.2]), Err(Error::ShapeMismatch { .. })));
}

#[test]
fn confusion_metrics() {
    // TP=2, FP=1, FN=1, TN=2.
    let labels = [1, 1, 1, 0, 0, 0];
    let scores = [0.9, 0.8, 0.2, 0.7, 0.1, 0.3];
    let m = compute_metrics(&labels, &scores, 0.5).unwrap();
    assert!((m.recall - 2.0 / 3.0).abs() < 1e-15);
    assert!((m.precision - 2.0 / 3.0).abs() < 1e-15);
    assert!((m.f1 - 2.0 / 3.0).abs() < 1e-15);
    assert!((m.acc - 4.0 / 6.0).abs() < 1e-15);
    let none = compute_metrics(&labels, &[0.1; 6], 0.5).unwrap();
    assert_eq!((none.precision, none.recall, none.f1), (0.0, 0.0, 0.0));
}

#[test]
fn report_aggregates_folds() {
    let folds: Vec<Metrics> = (0..5)
        .map(|i| {
            let x = 0.6 + 0.07 * i as f64;
            compute_metrics(&[0, 0, 1, 1, 1], &[0.1, x, 0.9, 0.4, x], 0.5).unwrap()
        })
        .collect();
    let r = MetricsReport::from_folds(folds.clone(), (0.4, 0.9), Some(0.25));
    for m in 0..5 {
        let v: Vec<f64> = folds.iter().map(|f| f.values()[m]).collect();
        let s = Spread::of(&v);
        assert_eq!(r.mean.values()[m], s.mean);
        assert_eq!(r.std.values()[m], s.std);
        assert!(s.min <= s.mean && s.mean <= s.max);
        assert!(v.iter().all(|x| (0.0..=1.0).contains(x)));
    }
    let kv = r.to_kv();
    assert!(kv.contains("auc_mean=") && kv.contains("acc_folds=") && kv.contains("inference_time_s_per_10=0.250000"));
    let json: serde_json::Value = serde_json::to_value(&r).unwrap();
    assert_eq!(json["folds"].as_array().unwrap().len(), 5);
}

#[test]
fn bootstrap_null_case() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let labels: Vec<u8> = (0..60).map(|i| u8::from(i % 2 == 0)).collect();
    let scores: Vec<f64> = (0..60).map(|_| rng.random()).collect();
    let r = bootstrap_auc(&labels, &scores, &scores, 500, 3).unwrap();
    assert_eq!(r.delta_auc, 0.0);
    assert!(r.p_value > 0.9);
    assert_eq!(r.ci, (0.0, 0.0));
}

#[test]
fn bootstrap_ci_contains_point_estimate() {
    for seed in 0..5 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let labels: Vec<u8> = (0..80).map(|i| u8::from(i % 3 == 0)).collect();
        let a: Vec<f64> = labels.iter().map(|&l| l as f64 * 0.5 + rng.random::<f64>()).collect();
        let b: Vec<f64> = labels.iter().map(|&l| l as f64 * 0.2 + rng.random::<f64>()).collect();
        let r = bootstrap_auc(&labels, &a, &b, 400, seed).unwrap();
        assert!(r.ci.0 <= r.delta_auc && r.delta_auc <= r.ci.1, "{r:?}");
        assert_eq!(r, bootstrap_auc(&labels, &a, &b, 400, seed).unwrap());
        let (lo, hi) = bootstrap_auc_ci(&labels, &a, 400, seed).unwrap();
        let point = auc(&labels, &a).unwrap();
        assert!(lo <= point && point <= hi);
    }
}

#[test]
fn class_weights_balance() {
    let w = class_weights(&[0, 0, 0, 0, 1, 1]);
    assert_eq!(w, [0.75, 1.5]);
    assert_eq!(4.0 * w[0], 2.0 * w[1]);
}

#[test]
fn first_step_loss_is_ln2_and_reproducible() {
    let cfg = tiny_model();
    let train = TrainConfig {
        epochs: 1,
        batch_size: 4,
        lr_start: 1e-3,
        ..TrainConfig::default()
    };
    let data = prepare(&tiny_phantoms(12, 5), &cfg).unwrap();
    let train_idx: Vec<usize> = (0..8).collect();
    let test_idx: Vec<usize> = (8..12).collect();
    let run = || train_fold(&cfg, &train, &data, &train_idx, &test_idx, 0, &mut |_| {}).unwrap();
    let a = run();
    assert!((a.step_losses[0] - std::f64::consts::LN_2).abs() < 1e-3, "{}", a.step_losses[0]);
    let b = run();
    assert_eq!(a.step_losses, b.step_losses);
    assert_eq!(a.log, b.log);
    assert_eq!(a.params, b.params);
    assert_eq!(a.log.len(), 1);
    assert_eq!(a.predictions.len(), 4);
    assert!(a.predictions.iter().all(|p| (0.0..=1.0).contains(&p.score)));
}

#[test]
fn run_directory_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    crate::phantom::write_dataset(&data, &tiny_phantoms(15, 2)).unwrap();
    let mut cfg = RunConfig::default();
    cfg.model = tiny_model();
    cfg.train.epochs = 2;
    cfg.train.folds = 3;
    cfg.train.lr_start = 1e-2;
    cfg.train.bootstrap_iters = 50;
    let run = dir.path().join("run");
    let mut epochs = 0;
    let outcomes = train_run(&data, &cfg, &run, &mut |_| epochs += 1).unwrap();
    assert_eq!((outcomes.len(), epochs), (3, 6));
    let preds = read_predictions(&run).unwrap();
    assert_eq!(preds.len(), 15);
    let stored: Vec<Prediction> = outcomes.iter().flat_map(|f| f.predictions.clone()).collect();
    assert_eq!(preds, stored);
    let report = evaluate_run(&run, true).unwrap();
    assert_eq!(report.folds.len(), 3);
    assert!(report.inference_time_s_per_10.unwrap() > 0.0);
    for (f, o) in report.folds.iter().zip(&outcomes) {
        assert_eq!(*f, o.metrics);
    }
    let json = write_report(&report, &dir.path().join("report.txt")).unwrap();
    assert!(json.exists());
    let ckpt = crate::arch::Checkpoint::<f32>::load(&checkpoint_path(&run, 1)).unwrap();
    assert_eq!(ckpt.params, outcomes[1].params);
    assert_eq!(ckpt.meta("fold"), Some("1"));
    let id = &preds[0].id;
    let cam_path = dir.path().join("cam.mpv");
    let cam = saliency(&run, id, 2, &cam_path).unwrap();
    assert_eq!(cam.shape(), [2, 8, 8]);
    assert_eq!(crate::phantom::read_volume(&cam_path).unwrap(), cam);
    assert!(saliency(&run, "nope", 2, &cam_path).is_err());
}

#[test]
fn inference_time_is_positive() {
    let cfg = tiny_model();
    let params = crate::arch::init_params::<f32>(&cfg).unwrap();
    let data = prepare(&tiny_phantoms(3, 1), &cfg).unwrap();
    assert!(time_inference(&params, &cfg, &data, 3).unwrap() > 0.0);
    assert!(time_inference(&params, &cfg, &[], 3).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn auc_matches_pair_count(n in 2usize..500, seed in any::<u64>(), ties in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut labels: Vec<u8> = (0..n).map(|_| u8::from(rng.random_bool(0.4))).collect();
        labels[0] = 0;
        labels[1] = 1;
        let scores: Vec<f64> = (0..n)
            .map(|_| if ties { (rng.random_range(0..8) as f64) / 8.0 } else { rng.random() })
            .collect();
        let fast = auc(&labels, &scores).unwrap();
        prop_assert!((fast - brute_auc(&labels, &scores)).abs() <= 1e-12);
    }

    #[test]
    fn metrics_are_fractions(n in 2usize..100, seed in any::<u64>(), t in 0.0f64..1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut labels: Vec<u8> = (0..n).map(|_| u8::from(rng.random_bool(0.5))).collect();
        labels[0] = 0;
        labels[1] = 1;
        let scores: Vec<f64> = (0..n).map(|_| rng.random()).collect();
        let m = compute_metrics(&labels, &scores, t).unwrap();
        prop_assert!(m.values().iter().all(|v| (0.0..=1.0).contains(v)));
    }
}
