use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::autodiff::Graph;
use crate::error::Error;
use crate::gradcheck::check_model;
use crate::params::{Binder, ParamStore};
use crate::tensor::{Scalar, Tensor};

fn small() -> ModelConfig {
    ModelConfig {
        roi_shape: [2, 16, 16],
        stem_channels: 2,
        stage_channels: [4, 4, 8, 8],
        stem_kernel: 3,
        d_state: 2,
        unified_dim: 4,
        heads: 2,
        ..ModelConfig::desk()
    }
}

fn volumes<T: Scalar>(cfg: &ModelConfig, seed: u64) -> Vec<Tensor<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..3).map(|_| Tensor::randn(cfg.roi_shape.to_vec(), 1.0, &mut rng)).collect()
}

fn random_head<T: Scalar>(params: &mut ParamStore<T>, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = params.get_mut("head.w").unwrap();
    *w = Tensor::randn(w.shape().to_vec(), 0.5, &mut rng);
}

fn level_feats(g: &Graph<f64>, c: usize, dims: [usize; 3], seed: u64) -> PhaseVars {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = vec![c, dims[0], dims[1], dims[2]];
    [0, 1, 2].map(|_| g.constant(Tensor::randn(shape.clone(), 1.0, &mut rng)))
}

#[test]
fn sci_with_zero_output_conv_is_identity() {
    let cfg = small();
    let mut params = init_params::<f64>(&cfg).unwrap();
    assert!(params.zero_prefix("sci.out.") > 0);
    let g = Graph::new();
    let b = Binder::new(&g, &params);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let z = Tensor::randn(vec![2, 2, 6, 6], 1.0, &mut rng);
    let zv = g.constant(z.clone());
    let out = sci(&b.scope("sci"), zv).unwrap();
    assert_eq!(*g.value(out), z);
}

#[test]
fn zeroed_stage_sums_identity_branches() {
    for (variant, branches) in [(Variant::C2, 1.0), (Variant::C3, 2.0), (Variant::C4, 2.0), (Variant::Full, 2.0)] {
        let cfg = ModelConfig { variant, ..small() };
        let mut params = init_params::<f64>(&cfg).unwrap();
        params.zero_prefix("stage1.");
        let g = Graph::new();
        let b = Binder::new(&g, &params);
        let feats = level_feats(&g, cfg.level_channels(0), cfg.level_dims(0), 4);
        let out = dhcm_stage(&b.scope("stage1"), &cfg, 0, feats, RunMode::eval()).unwrap();
        for p in 0..3 {
            let f = g.value(feats[p]);
            let expected = f.map(|v| if branches == 2.0 { v + v } else { v });
            assert_eq!(*g.value(out[p]), expected, "{variant} phase {p}");
        }
    }
}

#[test]
fn stage_without_branches_is_identity() {
    let cfg = ModelConfig {
        variant: Variant::C1,
        ..small()
    };
    let params = init_params::<f64>(&cfg).unwrap();
    let g = Graph::new();
    let b = Binder::new(&g, &params);
    let feats = level_feats(&g, 2, cfg.level_dims(0), 5);
    let out = dhcm_stage(&b.scope("stage1"), &cfg, 0, feats, RunMode::eval()).unwrap();
    assert_eq!(out, feats);
}

fn downsample_store(c: usize) -> ParamStore<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut s = ParamStore::new();
    s.insert("down1.w", Tensor::randn(vec![2 * c, c, 2, 2, 2], 0.3, &mut rng)).unwrap();
    s.insert("down1.b", Tensor::randn(vec![2 * c], 0.1, &mut rng)).unwrap();
    s.insert("down1.ln.gamma", Tensor::ones(vec![2 * c])).unwrap();
    s.insert("down1.ln.beta", Tensor::zeros(vec![2 * c])).unwrap();
    s
}

#[test]
fn downsample_halves_grid_and_doubles_channels() {
    let cfg = ModelConfig {
        roi_shape: [4, 8, 8],
        stem_channels: 3,
        ..small()
    };
    let params = downsample_store(3);
    let g = Graph::new();
    let b = Binder::new(&g, &params);
    let feats = level_feats(&g, 3, [4, 8, 8], 9);
    let out = downsample(&b.scope("down1"), &cfg, 0, feats).unwrap();
    for v in out {
        assert_eq!(g.shape(v), vec![6, 2, 4, 4]);
    }
    let rotated = downsample(&b.scope("down1"), &cfg, 0, [feats[2], feats[0], feats[1]]).unwrap();
    for (r, o) in rotated.iter().zip([out[2], out[0], out[1]]) {
        assert_eq!(*g.value(*r), *g.value(o));
    }
}

#[test]
fn attention_rows_are_distributions() {
    let cfg = small();
    let mut params = init_params::<f64>(&cfg).unwrap();
    random_head(&mut params, 1);
    let g = Graph::new();
    let b = Binder::new(&g, &params);
    let out = forward_graph(&b, &cfg, &volumes(&cfg, 2), RunMode::eval()).unwrap();
    assert_eq!(out.attention.sites.len(), 4 * cfg.heads);
    for (name, p) in &out.attention.sites {
        let cols = p.shape()[1];
        for row in p.data().chunks(cols) {
            let s: f64 = row.iter().sum();
            assert!((s - 1.0).abs() < 1e-6, "{name}: row sums to {s}");
            assert!(row.iter().all(|&v| v >= 0.0));
        }
    }
}

#[test]
fn attention_to_a_single_key_returns_its_value() {
    let g = Graph::<f64>::new();
    let eye = Tensor::from_fn(vec![2, 2], |i| if i % 3 == 0 { 1.0 } else { 0.0 });
    let wv = Tensor::new(vec![2, 2], vec![0.5, -1.0, 2.0, 0.25]).unwrap();
    let w = AttentionWeights {
        wq: g.constant(eye.clone()),
        wk: g.constant(eye.clone()),
        wv: g.constant(wv),
        wo: g.constant(eye),
        bo: g.constant(Tensor::zeros(vec![2])),
    };
    let q = g.constant(Tensor::new(vec![1, 2], vec![1.0, 0.0]).unwrap());
    let kv = g.constant(Tensor::new(vec![3, 2], vec![0.0, 3.0, 100.0, 1.0, -4.0, 2.0]).unwrap());
    let (out, probs) = multi_head_attention(&g, q, kv, &w, 1).unwrap();
    let p = g.value(probs[0]);
    assert!(p.data()[1] > 1.0 - 1e-12);
    // key 1 is (100, 1); its value projection is (100·0.5 + 1·2, 100·-1 + 1·0.25)
    let out = g.value(out);
    assert!((out.data()[0] - 52.0).abs() < 1e-9);
    assert!((out.data()[1] + 99.75).abs() < 1e-9);
}

#[test]
fn desk_logits_are_two_and_eval_is_deterministic() {
    let cfg = ModelConfig::desk();
    let mut params = init_params::<f32>(&cfg).unwrap();
    random_head(&mut params, 2);
    let x = volumes::<f32>(&cfg, 3);
    let a = forward(&params, &cfg, &x, RunMode::eval()).unwrap();
    let b = forward(&params, &cfg, &x, RunMode::eval()).unwrap();
    assert_eq!(a.shape(), &[2]);
    assert_eq!(a.data(), b.data());
    let p = positive_probability(&a);
    assert!(p > 0.0 && p < 1.0);
}

#[test]
fn end_to_end_gradient_matches_finite_differences() {
    for (variant, mode) in [
        (Variant::Full, RunMode::eval()),
        (Variant::Full, RunMode::train(11)),
        (Variant::C1, RunMode::eval()),
    ] {
        let cfg = ModelConfig { variant, ..small() };
        let mut params = init_params::<f64>(&cfg).unwrap();
        random_head(&mut params, 4);
        let report = check_model(&params, &cfg, &volumes(&cfg, 5), 1, mode, 50, 1e-5, 6).unwrap();
        assert_eq!(report.checked, 50);
        assert!(report.passes(1e-3), "{variant} {mode:?}: {report:?}");
    }
}

#[test]
fn parameter_count_depends_only_on_config() {
    let mut last = 0;
    for variant in Variant::ALL {
        let cfg = ModelConfig { variant, ..small() };
        let a = init_params::<f32>(&cfg).unwrap();
        let b = init_params::<f32>(&ModelConfig { seed: 99, ..cfg.clone() }).unwrap();
        assert_eq!(a.names(), b.names());
        for (x, y) in a.iter().zip(b.iter()) {
            assert_eq!(x.1.shape(), y.1.shape());
        }
        assert!(a.num_scalars() > last, "{variant}");
        last = a.num_scalars();
    }
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let cfg = small();
    let mut params = init_params::<f32>(&cfg).unwrap();
    random_head(&mut params, 7);
    let mut ckpt = Checkpoint::new(cfg.clone(), params.clone());
    ckpt.meta.push(("fold".into(), "3".into()));
    ckpt.save(&path).unwrap();
    let back = Checkpoint::<f32>::load(&path).unwrap();
    assert_eq!(back, ckpt);
    assert_eq!(back.meta("fold"), Some("3"));
    let x = volumes::<f32>(&cfg, 8);
    let before = forward(&params, &cfg, &x, RunMode::eval()).unwrap();
    let after = forward(&back.params, &back.config, &x, RunMode::eval()).unwrap();
    assert_eq!(before.data(), after.data());

    let bytes = std::fs::read(&path).unwrap();
    assert_eq!(&bytes[..6], MAGIC);
    std::fs::write(&path, &bytes[..bytes.len() - 5]).unwrap();
    assert!(matches!(Checkpoint::<f32>::load(&path), Err(Error::ShapeOverflow(_))));
    let mut bad = bytes.clone();
    bad[0] = b'X';
    std::fs::write(&path, bad).unwrap();
    assert!(matches!(Checkpoint::<f32>::load(&path), Err(Error::BadMagic(_))));
}

#[test]
fn checkpoint_converts_precision() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let params = init_params::<f32>(&small()).unwrap();
    Checkpoint::new(small(), params.clone()).save(&path).unwrap();
    let wide = Checkpoint::<f64>::load(&path).unwrap();
    assert_eq!(wide.params.cast::<f32>(), params);
}

/// Zero every Mamba core so each branch reduces to token-wise residual MLPs.
fn without_sequence_mixing(params: &mut ParamStore<f64>) {
    for s in 1..=4 {
        params.zero_prefix(&format!("stage{s}.simr."));
        params.zero_prefix(&format!("stage{s}.spatial.mamba.out_proj"));
        params.zero_prefix(&format!("stage{s}.temporal.mamba.out_proj"));
    }
}

fn phase_constant_levels(params: &ParamStore<f64>, cfg: &ModelConfig) -> Vec<[Tensor<f64>; 3]> {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let v = Tensor::randn(cfg.roi_shape.to_vec(), 1.0, &mut rng);
    let g = Graph::new();
    let b = Binder::new(&g, params);
    let out = forward_graph(&b, cfg, &[v.clone(), v.clone(), v], RunMode::train(1)).unwrap();
    out.stages
        .iter()
        .chain(&out.levels)
        .map(|p| p.map(|v| (*g.value(v)).clone()))
        .collect()
}

#[test]
fn phase_constant_input_stays_phase_constant_without_sequence_mixing() {
    let cfg = ModelConfig {
        mask_rate: 0.0,
        ..small()
    };
    let mut params = init_params::<f64>(&cfg).unwrap();
    without_sequence_mixing(&mut params);
    for [a, v, d] in phase_constant_levels(&params, &cfg) {
        assert_eq!(a, v);
        assert_eq!(a, d);
    }
}

#[test]
fn causal_scan_carries_state_across_phases() {
    let cfg = ModelConfig {
        mask_rate: 0.0,
        ..small()
    };
    let params = init_params::<f64>(&cfg).unwrap();
    let levels = phase_constant_levels(&params, &cfg);
    // the stem is shared, so level 1 still agrees; the first stage does not
    let [a, v, _] = &levels[4];
    assert_eq!(a, v);
    let [a, v, _] = &levels[0];
    assert!(a.rel_err(v) > 1e-6);
}

#[test]
fn gradcam_maps_cover_stage_grid_in_unit_range() {
    let cfg = small();
    let mut params = init_params::<f64>(&cfg).unwrap();
    random_head(&mut params, 13);
    let x = volumes::<f64>(&cfg, 14);
    for stage in 1..=4 {
        let maps = gradcam(&params, &cfg, &x, 1, stage).unwrap();
        for m in &maps {
            assert_eq!(m.shape(), cfg.level_dims(stage - 1));
            assert!(m.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }
    assert!(matches!(gradcam(&params, &cfg, &x, 1, 0), Err(Error::OutOfRange { .. })));
    assert!(matches!(gradcam(&params, &cfg, &x, 2, 1), Err(Error::OutOfRange { .. })));
}

#[test]
fn gradcam_needs_a_trained_head() {
    let cfg = small();
    let params = init_params::<f64>(&cfg).unwrap();
    let r = gradcam(&params, &cfg, &volumes(&cfg, 1), 0, 2);
    assert!(matches!(r, Err(Error::UntrainedParams)));
}

#[test]
fn grad_cam_map_floor_and_one_hot() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let acts = Tensor::<f64>::randn(vec![3, 2, 4, 4], 1.0, &mut rng);
    let cam = grad_cam_map(&acts, &Tensor::zeros(vec![3, 2, 4, 4])).unwrap();
    assert!(cam.data().iter().all(|&v| v == 0.0));

    let hot = 19;
    let acts = Tensor::<f64>::from_fn(vec![1, 2, 4, 4], |i| if i == hot { 1.0 } else { 0.0 });
    let grads = Tensor::from_fn(vec![1, 2, 4, 4], |_| 0.3);
    let cam = grad_cam_map(&acts, &grads).unwrap();
    assert_eq!(cam.shape(), &[2, 4, 4]);
    let top = (0..cam.len()).max_by(|&i, &j| cam.data()[i].total_cmp(&cam.data()[j])).unwrap();
    assert_eq!(top, hot);
    assert_eq!(cam.data()[hot], 1.0);
}

#[test]
fn forward_rejects_missing_phases_and_wrong_shapes() {
    let cfg = small();
    let params = init_params::<f32>(&cfg).unwrap();
    let mut x = volumes::<f32>(&cfg, 1);
    x.pop();
    assert!(matches!(
        forward(&params, &cfg, &x, RunMode::eval()),
        Err(Error::MissingPhase("delayed"))
    ));
    x.push(Tensor::zeros(vec![2, 16, 8]));
    assert!(matches!(
        forward(&params, &cfg, &x, RunMode::eval()),
        Err(Error::ShapeMismatch { .. })
    ));
}

#[test]
fn swapping_arterial_and_delayed_changes_a_trained_model() {
    use crate::harness::{prepare, train_fold, TrainConfig};
    use crate::phantom::{generate, PhantomSpec};

    let cfg = small();
    let spec = PhantomSpec {
        shape: [4, 16, 16],
        radius_min: 1.0,
        radius_max: 1.5,
        ..PhantomSpec::default()
    };
    let data = prepare(&generate(&spec, 24, 3).unwrap(), &cfg).unwrap();
    let train = TrainConfig {
        epochs: 1,
        lr_start: 1e-3,
        lr_end: 1e-4,
        ..TrainConfig::default()
    };
    let idx: Vec<usize> = (0..data.len()).collect();
    let fit = train_fold(&cfg, &train, &data, &idx[..16], &idx[16..], 0, &mut |_| {}).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let differ = (0..100)
        .filter(|_| {
            let x: Vec<Tensor<f32>> = (0..3).map(|_| Tensor::randn(cfg.roi_shape.to_vec(), 1.0, &mut rng)).collect();
            let swapped = [x[2].clone(), x[1].clone(), x[0].clone()];
            let a = forward(&fit.params, &cfg, &x, RunMode::eval()).unwrap();
            let b = forward(&fit.params, &cfg, &swapped, RunMode::eval()).unwrap();
            a.data().iter().zip(b.data()).any(|(p, q)| (p - q).abs() > 1e-6)
        })
        .count();
    assert!(differ >= 90, "{differ}/100 probes changed");
}
