use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::params::{Binder, ParamStore};
use crate::ssm::{SsmConfig, SsmParams};

fn letters(order: &ScanOrder) -> Vec<(char, usize)> {
    order
        .entries()
        .iter()
        .map(|&(p, i)| (Phase::from_index(p).unwrap().letter(), i))
        .collect()
}

#[test]
fn spatial_three_by_two() {
    let o = ScanOrder::spatial(3, 2);
    assert_eq!(letters(&o), [('A', 0), ('A', 1), ('V', 0), ('V', 1), ('D', 0), ('D', 1)]);
}

#[test]
fn temporal_examples() {
    let o = ScanOrder::temporal(3, 2);
    assert_eq!(letters(&o), [('A', 0), ('V', 0), ('D', 0), ('A', 1), ('V', 1), ('D', 1)]);
    let o = ScanOrder::temporal(2, 3);
    assert_eq!(letters(&o), [('A', 0), ('V', 0), ('A', 1), ('V', 1), ('A', 2), ('V', 2)]);
}

#[test]
fn single_phase_is_identity() {
    let o = ScanOrder::spatial(1, 7);
    assert_eq!(o.gather_index(), (0..7).collect::<Vec<_>>());
}

fn assert_bijection(o: &ScanOrder) {
    let mut seen = o.entries().to_vec();
    seen.sort_unstable();
    let full: Vec<_> = (0..o.phases()).flat_map(|p| (0..o.voxels()).map(move |i| (p, i))).collect();
    assert_eq!(seen, full);
    for (k, &(p, i)) in o.entries().iter().enumerate() {
        assert_eq!(o.position_of(p, i), k);
    }
}

#[test]
fn large_orders_are_bijections() {
    assert_bijection(&ScanOrder::spatial(3, 1000));
    assert_bijection(&ScanOrder::temporal(3, 1000));
}

#[test]
fn from_entries_rejects_duplicates() {
    let err = ScanOrder::from_entries(1, 2, vec![(0, 0), (0, 0)]).unwrap_err();
    assert!(matches!(err, Error::OrderMismatch(_)));
    assert!(ScanOrder::from_entries(1, 2, vec![(0, 0)]).is_err());
    assert!(ScanOrder::from_entries(1, 2, vec![(0, 0), (1, 0)]).is_err());
}

#[test]
fn debug_dump_lines() {
    let dump = ScanOrder::temporal(3, 2).debug_dump();
    assert_eq!(dump, "0 A 0\n1 V 0\n2 D 0\n3 A 1\n4 V 1\n5 D 1\n");
}

#[test]
fn flatten_examples() {
    let f = Tensor::<f64>::new(vec![3, 1, 1, 1], vec![1.0, 2.0, 3.0]).unwrap();
    assert_eq!(flatten_phase(&f).unwrap().data(), &[1.0, 2.0, 3.0]);
    // channels 2, depth 2: token k holds voxel (k,0,0)
    let f = Tensor::<f64>::new(vec![2, 2, 1, 1], vec![10.0, 11.0, 20.0, 21.0]).unwrap();
    let t = flatten_phase(&f).unwrap();
    assert_eq!(t.data(), &[10.0, 20.0, 11.0, 21.0]);
    assert_eq!(restore_phase(&t, [2, 1, 1]).unwrap(), f);
}

fn random_stack(p: usize, n: usize, c: usize, seed: u64) -> Tensor<f64> {
    Tensor::randn(vec![p, n, c], 1.0, &mut ChaCha8Rng::seed_from_u64(seed))
}

#[test]
fn spatial_gather_is_reshape() {
    let x = random_stack(3, 5, 4, 1);
    let s = gather(&x, &ScanOrder::spatial(3, 5)).unwrap();
    assert_eq!(s.data(), x.data());
}

#[test]
fn temporal_gather_matches_permutation_matrix() {
    let (p, n, c) = (3, 4, 2);
    let x = random_stack(p, n, c, 2);
    let spatial = gather(&x, &ScanOrder::spatial(p, n)).unwrap();
    // Π maps temporal row i·P+q to spatial row q·N+i
    let mut pi = vec![0.0; (p * n) * (p * n)];
    for i in 0..n {
        for q in 0..p {
            pi[(i * p + q) * p * n + q * n + i] = 1.0;
        }
    }
    let mut want = vec![0.0; p * n * c];
    for r in 0..p * n {
        for k in 0..p * n {
            for j in 0..c {
                want[r * c + j] += pi[r * p * n + k] * spatial.data()[k * c + j];
            }
        }
    }
    let got = gather(&x, &ScanOrder::temporal(p, n)).unwrap();
    assert_eq!(got.data(), &want[..]);
}

#[test]
fn order_mismatch_is_reported() {
    let x = random_stack(3, 5, 2, 3);
    assert!(matches!(gather(&x, &ScanOrder::spatial(3, 4)), Err(Error::OrderMismatch(_))));
    let seq = Tensor::<f64>::zeros(vec![14, 2]);
    assert!(matches!(scatter(&seq, &ScanOrder::spatial(3, 5)), Err(Error::OrderMismatch(_))));
}

#[test]
fn graph_gather_scatter_round_trip() {
    let g = Graph::<f64>::new();
    let x = random_stack(3, 6, 2, 4).reshape(vec![18, 2]).unwrap();
    let v = g.param(x.clone());
    let order = ScanOrder::temporal(3, 6);
    let seq = gather_var(&g, v, &order).unwrap();
    let back = scatter_var(&g, seq, &order).unwrap();
    assert_eq!(*g.value(back), x);
    let direct = gather(&x.clone().reshape(vec![3, 6, 2]).unwrap(), &order).unwrap();
    assert_eq!(*g.value(seq), direct);
}

#[test]
fn mask_rate_zero_is_identity() {
    let seq = random_stack(1, 6, 3, 5).reshape(vec![6, 3]).unwrap();
    let plan = MaskPlan::new(6, 0.0, 9);
    let token = Tensor::full(vec![3], 7.0);
    assert_eq!(apply_mask(&seq, &plan, &token).unwrap(), seq);
}

#[test]
fn mask_half_of_six_replaces_three() {
    let seq = random_stack(1, 6, 3, 6).reshape(vec![6, 3]).unwrap();
    let plan = MaskPlan::new(6, 0.5, 11);
    assert_eq!(plan.masked().len(), 3);
    let token = Tensor::full(vec![3], 7.0);
    let out = apply_mask(&seq, &plan, &token).unwrap();
    let replaced = (0..6).filter(|&r| out.data()[r * 3..r * 3 + 3] == [7.0; 3]).count();
    assert_eq!(replaced, 3);
    for r in (0..6).filter(|r| !plan.masked().contains(r)) {
        assert_eq!(out.data()[r * 3..r * 3 + 3], seq.data()[r * 3..r * 3 + 3]);
    }
}

#[test]
fn mask_seeds_reproduce_and_vary() {
    assert_eq!(MaskPlan::new(64, 0.5, 3), MaskPlan::new(64, 0.5, 3));
    let distinct: std::collections::HashSet<Vec<usize>> =
        (0..100).map(|s| MaskPlan::new(64, 0.5, s).masked().to_vec()).collect();
    assert!(distinct.len() >= 95, "{} distinct masks", distinct.len());
}

#[test]
fn mask_out_of_range() {
    let seq = Tensor::<f64>::zeros(vec![4, 2]);
    let plan = MaskPlan::from_positions(8, vec![6]);
    let token = Tensor::zeros(vec![2]);
    assert!(matches!(apply_mask(&seq, &plan, &token), Err(Error::OutOfRange { index: 6, len: 4 })));
}

#[test]
fn graph_mask_routes_gradient_to_token() {
    let g = Graph::<f64>::new();
    let seq = g.param(Tensor::zeros(vec![6, 2]));
    let token = g.param(Tensor::full(vec![2], 1.0));
    let plan = MaskPlan::new(6, 0.5, 1);
    let out = apply_mask_var(&g, seq, &plan, token).unwrap();
    let loss = g.sum(out).unwrap();
    let grads = g.backward(loss).unwrap();
    assert_eq!(grads.get(token).unwrap().data(), &[3.0, 3.0]);
    let gs = grads.get(seq).unwrap();
    assert_eq!(gs.sum(), 3.0 * 2.0);
}

#[test]
fn theta_examples() {
    let same = Tensor::<f64>::new(vec![1, 3], vec![1.0, 2.0, 3.0]).unwrap();
    assert!((simr_scores(&same, &same, &same).unwrap().theta[0] - 2.0).abs() < 1e-12);
    let a = Tensor::<f64>::new(vec![1, 2], vec![1.0, 0.0]).unwrap();
    let v = Tensor::<f64>::new(vec![1, 2], vec![0.0, 1.0]).unwrap();
    assert_eq!(simr_scores(&a, &v, &a).unwrap().theta[0], 0.0);
    let z = Tensor::<f64>::zeros(vec![1, 2]);
    assert_eq!(simr_scores(&z, &z, &z).unwrap().theta[0], 0.0);
}

#[test]
fn theta_matches_loop_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (n, c) = (100, 5);
    let f: Vec<Tensor<f64>> = (0..3).map(|_| Tensor::randn(vec![n, c], 1.0, &mut rng)).collect();
    let rep = simr_scores(&f[0], &f[1], &f[2]).unwrap();
    for i in 0..n {
        let row = |t: &Tensor<f64>| t.data()[i * c..(i + 1) * c].to_vec();
        let cos = |a: &[f64], b: &[f64]| {
            let mut dot = 0.0;
            let mut na = 0.0;
            let mut nb = 0.0;
            for k in 0..c {
                dot += a[k] * b[k];
                na += a[k] * a[k];
                nb += b[k] * b[k];
            }
            dot / (na.sqrt() * nb.sqrt())
        };
        let want = cos(&row(&f[0]), &row(&f[1])) + cos(&row(&f[1]), &row(&f[2]));
        assert!((rep.theta[i] - want).abs() < 1e-6);
    }
}

#[test]
fn theta_shape_mismatch() {
    let a = Tensor::<f64>::zeros(vec![3, 2]);
    let b = Tensor::<f64>::zeros(vec![4, 2]);
    assert!(matches!(simr_scores(&a, &b, &a), Err(Error::ShapeMismatch { .. })));
}

#[test]
fn ties_break_by_position() {
    let f = Tensor::<f64>::ones(vec![5, 2]);
    let rep = simr_scores(&f, &f, &f).unwrap();
    assert_eq!(rep.low_set, [0, 1, 2]);
    assert_eq!(rep.high_set, [3, 4]);
    assert_eq!(rep.restore_map[..4], [(0, 0), (1, 0), (2, 0), (0, 1)]);
}

fn enhancer(c: usize, seed: u64, zero: bool) -> (ParamStore<f64>, SsmConfig) {
    let cfg = SsmConfig::new(c);
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    SsmParams::<f64>::init(&cfg, &mut rng).register(&mut store, "simr.mamba").unwrap();
    store.insert("simr.ln.gamma", Tensor::ones(vec![c])).unwrap();
    store.insert("simr.ln.beta", Tensor::zeros(vec![c])).unwrap();
    if zero {
        store.zero_prefix("simr.mamba.out_proj");
    }
    (store, cfg)
}

fn refine(store: &ParamStore<f64>, cfg: &SsmConfig, f: &[Tensor<f64>]) -> (Vec<Tensor<f64>>, SimilarityReport) {
    let rep = simr_scores(&f[0], &f[1], &f[2]).unwrap();
    let g = Graph::new();
    let binder = Binder::new(&g, store);
    let vars = [g.constant(f[0].clone()), g.constant(f[1].clone()), g.constant(f[2].clone())];
    let out = simr_refine(&binder.scope("simr"), cfg, vars, &rep).unwrap();
    (out.iter().map(|&v| (*g.value(v)).clone()).collect(), rep)
}

#[test]
fn zero_enhancer_is_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let f: Vec<Tensor<f64>> = (0..3).map(|_| Tensor::randn(vec![9, 4], 1.0, &mut rng)).collect();
    let (store, cfg) = enhancer(4, 1, true);
    let (out, _) = refine(&store, &cfg, &f);
    assert_eq!(out, f);
}

#[test]
fn refine_touches_exactly_the_low_set() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let (n, c) = (11, 4);
    let f: Vec<Tensor<f64>> = (0..3).map(|_| Tensor::randn(vec![n, c], 1.0, &mut rng)).collect();
    let (store, cfg) = enhancer(c, 2, false);
    let (out, rep) = refine(&store, &cfg, &f);
    let mut touched = std::collections::BTreeSet::new();
    for p in 0..3 {
        for i in 0..n {
            let same = out[p].data()[i * c..(i + 1) * c] == f[p].data()[i * c..(i + 1) * c];
            if !same {
                touched.insert(i);
            }
            if rep.high_set.contains(&i) {
                assert!(same, "high-similarity token ({p},{i}) changed");
            }
        }
    }
    assert_eq!(touched.len(), n.div_ceil(2));
    assert_eq!(touched.into_iter().collect::<Vec<_>>(), rep.low_set);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn orders_are_bijections(p in 1usize..5, n in 1usize..60) {
        assert_bijection(&ScanOrder::spatial(p, n));
        assert_bijection(&ScanOrder::temporal(p, n));
    }

    #[test]
    fn temporal_is_spatial_composed_with_transpose(p in 1usize..5, n in 1usize..40) {
        let s = ScanOrder::spatial(p, n).gather_index();
        let t = ScanOrder::temporal(p, n).gather_index();
        for i in 0..n {
            for q in 0..p {
                prop_assert_eq!(t[i * p + q], s[q * n + i]);
            }
        }
    }

    #[test]
    fn gather_scatter_round_trip(p in 1usize..4, n in 1usize..20, c in 1usize..5, seed in any::<u64>(), temporal in any::<bool>()) {
        let x = random_stack(p, n, c, seed);
        let order = if temporal { ScanOrder::temporal(p, n) } else { ScanOrder::spatial(p, n) };
        let back = scatter(&gather(&x, &order).unwrap(), &order).unwrap();
        prop_assert_eq!(back, x);
    }

    #[test]
    fn flatten_round_trip(c in 1usize..4, d in 1usize..4, h in 1usize..4, w in 1usize..4, seed in any::<u64>()) {
        let f = Tensor::<f64>::randn(vec![c, d, h, w], 1.0, &mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(restore_phase(&flatten_phase(&f).unwrap(), [d, h, w]).unwrap(), f);
    }

    #[test]
    fn mask_count_is_floor(len in 1usize..200, rate in 0.0f64..=1.0, seed in any::<u64>()) {
        let plan = MaskPlan::new(len, rate, seed);
        prop_assert_eq!(plan.masked().len(), (rate * len as f64).floor() as usize);
        prop_assert!(plan.masked().windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn partition_covers_and_theta_bounded(n in 1usize..50, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f: Vec<Tensor<f64>> = (0..3).map(|_| Tensor::randn(vec![n, 3], 1.0, &mut rng)).collect();
        let rep = simr_scores(&f[0], &f[1], &f[2]).unwrap();
        let mut all: Vec<usize> = rep.low_set.iter().chain(&rep.high_set).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        prop_assert!(rep.low_set.len() - rep.high_set.len() <= 1);
        prop_assert!(rep.theta.iter().all(|t| (-2.0..=2.0).contains(t)));
        let max_low = rep.low_set.iter().map(|&i| rep.theta[i]).fold(f64::MIN, f64::max);
        prop_assert!(rep.high_set.iter().all(|&i| rep.theta[i] >= max_low));
    }

    #[test]
    fn theta_invariant_to_positive_rescale(n in 1usize..30, seed in any::<u64>(), s in 0.01f64..100.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f: Vec<Tensor<f64>> = (0..3).map(|_| Tensor::randn(vec![n, 4], 1.0, &mut rng)).collect();
        let a = simr_scores(&f[0], &f[1], &f[2]).unwrap();
        let b = simr_scores(&f[0].scale(s), &f[1], &f[2].scale(s * 3.0)).unwrap();
        for (x, y) in a.theta.iter().zip(&b.theta) {
            prop_assert!((x - y).abs() < 1e-6);
        }
    }
}
