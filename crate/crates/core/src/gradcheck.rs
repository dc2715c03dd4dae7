//! Central finite-difference oracle for graph gradients.
//!
//! The oracle only ever evaluates forward passes; it never touches the
//! backward rules it is used to check.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::arch::{forward_graph, ModelConfig, RunMode};
use crate::autodiff::{Graph, Var};
use crate::error::Result;
use crate::params::{Binder, ParamStore};
use crate::tensor::Tensor;

/// Worst agreement found between analytic and numeric gradients.
#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_err: f64,
    pub worst: Option<(usize, usize, f64, f64)>,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.checked > 0 && self.max_rel_err <= tol
    }
}

/// `|a - n| / max(|a|, |n|, floor)`; the floor keeps exact zeros from dividing by zero.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    rel_err_floor(analytic, numeric, 1e-8)
}

pub fn rel_err_floor(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Dot the output of an op with a fixed random tensor so any op becomes a scalar loss.
pub fn project(g: &Graph<f64>, out: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = g.constant(Tensor::randn(g.shape(out), 1.0, &mut rng));
    let prod = g.mul(out, r)?;
    g.sum(prod)
}

/// Compare `backward` against central differences with step `h`.
///
/// `f` builds a scalar loss from parameter leaves holding `inputs`. When
/// `max_per_input` is `Some(k)`, only `k` randomly chosen coordinates of each
/// input are perturbed.
pub fn check<F>(inputs: &[Tensor<f64>], f: F, h: f64, max_per_input: Option<usize>, seed: u64) -> Result<GradCheckReport>
where
    F: Fn(&Graph<f64>, &[Var]) -> Result<Var>,
{
    let analytic = {
        let g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
        let loss = f(&g, &vars)?;
        let grads = g.backward(loss)?;
        vars.iter().map(|&v| grads.get_or_zeros(v)).collect::<Result<Vec<_>>>()?
    };
    let eval = |perturbed: &[Tensor<f64>]| -> Result<f64> {
        let g = Graph::new();
        let vars: Vec<Var> = perturbed.iter().map(|t| g.param(t.clone())).collect();
        let loss = f(&g, &vars)?;
        Ok(g.value(loss).data()[0])
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = GradCheckReport::default();
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    for (i, input) in inputs.iter().enumerate() {
        let coords: Vec<usize> = match max_per_input {
            Some(k) if k < input.len() => sample(&mut rng, input.len(), k).into_vec(),
            _ => (0..input.len()).collect(),
        };
        for j in coords {
            let orig = input.data()[j];
            work[i].data_mut()[j] = orig + h;
            let plus = eval(&work)?;
            work[i].data_mut()[j] = orig - h;
            let minus = eval(&work)?;
            work[i].data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic[i].data()[j];
            let e = rel_err(a, numeric);
            report.checked += 1;
            if e > report.max_rel_err {
                report.max_rel_err = e;
                report.worst = Some((i, j, a, numeric));
            }
        }
    }
    Ok(report)
}

type LossFn = Box<dyn Fn(&Graph<f64>, &[Var]) -> Result<Var>>;

/// One differentiable op with a generator of random shapes and inputs.
pub struct OpCase {
    pub name: &'static str,
    pub make: fn(&mut ChaCha8Rng) -> (Vec<Tensor<f64>>, LossFn),
}

/// Run a catalog entry at one seed: fresh random shapes and inputs, every coordinate checked.
pub fn run_case(case: &OpCase, seed: u64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9E37_79B9).wrapping_add(17));
    let (inputs, f) = (case.make)(&mut rng);
    check(&inputs, f, 1e-5, Some(24), seed)
}

fn dim(rng: &mut ChaCha8Rng, lo: usize, hi: usize) -> usize {
    use rand::Rng;
    rng.random_range(lo..=hi)
}

fn randn(shape: Vec<usize>, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::randn(shape, 1.0, rng)
}

/// Every differentiable graph op, each wrapped as a scalar loss.
pub fn catalog() -> Vec<OpCase> {
    use std::rc::Rc;

    use crate::tensor::Conv3dSpec;

    fn unary(rng: &mut ChaCha8Rng, op: fn(&Graph<f64>, Var) -> Result<Var>) -> (Vec<Tensor<f64>>, LossFn) {
        let shape = vec![dim(rng, 1, 4), dim(rng, 1, 5)];
        (vec![randn(shape, rng)], Box::new(move |g, v| project(g, op(g, v[0])?, 1)))
    }

    vec![
        OpCase {
            name: "add",
            make: |rng| {
                let s = vec![dim(rng, 1, 4), dim(rng, 1, 4)];
                (vec![randn(s.clone(), rng), randn(s, rng)], Box::new(|g, v| project(g, g.add(v[0], v[1])?, 1)))
            },
        },
        OpCase {
            name: "sub",
            make: |rng| {
                let s = vec![dim(rng, 1, 4), dim(rng, 1, 4)];
                (vec![randn(s.clone(), rng), randn(s, rng)], Box::new(|g, v| project(g, g.sub(v[0], v[1])?, 1)))
            },
        },
        OpCase {
            name: "mul",
            make: |rng| {
                let s = vec![dim(rng, 1, 4), dim(rng, 1, 4)];
                (vec![randn(s.clone(), rng), randn(s, rng)], Box::new(|g, v| project(g, g.mul(v[0], v[1])?, 1)))
            },
        },
        OpCase {
            name: "scale",
            make: |rng| unary(rng, |g, v| g.scale(v, -1.7)),
        },
        OpCase {
            name: "sum",
            make: |rng| {
                let s = vec![dim(rng, 1, 4), dim(rng, 1, 4)];
                (vec![randn(s, rng)], Box::new(|g, v| {
                    let sq = g.mul(v[0], v[0])?;
                    g.sum(sq)
                }))
            },
        },
        OpCase { name: "silu", make: |rng| unary(rng, |g, v| g.silu(v)) },
        OpCase { name: "gelu", make: |rng| unary(rng, |g, v| g.gelu(v)) },
        OpCase { name: "softplus", make: |rng| unary(rng, |g, v| g.softplus(v)) },
        OpCase { name: "relu", make: |rng| unary(rng, |g, v| g.relu(v)) },
        OpCase { name: "exp", make: |rng| unary(rng, |g, v| g.exp(v)) },
        OpCase { name: "neg", make: |rng| unary(rng, |g, v| g.neg(v)) },
        OpCase { name: "transpose", make: |rng| unary(rng, |g, v| g.transpose(v)) },
        OpCase {
            name: "reshape",
            make: |rng| {
                let (a, b) = (dim(rng, 1, 4), dim(rng, 1, 4));
                (vec![randn(vec![a, b], rng)], Box::new(move |g, v| project(g, g.reshape(v[0], &[b, a])?, 1)))
            },
        },
        OpCase {
            name: "add_bias",
            make: |rng| {
                let (r, c) = (dim(rng, 1, 5), dim(rng, 1, 5));
                (vec![randn(vec![r, c], rng), randn(vec![c], rng)], Box::new(|g, v| project(g, g.add_bias(v[0], v[1])?, 1)))
            },
        },
        OpCase {
            name: "channel_affine",
            make: |rng| {
                let (c, n) = (dim(rng, 1, 4), dim(rng, 1, 6));
                (
                    vec![randn(vec![c, n, 2], rng), randn(vec![c], rng), randn(vec![c], rng)],
                    Box::new(|g, v| project(g, g.channel_affine(v[0], Some(v[1]), Some(v[2]))?, 1)),
                )
            },
        },
        OpCase {
            name: "matmul",
            make: |rng| {
                let (m, k, n) = (dim(rng, 1, 5), dim(rng, 1, 5), dim(rng, 1, 5));
                (vec![randn(vec![m, k], rng), randn(vec![k, n], rng)], Box::new(|g, v| project(g, g.matmul(v[0], v[1])?, 1)))
            },
        },
        OpCase {
            name: "mlp",
            make: |rng| {
                let (r, c, h) = (dim(rng, 1, 4), dim(rng, 1, 4), dim(rng, 1, 6));
                (
                    vec![randn(vec![r, c], rng), randn(vec![c, h], rng), randn(vec![h], rng), randn(vec![h, c], rng), randn(vec![c], rng)],
                    Box::new(|g, v| project(g, g.mlp(v[0], v[1], v[2], v[3], v[4])?, 1)),
                )
            },
        },
        OpCase {
            name: "concat_rows",
            make: |rng| {
                let c = dim(rng, 1, 4);
                (
                    vec![randn(vec![dim(rng, 1, 3), c], rng), randn(vec![dim(rng, 1, 3), c], rng)],
                    Box::new(|g, v| project(g, g.concat_rows(&[v[0], v[1]])?, 1)),
                )
            },
        },
        OpCase {
            name: "slice_rows",
            make: |rng| {
                let r = dim(rng, 2, 6);
                (vec![randn(vec![r, 3], rng)], Box::new(move |g, v| project(g, g.slice_rows(v[0], 1, r - 1)?, 1)))
            },
        },
        OpCase {
            name: "concat_cols",
            make: |rng| {
                let r = dim(rng, 1, 4);
                (
                    vec![randn(vec![r, dim(rng, 1, 3)], rng), randn(vec![r, dim(rng, 1, 3)], rng)],
                    Box::new(|g, v| project(g, g.concat_cols(&[v[0], v[1]])?, 1)),
                )
            },
        },
        OpCase {
            name: "slice_cols",
            make: |rng| {
                let c = dim(rng, 2, 6);
                (vec![randn(vec![3, c], rng)], Box::new(move |g, v| project(g, g.slice_cols(v[0], 1, c - 1)?, 1)))
            },
        },
        OpCase {
            name: "gather_rows",
            make: |rng| {
                let r = dim(rng, 2, 6);
                let idx: Rc<[usize]> = (0..r).rev().chain([0]).collect();
                (vec![randn(vec![r, 3], rng)], Box::new(move |g, v| project(g, g.gather_rows(v[0], Rc::clone(&idx))?, 1)))
            },
        },
        OpCase {
            name: "scatter_rows",
            make: |rng| {
                let r = dim(rng, 3, 6);
                let idx: Rc<[usize]> = vec![r - 1, 0].into();
                (
                    vec![randn(vec![r, 3], rng), randn(vec![2, 3], rng)],
                    Box::new(move |g, v| project(g, g.scatter_rows(v[0], v[1], Rc::clone(&idx))?, 1)),
                )
            },
        },
        OpCase {
            name: "repeat_row",
            make: |rng| {
                let c = dim(rng, 1, 4);
                (vec![randn(vec![c], rng)], Box::new(|g, v| project(g, g.repeat_row(v[0], 3)?, 1)))
            },
        },
        OpCase {
            name: "mean_rows",
            make: |rng| {
                let s = vec![dim(rng, 1, 5), dim(rng, 1, 4)];
                (vec![randn(s, rng)], Box::new(|g, v| project(g, g.mean_rows(v[0])?, 1)))
            },
        },
        OpCase {
            name: "layernorm",
            make: |rng| {
                let (r, c) = (dim(rng, 1, 4), dim(rng, 2, 8));
                (
                    vec![randn(vec![r, c], rng), randn(vec![c], rng), randn(vec![c], rng)],
                    Box::new(|g, v| project(g, g.layernorm(v[0], Some(v[1]), Some(v[2]))?, 1)),
                )
            },
        },
        OpCase {
            name: "softmax",
            make: |rng| {
                let s = vec![dim(rng, 1, 4), dim(rng, 2, 6)];
                (vec![randn(s, rng)], Box::new(|g, v| project(g, g.softmax(v[0])?, 1)))
            },
        },
        OpCase {
            name: "conv3d",
            make: |rng| {
                let groups = dim(rng, 1, 2);
                let cin = groups * dim(rng, 1, 2);
                let cout = groups * dim(rng, 1, 2);
                let k = [1, 3][dim(rng, 0, 1)];
                let stride = dim(rng, 1, 2);
                let spec = Conv3dSpec::cubic(k, stride, k / 2, groups);
                (
                    vec![randn(vec![cin, 3, 4, 3], rng), randn(vec![cout, cin / groups, k, k, k], rng)],
                    Box::new(move |g, v| project(g, g.conv3d(v[0], v[1], spec)?, 1)),
                )
            },
        },
        OpCase {
            name: "conv3d_depthwise",
            make: |rng| {
                let c = dim(rng, 2, 3);
                let spec = Conv3dSpec::same(3, c);
                (
                    vec![randn(vec![c, 3, 3, 4], rng), randn(vec![c, 1, 3, 3, 3], rng)],
                    Box::new(move |g, v| project(g, g.conv3d(v[0], v[1], spec)?, 1)),
                )
            },
        },
        OpCase {
            name: "conv3d_single_input",
            make: |rng| {
                let cout = dim(rng, 2, 4);
                let spec = Conv3dSpec::cubic(3, dim(rng, 1, 2), 1, 1);
                (
                    vec![randn(vec![1, 3, 4, 4], rng), randn(vec![cout, 1, 3, 3, 3], rng)],
                    Box::new(move |g, v| project(g, g.conv3d(v[0], v[1], spec)?, 1)),
                )
            },
        },
        OpCase {
            name: "avg_pool3d",
            make: |rng| {
                let c = dim(rng, 1, 3);
                (vec![randn(vec![c, 2, 4, 4], rng)], Box::new(|g, v| project(g, g.avg_pool3d(v[0], [2, 2, 1])?, 1)))
            },
        },
        OpCase {
            name: "cross_entropy",
            make: |rng| {
                let k = dim(rng, 2, 4);
                (vec![randn(vec![k], rng)], Box::new(move |g, v| g.cross_entropy(v[0], k - 1, 0.7)))
            },
        },
        OpCase {
            name: "causal_conv1d",
            make: |rng| {
                let (l, c, k) = (dim(rng, 1, 7), dim(rng, 1, 3), dim(rng, 1, 4));
                (
                    vec![randn(vec![l, c], rng), randn(vec![c, k], rng), randn(vec![c], rng)],
                    Box::new(|g, v| project(g, g.causal_conv1d(v[0], v[1], v[2])?, 1)),
                )
            },
        },
        OpCase {
            name: "selective_scan",
            make: |rng| {
                let (l, d, n) = (dim(rng, 1, 9), dim(rng, 1, 3), dim(rng, 1, 4));
                (
                    vec![
                        randn(vec![l, d], rng),
                        Tensor::uniform(vec![l, d], 0.05, 1.0, rng),
                        Tensor::uniform(vec![d, n], -2.0, -0.1, rng),
                        randn(vec![l, n], rng),
                        randn(vec![l, n], rng),
                        randn(vec![d], rng),
                    ],
                    Box::new(|g, v| {
                        project(g, g.selective_scan(v[0], v[1], v[2], v[3], v[4], v[5], crate::ssm::ScanMode::Sequential)?, 1)
                    }),
                )
            },
        },
    ]
}

fn model_loss(
    params: &ParamStore<f64>,
    cfg: &ModelConfig,
    volumes: &[Tensor<f64>],
    label: usize,
    mode: RunMode,
) -> Result<(f64, ParamStore<f64>)> {
    let g = Graph::new();
    let binder = Binder::new(&g, params);
    let out = forward_graph(&binder, cfg, volumes, mode)?;
    let loss = g.cross_entropy(out.logits, label, 1.0)?;
    let value = g.value(loss).data()[0];
    let grads = g.backward(loss)?;
    let mut acc = params.zeros_like();
    binder.accumulate(&grads, &mut acc, 1.0);
    Ok((value, acc))
}

/// Cross-entropy of the whole network against central differences on `samples`
/// parameter scalars drawn uniformly from the store. `worst` indexes `(tensor, coordinate)`.
///
/// A deep network's loss carries round-off of order `1e-16 · |loss| / h` into every
/// difference quotient, so gradients below `1e-6` are compared on that absolute scale.
pub fn check_model(
    params: &ParamStore<f64>,
    cfg: &ModelConfig,
    volumes: &[Tensor<f64>],
    label: usize,
    mode: RunMode,
    samples: usize,
    h: f64,
    seed: u64,
) -> Result<GradCheckReport> {
    let (_, analytic) = model_loss(params, cfg, volumes, label, mode)?;
    let sizes: Vec<usize> = (0..params.len()).map(|i| params.tensor_at(i).len()).collect();
    let total: usize = sizes.iter().sum();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picks = sample(&mut rng, total, samples.min(total)).into_vec();
    picks.sort_unstable();
    let mut work = params.clone();
    let mut report = GradCheckReport::default();
    for flat in picks {
        let (mut t, mut j) = (0, flat);
        while j >= sizes[t] {
            j -= sizes[t];
            t += 1;
        }
        let orig = params.tensor_at(t).data()[j];
        work.tensor_at_mut(t).data_mut()[j] = orig + h;
        let plus = model_loss(&work, cfg, volumes, label, mode)?.0;
        work.tensor_at_mut(t).data_mut()[j] = orig - h;
        let minus = model_loss(&work, cfg, volumes, label, mode)?.0;
        work.tensor_at_mut(t).data_mut()[j] = orig;
        let numeric = (plus - minus) / (2.0 * h);
        let a = analytic.tensor_at(t).data()[j];
        let e = rel_err_floor(a, numeric, 1e-6);
        report.checked += 1;
        if e > report.max_rel_err {
            report.max_rel_err = e;
            report.worst = Some((t, j, a, numeric));
        }
    }
    Ok(report)
}
