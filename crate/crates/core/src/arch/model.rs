use super::blocks::{dhcm_stage, downsample, stacked_tokens, stem, PhaseVars, RunMode};
use super::mgf::{mgf, AttentionTrace};
use super::ModelConfig;
use crate::autodiff::{Graph, Var};
use crate::error::{shape_err, Error, Result};
use crate::params::{Binder, ParamStore};
use crate::tensor::{Scalar, Tensor};

const PHASE_NAMES: [&str; 3] = ["arterial", "venous", "delayed"];

/// Graph handles produced by one forward pass.
pub struct ForwardOutput<T> {
    /// `[num_classes]`.
    pub logits: Var,
    /// Five levels, shallow to deep.
    pub levels: Vec<PhaseVars>,
    /// Output of each dual-order stage, before its downsample.
    pub stages: Vec<PhaseVars>,
    pub attention: AttentionTrace<T>,
}

/// Check the phase volumes against the configured ROI and lift them onto the graph.
fn inputs<T: Scalar>(g: &Graph<T>, cfg: &ModelConfig, volumes: &[Tensor<T>]) -> Result<PhaseVars> {
    if let Some(missing) = PHASE_NAMES.get(volumes.len()) {
        return Err(Error::MissingPhase(missing));
    }
    if volumes.len() > 3 {
        return Err(shape_err("forward", format!("{} phase volumes, expected 3", volumes.len())));
    }
    let [d, h, w] = cfg.roi_shape;
    let mut vars = Vec::with_capacity(3);
    for v in volumes {
        if v.shape() != cfg.roi_shape {
            return Err(shape_err(
                "forward",
                format!("phase volume {:?} does not match roi_shape {:?}", v.shape(), cfg.roi_shape),
            ));
        }
        vars.push(g.constant(v.clone().reshape(vec![1, d, h, w])?));
    }
    Ok([vars[0], vars[1], vars[2]])
}

/// Build the whole network on `binder`'s graph.
pub fn forward_graph<T: Scalar>(
    binder: &Binder<'_, T>,
    cfg: &ModelConfig,
    volumes: &[Tensor<T>],
    mode: RunMode,
) -> Result<ForwardOutput<T>> {
    let g = binder.graph;
    let root = binder.scope("");
    let x = inputs(g, cfg, volumes)?;
    let mut feats = [stem(&root, cfg, x[0])?, stem(&root, cfg, x[1])?, stem(&root, cfg, x[2])?];
    let mut levels = vec![feats];
    let mut stages = Vec::with_capacity(4);
    for s in 0..4 {
        feats = dhcm_stage(&root.sub(&format!("stage{}", s + 1)), cfg, s, feats, mode)?;
        stages.push(feats);
        feats = downsample(&root.sub(&format!("down{}", s + 1)), cfg, s, feats)?;
        levels.push(feats);
    }
    let mut attention = AttentionTrace::default();
    let pooled = if cfg.components().mgf {
        mgf(&root.sub("mgf"), cfg, &levels, &mut attention)?
    } else {
        g.mean_rows(stacked_tokens(g, feats)?)?
    };
    let f = g.shape(pooled)[0];
    let row = g.reshape(pooled, &[1, f])?;
    let logits = g.linear(row, root.p("head.w")?, Some(root.p("head.b")?))?;
    let logits = g.reshape(logits, &[cfg.num_classes])?;
    Ok(ForwardOutput {
        logits,
        levels,
        stages,
        attention,
    })
}

/// Logits for one sample.
pub fn forward<T: Scalar>(
    params: &ParamStore<T>,
    cfg: &ModelConfig,
    volumes: &[Tensor<T>],
    mode: RunMode,
) -> Result<Tensor<T>> {
    let g = Graph::new();
    let binder = Binder::new(&g, params);
    let out = forward_graph(&binder, cfg, volumes, mode)?;
    Ok((*g.value(out.logits)).clone())
}

/// Softmax probability of class 1.
pub fn positive_probability<T: Scalar>(logits: &Tensor<T>) -> f64 {
    let z: Vec<f64> = logits.data().iter().map(|v| v.to_f64().unwrap()).collect();
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    e[1] / e.iter().sum::<f64>()
}

/// `ReLU(Σ_c w_c A_c)` with `w_c` the spatial mean of the gradient, min-max scaled to `[0, 1]`.
/// `acts` and `grads` are `[C, D, H, W]`; the result is `[D, H, W]`.
pub fn grad_cam_map<T: Scalar>(acts: &Tensor<T>, grads: &Tensor<T>) -> Result<Tensor<T>> {
    acts.expect_same_shape(grads, "grad_cam")?;
    if acts.rank() != 4 {
        return Err(shape_err("grad_cam", format!("expected [C,D,H,W], got {:?}", acts.shape())));
    }
    let c = acts.shape()[0];
    let n = acts.len() / c;
    let mut cam = vec![0.0f64; n];
    for ch in 0..c {
        let gs = &grads.data()[ch * n..(ch + 1) * n];
        let w = gs.iter().map(|v| v.to_f64().unwrap()).sum::<f64>() / n as f64;
        if w == 0.0 {
            continue;
        }
        for (o, a) in cam.iter_mut().zip(&acts.data()[ch * n..(ch + 1) * n]) {
            *o += w * a.to_f64().unwrap();
        }
    }
    cam.iter_mut().for_each(|v| *v = v.max(0.0));
    let hi = cam.iter().copied().fold(0.0, f64::max);
    let lo = cam.iter().copied().fold(f64::INFINITY, f64::min);
    let scaled: Vec<T> = cam
        .iter()
        .map(|&v| {
            T::c(if hi <= 0.0 {
                0.0
            } else if hi > lo {
                (v - lo) / (hi - lo)
            } else {
                1.0
            })
        })
        .collect();
    Tensor::new(acts.shape()[1..].to_vec(), scaled)
}

/// Grad-CAM of `target_class` at the output of stage `stage` (1-based), one map per phase.
pub fn gradcam<T: Scalar>(
    params: &ParamStore<T>,
    cfg: &ModelConfig,
    volumes: &[Tensor<T>],
    target_class: usize,
    stage: usize,
) -> Result<[Tensor<T>; 3]> {
    if params.get("head.w")?.max_abs() == T::zero() {
        return Err(Error::UntrainedParams);
    }
    if !(1..=4).contains(&stage) {
        return Err(Error::OutOfRange { index: stage, len: 5 });
    }
    if target_class >= cfg.num_classes {
        return Err(Error::OutOfRange {
            index: target_class,
            len: cfg.num_classes,
        });
    }
    let g = Graph::new();
    let binder = Binder::new(&g, params);
    let out = forward_graph(&binder, cfg, volumes, RunMode::eval())?;
    let row = g.reshape(out.logits, &[1, cfg.num_classes])?;
    let score = g.sum(g.slice_cols(row, target_class, 1)?)?;
    let feats = out.stages[stage - 1];
    let grads = g.backward_retaining(score, &feats)?;
    let map = |p: usize| -> Result<Tensor<T>> {
        let acts = g.value(feats[p]);
        grad_cam_map(&acts, &grads.get_or_zeros(feats[p])?)
    };
    Ok([map(0)?, map(1)?, map(2)?])
}
