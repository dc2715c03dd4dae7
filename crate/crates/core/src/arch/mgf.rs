use std::rc::Rc;

use super::blocks::{map3, stacked_tokens, PhaseVars};
use super::ModelConfig;
use crate::autodiff::{Graph, Var};
use crate::error::{shape_err, Result};
use crate::params::Scope;
use crate::tensor::{Scalar, Tensor};

/// Attention probabilities recorded during a forward pass, `[Lq, Lk]` per head.
#[derive(Clone, Debug, Default)]
pub struct AttentionTrace<T> {
    pub sites: Vec<(String, Rc<Tensor<T>>)>,
}

/// Projection weights of one multi-head attention site.
#[derive(Clone, Copy, Debug)]
pub struct AttentionWeights {
    pub wq: Var,
    pub wk: Var,
    pub wv: Var,
    pub wo: Var,
    pub bo: Var,
}

/// Scaled dot-product attention of `q: [Lq, Dq]` over `kv: [Lk, Dk]`, split into `heads`.
/// Returns the projected output `[Lq, Dq]` and the per-head probability matrices.
pub fn multi_head_attention<T: Scalar>(
    g: &Graph<T>,
    q: Var,
    kv: Var,
    w: &AttentionWeights,
    heads: usize,
) -> Result<(Var, Vec<Var>)> {
    let d = g.shape(w.wq)[1];
    if heads == 0 || !d.is_multiple_of(heads) {
        return Err(shape_err("attention", format!("width {d} not divisible by {heads} heads")));
    }
    let dh = d / heads;
    let qp = g.matmul(q, w.wq)?;
    let kp = g.matmul(kv, w.wk)?;
    let vp = g.matmul(kv, w.wv)?;
    let scale = T::c(1.0 / (dh as f64).sqrt());
    let mut outs = Vec::with_capacity(heads);
    let mut probs = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = g.slice_cols(qp, h * dh, dh)?;
        let kh = g.slice_cols(kp, h * dh, dh)?;
        let vh = g.slice_cols(vp, h * dh, dh)?;
        let logits = g.scale(g.matmul(qh, g.transpose(kh)?)?, scale)?;
        let p = g.softmax(logits)?;
        outs.push(g.matmul(p, vh)?);
        probs.push(p);
    }
    let o = if heads == 1 { outs[0] } else { g.concat_cols(&outs)? };
    Ok((g.linear(o, w.wo, Some(w.bo))?, probs))
}

/// `q + MHA(LN q, LN kv)`; self-attention when `kv` is `None`.
fn attention_block<T: Scalar>(
    s: &Scope<'_, '_, T>,
    heads: usize,
    q: Var,
    kv: Option<Var>,
    trace: &mut AttentionTrace<T>,
) -> Result<Var> {
    let g = s.graph();
    let qn = g.layernorm(q, Some(s.p("ln_q.gamma")?), Some(s.p("ln_q.beta")?))?;
    let kvn = match kv {
        Some(kv) => g.layernorm(kv, Some(s.p("ln_kv.gamma")?), Some(s.p("ln_kv.beta")?))?,
        None => qn,
    };
    let w = AttentionWeights {
        wq: s.p("wq")?,
        wk: s.p("wk")?,
        wv: s.p("wv")?,
        wo: s.p("wo")?,
        bo: s.p("bo")?,
    };
    let (out, probs) = multi_head_attention(g, qn, kvn, &w, heads)?;
    for (h, p) in probs.into_iter().enumerate() {
        trace.sites.push((format!("{}#{h}", s.prefix()), g.value(p)));
    }
    g.add(q, out)
}

/// `GELU(tokens · W + b)`.
fn align<T: Scalar>(s: &Scope<'_, '_, T>, tokens: Var) -> Result<Var> {
    let g = s.graph();
    let y = g.linear(tokens, s.p("w")?, Some(s.p("b")?))?;
    g.gelu(y)
}

/// Fuse the five levels (shallow to deep) into one `[unified_dim]` vector.
///
/// Levels 1–3 are pooled to the level-3 grid and projected to the unified width; level-3
/// tokens attend jointly over all three. Levels 4 and 5 pass through self-attention and a
/// projection, then level-5 tokens attend over the shallow fusion and both deep sets.
pub fn mgf<T: Scalar>(
    s: &Scope<'_, '_, T>,
    cfg: &ModelConfig,
    levels: &[PhaseVars],
    trace: &mut AttentionTrace<T>,
) -> Result<Var> {
    if levels.len() != 5 {
        return Err(shape_err("mgf", format!("expected 5 levels, got {}", levels.len())));
    }
    let g = s.graph();
    let grid = cfg.level_dims(2);
    let mut shallow = Vec::with_capacity(3);
    for (l, feats) in levels[..3].iter().enumerate() {
        let dims = cfg.level_dims(l);
        let factor = [0, 1, 2].map(|a| dims[a] / grid[a]);
        let pooled = if factor == [1, 1, 1] {
            *feats
        } else {
            map3(|f| g.avg_pool3d(f, factor), *feats)?
        };
        shallow.push(align(&s.sub(&format!("align{}", l + 1)), stacked_tokens(g, pooled)?)?);
    }
    let all_shallow = g.concat_rows(&shallow)?;
    let fused = attention_block(&s.sub("ca_shallow"), cfg.heads, shallow[2], Some(all_shallow), trace)?;
    let mut deep = Vec::with_capacity(2);
    for l in [3, 4] {
        let tokens = stacked_tokens(g, levels[l])?;
        let filtered = attention_block(&s.sub(&format!("sa{}", l + 1)), cfg.heads, tokens, None, trace)?;
        deep.push(align(&s.sub(&format!("align{}", l + 1)), filtered)?);
    }
    let kv = g.concat_rows(&[fused, deep[0], deep[1]])?;
    let out = attention_block(&s.sub("ca_deep"), cfg.heads, deep[1], Some(kv), trace)?;
    g.mean_rows(out)
}
