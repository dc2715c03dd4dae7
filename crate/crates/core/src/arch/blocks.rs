use super::ModelConfig;
use crate::autodiff::{Graph, Var};
use crate::error::Result;
use crate::params::Scope;
use crate::scan_order::{apply_mask_var, gather_var, scatter_var, simr_refine, simr_scores, MaskPlan, ScanOrder};
use crate::seed::derive_seed;
use crate::ssm::mamba_block;
use crate::tensor::{Conv3dSpec, Scalar};

/// One feature volume `[C, D, H, W]` per phase, arterial / venous / delayed.
pub type PhaseVars = [Var; 3];

/// Per-pass switches that change what a stage computes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct RunMode {
    pub training: bool,
    /// Seeds the masking plans when `training` is set.
    pub mask_seed: u64,
}

impl RunMode {
    pub fn eval() -> Self {
        Self::default()
    }

    pub fn train(mask_seed: u64) -> Self {
        Self {
            training: true,
            mask_seed,
        }
    }
}

pub(crate) fn map3(f: impl FnMut(Var) -> Result<Var>, x: PhaseVars) -> Result<PhaseVars> {
    let [a, v, d] = x.map(f);
    Ok([a?, v?, d?])
}

fn conv(s: &Scope<'_, '_, impl Scalar>, x: Var, spec: Conv3dSpec) -> Result<Var> {
    let g = s.graph();
    let y = g.conv3d(x, s.p("w")?, spec)?;
    g.channel_bias(y, s.p("b")?)
}

/// Per-channel normalisation over the spatial extent, then the learned affine.
fn instance_norm<T: Scalar>(s: &Scope<'_, '_, T>, x: Var) -> Result<Var> {
    let g = s.graph();
    let shape = g.shape(x);
    let flat = g.reshape(x, &[shape[0], shape[1..].iter().product()])?;
    let y = g.layernorm(flat, None, None)?;
    let y = g.channel_affine(y, Some(s.p("gamma")?), Some(s.p("beta")?))?;
    g.reshape(y, &shape)
}

fn conv_norm_act<T: Scalar>(s: &Scope<'_, '_, T>, x: Var, spec: Conv3dSpec) -> Result<Var> {
    let y = conv(s, x, spec)?;
    let y = instance_norm(&s.sub("norm"), y)?;
    s.graph().gelu(y)
}

/// `z + C1(C3·C3(z) + C1·C1(z))` on one `[C, D, H, W]` volume.
pub fn sci<T: Scalar>(s: &Scope<'_, '_, T>, z: Var) -> Result<Var> {
    let g = s.graph();
    let wide = conv_norm_act(&s.sub("a1"), z, Conv3dSpec::same(3, 1))?;
    let wide = conv_norm_act(&s.sub("a2"), wide, Conv3dSpec::same(3, 1))?;
    let point = conv_norm_act(&s.sub("b1"), z, Conv3dSpec::same(1, 1))?;
    let point = conv_norm_act(&s.sub("b2"), point, Conv3dSpec::same(1, 1))?;
    let mixed = g.add(wide, point)?;
    let out = conv(&s.sub("out"), mixed, Conv3dSpec::same(1, 1))?;
    g.add(z, out)
}

/// Pointwise lift of the single intensity channel, depthwise large-kernel conv, then SCI when enabled.
///
/// With one input channel the lift is a per-channel scale, so lift-then-depthwise is evaluated
/// as a single `1 → C` convolution with kernel `lift[c] · dw[c]`.
pub fn stem<T: Scalar>(s: &Scope<'_, '_, T>, cfg: &ModelConfig, x: Var) -> Result<Var> {
    let g = s.graph();
    let c = cfg.stem_channels;
    let lift = g.reshape(s.p("stem.lift.w")?, &[c])?;
    let kernel = g.channel_affine(s.p("stem.dw.w")?, Some(lift), None)?;
    let y = g.conv3d(x, kernel, Conv3dSpec::same(cfg.stem_kernel, 1))?;
    let y = g.channel_bias(y, s.p("stem.dw.b")?)?;
    if cfg.components().sci {
        sci(&s.sub("sci"), y)
    } else {
        Ok(y)
    }
}

/// `x + Mamba(LN x)`, then `x + MLP(LN x)`, over one token sequence.
pub fn residual_branch<T: Scalar>(s: &Scope<'_, '_, T>, cfg: &ModelConfig, x: Var) -> Result<Var> {
    let g = s.graph();
    let d_model = g.shape(x)[1];
    let n1 = g.layernorm(x, Some(s.p("ln1.gamma")?), Some(s.p("ln1.beta")?))?;
    let x = g.add(x, mamba_block(&s.sub("mamba"), &cfg.ssm(d_model), n1)?)?;
    let n2 = g.layernorm(x, Some(s.p("ln2.gamma")?), Some(s.p("ln2.beta")?))?;
    let h = g.mlp(
        n2,
        s.p("mlp.fc1.w")?,
        s.p("mlp.fc1.b")?,
        s.p("mlp.fc2.w")?,
        s.p("mlp.fc2.b")?,
    )?;
    g.add(x, h)
}

/// Dual-order stage on one scale. Enabled branches run on their own token orders,
/// are restored to the phase-major layout and summed; with neither enabled the stage is
/// the identity.
pub fn dhcm_stage<T: Scalar>(
    s: &Scope<'_, '_, T>,
    cfg: &ModelConfig,
    stage: usize,
    feats: PhaseVars,
    mode: RunMode,
) -> Result<PhaseVars> {
    let comp = cfg.components();
    if !comp.spatial && !comp.temporal {
        return Ok(feats);
    }
    let g = s.graph();
    let shape = g.shape(feats[0]);
    let (c, dims) = (shape[0], &shape[1..]);
    let n: usize = dims.iter().product();
    let tokens = map3(|f| g.channels_to_tokens(f), feats)?;
    let mut merged = None;
    if comp.spatial {
        let order = ScanOrder::spatial(3, n);
        let stack = g.concat_rows(&tokens)?;
        let mut seq = gather_var(g, stack, &order)?;
        if mode.training && cfg.mask_rate > 0.0 {
            let plan = MaskPlan::new(3 * n, cfg.mask_rate, derive_seed(mode.mask_seed, &[stage as u64]));
            seq = apply_mask_var(g, seq, &plan, s.p("mask_token")?)?;
        }
        let seq = residual_branch(&s.sub("spatial"), cfg, seq)?;
        merged = Some(scatter_var(g, seq, &order)?);
    }
    if comp.temporal {
        let phases = if comp.simr {
            let vals = tokens.map(|t| g.value(t));
            let report = simr_scores(&vals[0], &vals[1], &vals[2])?;
            simr_refine(&s.sub("simr"), &cfg.ssm(c), tokens, &report)?
        } else {
            tokens
        };
        let order = ScanOrder::temporal(3, n);
        let stack = g.concat_rows(&phases)?;
        let seq = gather_var(g, stack, &order)?;
        let seq = residual_branch(&s.sub("temporal"), cfg, seq)?;
        let back = scatter_var(g, seq, &order)?;
        merged = Some(match merged {
            Some(m) => g.add(m, back)?,
            None => back,
        });
    }
    let merged = merged.expect("at least one branch is enabled");
    let dims = dims.to_vec();
    let split = |p: usize| -> Result<Var> {
        let t = g.slice_rows(merged, p * n, n)?;
        g.tokens_to_channels(t, &dims)
    };
    Ok([split(0)?, split(1)?, split(2)?])
}

/// Strided conv shared across phases, then per-voxel channel LayerNorm.
pub fn downsample<T: Scalar>(s: &Scope<'_, '_, T>, cfg: &ModelConfig, stage: usize, feats: PhaseVars) -> Result<PhaseVars> {
    let g = s.graph();
    let spec = cfg.downsample_spec(stage);
    let (gamma, beta) = (s.p("ln.gamma")?, s.p("ln.beta")?);
    map3(
        |f| {
            let y = conv(s, f, spec)?;
            let dims = g.shape(y)[1..].to_vec();
            let t = g.channels_to_tokens(y)?;
            let t = g.layernorm(t, Some(gamma), Some(beta))?;
            g.tokens_to_channels(t, &dims)
        },
        feats,
    )
}

/// Tokens of all three phases stacked phase-major: `[3·N, C]`.
pub(crate) fn stacked_tokens<T: Scalar>(g: &Graph<T>, feats: PhaseVars) -> Result<Var> {
    let t = map3(|f| g.channels_to_tokens(f), feats)?;
    g.concat_rows(&t)
}
