use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::ModelConfig;
use crate::error::Result;
use crate::params::ParamStore;
use crate::ssm::SsmParams;
use crate::tensor::{Scalar, Tensor};

struct Init<'s, T: Scalar> {
    store: &'s mut ParamStore<T>,
    rng: ChaCha8Rng,
}

impl<T: Scalar> Init<'_, T> {
    fn normal(&mut self, name: String, shape: Vec<usize>, std: f64) -> Result<()> {
        let t = Tensor::randn(shape, std, &mut self.rng);
        self.store.insert(name, t)
    }

    fn zeros(&mut self, name: String, shape: Vec<usize>) -> Result<()> {
        self.store.insert(name, Tensor::zeros(shape))
    }

    fn norm(&mut self, prefix: &str, c: usize) -> Result<()> {
        self.store.insert(format!("{prefix}.gamma"), Tensor::ones(vec![c]))?;
        self.zeros(format!("{prefix}.beta"), vec![c])
    }

    /// Conv weight `[cout, cin, k...]` (LeCun normal) plus zero bias.
    fn conv(&mut self, prefix: &str, cout: usize, cin: usize, k: [usize; 3]) -> Result<()> {
        let fan_in = cin * k.iter().product::<usize>();
        self.normal(format!("{prefix}.w"), vec![cout, cin, k[0], k[1], k[2]], (1.0 / fan_in as f64).sqrt())?;
        self.zeros(format!("{prefix}.b"), vec![cout])
    }

    fn linear(&mut self, prefix: &str, cin: usize, cout: usize, gain: f64) -> Result<()> {
        self.normal(format!("{prefix}.w"), vec![cin, cout], gain / (cin as f64).sqrt())?;
        self.zeros(format!("{prefix}.b"), vec![cout])
    }

    fn mamba(&mut self, prefix: &str, cfg: &ModelConfig, c: usize) -> Result<()> {
        SsmParams::<T>::init(&cfg.ssm(c), &mut self.rng).register(self.store, prefix)
    }

    /// LN → Mamba and LN → MLP residual pair.
    fn branch(&mut self, prefix: &str, cfg: &ModelConfig, c: usize) -> Result<()> {
        let hidden = c * cfg.mlp_ratio;
        self.norm(&format!("{prefix}.ln1"), c)?;
        self.mamba(&format!("{prefix}.mamba"), cfg, c)?;
        self.norm(&format!("{prefix}.ln2"), c)?;
        self.linear(&format!("{prefix}.mlp.fc1"), c, hidden, 1.0)?;
        self.linear(&format!("{prefix}.mlp.fc2"), hidden, c, 0.5)
    }

    fn attention(&mut self, prefix: &str, dq: usize, dkv: usize) -> Result<()> {
        self.norm(&format!("{prefix}.ln_q"), dq)?;
        if dkv != 0 {
            self.norm(&format!("{prefix}.ln_kv"), dkv)?;
        }
        let dk = if dkv == 0 { dq } else { dkv };
        let std_q = (1.0 / dq as f64).sqrt();
        let std_k = (1.0 / dk as f64).sqrt();
        self.normal(format!("{prefix}.wq"), vec![dq, dq], std_q)?;
        self.normal(format!("{prefix}.wk"), vec![dk, dq], std_k)?;
        self.normal(format!("{prefix}.wv"), vec![dk, dq], std_k)?;
        self.normal(format!("{prefix}.wo"), vec![dq, dq], 0.5 * std_q)?;
        self.zeros(format!("{prefix}.bo"), vec![dq])
    }
}

/// Fresh parameters for `cfg`, seeded by `cfg.seed`. Only enabled components get tensors,
/// so the parameter count is a function of the configuration alone.
pub fn init_params<T: Scalar>(cfg: &ModelConfig) -> Result<ParamStore<T>> {
    cfg.validate()?;
    let comp = cfg.components();
    let mut store = ParamStore::new();
    let mut init = Init {
        store: &mut store,
        rng: ChaCha8Rng::seed_from_u64(cfg.seed),
    };
    let c0 = cfg.stem_channels;
    let k = cfg.stem_kernel;
    init.normal("stem.lift.w".into(), vec![c0, 1, 1, 1, 1], 1.0)?;
    init.normal("stem.dw.w".into(), vec![c0, 1, k, k, k], (1.0 / (k * k * k) as f64).sqrt())?;
    init.zeros("stem.dw.b".into(), vec![c0])?;
    if comp.sci {
        for (name, kk) in [("a1", 3), ("a2", 3), ("b1", 1), ("b2", 1)] {
            init.conv(&format!("sci.{name}"), c0, c0, [kk; 3])?;
            init.norm(&format!("sci.{name}.norm"), c0)?;
        }
        init.conv("sci.out", c0, c0, [1; 3])?;
    }
    for s in 0..4 {
        let c = cfg.level_channels(s);
        let p = format!("stage{}", s + 1);
        if comp.spatial {
            init.branch(&format!("{p}.spatial"), cfg, c)?;
            init.normal(format!("{p}.mask_token"), vec![c], 0.02)?;
        }
        if comp.temporal {
            init.branch(&format!("{p}.temporal"), cfg, c)?;
        }
        if comp.simr {
            init.norm(&format!("{p}.simr.ln"), c)?;
            init.mamba(&format!("{p}.simr.mamba"), cfg, c)?;
        }
        let d = format!("down{}", s + 1);
        init.conv(&d, cfg.level_channels(s + 1), c, cfg.downsample_spec(s).kernel)?;
        init.norm(&format!("{d}.ln"), cfg.level_channels(s + 1))?;
    }
    if comp.mgf {
        let u = cfg.unified_dim;
        for l in 0..3 {
            init.linear(&format!("mgf.align{}", l + 1), cfg.level_channels(l), u, 1.0)?;
        }
        init.attention("mgf.ca_shallow", u, u)?;
        for l in [3, 4] {
            let c = cfg.level_channels(l);
            init.attention(&format!("mgf.sa{}", l + 1), c, 0)?;
            init.linear(&format!("mgf.align{}", l + 1), c, u, 1.0)?;
        }
        init.attention("mgf.ca_deep", u, u)?;
    }
    let f = cfg.head_dim();
    init.zeros("head.w".into(), vec![f, cfg.num_classes])?;
    init.zeros("head.b".into(), vec![cfg.num_classes])?;
    Ok(store)
}
