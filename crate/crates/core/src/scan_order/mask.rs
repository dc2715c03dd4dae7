use std::rc::Rc;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Positions of a sequence replaced by the learnable mask embedding.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskPlan {
    masked: Vec<usize>,
    len: usize,
    rate: f64,
    seed: u64,
}

impl MaskPlan {
    /// Exactly `floor(rate * len)` distinct positions, drawn from `seed`, sorted ascending.
    pub fn new(len: usize, rate: f64, seed: u64) -> Self {
        let count = ((rate.clamp(0.0, 1.0) * len as f64).floor() as usize).min(len);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut masked = sample(&mut rng, len, count).into_vec();
        masked.sort_unstable();
        Self { masked, len, rate, seed }
    }

    /// A plan over explicit positions (sorted and deduplicated).
    pub fn from_positions(len: usize, mut masked: Vec<usize>) -> Self {
        masked.sort_unstable();
        masked.dedup();
        let rate = if len == 0 { 0.0 } else { masked.len() as f64 / len as f64 };
        Self {
            masked,
            len,
            rate,
            seed: 0,
        }
    }

    pub fn masked(&self) -> &[usize] {
        &self.masked
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.masked.is_empty()
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    fn check(&self, rows: usize) -> Result<()> {
        if let Some(&bad) = self.masked.iter().find(|&&i| i >= rows) {
            return Err(Error::OutOfRange { index: bad, len: rows });
        }
        Ok(())
    }
}

/// Replace masked rows of `seq: [L, C]` with `mask_token: [C]`.
pub fn apply_mask<T: Scalar>(seq: &Tensor<T>, plan: &MaskPlan, mask_token: &Tensor<T>) -> Result<Tensor<T>> {
    plan.check(seq.rows())?;
    let c = seq.last_dim();
    if mask_token.len() != c {
        return Err(crate::error::shape_err("apply_mask", format!("token {:?} vs width {c}", mask_token.shape())));
    }
    let mut out = seq.clone();
    for &i in plan.masked() {
        out.data_mut()[i * c..(i + 1) * c].copy_from_slice(mask_token.data());
    }
    Ok(out)
}

/// Graph form of [`apply_mask`]; the token receives the summed gradient of every masked row.
pub fn apply_mask_var<T: Scalar>(g: &Graph<T>, seq: Var, plan: &MaskPlan, mask_token: Var) -> Result<Var> {
    plan.check(g.shape(seq)[0])?;
    if plan.is_empty() {
        return Ok(seq);
    }
    let rows = g.repeat_row(mask_token, plan.masked().len())?;
    g.scatter_rows(seq, rows, Rc::from(plan.masked()))
}
