use std::rc::Rc;

use crate::autodiff::Var;
use crate::error::{shape_err, Result};
use crate::params::Scope;
use crate::ssm::{mamba_block, SsmConfig};
use crate::tensor::{Scalar, Tensor};

/// Cross-phase similarity of every voxel position and the resulting low/high split.
#[derive(Clone, Debug, PartialEq)]
pub struct SimilarityReport {
    /// `cos(A_i, V_i) + cos(V_i, D_i)` per position, in `[-2, 2]`.
    pub theta: Vec<f64>,
    /// The `ceil(N/2)` least similar positions, ascending.
    pub low_set: Vec<usize>,
    /// The remaining `floor(N/2)` positions, ascending.
    pub high_set: Vec<usize>,
    /// Original position of each token slot in the refined sub-sequence (position-major, A,V,D).
    pub restore_map: Vec<(usize, usize)>,
}

fn cosine<T: Scalar>(a: &[T], b: &[T]) -> f64 {
    let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (x.to_f64().unwrap(), y.to_f64().unwrap());
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        (dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0)
    }
}

/// Score and split positions. Ranking is ascending in θ with ties broken by position.
pub fn simr_scores<T: Scalar>(fa: &Tensor<T>, fv: &Tensor<T>, fd: &Tensor<T>) -> Result<SimilarityReport> {
    if fa.shape() != fv.shape() || fv.shape() != fd.shape() || fa.rank() != 2 {
        return Err(shape_err(
            "simr_scores",
            format!("{:?} / {:?} / {:?}", fa.shape(), fv.shape(), fd.shape()),
        ));
    }
    let (n, c) = (fa.shape()[0], fa.shape()[1]);
    let row = |t: &Tensor<T>, i: usize| -> Vec<T> { t.data()[i * c..(i + 1) * c].to_vec() };
    let theta: Vec<f64> = crate::par::map_indexed(n, |i| {
        let (a, v, d) = (row(fa, i), row(fv, i), row(fd, i));
        cosine(&a, &v) + cosine(&v, &d)
    });
    let mut ranked: Vec<usize> = (0..n).collect();
    ranked.sort_by(|&i, &j| theta[i].total_cmp(&theta[j]).then(i.cmp(&j)));
    let n_low = n.div_ceil(2);
    let mut low_set = ranked[..n_low].to_vec();
    let mut high_set = ranked[n_low..].to_vec();
    low_set.sort_unstable();
    high_set.sort_unstable();
    let restore_map = low_set.iter().flat_map(|&i| (0..3).map(move |p| (p, i))).collect();
    Ok(SimilarityReport {
        theta,
        low_set,
        high_set,
        restore_map,
    })
}

/// Enhance the low-similarity positions with a residual Mamba pass and put them back.
///
/// For each low position (ascending) the arterial, venous and delayed tokens are laid
/// out consecutively; the sub-sequence goes through `x + mamba(LN(x))` and every token
/// returns to its original `(phase, position)` slot. High-similarity tokens pass through
/// untouched.
pub fn simr_refine<T: Scalar>(
    scope: &Scope<'_, '_, T>,
    cfg: &SsmConfig,
    phases: [Var; 3],
    report: &SimilarityReport,
) -> Result<[Var; 3]> {
    let g = scope.graph();
    let n = g.shape(phases[0])[0];
    if report.theta.len() != n {
        return Err(shape_err("simr_refine", format!("report for {} positions, features have {n}", report.theta.len())));
    }
    if report.low_set.is_empty() {
        return Ok(phases);
    }
    let stack = g.concat_rows(&phases)?;
    let pick: Rc<[usize]> = report.restore_map.iter().map(|&(p, i)| p * n + i).collect();
    let sub = g.gather_rows(stack, Rc::clone(&pick))?;
    let normed = g.layernorm(sub, Some(scope.p("ln.gamma")?), Some(scope.p("ln.beta")?))?;
    let enhanced = mamba_block(&scope.sub("mamba"), cfg, normed)?;
    let refined = g.add(sub, enhanced)?;
    let stack = g.scatter_rows(stack, refined, pick)?;
    Ok([
        g.slice_rows(stack, 0, n)?,
        g.slice_rows(stack, n, n)?,
        g.slice_rows(stack, 2 * n, n)?,
    ])
}
