//! Selective state-space recurrence.
//!
//! With a diagonal continuous state matrix the recurrence decouples into
//! independent lanes, one per (channel, state) pair:
//! `h_t = abar_t * h_{t-1} + bbar_t * x_t`, `y_t = <C_t, h_t> + D * x_t`.
//! The pair `(a, b)` composes associatively as
//! `(a2, b2) . (a1, b1) = (a2 a1, a2 b1 + b2)`, which is what the parallel form scans.

mod block;
mod scan_op;

pub use block::{mamba_block, SsmConfig, SsmParams};
pub use scan_op::ScanMode;

use crate::error::{shape_err, Error, Result};
use crate::tensor::{Scalar, Tensor};

/// How the continuous system is discretised.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Discretization {
    /// `bbar = delta * B`, the form used by the reference selective-scan kernel.
    #[default]
    Euler,
    /// Exact zero-order hold: `bbar = (exp(delta A) - 1) / A * B`.
    ExactZoh,
}

/// `abar[t,d,n] = exp(delta[t,d] * a[d,n])`, `bbar[t,d,n]` per `mode`.
pub fn discretize<T: Scalar>(
    a: &Tensor<T>,
    delta: &Tensor<T>,
    b: &Tensor<T>,
    mode: Discretization,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let [d, n] = dims2(a, "discretize")?;
    let [l, d2] = dims2(delta, "discretize")?;
    let [l2, n2] = dims2(b, "discretize")?;
    if d != d2 || n != n2 || l != l2 {
        return Err(shape_err(
            "discretize",
            format!("A {:?}, delta {:?}, B {:?}", a.shape(), delta.shape(), b.shape()),
        ));
    }
    if let Some(&bad) = delta.data().iter().find(|&&v| !(v > T::zero())) {
        return Err(Error::NonPositiveDelta(bad.to_f64().unwrap_or(f64::NAN)));
    }
    let mut abar = Vec::with_capacity(l * d * n);
    let mut bbar = Vec::with_capacity(l * d * n);
    for t in 0..l {
        for c in 0..d {
            let dt = delta.data()[t * d + c];
            for s in 0..n {
                let av = a.data()[c * n + s];
                let bv = b.data()[t * n + s];
                abar.push((dt * av).exp());
                bbar.push(match mode {
                    Discretization::Euler => dt * bv,
                    Discretization::ExactZoh => {
                        if av.abs() < T::c(1e-12) {
                            dt * bv
                        } else {
                            (dt * av).exp_m1() / av * bv
                        }
                    }
                });
            }
        }
    }
    Ok((
        Tensor::new(vec![l, d, n], abar)?.check_finite("discretize")?,
        Tensor::new(vec![l, d, n], bbar)?.check_finite("discretize")?,
    ))
}

fn dims2<T: Scalar>(t: &Tensor<T>, op: &'static str) -> Result<[usize; 2]> {
    match t.shape() {
        [a, b] => Ok([*a, *b]),
        s => Err(shape_err(op, format!("expected rank 2, got {s:?}"))),
    }
}

struct ScanShape {
    l: usize,
    d: usize,
    n: usize,
}

fn check_scan_inputs<T: Scalar>(
    abar: &Tensor<T>,
    bbar: &Tensor<T>,
    c: &Tensor<T>,
    x: &Tensor<T>,
    d_skip: &Tensor<T>,
) -> Result<ScanShape> {
    let [l, d, n] = match abar.shape() {
        [l, d, n] => [*l, *d, *n],
        s => return Err(shape_err("scan", format!("abar must be [L,d,n], got {s:?}"))),
    };
    let ok = bbar.shape() == abar.shape()
        && c.shape() == [l, n]
        && x.shape() == [l, d]
        && d_skip.shape() == [d];
    if !ok {
        return Err(shape_err(
            "scan",
            format!(
                "abar {:?} bbar {:?} C {:?} x {:?} D {:?}",
                abar.shape(),
                bbar.shape(),
                c.shape(),
                x.shape(),
                d_skip.shape()
            ),
        ));
    }
    Ok(ScanShape { l, d, n })
}

/// Per-lane inputs `b_t = bbar_t * x_t` laid out `[L, d*n]`.
fn drive<T: Scalar>(bbar: &Tensor<T>, x: &Tensor<T>, s: &ScanShape) -> Vec<T> {
    let mut out = bbar.data().to_vec();
    for t in 0..s.l {
        for c in 0..s.d {
            let xv = x.data()[t * s.d + c];
            for v in &mut out[(t * s.d + c) * s.n..(t * s.d + c + 1) * s.n] {
                *v *= xv;
            }
        }
    }
    out
}

fn readout<T: Scalar>(h: &[T], c: &Tensor<T>, x: &Tensor<T>, d_skip: &Tensor<T>, s: &ScanShape) -> Result<Tensor<T>> {
    let mut y = Vec::with_capacity(s.l * s.d);
    for t in 0..s.l {
        let ct = &c.data()[t * s.n..(t + 1) * s.n];
        for ch in 0..s.d {
            let ht = &h[(t * s.d + ch) * s.n..(t * s.d + ch + 1) * s.n];
            let dot: T = ht.iter().zip(ct).map(|(&a, &b)| a * b).sum();
            y.push(dot + d_skip.data()[ch] * x.data()[t * s.d + ch]);
        }
    }
    Tensor::new(vec![s.l, s.d], y)?.check_finite("scan")
}

/// Left-to-right recurrence with `h_0 = 0`.
pub fn scan_sequential<T: Scalar>(
    abar: &Tensor<T>,
    bbar: &Tensor<T>,
    c: &Tensor<T>,
    x: &Tensor<T>,
    d_skip: &Tensor<T>,
) -> Result<Tensor<T>> {
    let s = check_scan_inputs(abar, bbar, c, x, d_skip)?;
    let mut h = drive(bbar, x, &s);
    states_sequential(abar.data(), &mut h, s.d * s.n);
    readout(&h, c, x, d_skip, &s)
}

/// Same contract as [`scan_sequential`], computed with a work-efficient
/// (up-sweep / down-sweep) prefix scan over the associative pair operator.
pub fn scan_parallel<T: Scalar>(
    abar: &Tensor<T>,
    bbar: &Tensor<T>,
    c: &Tensor<T>,
    x: &Tensor<T>,
    d_skip: &Tensor<T>,
) -> Result<Tensor<T>> {
    let s = check_scan_inputs(abar, bbar, c, x, d_skip)?;
    let b = drive(bbar, x, &s);
    let h = states_parallel(abar.data(), &b, s.d * s.n);
    readout(&h, c, x, d_skip, &s)
}

/// One discretised scan problem: `abar, bbar: [L, d, n]`, `c: [L, n]`, `x: [L, d]`, `d_skip: [d]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ScanInputs<T> {
    pub abar: Tensor<T>,
    pub bbar: Tensor<T>,
    pub c: Tensor<T>,
    pub x: Tensor<T>,
    pub d_skip: Tensor<T>,
}

impl<T: Scalar> ScanInputs<T> {
    /// A stable random problem: `A` uniform in `[-2, -0.05]`, `delta` in `[1e-3, 0.5]`,
    /// Gaussian `B`, `C`, `x` and `D`, Euler-discretised.
    pub fn random(l: usize, d: usize, n: usize, seed: u64) -> Self {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let a = Tensor::<T>::uniform(vec![d, n], -2.0, -0.05, &mut rng);
        let delta = Tensor::<T>::uniform(vec![l, d], 1e-3, 0.5, &mut rng);
        let b = Tensor::<T>::randn(vec![l, n], 1.0, &mut rng);
        let (abar, bbar) = discretize(&a, &delta, &b, Discretization::Euler).expect("positive delta");
        Self {
            abar,
            bbar,
            c: Tensor::randn(vec![l, n], 1.0, &mut rng),
            x: Tensor::randn(vec![l, d], 1.0, &mut rng),
            d_skip: Tensor::randn(vec![d], 1.0, &mut rng),
        }
    }

    pub fn run(&self, mode: ScanMode) -> Result<Tensor<T>> {
        let f = match mode {
            ScanMode::Sequential => scan_sequential,
            ScanMode::Parallel => scan_parallel,
        };
        f(&self.abar, &self.bbar, &self.c, &self.x, &self.d_skip)
    }
}

/// In place: on entry `h` holds `b_t`, on exit the states `h_t`.
pub(crate) fn states_sequential<T: Scalar>(a: &[T], h: &mut [T], lanes: usize) {
    let steps = h.len() / lanes;
    for t in 1..steps {
        let (prev, cur) = h.split_at_mut(t * lanes);
        let prev = &prev[(t - 1) * lanes..];
        let at = &a[t * lanes..(t + 1) * lanes];
        for ((hc, &hp), &av) in cur[..lanes].iter_mut().zip(prev).zip(at) {
            *hc += av * hp;
        }
    }
}

/// Blelloch scan: up-sweep builds subtree totals, down-sweep distributes
/// exclusive prefixes, and one final combine makes them inclusive.
pub(crate) fn states_parallel<T: Scalar>(a: &[T], b: &[T], lanes: usize) -> Vec<T> {
    let steps = b.len() / lanes;
    if steps == 0 {
        return Vec::new();
    }
    let size = steps.next_power_of_two();
    let mut tree: Vec<(T, T)> = vec![(T::one(), T::zero()); size * lanes];
    for ((slot, &av), &bv) in tree.iter_mut().zip(a).zip(b) {
        *slot = (av, bv);
    }
    let mut stride = 1;
    while stride < size {
        crate::par::for_each_chunk_mut(&mut tree, 2 * stride * lanes, |_, chunk| {
            let (left, right) = chunk.split_at_mut(stride * lanes);
            let l = &left[(stride - 1) * lanes..];
            let r = &mut right[(stride - 1) * lanes..stride * lanes];
            for (rv, lv) in r.iter_mut().zip(l) {
                // right := right . left
                *rv = (rv.0 * lv.0, rv.0 * lv.1 + rv.1);
            }
        });
        stride *= 2;
    }
    tree[(size - 1) * lanes..].fill((T::one(), T::zero()));
    stride = size / 2;
    while stride >= 1 {
        crate::par::for_each_chunk_mut(&mut tree, 2 * stride * lanes, |_, chunk| {
            let (left, right) = chunk.split_at_mut(stride * lanes);
            let l = &mut left[(stride - 1) * lanes..];
            let r = &mut right[(stride - 1) * lanes..stride * lanes];
            for (lv, rv) in l.iter_mut().zip(r.iter_mut()) {
                let total = *lv;
                let prefix = *rv;
                *lv = prefix;
                // right := left_total . prefix
                *rv = (total.0 * prefix.0, total.0 * prefix.1 + total.1);
            }
        });
        stride /= 2;
    }
    let mut h = Vec::with_capacity(steps * lanes);
    for (i, excl) in tree[..steps * lanes].iter().enumerate() {
        h.push(a[i] * excl.1 + b[i]);
    }
    h
}
