use std::rc::Rc;

use super::{Graph, Var};
use crate::error::{shape_err, Result};
use crate::tensor::{gemm, Scalar, Tensor};

fn same_shape<T: Scalar>(g: &Graph<T>, a: Var, b: Var, op: &'static str) -> Result<()> {
    let (sa, sb) = (g.shape(a), g.shape(b));
    if sa != sb {
        return Err(shape_err(op, format!("{sa:?} vs {sb:?}")));
    }
    Ok(())
}

pub(crate) fn sigmoid<T: Scalar>(x: T) -> T {
    T::one() / (T::one() + (-x).exp_fast())
}

/// `tanh` through one exponential; saturates cleanly at both ends.
fn tanh<T: Scalar>(u: T) -> T {
    T::one() - T::c(2.0) / ((u + u).exp_fast() + T::one())
}

pub(crate) fn softplus<T: Scalar>(x: T) -> T {
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

const GELU_K: f64 = 0.044_715;
const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;

fn gelu<T: Scalar>(x: T) -> T {
    let c = T::c(SQRT_2_OVER_PI);
    let t = tanh(c * (x + T::c(GELU_K) * x * x * x));
    T::c(0.5) * x * (T::one() + t)
}

fn gelu_grad<T: Scalar>(x: T) -> T {
    let c = T::c(SQRT_2_OVER_PI);
    let k = T::c(GELU_K);
    let t = tanh(c * (x + k * x * x * x));
    T::c(0.5) * (T::one() + t) + T::c(0.5) * x * (T::one() - t * t) * c * (T::one() + T::c(3.0) * k * x * x)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Unary {
    Silu,
    Gelu,
    Softplus,
    Relu,
    Exp,
    Neg,
}

impl<T: Scalar> Graph<T> {
    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        same_shape(self, a, b, "add")?;
        let v = self.val(a)?.zip_map(&*self.val(b)?, |x, y| x + y)?;
        self.push(
            "add",
            v,
            &[a, b],
            Box::new(|g, need| Ok(vec![need[0].then(|| g.clone()), need[1].then(|| g.clone())])),
        )
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        same_shape(self, a, b, "sub")?;
        let v = self.val(a)?.zip_map(&*self.val(b)?, |x, y| x - y)?;
        self.push(
            "sub",
            v,
            &[a, b],
            Box::new(|g, need| Ok(vec![need[0].then(|| g.clone()), need[1].then(|| g.scale(-T::one()))])),
        )
    }

    /// Elementwise product.
    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        same_shape(self, a, b, "mul")?;
        let (va, vb) = (self.val(a)?, self.val(b)?);
        let v = va.zip_map(&vb, |x, y| x * y)?;
        self.push(
            "mul",
            v,
            &[a, b],
            Box::new(move |g, need| {
                Ok(vec![
                    need[0].then(|| g.zip_map(&vb, |d, y| d * y)).transpose()?,
                    need[1].then(|| g.zip_map(&va, |d, x| d * x)).transpose()?,
                ])
            }),
        )
    }

    pub fn scale(&self, a: Var, s: T) -> Result<Var> {
        let v = self.val(a)?.scale(s);
        self.push("scale", v, &[a], Box::new(move |g, _| Ok(vec![Some(g.scale(s))])))
    }

    pub fn sum(&self, a: Var) -> Result<Var> {
        let shape = self.val(a)?.shape().to_vec();
        let v = Tensor::scalar(self.val(a)?.sum());
        self.push(
            "sum",
            v,
            &[a],
            Box::new(move |g, _| Ok(vec![Some(Tensor::full(shape.clone(), g.data()[0]))])),
        )
    }

    fn unary(&self, a: Var, kind: Unary) -> Result<Var> {
        let x = self.val(a)?;
        let f = |v: T| match kind {
            Unary::Silu => v * sigmoid(v),
            Unary::Gelu => gelu(v),
            Unary::Softplus => softplus(v),
            Unary::Relu => v.max(T::zero()),
            Unary::Exp => v.exp(),
            Unary::Neg => -v,
        };
        let y = x.map(f);
        let saved_y = (kind == Unary::Exp).then(|| y.clone());
        let name = match kind {
            Unary::Silu => "silu",
            Unary::Gelu => "gelu",
            Unary::Softplus => "softplus",
            Unary::Relu => "relu",
            Unary::Exp => "exp",
            Unary::Neg => "neg",
        };
        self.push(
            name,
            y,
            &[a],
            Box::new(move |g, _| {
                let d = match kind {
                    Unary::Silu => g.zip_map(&x, |d, v| {
                        let s = sigmoid(v);
                        d * s * (T::one() + v * (T::one() - s))
                    })?,
                    Unary::Gelu => g.zip_map(&x, |d, v| d * gelu_grad(v))?,
                    Unary::Softplus => g.zip_map(&x, |d, v| d * sigmoid(v))?,
                    Unary::Relu => g.zip_map(&x, |d, v| if v > T::zero() { d } else { T::zero() })?,
                    Unary::Exp => g.zip_map(saved_y.as_ref().unwrap(), |d, y| d * y)?,
                    Unary::Neg => g.scale(-T::one()),
                };
                Ok(vec![Some(d)])
            }),
        )
    }

    pub fn silu(&self, a: Var) -> Result<Var> {
        self.unary(a, Unary::Silu)
    }

    pub fn gelu(&self, a: Var) -> Result<Var> {
        self.unary(a, Unary::Gelu)
    }

    pub fn softplus(&self, a: Var) -> Result<Var> {
        self.unary(a, Unary::Softplus)
    }

    pub fn relu(&self, a: Var) -> Result<Var> {
        self.unary(a, Unary::Relu)
    }

    pub fn exp(&self, a: Var) -> Result<Var> {
        self.unary(a, Unary::Exp)
    }

    pub fn neg(&self, a: Var) -> Result<Var> {
        self.unary(a, Unary::Neg)
    }

    /// `x: [..., C] + b: [C]` broadcast over rows.
    pub fn add_bias(&self, x: Var, b: Var) -> Result<Var> {
        let (xv, bv) = (self.val(x)?, self.val(b)?);
        let c = xv.last_dim();
        if bv.shape() != [c] {
            return Err(shape_err("add_bias", format!("{:?} + {:?}", xv.shape(), bv.shape())));
        }
        let mut out = (*xv).clone();
        for row in out.data_mut().chunks_exact_mut(c) {
            for (o, &bb) in row.iter_mut().zip(bv.data()) {
                *o += bb;
            }
        }
        self.push(
            "add_bias",
            out,
            &[x, b],
            Box::new(move |g, need| {
                let gb = need[1].then(|| {
                    let mut acc = vec![T::zero(); c];
                    for row in g.data().chunks_exact(c) {
                        for (a, &v) in acc.iter_mut().zip(row) {
                            *a += v;
                        }
                    }
                    Tensor::new(vec![c], acc)
                });
                Ok(vec![need[0].then(|| g.clone()), gb.transpose()?])
            }),
        )
    }

    /// Per-channel affine on a channel-major tensor `x: [C, ...]`.
    pub fn channel_affine(&self, x: Var, gamma: Option<Var>, beta: Option<Var>) -> Result<Var> {
        let xv = self.val(x)?;
        let c = xv.shape()[0];
        let per = xv.len() / c;
        let gv = gamma.map(|v| self.val(v)).transpose()?;
        let bv = beta.map(|v| self.val(v)).transpose()?;
        for t in gv.iter().chain(bv.iter()) {
            if t.shape() != [c] {
                return Err(shape_err("channel_affine", format!("{:?} vs {c} channels", t.shape())));
            }
        }
        let mut out = (*xv).clone();
        for (ch, chunk) in out.data_mut().chunks_exact_mut(per).enumerate() {
            let s = gv.as_ref().map_or(T::one(), |g| g.data()[ch]);
            let o = bv.as_ref().map_or(T::zero(), |b| b.data()[ch]);
            for v in chunk {
                *v = *v * s + o;
            }
        }
        let mut parents = vec![x];
        parents.extend(gamma);
        parents.extend(beta);
        let has_gamma = gamma.is_some();
        self.push(
            "channel_affine",
            out,
            &parents,
            Box::new(move |g, need| {
                let mut res = Vec::with_capacity(need.len());
                let gx = need[0].then(|| {
                    let mut d = g.clone();
                    if let Some(gv) = gv.as_ref() {
                        for (ch, chunk) in d.data_mut().chunks_exact_mut(per).enumerate() {
                            for v in chunk {
                                *v *= gv.data()[ch];
                            }
                        }
                    }
                    d
                });
                res.push(gx);
                if has_gamma {
                    let dg: Vec<T> = g
                        .data()
                        .chunks_exact(per)
                        .zip(xv.data().chunks_exact(per))
                        .map(|(gc, xc)| gc.iter().zip(xc).map(|(&a, &b)| a * b).sum())
                        .collect();
                    res.push(Some(Tensor::new(vec![c], dg)?));
                }
                if bv.is_some() {
                    let db: Vec<T> = g.data().chunks_exact(per).map(|gc| gc.iter().copied().sum()).collect();
                    res.push(Some(Tensor::new(vec![c], db)?));
                }
                Ok(res)
            }),
        )
    }

    /// `[m,k] x [k,n]`.
    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.val(a)?, self.val(b)?);
        let (m, k) = crate::tensor::dims2(&va, "matmul")?;
        let (k2, n) = crate::tensor::dims2(&vb, "matmul")?;
        if k != k2 {
            return Err(shape_err("matmul", format!("{:?} x {:?}", va.shape(), vb.shape())));
        }
        let mut out = vec![T::zero(); m * n];
        gemm(false, false, m, k, n, va.data(), vb.data(), &mut out, false);
        self.push(
            "matmul",
            Tensor::new(vec![m, n], out)?,
            &[a, b],
            Box::new(move |g, need| {
                let da = need[0]
                    .then(|| {
                        let mut d = vec![T::zero(); m * k];
                        gemm(false, true, m, n, k, g.data(), vb.data(), &mut d, false);
                        Tensor::new(vec![m, k], d)
                    })
                    .transpose()?;
                let db = need[1]
                    .then(|| {
                        let mut d = vec![T::zero(); k * n];
                        gemm(true, false, k, m, n, va.data(), g.data(), &mut d, false);
                        Tensor::new(vec![k, n], d)
                    })
                    .transpose()?;
                Ok(vec![da, db])
            }),
        )
    }

    /// Affine map `x W + b` over the last axis of a 2-D `x`.
    pub fn linear(&self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let y = self.matmul(x, w)?;
        match b {
            Some(b) => self.add_bias(y, b),
            None => Ok(y),
        }
    }

    pub fn transpose(&self, a: Var) -> Result<Var> {
        let v = self.val(a)?.transpose()?;
        self.push("transpose", v, &[a], Box::new(|g, _| Ok(vec![Some(g.transpose()?)])))
    }

    pub fn reshape(&self, a: Var, shape: &[usize]) -> Result<Var> {
        let old = self.val(a)?.shape().to_vec();
        let v = (*self.val(a)?).clone().reshape(shape.to_vec())?;
        self.push(
            "reshape",
            v,
            &[a],
            Box::new(move |g, _| Ok(vec![Some(g.clone().reshape(old.clone())?)])),
        )
    }

    /// `[C, S...]` channel-major volume to `[S, C]` tokens (one row per voxel).
    pub fn channels_to_tokens(&self, a: Var) -> Result<Var> {
        let s = self.val(a)?.shape().to_vec();
        let c = s[0];
        let n = s[1..].iter().product::<usize>();
        let flat = self.reshape(a, &[c, n])?;
        self.transpose(flat)
    }

    /// `[N, C]` tokens back to a `[C, dims...]` volume.
    pub fn tokens_to_channels(&self, a: Var, dims: &[usize]) -> Result<Var> {
        let c = self.val(a)?.shape().to_vec()[1];
        let t = self.transpose(a)?;
        let mut shape = vec![c];
        shape.extend_from_slice(dims);
        self.reshape(t, &shape)
    }

    pub fn concat_rows(&self, parts: &[Var]) -> Result<Var> {
        let vals: Vec<Rc<Tensor<T>>> = parts.iter().map(|&p| self.val(p)).collect::<Result<_>>()?;
        let c = vals[0].last_dim();
        if vals.iter().any(|v| v.rank() != 2 || v.last_dim() != c) {
            return Err(shape_err("concat_rows", "all parts must be [*, C] with equal C"));
        }
        let rows: Vec<usize> = vals.iter().map(|v| v.rows()).collect();
        let mut data = Vec::with_capacity(rows.iter().sum::<usize>() * c);
        for v in &vals {
            data.extend_from_slice(v.data());
        }
        let total = rows.iter().sum();
        self.push(
            "concat_rows",
            Tensor::new(vec![total, c], data)?,
            parts,
            Box::new(move |g, need| {
                let mut off = 0;
                let mut res = Vec::with_capacity(rows.len());
                for (i, &r) in rows.iter().enumerate() {
                    res.push(
                        need[i]
                            .then(|| Tensor::new(vec![r, c], g.data()[off * c..(off + r) * c].to_vec()))
                            .transpose()?,
                    );
                    off += r;
                }
                Ok(res)
            }),
        )
    }

    pub fn slice_rows(&self, a: Var, start: usize, len: usize) -> Result<Var> {
        let v = self.val(a)?;
        let (r, c) = crate::tensor::dims2(&v, "slice_rows")?;
        if start + len > r || len == 0 {
            return Err(shape_err("slice_rows", format!("rows {start}..{} of {r}", start + len)));
        }
        let out = Tensor::new(vec![len, c], v.data()[start * c..(start + len) * c].to_vec())?;
        self.push(
            "slice_rows",
            out,
            &[a],
            Box::new(move |g, _| {
                let mut d = Tensor::zeros(vec![r, c]);
                d.data_mut()[start * c..(start + len) * c].copy_from_slice(g.data());
                Ok(vec![Some(d)])
            }),
        )
    }

    pub fn concat_cols(&self, parts: &[Var]) -> Result<Var> {
        let vals: Vec<Rc<Tensor<T>>> = parts.iter().map(|&p| self.val(p)).collect::<Result<_>>()?;
        let r = vals[0].rows();
        if vals.iter().any(|v| v.rank() != 2 || v.rows() != r) {
            return Err(shape_err("concat_cols", "all parts must be [R, *] with equal R"));
        }
        let widths: Vec<usize> = vals.iter().map(|v| v.last_dim()).collect();
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(r * total);
        for row in 0..r {
            for (v, &w) in vals.iter().zip(&widths) {
                data.extend_from_slice(&v.data()[row * w..(row + 1) * w]);
            }
        }
        self.push(
            "concat_cols",
            Tensor::new(vec![r, total], data)?,
            parts,
            Box::new(move |g, need| {
                let mut res = Vec::with_capacity(widths.len());
                let mut off = 0;
                for (i, &w) in widths.iter().enumerate() {
                    res.push(
                        need[i]
                            .then(|| {
                                let mut d = Vec::with_capacity(r * w);
                                for row in g.data().chunks_exact(total) {
                                    d.extend_from_slice(&row[off..off + w]);
                                }
                                Tensor::new(vec![r, w], d)
                            })
                            .transpose()?,
                    );
                    off += w;
                }
                Ok(res)
            }),
        )
    }

    pub fn slice_cols(&self, a: Var, start: usize, len: usize) -> Result<Var> {
        let v = self.val(a)?;
        let (r, c) = crate::tensor::dims2(&v, "slice_cols")?;
        if start + len > c || len == 0 {
            return Err(shape_err("slice_cols", format!("cols {start}..{} of {c}", start + len)));
        }
        let mut data = Vec::with_capacity(r * len);
        for row in v.data().chunks_exact(c) {
            data.extend_from_slice(&row[start..start + len]);
        }
        self.push(
            "slice_cols",
            Tensor::new(vec![r, len], data)?,
            &[a],
            Box::new(move |g, _| {
                let mut d = Tensor::zeros(vec![r, c]);
                for (dst, src) in d.data_mut().chunks_exact_mut(c).zip(g.data().chunks_exact(len)) {
                    dst[start..start + len].copy_from_slice(src);
                }
                Ok(vec![Some(d)])
            }),
        )
    }

    /// Rows of `x: [L, C]` picked by `idx` (repeats allowed); pure data movement.
    pub fn gather_rows(&self, x: Var, idx: Rc<[usize]>) -> Result<Var> {
        let v = self.val(x)?;
        let (r, c) = crate::tensor::dims2(&v, "gather_rows")?;
        if let Some(&bad) = idx.iter().find(|&&i| i >= r) {
            return Err(crate::error::Error::OutOfRange { index: bad, len: r });
        }
        let mut data = Vec::with_capacity(idx.len() * c);
        for &i in idx.iter() {
            data.extend_from_slice(&v.data()[i * c..(i + 1) * c]);
        }
        self.push(
            "gather_rows",
            Tensor::new(vec![idx.len(), c], data)?,
            &[x],
            Box::new(move |g, _| {
                let mut d = Tensor::zeros(vec![r, c]);
                for (k, &i) in idx.iter().enumerate() {
                    let src = &g.data()[k * c..(k + 1) * c];
                    for (a, &b) in d.data_mut()[i * c..(i + 1) * c].iter_mut().zip(src) {
                        *a += b;
                    }
                }
                Ok(vec![Some(d)])
            }),
        )
    }

    /// Copy of `base: [L, C]` with row `idx[k]` replaced by row `k` of `rows`; `idx` must be distinct.
    pub fn scatter_rows(&self, base: Var, rows: Var, idx: Rc<[usize]>) -> Result<Var> {
        let (bv, rv) = (self.val(base)?, self.val(rows)?);
        let (r, c) = crate::tensor::dims2(&bv, "scatter_rows")?;
        if rv.shape() != [idx.len(), c] {
            return Err(shape_err("scatter_rows", format!("rows {:?} for {} indices", rv.shape(), idx.len())));
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= r) {
            return Err(crate::error::Error::OutOfRange { index: bad, len: r });
        }
        let mut out = (*bv).clone();
        for (k, &i) in idx.iter().enumerate() {
            out.data_mut()[i * c..(i + 1) * c].copy_from_slice(&rv.data()[k * c..(k + 1) * c]);
        }
        self.push(
            "scatter_rows",
            out,
            &[base, rows],
            Box::new(move |g, need| {
                let gb = need[0].then(|| {
                    let mut d = g.clone();
                    for &i in idx.iter() {
                        d.data_mut()[i * c..(i + 1) * c].fill(T::zero());
                    }
                    d
                });
                let gr = need[1]
                    .then(|| {
                        let mut d = Vec::with_capacity(idx.len() * c);
                        for &i in idx.iter() {
                            d.extend_from_slice(&g.data()[i * c..(i + 1) * c]);
                        }
                        Tensor::new(vec![idx.len(), c], d)
                    })
                    .transpose()?;
                Ok(vec![gb, gr])
            }),
        )
    }

    /// `[C]` repeated into `[n, C]`.
    pub fn repeat_row(&self, v: Var, n: usize) -> Result<Var> {
        let val = self.val(v)?;
        let c = val.len();
        let mut data = Vec::with_capacity(n * c);
        for _ in 0..n {
            data.extend_from_slice(val.data());
        }
        let shape = val.shape().to_vec();
        self.push(
            "repeat_row",
            Tensor::new(vec![n, c], data)?,
            &[v],
            Box::new(move |g, _| {
                let mut acc = vec![T::zero(); c];
                for row in g.data().chunks_exact(c) {
                    for (a, &b) in acc.iter_mut().zip(row) {
                        *a += b;
                    }
                }
                Ok(vec![Some(Tensor::new(shape.clone(), acc)?)])
            }),
        )
    }

    /// Column means of `[L, C]` → `[C]`.
    pub fn mean_rows(&self, x: Var) -> Result<Var> {
        let v = self.val(x)?;
        let (r, c) = crate::tensor::dims2(&v, "mean_rows")?;
        let inv = T::one() / T::c(r as f64);
        let mut acc = vec![T::zero(); c];
        for row in v.data().chunks_exact(c) {
            for (a, &b) in acc.iter_mut().zip(row) {
                *a += b;
            }
        }
        acc.iter_mut().for_each(|a| *a *= inv);
        self.push(
            "mean_rows",
            Tensor::new(vec![c], acc)?,
            &[x],
            Box::new(move |g, _| {
                let mut d = Vec::with_capacity(r * c);
                for _ in 0..r {
                    d.extend(g.data().iter().map(|&v| v * inv));
                }
                Ok(vec![Some(Tensor::new(vec![r, c], d)?)])
            }),
        )
    }
}

impl<T: Scalar> Graph<T> {
    /// Two affine layers with a GELU between them; no residual.
    pub fn mlp(&self, x: Var, w1: Var, b1: Var, w2: Var, b2: Var) -> Result<Var> {
        let h = self.linear(x, w1, Some(b1))?;
        let h = self.gelu(h)?;
        self.linear(h, w2, Some(b2))
    }
}
