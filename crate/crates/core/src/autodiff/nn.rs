use super::{Graph, Var};
use crate::error::{shape_err, Result};
use crate::tensor::{conv3d, conv3d_backward, Conv3dSpec, Scalar, Tensor};

/// Layer-norm epsilon; variance uses the biased estimator.
pub const LN_EPS: f64 = 1e-5;

impl<T: Scalar> Graph<T> {
    /// Normalise each row over the last axis, then apply the optional affine.
    pub fn layernorm(&self, x: Var, gamma: Option<Var>, beta: Option<Var>) -> Result<Var> {
        let xv = self.val(x)?;
        let c = xv.last_dim();
        let gv = gamma.map(|v| self.val(v)).transpose()?;
        let bv = beta.map(|v| self.val(v)).transpose()?;
        for t in gv.iter().chain(bv.iter()) {
            if t.shape() != [c] {
                return Err(shape_err("layernorm", format!("affine {:?} vs last dim {c}", t.shape())));
            }
        }
        let rows = xv.rows();
        let eps = T::c(LN_EPS);
        let inv_c = T::one() / T::c(c as f64);
        let mut xhat = vec![T::zero(); xv.len()];
        let mut inv_std = vec![T::zero(); rows];
        for (r, (src, dst)) in xv.data().chunks_exact(c).zip(xhat.chunks_exact_mut(c)).enumerate() {
            let mean = src.iter().copied().sum::<T>() * inv_c;
            let var = src.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_c;
            let is = T::one() / (var + eps).sqrt();
            inv_std[r] = is;
            for (d, &s) in dst.iter_mut().zip(src) {
                *d = (s - mean) * is;
            }
        }
        let mut out = xhat.clone();
        if gv.is_some() || bv.is_some() {
            for row in out.chunks_exact_mut(c) {
                for (j, v) in row.iter_mut().enumerate() {
                    let s = gv.as_ref().map_or(T::one(), |g| g.data()[j]);
                    let o = bv.as_ref().map_or(T::zero(), |b| b.data()[j]);
                    *v = *v * s + o;
                }
            }
        }
        let shape = xv.shape().to_vec();
        let mut parents = vec![x];
        parents.extend(gamma);
        parents.extend(beta);
        let has_gamma = gamma.is_some();
        let has_beta = beta.is_some();
        self.push(
            "layernorm",
            Tensor::new(shape.clone(), out)?,
            &parents,
            Box::new(move |g, need| {
                let gd = g.data();
                let mut res = Vec::with_capacity(need.len());
                let dx = need[0].then(|| {
                    let mut dx = vec![T::zero(); gd.len()];
                    for r in 0..rows {
                        let gr = &gd[r * c..(r + 1) * c];
                        let xr = &xhat[r * c..(r + 1) * c];
                        let mut m1 = T::zero();
                        let mut m2 = T::zero();
                        for j in 0..c {
                            let dxh = gr[j] * gv.as_ref().map_or(T::one(), |g| g.data()[j]);
                            m1 += dxh;
                            m2 += dxh * xr[j];
                        }
                        m1 *= inv_c;
                        m2 *= inv_c;
                        for j in 0..c {
                            let dxh = gr[j] * gv.as_ref().map_or(T::one(), |g| g.data()[j]);
                            dx[r * c + j] = inv_std[r] * (dxh - m1 - xr[j] * m2);
                        }
                    }
                    Tensor::new(shape.clone(), dx)
                });
                res.push(dx.transpose()?);
                if has_gamma {
                    let mut dg = vec![T::zero(); c];
                    for (gr, xr) in gd.chunks_exact(c).zip(xhat.chunks_exact(c)) {
                        for j in 0..c {
                            dg[j] += gr[j] * xr[j];
                        }
                    }
                    res.push(Some(Tensor::new(vec![c], dg)?));
                }
                if has_beta {
                    let mut db = vec![T::zero(); c];
                    for gr in gd.chunks_exact(c) {
                        for j in 0..c {
                            db[j] += gr[j];
                        }
                    }
                    res.push(Some(Tensor::new(vec![c], db)?));
                }
                Ok(res)
            }),
        )
    }

    /// Softmax over the last axis.
    pub fn softmax(&self, x: Var) -> Result<Var> {
        let xv = self.val(x)?;
        let y = softmax_rows(&xv);
        let saved = y.clone();
        let c = xv.last_dim();
        self.push(
            "softmax",
            y,
            &[x],
            Box::new(move |g, _| {
                let mut d = g.clone();
                for (dr, yr) in d.data_mut().chunks_exact_mut(c).zip(saved.data().chunks_exact(c)) {
                    let dot: T = dr.iter().zip(yr).map(|(&a, &b)| a * b).sum();
                    for (dv, &yv) in dr.iter_mut().zip(yr) {
                        *dv = yv * (*dv - dot);
                    }
                }
                Ok(vec![Some(d)])
            }),
        )
    }

    pub fn conv3d(&self, x: Var, w: Var, spec: Conv3dSpec) -> Result<Var> {
        let (xv, wv) = (self.val(x)?, self.val(w)?);
        let y = conv3d(&xv, &wv, &spec)?;
        self.push(
            "conv3d",
            y,
            &[x, w],
            Box::new(move |g, need| {
                let (dx, dw) = conv3d_backward(&xv, &wv, &spec, g, need[0], need[1])?;
                Ok(vec![dx, dw])
            }),
        )
    }

    /// `x: [C, ...] + b: [C]`.
    pub fn channel_bias(&self, x: Var, b: Var) -> Result<Var> {
        self.channel_affine(x, None, Some(b))
    }

    /// Non-overlapping average pooling of `[C, D, H, W]` by per-axis integer factors.
    pub fn avg_pool3d(&self, x: Var, factor: [usize; 3]) -> Result<Var> {
        let xv = self.val(x)?;
        let [c, d, h, w] = match xv.shape() {
            [c, d, h, w] => [*c, *d, *h, *w],
            s => return Err(shape_err("avg_pool3d", format!("expected [C,D,H,W], got {s:?}"))),
        };
        if factor.contains(&0) || d % factor[0] != 0 || h % factor[1] != 0 || w % factor[2] != 0 {
            return Err(shape_err("avg_pool3d", format!("{:?} not divisible by {factor:?}", xv.shape())));
        }
        if factor == [1, 1, 1] {
            return Ok(x);
        }
        let (od, oh, ow) = (d / factor[0], h / factor[1], w / factor[2]);
        let inv = T::one() / T::c(factor.iter().product::<usize>() as f64);
        let idx = move |ch: usize, z: usize, y: usize, xx: usize| ((ch * od + z / factor[0]) * oh + y / factor[1]) * ow + xx / factor[2];
        let mut out = vec![T::zero(); c * od * oh * ow];
        for ch in 0..c {
            for z in 0..d {
                for y in 0..h {
                    for xx in 0..w {
                        out[idx(ch, z, y, xx)] += xv.data()[((ch * d + z) * h + y) * w + xx] * inv;
                    }
                }
            }
        }
        self.push(
            "avg_pool3d",
            Tensor::new(vec![c, od, oh, ow], out)?,
            &[x],
            Box::new(move |g, _| {
                let mut dx = vec![T::zero(); c * d * h * w];
                for ch in 0..c {
                    for z in 0..d {
                        for y in 0..h {
                            for xx in 0..w {
                                dx[((ch * d + z) * h + y) * w + xx] = g.data()[idx(ch, z, y, xx)] * inv;
                            }
                        }
                    }
                }
                Ok(vec![Some(Tensor::new(vec![c, d, h, w], dx)?)])
            }),
        )
    }

    /// Weighted cross-entropy of one logit vector against class `target`: `-weight * log softmax(z)[target]`.
    pub fn cross_entropy(&self, logits: Var, target: usize, weight: T) -> Result<Var> {
        let z = self.val(logits)?;
        if z.rank() != 1 || target >= z.len() {
            return Err(shape_err("cross_entropy", format!("logits {:?}, target {target}", z.shape())));
        }
        let p = softmax_rows(&z);
        let loss = -weight * p.data()[target].ln();
        self.push(
            "cross_entropy",
            Tensor::scalar(loss),
            &[logits],
            Box::new(move |g, _| {
                let s = g.data()[0] * weight;
                let d = Tensor::from_fn(p.shape().to_vec(), |i| {
                    let onehot = if i == target { T::one() } else { T::zero() };
                    s * (p.data()[i] - onehot)
                });
                Ok(vec![Some(d)])
            }),
        )
    }

    /// Causal depthwise 1-D convolution along rows: `y[t,c] = b[c] + Σ_j w[c,j] x[t-k+1+j, c]`.
    pub fn causal_conv1d(&self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xv, wv, bv) = (self.val(x)?, self.val(w)?, self.val(b)?);
        let (l, c) = crate::tensor::dims2(&xv, "causal_conv1d")?;
        let (wc, k) = crate::tensor::dims2(&wv, "causal_conv1d")?;
        if wc != c || bv.shape() != [c] {
            return Err(shape_err("causal_conv1d", format!("x {:?} w {:?} b {:?}", xv.shape(), wv.shape(), bv.shape())));
        }
        let mut out = vec![T::zero(); l * c];
        for t in 0..l {
            let row = &mut out[t * c..(t + 1) * c];
            row.copy_from_slice(bv.data());
            for j in 0..k {
                let Some(src_t) = (t + j + 1).checked_sub(k) else { continue };
                let src = &xv.data()[src_t * c..(src_t + 1) * c];
                for ch in 0..c {
                    row[ch] += wv.data()[ch * k + j] * src[ch];
                }
            }
        }
        self.push(
            "causal_conv1d",
            Tensor::new(vec![l, c], out)?,
            &[x, w, b],
            Box::new(move |g, need| {
                let gd = g.data();
                let mut dx = vec![T::zero(); if need[0] { l * c } else { 0 }];
                let mut dw = vec![T::zero(); c * k];
                let mut db = vec![T::zero(); c];
                for t in 0..l {
                    let gr = &gd[t * c..(t + 1) * c];
                    for ch in 0..c {
                        db[ch] += gr[ch];
                    }
                    for j in 0..k {
                        let Some(src_t) = (t + j + 1).checked_sub(k) else { continue };
                        for ch in 0..c {
                            dw[ch * k + j] += gr[ch] * xv.data()[src_t * c + ch];
                            if need[0] {
                                dx[src_t * c + ch] += gr[ch] * wv.data()[ch * k + j];
                            }
                        }
                    }
                }
                Ok(vec![
                    need[0].then(|| Tensor::new(vec![l, c], dx)).transpose()?,
                    Some(Tensor::new(vec![c, k], dw)?),
                    Some(Tensor::new(vec![c], db)?),
                ])
            }),
        )
    }
}

/// Row-wise softmax over the last axis (max-shifted).
pub fn softmax_rows<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let c = x.last_dim();
    let mut out = x.clone();
    for row in out.data_mut().chunks_exact_mut(c) {
        let m = row.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
        let mut s = T::zero();
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            s += *v;
        }
        for v in row.iter_mut() {
            *v /= s;
        }
    }
    out
}
