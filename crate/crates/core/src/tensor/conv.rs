use super::{gemm, Scalar, Tensor};
use crate::error::{shape_err, Error, Result};

/// Geometry of a 3-D convolution; per-axis kernel, stride and zero padding in (depth, height, width) order.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv3dSpec {
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub padding: [usize; 3],
    pub groups: usize,
}

impl Conv3dSpec {
    /// Cubic kernel `k`, uniform stride and padding.
    pub fn cubic(k: usize, stride: usize, padding: usize, groups: usize) -> Self {
        Self {
            kernel: [k; 3],
            stride: [stride; 3],
            padding: [padding; 3],
            groups,
        }
    }

    /// `k` odd, stride 1, padding `k / 2`: output extent equals input extent.
    pub fn same(k: usize, groups: usize) -> Self {
        Self::cubic(k, 1, k / 2, groups)
    }

    pub fn out_dims(&self, dims: [usize; 3]) -> Result<[usize; 3]> {
        let mut out = [0; 3];
        for a in 0..3 {
            let padded = dims[a] + 2 * self.padding[a];
            if self.stride[a] == 0 || self.kernel[a] == 0 || padded < self.kernel[a] {
                return Err(shape_err(
                    "conv3d",
                    format!("axis {a}: extent {} kernel {} padding {}", dims[a], self.kernel[a], self.padding[a]),
                ));
            }
            out[a] = (padded - self.kernel[a]) / self.stride[a] + 1;
        }
        Ok(out)
    }

    fn taps(&self) -> usize {
        self.kernel.iter().product()
    }
}

struct Geometry {
    cin: usize,
    cout: usize,
    cin_g: usize,
    cout_g: usize,
    inp: [usize; 3],
    out: [usize; 3],
}

fn geometry<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, spec: &Conv3dSpec) -> Result<Geometry> {
    let [cin, d, h, wd] = match x.shape() {
        [c, d, h, w] => [*c, *d, *h, *w],
        s => return Err(shape_err("conv3d", format!("input must be [C,D,H,W], got {s:?}"))),
    };
    let (cout, cin_g, k) = match w.shape() {
        [o, i, kd, kh, kw] => (*o, *i, [*kd, *kh, *kw]),
        s => return Err(shape_err("conv3d", format!("weight must be rank 5, got {s:?}"))),
    };
    if spec.groups == 0 || cin % spec.groups != 0 || cout % spec.groups != 0 {
        return Err(Error::BadGroups {
            channels_in: cin,
            channels_out: cout,
            groups: spec.groups,
        });
    }
    if cin_g != cin / spec.groups || k != spec.kernel {
        return Err(shape_err(
            "conv3d",
            format!("weight {:?} incompatible with {cin} inputs, groups {}, kernel {:?}", w.shape(), spec.groups, spec.kernel),
        ));
    }
    let out = spec.out_dims([d, h, wd])?;
    Ok(Geometry {
        cin,
        cout,
        cin_g,
        cout_g: cout / spec.groups,
        inp: [d, h, wd],
        out,
    })
}

/// Valid output index range `[lo, hi)` along one axis for kernel tap `k`.
#[inline]
fn valid_range(tap: usize, pad: usize, stride: usize, in_len: usize, out_len: usize) -> (usize, usize) {
    // input index = o * stride + tap - pad must lie in [0, in_len)
    let lo = if pad > tap { (pad - tap).div_ceil(stride) } else { 0 };
    let hi = if in_len + pad > tap {
        ((in_len + pad - tap - 1) / stride + 1).min(out_len)
    } else {
        0
    };
    (lo, hi.max(lo))
}

/// Cross-correlation with zero padding. `x: [C_in,D,H,W]`, `w: [C_out, C_in/groups, kd, kh, kw]`.
pub fn conv3d<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, spec: &Conv3dSpec) -> Result<Tensor<T>> {
    let g = geometry(x, w, spec)?;
    let n_out: usize = g.out.iter().product();
    let mut out = vec![T::zero(); g.cout * n_out];
    if is_depthwise(&g, spec) {
        depthwise_forward(x.data(), w.data(), &mut out, &g, spec);
    } else {
        let taps = spec.taps();
        let rows = g.cin_g * taps;
        let mut col = Vec::new();
        for grp in 0..spec.groups {
            let xg = &x.data()[grp * g.cin_g * g.inp.iter().product::<usize>()..];
            let col_ref = im2col_group(xg, &g, spec, &mut col);
            let wg = &w.data()[grp * g.cout_g * rows..(grp + 1) * g.cout_g * rows];
            let og = &mut out[grp * g.cout_g * n_out..(grp + 1) * g.cout_g * n_out];
            gemm(false, false, g.cout_g, rows, n_out, wg, col_ref.unwrap_or(&col), og, false);
        }
    }
    Tensor::new(vec![g.cout, g.out[0], g.out[1], g.out[2]], out)?.check_finite("conv3d")
}

/// Gradients of [`conv3d`] w.r.t. input and weight given the output gradient.
pub fn conv3d_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    spec: &Conv3dSpec,
    grad_out: &Tensor<T>,
    need_x: bool,
    need_w: bool,
) -> Result<(Option<Tensor<T>>, Option<Tensor<T>>)> {
    let g = geometry(x, w, spec)?;
    let n_in: usize = g.inp.iter().product();
    let n_out: usize = g.out.iter().product();
    let mut dx = need_x.then(|| vec![T::zero(); g.cin * n_in]);
    let mut dw = need_w.then(|| vec![T::zero(); w.len()]);
    let go = grad_out.data();
    if is_depthwise(&g, spec) {
        depthwise_backward(x.data(), w.data(), go, dx.as_deref_mut(), dw.as_deref_mut(), &g, spec);
    } else {
        let taps = spec.taps();
        let rows = g.cin_g * taps;
        let mut col = Vec::new();
        let mut dcol = vec![T::zero(); if need_x { rows * n_out } else { 0 }];
        for grp in 0..spec.groups {
            let gg = &go[grp * g.cout_g * n_out..(grp + 1) * g.cout_g * n_out];
            if let Some(dw) = dw.as_deref_mut() {
                let xg = &x.data()[grp * g.cin_g * n_in..];
                let col_ref = im2col_group(xg, &g, spec, &mut col);
                let dwg = &mut dw[grp * g.cout_g * rows..(grp + 1) * g.cout_g * rows];
                gemm(false, true, g.cout_g, n_out, rows, gg, col_ref.unwrap_or(&col), dwg, false);
            }
            if let Some(dx) = dx.as_deref_mut() {
                let wg = &w.data()[grp * g.cout_g * rows..(grp + 1) * g.cout_g * rows];
                let dxg = &mut dx[grp * g.cin_g * n_in..(grp + 1) * g.cin_g * n_in];
                if is_pointwise(spec) {
                    gemm(true, false, rows, g.cout_g, n_out, wg, gg, dxg, false);
                } else {
                    gemm(true, false, rows, g.cout_g, n_out, wg, gg, &mut dcol, false);
                    col2im_group(&dcol, &g, spec, dxg);
                }
            }
        }
    }
    let dx = dx.map(|d| Tensor::new(x.shape().to_vec(), d)).transpose()?;
    let dw = dw.map(|d| Tensor::new(w.shape().to_vec(), d)).transpose()?;
    Ok((dx, dw))
}

fn is_depthwise(g: &Geometry, spec: &Conv3dSpec) -> bool {
    spec.groups > 1 && g.cin_g == 1 && g.cout_g == 1
}

fn is_pointwise(spec: &Conv3dSpec) -> bool {
    spec.kernel == [1; 3] && spec.stride == [1; 3] && spec.padding == [0; 3]
}

/// Fills `col` with the `[cin_g * taps, n_out]` patch matrix; returns the input
/// itself when the convolution is pointwise.
fn im2col_group<'a, T: Scalar>(
    xg: &'a [T],
    g: &Geometry,
    spec: &Conv3dSpec,
    col: &mut Vec<T>,
) -> Option<&'a [T]> {
    let n_in: usize = g.inp.iter().product();
    if is_pointwise(spec) {
        return Some(&xg[..g.cin_g * n_in]);
    }
    let n_out: usize = g.out.iter().product();
    let taps = spec.taps();
    col.clear();
    col.resize(g.cin_g * taps * n_out, T::zero());
    let [kd, kh, kw] = spec.kernel;
    let [sd, sh, sw] = spec.stride;
    let [pd, ph, pw] = spec.padding;
    let [d, h, w] = g.inp;
    let [od, oh, ow] = g.out;
    for ci in 0..g.cin_g {
        let xc = &xg[ci * n_in..(ci + 1) * n_in];
        for a in 0..kd {
            let (d0, d1) = valid_range(a, pd, sd, d, od);
            for b in 0..kh {
                let (h0, h1) = valid_range(b, ph, sh, h, oh);
                for c in 0..kw {
                    let (w0, w1) = valid_range(c, pw, sw, w, ow);
                    let row = ((ci * kd + a) * kh + b) * kw + c;
                    let dst = &mut col[row * n_out..(row + 1) * n_out];
                    for z in d0..d1 {
                        let iz = z * sd + a - pd;
                        for y in h0..h1 {
                            let iy = y * sh + b - ph;
                            let src = &xc[(iz * h + iy) * w..(iz * h + iy + 1) * w];
                            let out_row = &mut dst[(z * oh + y) * ow..(z * oh + y + 1) * ow];
                            if sw == 1 {
                                let off = w0 + c - pw;
                                out_row[w0..w1].copy_from_slice(&src[off..off + (w1 - w0)]);
                            } else {
                                for x in w0..w1 {
                                    out_row[x] = src[x * sw + c - pw];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    None
}

fn col2im_group<T: Scalar>(dcol: &[T], g: &Geometry, spec: &Conv3dSpec, dxg: &mut [T]) {
    let n_in: usize = g.inp.iter().product();
    let n_out: usize = g.out.iter().product();
    let [kd, kh, kw] = spec.kernel;
    let [sd, sh, sw] = spec.stride;
    let [pd, ph, pw] = spec.padding;
    let [d, h, w] = g.inp;
    let [od, oh, ow] = g.out;
    for ci in 0..g.cin_g {
        let xc = &mut dxg[ci * n_in..(ci + 1) * n_in];
        for a in 0..kd {
            let (d0, d1) = valid_range(a, pd, sd, d, od);
            for b in 0..kh {
                let (h0, h1) = valid_range(b, ph, sh, h, oh);
                for c in 0..kw {
                    let (w0, w1) = valid_range(c, pw, sw, w, ow);
                    let row = ((ci * kd + a) * kh + b) * kw + c;
                    let src = &dcol[row * n_out..(row + 1) * n_out];
                    for z in d0..d1 {
                        let iz = z * sd + a - pd;
                        for y in h0..h1 {
                            let iy = y * sh + b - ph;
                            let base = (iz * h + iy) * w;
                            let srow = &src[(z * oh + y) * ow..(z * oh + y + 1) * ow];
                            for x in w0..w1 {
                                xc[base + x * sw + c - pw] += srow[x];
                            }
                        }
                    }
                }
            }
        }
    }
}

fn depthwise_forward<T: Scalar>(x: &[T], w: &[T], out: &mut [T], g: &Geometry, spec: &Conv3dSpec) {
    let n_in: usize = g.inp.iter().product();
    let n_out: usize = g.out.iter().product();
    let taps = spec.taps();
    crate::par::for_each_chunk_mut(out, n_out, |ch, oc| {
        depthwise_channel(
            &x[ch * n_in..(ch + 1) * n_in],
            &w[ch * taps..(ch + 1) * taps],
            oc,
            g,
            spec,
        )
    });
}

fn depthwise_channel<T: Scalar>(xc: &[T], wc: &[T], oc: &mut [T], g: &Geometry, spec: &Conv3dSpec) {
    let [kd, kh, kw] = spec.kernel;
    let [sd, sh, sw] = spec.stride;
    let [pd, ph, pw] = spec.padding;
    let [d, h, w] = g.inp;
    let [od, oh, ow] = g.out;
    for a in 0..kd {
        let (d0, d1) = valid_range(a, pd, sd, d, od);
        for b in 0..kh {
            let (h0, h1) = valid_range(b, ph, sh, h, oh);
            for c in 0..kw {
                let (w0, w1) = valid_range(c, pw, sw, w, ow);
                let wt = wc[(a * kh + b) * kw + c];
                for z in d0..d1 {
                    let iz = z * sd + a - pd;
                    for y in h0..h1 {
                        let iy = y * sh + b - ph;
                        let src = &xc[(iz * h + iy) * w..(iz * h + iy + 1) * w];
                        let dst = &mut oc[(z * oh + y) * ow..(z * oh + y + 1) * ow];
                        if sw == 1 {
                            let off = w0 + c - pw;
                            for (o, &v) in dst[w0..w1].iter_mut().zip(&src[off..off + (w1 - w0)]) {
                                *o += wt * v;
                            }
                        } else {
                            for x in w0..w1 {
                                dst[x] += wt * src[x * sw + c - pw];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Dot product over eight independent partial sums, so the loop vectorises.
fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut lanes = [T::zero(); 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let tail: T = ca.remainder().iter().zip(cb.remainder()).fold(T::zero(), |s, (&x, &y)| s + x * y);
    for (x, y) in ca.zip(cb) {
        for l in 0..8 {
            lanes[l] += x[l] * y[l];
        }
    }
    lanes.iter().fold(tail, |s, &v| s + v)
}

fn depthwise_backward<T: Scalar>(
    x: &[T],
    w: &[T],
    go: &[T],
    mut dx: Option<&mut [T]>,
    mut dw: Option<&mut [T]>,
    g: &Geometry,
    spec: &Conv3dSpec,
) {
    let n_in: usize = g.inp.iter().product();
    let n_out: usize = g.out.iter().product();
    let taps = spec.taps();
    let [kd, kh, kw] = spec.kernel;
    let [sd, sh, sw] = spec.stride;
    let [pd, ph, pw] = spec.padding;
    let [d, h, wd] = g.inp;
    let [od, oh, ow] = g.out;
    for ch in 0..g.cin {
        let xc = &x[ch * n_in..(ch + 1) * n_in];
        let gc = &go[ch * n_out..(ch + 1) * n_out];
        for a in 0..kd {
            let (d0, d1) = valid_range(a, pd, sd, d, od);
            for b in 0..kh {
                let (h0, h1) = valid_range(b, ph, sh, h, oh);
                for c in 0..kw {
                    let (w0, w1) = valid_range(c, pw, sw, wd, ow);
                    let tap = (a * kh + b) * kw + c;
                    let wt = w[ch * taps + tap];
                    let mut acc = T::zero();
                    for z in d0..d1 {
                        let iz = z * sd + a - pd;
                        for y in h0..h1 {
                            let iy = y * sh + b - ph;
                            let base = (iz * h + iy) * wd;
                            let grow = &gc[(z * oh + y) * ow..(z * oh + y + 1) * ow];
                            if sw == 1 {
                                let (off, gs) = (base + w0 + c - pw, &grow[w0..w1]);
                                if let Some(dx) = dx.as_deref_mut() {
                                    for (d, &gv) in dx[ch * n_in + off..].iter_mut().zip(gs) {
                                        *d += wt * gv;
                                    }
                                }
                                if dw.is_some() {
                                    acc += dot(gs, &xc[off..off + gs.len()]);
                                }
                                continue;
                            }
                            if let Some(dx) = dx.as_deref_mut() {
                                let dxc = &mut dx[ch * n_in..(ch + 1) * n_in];
                                for x in w0..w1 {
                                    dxc[base + x * sw + c - pw] += wt * grow[x];
                                }
                            }
                            if dw.is_some() {
                                for x in w0..w1 {
                                    acc += grow[x] * xc[base + x * sw + c - pw];
                                }
                            }
                        }
                    }
                    if let Some(dw) = dw.as_deref_mut() {
                        dw[ch * taps + tap] += acc;
                    }
                }
            }
        }
    }
}
