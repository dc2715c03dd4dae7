use super::{states_parallel, states_sequential};
use crate::autodiff::{Graph, Var};
use crate::error::{shape_err, Result};
use crate::tensor::{Scalar, Tensor};

/// Which recurrence kernel produces the forward states.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ScanMode {
    #[default]
    Sequential,
    Parallel,
}

impl<T: Scalar> Graph<T> {
    /// Fused discretise + scan + readout.
    ///
    /// `x, delta: [L, d]`, `a: [d, n]`, `b, c: [L, n]`, `d_skip: [d]` → `y: [L, d]`
    /// with `h_t = exp(delta_t a) h_{t-1} + delta_t b_t x_t` and `y_t = <c_t, h_t> + d_skip x_t`.
    #[allow(clippy::too_many_arguments)]
    pub fn selective_scan(
        &self,
        x: Var,
        delta: Var,
        a: Var,
        b: Var,
        c: Var,
        d_skip: Var,
        mode: ScanMode,
    ) -> Result<Var> {
        let (xv, dv, av, bv, cv, sv) = (
            self.val(x)?,
            self.val(delta)?,
            self.val(a)?,
            self.val(b)?,
            self.val(c)?,
            self.val(d_skip)?,
        );
        let (l, d) = (xv.rows(), xv.last_dim());
        let n = av.last_dim();
        let ok = xv.shape() == [l, d]
            && dv.shape() == [l, d]
            && av.shape() == [d, n]
            && bv.shape() == [l, n]
            && cv.shape() == [l, n]
            && sv.shape() == [d];
        if !ok {
            return Err(shape_err(
                "selective_scan",
                format!(
                    "x {:?} delta {:?} A {:?} B {:?} C {:?} D {:?}",
                    xv.shape(),
                    dv.shape(),
                    av.shape(),
                    bv.shape(),
                    cv.shape(),
                    sv.shape()
                ),
            ));
        }
        if let Some(&bad) = dv.data().iter().find(|&&v| !(v > T::zero())) {
            return Err(crate::error::Error::NonPositiveDelta(bad.to_f64().unwrap_or(f64::NAN)));
        }
        let lanes = d * n;
        let (xs, ds, as_, bs) = (xv.data(), dv.data(), av.data(), bv.data());
        let mut abar = vec![T::zero(); l * lanes];
        let mut h = vec![T::zero(); l * lanes];
        for t in 0..l {
            let brow = &bs[t * n..][..n];
            for ch in 0..d {
                let dt = ds[t * d + ch];
                let u = dt * xs[t * d + ch];
                let base = (t * d + ch) * n;
                let arow = &as_[ch * n..][..n];
                for (o, &a) in abar[base..][..n].iter_mut().zip(arow) {
                    *o = dt * a;
                }
                for (o, &b) in h[base..][..n].iter_mut().zip(brow) {
                    *o = u * b;
                }
            }
        }
        T::exp_in_place(&mut abar);
        let h = match mode {
            ScanMode::Sequential => {
                states_sequential(&abar, &mut h, lanes);
                h
            }
            ScanMode::Parallel => states_parallel(&abar, &h, lanes),
        };
        let mut y = vec![T::zero(); l * d];
        for t in 0..l {
            let ct = &cv.data()[t * n..][..n];
            for ch in 0..d {
                let ht = &h[(t * d + ch) * n..(t * d + ch + 1) * n];
                let dot: T = ht.iter().zip(ct).map(|(&p, &q)| p * q).sum();
                y[t * d + ch] = dot + sv.data()[ch] * xs[t * d + ch];
            }
        }
        self.push(
            "selective_scan",
            Tensor::new(vec![l, d], y)?,
            &[x, delta, a, b, c, d_skip],
            Box::new(move |g, _| {
                let gy = g.data();
                let (xs, ds, as_, bs, cs, ss) = (xv.data(), dv.data(), av.data(), bv.data(), cv.data(), sv.data());
                let mut dx = vec![T::zero(); l * d];
                let mut ddelta = vec![T::zero(); l * d];
                let mut da = vec![T::zero(); d * n];
                let mut db = vec![T::zero(); l * n];
                let mut dc = vec![T::zero(); l * n];
                let mut dskip = vec![T::zero(); d];
                // carry[ch, s] = abar_{t+1} * dh_{t+1}
                let mut carry = vec![T::zero(); lanes];
                let zeros = vec![T::zero(); lanes];
                let mut t_dt = vec![T::zero(); n];
                let mut t_dx = vec![T::zero(); n];
                for t in (0..l).rev() {
                    let ct = &cs[t * n..][..n];
                    let bt = &bs[t * n..][..n];
                    let hprev_all = if t > 0 { &h[(t - 1) * lanes..t * lanes] } else { &zeros[..] };
                    let (dc_row, db_row) = (&mut dc[t * n..][..n], &mut db[t * n..][..n]);
                    for ch in 0..d {
                        let gyv = gy[t * d + ch];
                        let xvv = xs[t * d + ch];
                        let dt = ds[t * d + ch];
                        let dtx = dt * xvv;
                        dskip[ch] += gyv * xvv;
                        let base = (t * d + ch) * n;
                        let ht = &h[base..][..n];
                        let ab = &abar[base..][..n];
                        let hp = &hprev_all[ch * n..][..n];
                        let arow = &as_[ch * n..][..n];
                        let carry_row = &mut carry[ch * n..][..n];
                        let da_row = &mut da[ch * n..][..n];
                        for s in 0..n {
                            let dh = gyv * ct[s] + carry_row[s];
                            let dpre = dh * hp[s] * ab[s];
                            t_dt[s] = dpre * arow[s] + dh * bt[s] * xvv;
                            t_dx[s] = dh * bt[s];
                            da_row[s] += dpre * dt;
                            db_row[s] += dh * dtx;
                            dc_row[s] += gyv * ht[s];
                            carry_row[s] = dh * ab[s];
                        }
                        ddelta[t * d + ch] = t_dt.iter().copied().sum();
                        dx[t * d + ch] = gyv * ss[ch] + dt * t_dx.iter().copied().sum::<T>();
                    }
                }
                Ok(vec![
                    Some(Tensor::new(vec![l, d], dx)?),
                    Some(Tensor::new(vec![l, d], ddelta)?),
                    Some(Tensor::new(vec![d, n], da)?),
                    Some(Tensor::new(vec![l, n], db)?),
                    Some(Tensor::new(vec![l, n], dc)?),
                    Some(Tensor::new(vec![d], dskip)?),
                ])
            }),
        )
    }
}
