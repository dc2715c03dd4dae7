//! Token scan orders over multi-phase feature volumes.
//!
//! Each phase's `[C, D, H, W]` features flatten to `N = D·H·W` tokens in
//! row-major voxel order. Stacking the phases gives a phase-major `[P·N, C]`
//! layout; a [`ScanOrder`] is the permutation that reads that stack in the
//! sequence a scan should visit it.

mod mask;
mod simr;

use std::fmt::Write as _;
use std::rc::Rc;

pub use mask::{apply_mask, apply_mask_var, MaskPlan};
pub use simr::{simr_refine, simr_scores, SimilarityReport};

use crate::autodiff::{Graph, Var};
use crate::error::{shape_err, Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Contrast phases in acquisition order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Phase {
    Arterial,
    Venous,
    Delayed,
}

impl Phase {
    pub const ALL: [Phase; 3] = [Phase::Arterial, Phase::Venous, Phase::Delayed];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn letter(self) -> char {
        ['A', 'V', 'D'][self.index()]
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }
}

/// Bijection between sequence position and `(phase, voxel)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ScanOrder {
    phases: usize,
    voxels: usize,
    entries: Vec<(usize, usize)>,
    positions: Vec<usize>,
}

impl ScanOrder {
    /// Phase by phase: every voxel of the first phase, then the next phase.
    pub fn spatial(phases: usize, voxels: usize) -> Self {
        let entries = (0..phases).flat_map(|p| (0..voxels).map(move |i| (p, i))).collect();
        Self::from_entries(phases, voxels, entries).expect("spatial order is a bijection")
    }

    /// Voxel by voxel: the same location across all phases, then the next location.
    pub fn temporal(phases: usize, voxels: usize) -> Self {
        let entries = (0..voxels).flat_map(|i| (0..phases).map(move |p| (p, i))).collect();
        Self::from_entries(phases, voxels, entries).expect("temporal order is a bijection")
    }

    /// Validates that `entries` covers `[0,P) x [0,N)` exactly once.
    pub fn from_entries(phases: usize, voxels: usize, entries: Vec<(usize, usize)>) -> Result<Self> {
        let total = phases * voxels;
        if entries.len() != total {
            return Err(Error::OrderMismatch(format!("{} entries for {phases}x{voxels}", entries.len())));
        }
        let mut positions = vec![usize::MAX; total];
        for (k, &(p, i)) in entries.iter().enumerate() {
            if p >= phases || i >= voxels {
                return Err(Error::OrderMismatch(format!("entry ({p},{i}) out of range")));
            }
            let slot = &mut positions[p * voxels + i];
            if *slot != usize::MAX {
                return Err(Error::OrderMismatch(format!("duplicate entry ({p},{i})")));
            }
            *slot = k;
        }
        Ok(Self {
            phases,
            voxels,
            entries,
            positions,
        })
    }

    pub fn phases(&self) -> usize {
        self.phases
    }

    pub fn voxels(&self) -> usize {
        self.voxels
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[(usize, usize)] {
        &self.entries
    }

    pub fn entry(&self, pos: usize) -> (usize, usize) {
        self.entries[pos]
    }

    /// Sequence position of `(phase, voxel)`.
    pub fn position_of(&self, phase: usize, voxel: usize) -> usize {
        self.positions[phase * self.voxels + voxel]
    }

    /// Row of the phase-major stack read at each sequence position.
    pub fn gather_index(&self) -> Vec<usize> {
        self.entries.iter().map(|&(p, i)| p * self.voxels + i).collect()
    }

    /// Sequence position holding each row of the phase-major stack.
    pub fn scatter_index(&self) -> Vec<usize> {
        self.positions.clone()
    }

    /// `idx phase voxel` per line, phases as letters when `P <= 3`.
    pub fn debug_dump(&self) -> String {
        let mut out = String::new();
        for (k, &(p, i)) in self.entries.iter().enumerate() {
            match Phase::from_index(p).filter(|_| self.phases <= 3) {
                Some(ph) => writeln!(out, "{k} {} {i}", ph.letter()),
                None => writeln!(out, "{k} {p} {i}"),
            }
            .expect("write to string");
        }
        out
    }

    fn check_stack(&self, rows: usize, op: &'static str) -> Result<()> {
        if rows != self.len() {
            return Err(Error::OrderMismatch(format!(
                "{op}: {rows} rows for a {}x{} order",
                self.phases, self.voxels
            )));
        }
        Ok(())
    }
}

/// `[C, D, H, W]` → `[N, C]`, one token per voxel in (depth, height, width) row-major order.
pub fn flatten_phase<T: Scalar>(f: &Tensor<T>) -> Result<Tensor<T>> {
    if f.rank() != 4 {
        return Err(shape_err("flatten_phase", format!("expected [C,D,H,W], got {:?}", f.shape())));
    }
    let c = f.shape()[0];
    let n = f.len() / c;
    Tensor::new(vec![c, n], f.data().to_vec())?.transpose()
}

/// Exact inverse of [`flatten_phase`].
pub fn restore_phase<T: Scalar>(tokens: &Tensor<T>, dims: [usize; 3]) -> Result<Tensor<T>> {
    let n: usize = dims.iter().product();
    if tokens.rank() != 2 || tokens.shape()[0] != n {
        return Err(shape_err("restore_phase", format!("{:?} for dims {dims:?}", tokens.shape())));
    }
    let c = tokens.shape()[1];
    tokens.transpose()?.reshape(vec![c, dims[0], dims[1], dims[2]])
}

/// `[P, N, C]` → `[P·N, C]` read in scan order. Pure data movement.
pub fn gather<T: Scalar>(tokens_per_phase: &Tensor<T>, order: &ScanOrder) -> Result<Tensor<T>> {
    let (rows, c) = stack_dims(tokens_per_phase, order, "gather")?;
    let mut out = Vec::with_capacity(rows * c);
    for r in order.gather_index() {
        out.extend_from_slice(&tokens_per_phase.data()[r * c..(r + 1) * c]);
    }
    Tensor::new(vec![rows, c], out)
}

/// Inverse of [`gather`]: `[P·N, C]` in scan order → `[P, N, C]`.
pub fn scatter<T: Scalar>(seq: &Tensor<T>, order: &ScanOrder) -> Result<Tensor<T>> {
    if seq.rank() != 2 {
        return Err(shape_err("scatter", format!("expected [L,C], got {:?}", seq.shape())));
    }
    order.check_stack(seq.shape()[0], "scatter")?;
    let c = seq.shape()[1];
    let mut out = Vec::with_capacity(seq.len());
    for pos in order.scatter_index() {
        out.extend_from_slice(&seq.data()[pos * c..(pos + 1) * c]);
    }
    Tensor::new(vec![order.phases, order.voxels, c], out)
}

fn stack_dims<T: Scalar>(t: &Tensor<T>, order: &ScanOrder, op: &'static str) -> Result<(usize, usize)> {
    match t.shape() {
        [p, n, c] if *p == order.phases && *n == order.voxels => Ok((p * n, *c)),
        s => Err(Error::OrderMismatch(format!(
            "{op}: stack {s:?} vs order {}x{}",
            order.phases, order.voxels
        ))),
    }
}

/// Graph form of [`gather`] on a phase-major `[P·N, C]` stack.
pub fn gather_var<T: Scalar>(g: &Graph<T>, stack: Var, order: &ScanOrder) -> Result<Var> {
    order.check_stack(g.shape(stack)[0], "gather")?;
    g.gather_rows(stack, Rc::from(order.gather_index()))
}

/// Graph form of [`scatter`], returning the phase-major `[P·N, C]` stack.
pub fn scatter_var<T: Scalar>(g: &Graph<T>, seq: Var, order: &ScanOrder) -> Result<Var> {
    order.check_stack(g.shape(seq)[0], "scatter")?;
    g.gather_rows(seq, Rc::from(order.scatter_index()))
}

#[cfg(test)]
mod tests;
