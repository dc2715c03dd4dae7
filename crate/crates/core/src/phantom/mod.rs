//! Synthetic multi-phase phantoms, the `.mpv` volume format and the dataset layout.
//!
//! A phantom is a smooth random background shared by the three phases plus one
//! ellipsoidal lesion whose brightness follows a per-class enhancement curve
//! across arterial, venous and delayed acquisitions, with independent voxel noise.

mod dataset;
mod generate;
mod process;
mod spec;
mod volume;

pub use dataset::{load_dataset, read_manifest, write_dataset, ManifestEntry, MANIFEST};
pub use generate::{generate, generate_one, lesion_layout, LesionLayout};
pub use process::{augment, augment_flips, flip_axis, preprocess, resample_trilinear, zscore};
pub use spec::{PhantomSpec, Preset};
pub use volume::{read_volume, write_volume, MPV_MAGIC};

use crate::tensor::Tensor;

/// Phase names in acquisition order.
pub const PHASES: [&str; 3] = ["A", "V", "D"];

/// Three co-registered phase volumes `[D, H, W]` with their label.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiPhaseSample {
    /// Arterial, venous, delayed.
    pub volumes: [Tensor<f32>; 3],
    /// 0 = hypo-enhancing (PDAC-like), 1 = hyper-enhancing with washout (PNET-like).
    pub label: u8,
    /// Voxel size in mm along (depth, height, width).
    pub spacing: [f64; 3],
    pub id: String,
    pub seed: u64,
}

impl MultiPhaseSample {
    pub fn shape(&self) -> [usize; 3] {
        let s = self.volumes[0].shape();
        [s[0], s[1], s[2]]
    }

    /// The volumes as a slice, in the order the model expects.
    pub fn phases(&self) -> &[Tensor<f32>] {
        &self.volumes
    }
}

#[cfg(test)]
mod tests;
