//! Multi-phase volumetric classification with selective state-space scans
//! over complementary spatial and temporal token orders.
//!
//! Layers, bottom up:
//! - [`tensor`] / [`autodiff`]: dense tensors and a reverse-mode tape.
//! - [`ssm`]: selective scan (sequential and work-efficient parallel) and the Mamba block.
//! - [`scan_order`]: spatial/temporal token orders, masking and similarity-guided refinement.
//! - [`arch`]: the network (stem + SCI, dual-branch stages, multi-granularity fusion, head).
//! - [`phantom`]: synthetic multi-phase phantoms and the `.mpv` volume format.
//! - [`harness`]: training, cross-validation, metrics, bootstrap, timing, ablation.

pub mod arch;
pub mod autodiff;
pub mod error;
pub mod gradcheck;
pub mod harness;
pub mod par;
pub mod params;
pub mod phantom;
pub mod scan_order;
pub mod seed;
pub mod ssm;
pub mod tensor;

pub use error::{Error, Result};
