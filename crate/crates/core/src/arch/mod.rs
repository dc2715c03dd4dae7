//! The classification network.
//!
//! Per phase: 1×1×1 lift, depthwise large-kernel conv and SCI form the stem (level 1).
//! Four dual-order stages each precede a strided downsample (levels 2–5). Multi-granularity
//! fusion reduces the five levels to one vector for a linear head.
//!
//! All parameters live in a [`ParamStore`](crate::params::ParamStore) under path-like
//! names (`stage2.temporal.mamba.in_proj`, `mgf.ca_deep.wq`, ...).

mod blocks;
mod checkpoint;
mod config;
mod init;
mod mgf;
mod model;

pub use blocks::{dhcm_stage, downsample, residual_branch, sci, stem, PhaseVars, RunMode};
pub use checkpoint::{Checkpoint, MAGIC};
pub use config::{Components, ModelConfig, Variant};
pub use init::init_params;
pub use mgf::{mgf, multi_head_attention, AttentionTrace, AttentionWeights};
pub use model::{forward, forward_graph, grad_cam_map, gradcam, positive_probability, ForwardOutput};

pub(crate) use config::{parse, parse_triple};

#[cfg(test)]
mod tests;
