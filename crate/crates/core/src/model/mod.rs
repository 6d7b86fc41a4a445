//! The network: configuration, graph construction, parameters, weight files
//! and execution.

mod blocks;
mod build;
mod config;
mod exec;
mod graph;
mod params;
pub mod weights;

pub use blocks::{
    attention_forward, bdc_forward, cls_head_forward, fmm_forward, full_forward, logits_to_mask, palette,
    seg_head_forward, tpem_forward, trans_bdc_block_forward, trans_bdc_forward, FeaturePyramid, Mask, Model,
};
pub use build::build_model;
pub use config::{HeadKind, InvertedResidualSpec, ModelConfig, StemSpec, TransBdcConfig, CONFIG_SCHEMA, PRESETS};
pub use exec::{backward, calibrate_batchnorm, evaluate, evaluate_frozen, forward, trace, Trace};
pub use graph::{Act, Graph, GraphBuilder, ModuleTag, Node, NodeId, Op};
pub use params::{Init, ParamEntry, ParamStore};

#[cfg(test)]
mod tests;
