//! Declarative architecture, shape and parameter arithmetic, and the
//! executable network with checkpointing.

mod arch;
mod audit;
mod checkpoint;
mod network;

pub use arch::{
    build_pvfaultnet, shape_propagate, with_batchnorm, with_dropout, ArchitectureConfig, LayerSpec, Shape, NUM_CLASSES,
};
pub use audit::{
    audit_against_published, count_parameters, render_reference_comparison, AuditComparison, AuditRow, ParameterAudit,
    PublishedAudit, PUBLISHED_COUNTS, PUBLISHED_DIMS, PUBLISHED_TOTAL_MILLIONS, REFERENCE_MODELS,
};
pub use checkpoint::{Checkpoint, CheckpointHeader, FORMAT_VERSION, MAGIC};
pub use network::{
    argmax, ForwardCache, ForwardMode, Gradients, Init, Layer, Network, DEFAULT_BN_EPS, DEFAULT_BN_MOMENTUM,
};
