//! Reverse-mode autodiff with double backward, two small test models and the
//! Hessian-vector products built on them.

pub mod data;
pub mod graph;
pub mod hvp;
pub mod model;

pub use data::{synthetic_batch, Batch, TargetKind};
pub use graph::{Graph, Var};
pub use hvp::{batched_hvp, graph_hvp, hvp, HessianOperator};
pub use model::{Architecture, LossKind, Model, ModelSpec};
