//! Stochastic Lanczos quadrature for large symmetric operators that are only
//! available through matrix-vector products.
//!
//! The pipeline is: draw a probe ([`sharded`]), run Lanczos against an
//! operator ([`lanczos`], [`operators`], [`autodiff`]) on some execution engine
//! ([`runtime`]), turn the tridiagonal into Ritz values and weights
//! ([`quadrature`]) and annotate the result ([`diagnostics`]). Column probes
//! ([`column_probe`]) measure how sparse individual operator columns are.
//!
//! Vectors can be `f32` or `f64`; every reduction is accumulated exactly and
//! rounded once, so results do not depend on how vectors are sharded.

pub mod autodiff;
pub mod column_probe;
pub mod diagnostics;
pub mod element;
pub mod error;
pub mod exact;
pub mod lanczos;
pub mod operators;
pub mod quadrature;
pub mod runtime;
pub mod sharded;

pub use element::{Element, Precision};
pub use error::{Error, Result};
pub use lanczos::{lanczos_local, lanczos_run, LanczosConfig, LanczosRun, Reorthogonalization, TridiagonalMatrix};
pub use operators::{DenseSymmetric, OperatorHandle, SymmetricOperator};
pub use quadrature::{ritz_decompose, RitzSpectrum};
pub use runtime::{LocalEngine, VectorEngine, WorkerPool};
pub use sharded::{ProbeDistribution, ProbeSpec, ShardLayout, ShardedVector};
