//! Lanczos tridiagonalization from a random probe.
//!
//! Runs the three-term recurrence over a [`VectorEngine`], keeping only the
//! previous and current basis vectors by default. With
//! [`Reorthogonalization::Full`] every new residual is projected out of all
//! stored basis vectors (two classical Gram-Schmidt passes), which removes the
//! spurious duplicate Ritz values that appear once orthogonality is lost.

use std::time::Instant;

use crate::element::{Element, Precision};
use crate::error::{Error, Result};
use crate::operators::OperatorHandle;
use crate::runtime::{LocalEngine, VectorEngine};
use crate::sharded::{draw_probe, ProbeSpec, ShardLayout, ShardedVector};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Reorthogonalization {
    #[default]
    None,
    Full,
}

impl std::str::FromStr for Reorthogonalization {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "none" => Ok(Self::None),
            "full" => Ok(Self::Full),
            other => Err(format!("unknown reorthogonalization `{other}` (expected none or full)")),
        }
    }
}

impl std::fmt::Display for Reorthogonalization {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::None => "none",
            Self::Full => "full",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LanczosConfig {
    pub k_max: usize,
    /// Residual norm below which the run stops; `None` picks a default for the precision.
    pub breakdown_tol: Option<f64>,
    pub reorthogonalize: Reorthogonalization,
    pub probe: ProbeSpec,
    /// Keep every basis vector. Implied by full reorthogonalization.
    pub store_basis: bool,
}

impl Default for LanczosConfig {
    fn default() -> Self {
        Self {
            k_max: 10,
            breakdown_tol: None,
            reorthogonalize: Reorthogonalization::None,
            probe: ProbeSpec::default(),
            store_basis: false,
        }
    }
}

impl LanczosConfig {
    pub fn full(k_max: usize, probe: ProbeSpec) -> Self {
        Self {
            k_max,
            reorthogonalize: Reorthogonalization::Full,
            probe,
            store_basis: true,
            ..Self::default()
        }
    }

    pub fn plain(k_max: usize, probe: ProbeSpec) -> Self {
        Self {
            k_max,
            probe,
            ..Self::default()
        }
    }

    pub fn tolerance(&self, precision: Precision) -> f64 {
        self.breakdown_tol.unwrap_or(match precision {
            Precision::F64 => 1e-12,
            Precision::F32 => 1e-7,
        })
    }

    pub fn stores_basis(&self) -> bool {
        self.store_basis || self.reorthogonalize == Reorthogonalization::Full
    }

    pub fn validate(&self) -> Result<()> {
        if self.k_max == 0 {
            return Err(Error::Argument("k_max must be at least 1".into()));
        }
        if let Some(tol) = self.breakdown_tol {
            if !(tol > 0.0 && tol.is_finite()) {
                return Err(Error::Argument(format!("breakdown tolerance must be positive, got {tol}")));
            }
        }
        Ok(())
    }
}

/// Symmetric tridiagonal matrix: `alphas` on the diagonal, `betas` beside it.
#[derive(Clone, Debug, PartialEq)]
pub struct TridiagonalMatrix {
    alphas: Vec<f64>,
    betas: Vec<f64>,
}

impl TridiagonalMatrix {
    pub fn new(alphas: Vec<f64>, betas: Vec<f64>) -> Result<Self> {
        if alphas.is_empty() {
            return Err(Error::Argument("tridiagonal matrix needs at least one diagonal entry".into()));
        }
        if betas.len() + 1 != alphas.len() {
            return Err(Error::Argument(format!(
                "{} diagonal entries need {} off-diagonal entries, got {}",
                alphas.len(),
                alphas.len() - 1,
                betas.len()
            )));
        }
        if alphas.iter().chain(&betas).any(|v| !v.is_finite()) {
            return Err(Error::Numerical("tridiagonal matrix has non-finite entries".into()));
        }
        if let Some(b) = betas.iter().find(|&&b| b <= 0.0) {
            return Err(Error::Argument(format!("off-diagonal entries must be positive, got {b}")));
        }
        Ok(Self { alphas, betas })
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn k(&self) -> usize {
        self.alphas.len()
    }

    /// Infinity norm.
    pub fn norm_inf(&self) -> f64 {
        (0..self.k())
            .map(|i| {
                let left = if i > 0 { self.betas[i - 1] } else { 0.0 };
                let right = self.betas.get(i).copied().unwrap_or(0.0);
                left + self.alphas[i].abs() + right
            })
            .fold(0.0, f64::max)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LanczosBasis<T: Element> {
    columns: Vec<ShardedVector<T>>,
}

impl<T: Element> LanczosBasis<T> {
    pub fn new(columns: Vec<ShardedVector<T>>) -> Self {
        Self { columns }
    }

    pub fn columns(&self) -> &[ShardedVector<T>] {
        &self.columns
    }

    /// `max_{i != j} |q_i^T q_j|`.
    pub fn loss_of_orthogonality(&self) -> f64 {
        let mut worst = 0.0f64;
        for (i, a) in self.columns.iter().enumerate() {
            for b in &self.columns[i + 1..] {
                let d = a.dot(b).expect("basis columns share a layout");
                worst = worst.max(d.abs());
            }
        }
        worst
    }
}

pub fn loss_of_orthogonality<T: Element>(basis: Option<&LanczosBasis<T>>) -> Result<f64> {
    basis
        .map(LanczosBasis::loss_of_orthogonality)
        .ok_or_else(|| Error::State("loss of orthogonality needs a stored basis".into()))
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub alpha: f64,
    /// Residual norm after this step, including the final one that is not kept in T.
    pub beta: f64,
    /// `|q_{k+1}^T q_0|`, always available since the start vector is kept.
    pub start_overlap: Option<f64>,
    /// `max_j |q_{k+1}^T q_j|`, only with a stored basis.
    pub max_overlap: Option<f64>,
    pub apply_seconds: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Termination {
    IterationLimit,
    /// The residual norm fell below the breakdown tolerance: the Krylov space is invariant.
    Converged { step: usize, beta: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunDiagnostics {
    pub steps: Vec<StepRecord>,
    pub termination: Termination,
    pub tolerance: f64,
    pub precision: Precision,
}

impl RunDiagnostics {
    pub fn total_apply_seconds(&self) -> f64 {
        self.steps.iter().map(|s| s.apply_seconds).sum()
    }
}

/// What a failed run had computed before its coefficients went non-finite.
#[derive(Clone, Debug, PartialEq)]
pub struct PartialRun {
    pub tridiagonal: TridiagonalMatrix,
    pub diagnostics: RunDiagnostics,
}

#[derive(Clone, Debug)]
pub struct LanczosRun<T: Element> {
    pub tridiagonal: TridiagonalMatrix,
    pub basis: Option<LanczosBasis<T>>,
    pub diagnostics: RunDiagnostics,
}

impl<T: Element> LanczosRun<T> {
    pub fn loss_of_orthogonality(&self) -> Result<f64> {
        loss_of_orthogonality(self.basis.as_ref())
    }
}

/// Runs Lanczos on a single-shard local engine.
pub fn lanczos_local<T: Element>(op: &OperatorHandle<T>, cfg: &LanczosConfig) -> Result<LanczosRun<T>> {
    let mut engine = LocalEngine::new(ShardLayout::single(op.dim())?);
    lanczos_run(&mut engine, op, cfg)
}

pub fn lanczos_run<T: Element, E: VectorEngine<T>>(
    engine: &mut E,
    op: &OperatorHandle<T>,
    cfg: &LanczosConfig,
) -> Result<LanczosRun<T>> {
    cfg.validate()?;
    let dim = op.dim();
    if dim < 2 {
        return Err(Error::Argument(format!("operator dimension must be at least 2, got {dim}")));
    }
    if engine.layout().total_dim() != dim {
        return Err(Error::Dimension {
            expected: dim,
            actual: engine.layout().total_dim(),
        });
    }
    let tol = cfg.tolerance(T::PRECISION);
    let full = cfg.reorthogonalize == Reorthogonalization::Full;
    let store = cfg.stores_basis();

    let probe = ProbeSpec {
        normalize: true,
        ..cfg.probe
    };
    let q0 = draw_probe::<T>(&probe, engine.layout())?;
    let start = engine.upload(&q0)?;
    let mut q = engine.upload(&q0)?;
    let mut basis: Vec<E::Vector> = Vec::new();
    if store {
        basis.push(engine.upload(&q0)?);
    }
    let mut q_prev: Option<E::Vector> = None;
    let mut beta_prev = 0.0;

    let mut alphas = Vec::with_capacity(cfg.k_max);
    let mut betas = Vec::with_capacity(cfg.k_max);
    let mut steps = Vec::with_capacity(cfg.k_max);
    let mut termination = Termination::IterationLimit;

    let partial = |alphas: &[f64], betas: &[f64], steps: &[StepRecord], reason: String| -> Error {
        let diagnostics = RunDiagnostics {
            steps: steps.to_vec(),
            termination: Termination::IterationLimit,
            tolerance: tol,
            precision: T::PRECISION,
        };
        match TridiagonalMatrix::new(alphas.to_vec(), betas.to_vec()) {
            Ok(tridiagonal) => Error::Breakdown {
                reason,
                partial: Box::new(PartialRun {
                    tridiagonal,
                    diagnostics,
                }),
            },
            Err(_) => Error::Numerical(reason),
        }
    };

    for k in 0..cfg.k_max {
        let timer = Instant::now();
        let mut r = engine.apply(op, &q)?;
        let apply_seconds = timer.elapsed().as_secs_f64();

        if let Some(prev) = &q_prev {
            let next = engine.axpy(-beta_prev, prev, &r)?;
            engine.release(std::mem::replace(&mut r, next))?;
        }
        let alpha = engine.dot(&q, &r)?;
        if !alpha.is_finite() {
            return Err(partial(&alphas, &betas, &steps, format!("alpha_{k} = {alpha}")));
        }
        let next = engine.axpy(-alpha, &q, &r)?;
        engine.release(std::mem::replace(&mut r, next))?;

        if full {
            for _pass in 0..2 {
                // Classical Gram-Schmidt: all coefficients from the same residual.
                let coeffs = basis
                    .iter()
                    .map(|col| engine.dot(col, &r))
                    .collect::<Result<Vec<_>>>()?;
                for (col, c) in basis.iter().zip(coeffs) {
                    let next = engine.axpy(-c, col, &r)?;
                    engine.release(std::mem::replace(&mut r, next))?;
                }
            }
        }

        let beta = engine.norm2(&r)?;
        alphas.push(alpha);
        let mut record = StepRecord {
            alpha,
            beta,
            start_overlap: None,
            max_overlap: None,
            apply_seconds,
        };
        if !beta.is_finite() {
            steps.push(record);
            return Err(partial(&alphas, &betas, &steps, format!("beta_{k} = {beta}")));
        }
        if beta < tol {
            steps.push(record);
            termination = Termination::Converged { step: k, beta };
            engine.release(r)?;
            break;
        }
        if k + 1 == cfg.k_max {
            steps.push(record);
            engine.release(r)?;
            break;
        }

        let q_next = engine.scale(&r, 1.0 / beta)?;
        engine.release(r)?;
        record.start_overlap = Some(engine.dot(&q_next, &start)?.abs());
        if store {
            let mut worst = 0.0f64;
            for col in &basis {
                worst = worst.max(engine.dot(&q_next, col)?.abs());
            }
            record.max_overlap = Some(worst);
            basis.push(engine.scale(&q_next, 1.0)?);
        }
        steps.push(record);
        betas.push(beta);

        if let Some(prev) = q_prev.take() {
            engine.release(prev)?;
        }
        q_prev = Some(std::mem::replace(&mut q, q_next));
        beta_prev = beta;
    }

    let stored = if store {
        let columns = basis
            .iter()
            .map(|col| engine.download(col))
            .collect::<Result<Vec<_>>>()?;
        Some(LanczosBasis::new(columns))
    } else {
        None
    };
    for v in basis.into_iter().chain(q_prev).chain([q, start]) {
        engine.release(v)?;
    }

    Ok(LanczosRun {
        tridiagonal: TridiagonalMatrix::new(alphas, betas)?,
        basis: stored,
        diagnostics: RunDiagnostics {
            steps,
            termination,
            tolerance: tol,
            precision: T::PRECISION,
        },
    })
}
