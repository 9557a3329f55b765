//! Matrix-free symmetric operators.
//!
//! Everything downstream of the probe only sees an operator through
//! [`SymmetricOperator`]. The dense implementations here serve as exact
//! oracles and as synthetic spectra (Wigner bulk, spiked outliers); the
//! Hessian of an autodiff model lives in [`crate::autodiff::hvp`].

use std::fmt;
use std::ops::Range;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::element::Element;
use crate::error::{Error, Result};
use crate::sharded::ShardedVector;

pub const DEFAULT_DENSE_CAP: usize = 2048;

/// A real symmetric linear operator available only through its action.
pub trait SymmetricOperator<T: Element>: Send + Sync {
    fn dim(&self) -> usize;

    fn label(&self) -> String;

    /// `A x` for a gathered input.
    fn apply_global(&self, x: &[T]) -> Result<Vec<T>>;

    /// Whether [`apply_rows`](Self::apply_rows) is cheaper than a full apply, so
    /// that workers can each compute their own rows.
    fn rows_independent(&self) -> bool {
        false
    }

    /// Rows `rows` of `A x` for a gathered input.
    fn apply_rows(&self, x: &[T], rows: Range<usize>) -> Result<Vec<T>> {
        let full = self.apply_global(x)?;
        Ok(full[rows].to_vec())
    }
}

pub type OperatorHandle<T> = Arc<dyn SymmetricOperator<T>>;

/// Applies `op` to a sharded vector, preserving its layout.
pub fn apply<T: Element>(
    op: &dyn SymmetricOperator<T>,
    x: &ShardedVector<T>,
) -> Result<ShardedVector<T>> {
    if x.len() != op.dim() {
        return Err(Error::Dimension {
            expected: op.dim(),
            actual: x.len(),
        });
    }
    let input = x.to_global();
    if op.rows_independent() {
        let shards = x
            .layout()
            .bounds()
            .iter()
            .map(|r| op.apply_rows(&input, r.clone()))
            .collect::<Result<Vec<_>>>()?;
        ShardedVector::from_shards(x.layout(), shards)
    } else {
        let out = op.apply_global(&input)?;
        if out.len() != op.dim() {
            return Err(Error::Dimension {
                expected: op.dim(),
                actual: out.len(),
            });
        }
        ShardedVector::from_global(x.layout(), &out)
    }
}

/// Dense symmetric matrix stored row-major in `f64`.
#[derive(Clone, PartialEq)]
pub struct DenseSymmetric {
    n: usize,
    entries: Vec<f64>,
    label: String,
}

impl fmt::Debug for DenseSymmetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DenseSymmetric")
            .field("n", &self.n)
            .field("label", &self.label)
            .finish_non_exhaustive()
    }
}

impl DenseSymmetric {
    pub fn new(n: usize, entries: Vec<f64>) -> Result<Self> {
        Self::with_cap(n, entries, DEFAULT_DENSE_CAP)
    }

    /// Checks size, finiteness and exact symmetry; rejects `n > cap`.
    pub fn with_cap(n: usize, entries: Vec<f64>, cap: usize) -> Result<Self> {
        check_dense_size(n, cap)?;
        if entries.len() != n * n {
            return Err(Error::Dimension {
                expected: n * n,
                actual: entries.len(),
            });
        }
        if let Some(pos) = entries.iter().position(|v| !v.is_finite()) {
            return Err(Error::Argument(format!(
                "entry ({}, {}) is not finite",
                pos / n,
                pos % n
            )));
        }
        for i in 0..n {
            for j in i + 1..n {
                if entries[i * n + j] != entries[j * n + i] {
                    return Err(Error::Argument(format!(
                        "matrix is not symmetric at ({i}, {j}): {} != {}",
                        entries[i * n + j],
                        entries[j * n + i]
                    )));
                }
            }
        }
        Ok(Self {
            n,
            entries,
            label: format!("dense({n})"),
        })
    }

    /// Builds a matrix from its upper triangle; `f(i, j)` is called for `i <= j` only.
    pub fn from_upper(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        check_dense_size(n, DEFAULT_DENSE_CAP)?;
        let mut entries = vec![0.0; n * n];
        for i in 0..n {
            for j in i..n {
                let v = f(i, j);
                entries[i * n + j] = v;
                entries[j * n + i] = v;
            }
        }
        Self::new(n, entries)
    }

    pub fn identity(n: usize) -> Result<Self> {
        Ok(Self::from_upper(n, |i, j| if i == j { 1.0 } else { 0.0 })?.labelled(format!("identity({n})")))
    }

    pub fn diagonal(values: &[f64]) -> Result<Self> {
        let n = values.len();
        Ok(Self::from_upper(n, |i, j| if i == j { values[i] } else { 0.0 })?
            .labelled(format!("diagonal({n})")))
    }

    pub fn labelled(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.n + j]
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.entries[i * self.n..(i + 1) * self.n]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, j)).collect()
    }

    /// `a * self + b * I`, used to check equivariance properties.
    pub fn affine(&self, a: f64, b: f64) -> Result<Self> {
        Ok(Self::from_upper(self.n, |i, j| {
            a * self.get(i, j) + if i == j { b } else { 0.0 }
        })?
        .labelled(format!("{}*{}+{}I", a, self.label, b)))
    }

    /// Parses `dim N` followed by `N` rows of `N` whitespace-separated reals.
    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'));
        let header = lines.next().ok_or_else(|| Error::Data("empty matrix file".into()))?;
        let n = match header.split_whitespace().collect::<Vec<_>>()[..] {
            ["dim", n] => n
                .parse::<usize>()
                .map_err(|e| Error::Data(format!("bad dimension `{n}`: {e}")))?,
            _ => return Err(Error::Data(format!("expected `dim N` header, got `{header}`"))),
        };
        let mut entries = Vec::with_capacity(n * n);
        for (row, line) in lines.by_ref().take(n).enumerate() {
            let before = entries.len();
            for tok in line.split_whitespace() {
                entries.push(
                    tok.parse::<f64>()
                        .map_err(|e| Error::Data(format!("row {row}: `{tok}`: {e}")))?,
                );
            }
            if entries.len() - before != n {
                return Err(Error::Data(format!(
                    "row {row} has {} entries, expected {n}",
                    entries.len() - before
                )));
            }
        }
        if entries.len() != n * n {
            return Err(Error::Data(format!("expected {n} rows, got {}", entries.len() / n.max(1))));
        }
        if lines.next().is_some() {
            return Err(Error::Data(format!("more than {n} rows")));
        }
        Self::new(n, entries)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Ok(Self::parse(&std::fs::read_to_string(path)?)?.labelled(format!("dense({})", path.display())))
    }

    /// Inverse of [`parse`](Self::parse), exact for every entry.
    pub fn to_text(&self) -> String {
        let mut out = format!("dim {}\n", self.n);
        for i in 0..self.n {
            let row: Vec<String> = self.row(i).iter().map(|v| format!("{v:e}")).collect();
            out.push_str(&row.join(" "));
            out.push('\n');
        }
        out
    }

    fn row_product<T: Element>(&self, i: usize, x: &[T]) -> T {
        let acc = self
            .row(i)
            .iter()
            .zip(x)
            .fold(0.0f64, |acc, (a, xj)| acc + a * xj.widen());
        T::narrow(acc)
    }
}

fn check_dense_size(n: usize, cap: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::Argument("matrix dimension must be positive".into()));
    }
    if n > cap {
        return Err(Error::Argument(format!(
            "dense operators are limited to dimension {cap}, requested {n}"
        )));
    }
    Ok(())
}

impl<T: Element> SymmetricOperator<T> for DenseSymmetric {
    fn dim(&self) -> usize {
        self.n
    }

    fn label(&self) -> String {
        self.label.clone()
    }

    fn apply_global(&self, x: &[T]) -> Result<Vec<T>> {
        self.apply_rows(x, 0..self.n)
    }

    fn rows_independent(&self) -> bool {
        true
    }

    fn apply_rows(&self, x: &[T], rows: Range<usize>) -> Result<Vec<T>> {
        if x.len() != self.n {
            return Err(Error::Dimension {
                expected: self.n,
                actual: x.len(),
            });
        }
        if rows.end > self.n {
            return Err(Error::Index {
                index: rows.end - 1,
                dim: self.n,
            });
        }
        Ok(rows.map(|i| self.row_product(i, x)).collect())
    }
}

/// Matrix-vector product with sequential `f64` accumulation along each row.
pub fn dense_apply<T: Element>(m: &DenseSymmetric, x: &ShardedVector<T>) -> Result<ShardedVector<T>> {
    apply(m, x)
}

/// Symmetric random matrix with i.i.d. `N(0, sigma^2)` entries on and above the
/// diagonal, mirrored below. Its spectrum concentrates on `[-2 sigma sqrt(n), 2 sigma sqrt(n)]`.
pub fn wigner_operator(n: usize, sigma: f64, seed: u64) -> Result<DenseSymmetric> {
    if n < 2 {
        return Err(Error::Argument(format!("wigner dimension must be at least 2, got {n}")));
    }
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::Argument(format!("wigner sigma must be positive, got {sigma}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(DenseSymmetric::from_upper(n, |_, _| {
        let z: f64 = StandardNormal.sample(&mut rng);
        sigma * z
    })?
    .labelled(format!("wigner(n={n}, sigma={sigma}, seed={seed})")))
}

/// Wigner bulk plus `sum_k spike_k u_k u_k^T` with orthonormal random `u_k`.
pub fn spiked_operator(n: usize, bulk_sigma: f64, spikes: &[f64], seed: u64) -> Result<DenseSymmetric> {
    if n <= spikes.len() {
        return Err(Error::Argument(format!(
            "{} spikes need dimension greater than {n}",
            spikes.len()
        )));
    }
    if let Some(s) = spikes.iter().find(|s| !s.is_finite()) {
        return Err(Error::Argument(format!("spike {s} is not finite")));
    }
    let bulk = wigner_operator(n, bulk_sigma, seed)?;
    if spikes.is_empty() {
        return Ok(bulk);
    }
    let directions = spike_directions(n, spikes.len(), seed)?;
    let label = format!("spiked(n={n}, sigma={bulk_sigma}, spikes={spikes:?}, seed={seed})");
    Ok(DenseSymmetric::from_upper(n, |i, j| {
        let low_rank: f64 = spikes
            .iter()
            .zip(&directions)
            .map(|(s, u)| s * u[i] * u[j])
            .sum();
        bulk.get(i, j) + low_rank
    })?
    .labelled(label))
}

/// Gaussian directions, each orthogonalized by one Gram-Schmidt pass against
/// the previous ones and normalized. Drawn from a stream separate from the bulk.
fn spike_directions(n: usize, count: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(count);
    for _ in 0..count {
        let mut u: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        for prev in &out {
            let proj: f64 = prev.iter().zip(&u).map(|(a, b)| a * b).sum();
            u.iter_mut().zip(prev).for_each(|(x, p)| *x -= proj * p);
        }
        let norm = u.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(Error::Numerical("degenerate spike direction".into()));
        }
        u.iter_mut().for_each(|x| *x /= norm);
        out.push(u);
    }
    Ok(out)
}
