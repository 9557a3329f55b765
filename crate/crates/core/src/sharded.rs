//! Sharded vectors: a logical vector split into contiguous per-worker slices.
//!
//! Elementwise operations act shard by shard in parallel. Reductions compute
//! one exact partial per shard and combine them in ascending shard order, so
//! the logical result of every operation is bitwise identical for any layout
//! of the same logical vector.

use std::ops::Range;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::element::Element;
use crate::error::{Error, Result};
use crate::exact::ExactSum;

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ShardLayout {
    total_dim: usize,
    bounds: Vec<Range<usize>>,
}

impl ShardLayout {
    /// Validates that `bounds` are non-empty, sorted and exactly cover `[0, total_dim)`.
    pub fn new(total_dim: usize, bounds: Vec<Range<usize>>) -> Result<Self> {
        if total_dim == 0 {
            return Err(Error::Layout("total dimension must be positive".into()));
        }
        if bounds.is_empty() {
            return Err(Error::Layout("at least one shard is required".into()));
        }
        let mut expected_start = 0;
        for (w, r) in bounds.iter().enumerate() {
            if r.start != expected_start {
                return Err(Error::Layout(format!(
                    "shard {w} starts at {} but the previous shard ended at {expected_start}",
                    r.start
                )));
            }
            if r.end <= r.start {
                return Err(Error::Layout(format!("shard {w} is empty")));
            }
            expected_start = r.end;
        }
        if expected_start != total_dim {
            return Err(Error::Layout(format!(
                "shards cover [0, {expected_start}) but the dimension is {total_dim}"
            )));
        }
        Ok(Self { total_dim, bounds })
    }

    pub fn from_sizes(sizes: &[usize]) -> Result<Self> {
        let mut start = 0;
        let bounds = sizes
            .iter()
            .map(|&s| {
                let r = start..start + s;
                start += s;
                r
            })
            .collect();
        Self::new(start, bounds)
    }

    /// Splits `total_dim` over `workers` shards whose sizes differ by at most one,
    /// larger shards first.
    pub fn even(total_dim: usize, workers: usize) -> Result<Self> {
        if workers == 0 {
            return Err(Error::Layout("worker count must be positive".into()));
        }
        if workers > total_dim {
            return Err(Error::Layout(format!(
                "{workers} workers cannot each own a non-empty shard of dimension {total_dim}"
            )));
        }
        let base = total_dim / workers;
        let extra = total_dim % workers;
        let sizes: Vec<usize> = (0..workers).map(|w| base + usize::from(w < extra)).collect();
        Self::from_sizes(&sizes)
    }

    pub fn single(total_dim: usize) -> Result<Self> {
        Self::even(total_dim, 1)
    }

    pub fn total_dim(&self) -> usize {
        self.total_dim
    }

    pub fn worker_count(&self) -> usize {
        self.bounds.len()
    }

    pub fn bounds(&self) -> &[Range<usize>] {
        &self.bounds
    }

    pub fn range(&self, worker: usize) -> Range<usize> {
        self.bounds[worker].clone()
    }

    /// Worker owning global index `index`.
    pub fn owner(&self, index: usize) -> Option<usize> {
        if index >= self.total_dim {
            return None;
        }
        Some(self.bounds.partition_point(|r| r.end <= index))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ShardedVector<T: Element> {
    layout: ShardLayout,
    shards: Vec<Vec<T>>,
}

impl<T: Element> ShardedVector<T> {
    pub fn zeros(layout: &ShardLayout) -> Self {
        let shards = layout
            .bounds()
            .iter()
            .map(|r| vec![T::zero(); r.len()])
            .collect();
        Self {
            layout: layout.clone(),
            shards,
        }
    }

    /// Scatters a global vector into `layout`.
    pub fn from_global(layout: &ShardLayout, values: &[T]) -> Result<Self> {
        if values.len() != layout.total_dim() {
            return Err(Error::Dimension {
                expected: layout.total_dim(),
                actual: values.len(),
            });
        }
        let shards = layout
            .bounds()
            .iter()
            .map(|r| values[r.clone()].to_vec())
            .collect();
        Ok(Self {
            layout: layout.clone(),
            shards,
        })
    }

    pub fn from_shards(layout: &ShardLayout, shards: Vec<Vec<T>>) -> Result<Self> {
        if shards.len() != layout.worker_count() {
            return Err(Error::Layout(format!(
                "{} shards for a layout of {} workers",
                shards.len(),
                layout.worker_count()
            )));
        }
        for (w, (s, r)) in shards.iter().zip(layout.bounds()).enumerate() {
            if s.len() != r.len() {
                return Err(Error::Layout(format!(
                    "shard {w} has length {} but its range has length {}",
                    s.len(),
                    r.len()
                )));
            }
        }
        Ok(Self {
            layout: layout.clone(),
            shards,
        })
    }

    pub fn one_hot(layout: &ShardLayout, index: usize) -> Result<Self> {
        let owner = layout.owner(index).ok_or(Error::Index {
            index,
            dim: layout.total_dim(),
        })?;
        let mut v = Self::zeros(layout);
        let start = layout.range(owner).start;
        v.shards[owner][index - start] = T::one();
        Ok(v)
    }

    /// Gathers the shards into one contiguous vector.
    pub fn to_global(&self) -> Vec<T> {
        self.shards.concat()
    }

    pub fn layout(&self) -> &ShardLayout {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.layout.total_dim()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn shards(&self) -> &[Vec<T>] {
        &self.shards
    }

    pub fn into_shards(self) -> Vec<Vec<T>> {
        self.shards
    }

    pub fn get(&self, index: usize) -> Option<T> {
        let w = self.layout.owner(index)?;
        Some(self.shards[w][index - self.layout.range(w).start])
    }

    /// Same logical vector under a different layout.
    pub fn relayout(&self, layout: &ShardLayout) -> Result<Self> {
        Self::from_global(layout, &self.to_global())
    }

    fn check_layout(&self, other: &Self) -> Result<()> {
        if self.layout != other.layout {
            return Err(Error::Layout(format!(
                "operands are sharded differently ({} vs {} workers over dimensions {} and {})",
                self.layout.worker_count(),
                other.layout.worker_count(),
                self.layout.total_dim(),
                other.layout.total_dim()
            )));
        }
        Ok(())
    }

    pub fn dot(&self, other: &Self) -> Result<f64> {
        self.check_layout(other)?;
        let partials: Vec<ExactSum> = self
            .shards
            .par_iter()
            .zip(other.shards.par_iter())
            .map(|(a, b)| partial_dot(a, b))
            .collect();
        Ok(combine_ordered(&partials))
    }

    pub fn norm2(&self) -> f64 {
        self.dot(self).expect("a vector shares its own layout").sqrt()
    }

    /// `alpha * self + y`, rounded elementwise to the storage precision.
    pub fn axpy(&self, alpha: f64, y: &Self) -> Result<Self> {
        self.check_layout(y)?;
        let a = T::narrow(alpha);
        let shards = self
            .shards
            .par_iter()
            .zip(y.shards.par_iter())
            .map(|(xs, ys)| axpy_slice(a, xs, ys))
            .collect();
        Ok(Self {
            layout: self.layout.clone(),
            shards,
        })
    }

    pub fn scale(&self, c: f64) -> Result<Self> {
        if !c.is_finite() {
            return Err(Error::Argument(format!("cannot scale by non-finite factor {c}")));
        }
        let c = T::narrow(c);
        let shards = self
            .shards
            .par_iter()
            .map(|xs| scale_slice(c, xs))
            .collect();
        Ok(Self {
            layout: self.layout.clone(),
            shards,
        })
    }

    pub fn map_shards(&self, f: impl Fn(&[T]) -> Vec<T> + Sync + Send) -> Self {
        Self {
            layout: self.layout.clone(),
            shards: self.shards.par_iter().map(|s| f(s)).collect(),
        }
    }

    pub fn cast<U: Element>(&self) -> ShardedVector<U> {
        ShardedVector {
            layout: self.layout.clone(),
            shards: self
                .shards
                .iter()
                .map(|s| s.iter().map(|&x| U::narrow(x.widen())).collect())
                .collect(),
        }
    }
}

/// Exact partial inner product of one shard pair. Each product is rounded to
/// `f64` (exact for `f32` inputs) and the products are summed without rounding.
pub fn partial_dot<T: Element>(a: &[T], b: &[T]) -> ExactSum {
    let mut acc = ExactSum::new();
    for (x, y) in a.iter().zip(b) {
        acc.add(x.widen() * y.widen());
    }
    acc
}

/// Combines per-shard partials in ascending shard order and rounds once.
pub fn combine_ordered(partials: &[ExactSum]) -> f64 {
    let mut total = ExactSum::new();
    for p in partials {
        total.merge(p);
    }
    total.value()
}

pub(crate) fn axpy_slice<T: Element>(alpha: T, x: &[T], y: &[T]) -> Vec<T> {
    x.iter().zip(y).map(|(&xi, &yi)| alpha * xi + yi).collect()
}

pub(crate) fn scale_slice<T: Element>(c: T, x: &[T]) -> Vec<T> {
    x.iter().map(|&xi| xi * c).collect()
}

pub fn dot<T: Element>(a: &ShardedVector<T>, b: &ShardedVector<T>) -> Result<f64> {
    a.dot(b)
}

pub fn norm2<T: Element>(x: &ShardedVector<T>) -> f64 {
    x.norm2()
}

pub fn axpy<T: Element>(
    alpha: f64,
    x: &ShardedVector<T>,
    y: &ShardedVector<T>,
) -> Result<ShardedVector<T>> {
    x.axpy(alpha, y)
}

pub fn scale<T: Element>(x: &ShardedVector<T>, c: f64) -> Result<ShardedVector<T>> {
    x.scale(c)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub enum ProbeDistribution {
    #[default]
    Gaussian,
    Rademacher,
    OneHot(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ProbeSpec {
    pub seed: u64,
    pub distribution: ProbeDistribution,
    pub normalize: bool,
}

impl Default for ProbeSpec {
    fn default() -> Self {
        Self {
            seed: 42,
            distribution: ProbeDistribution::Gaussian,
            normalize: true,
        }
    }
}

impl ProbeSpec {
    pub fn gaussian(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }

    pub fn with_seed(self, seed: u64) -> Self {
        Self { seed, ..self }
    }
}

/// Random words consumed per coordinate; coordinate `i` reads stream words
/// `[WORDS_PER_INDEX * i, WORDS_PER_INDEX * (i + 1))` regardless of layout.
const WORDS_PER_INDEX: u128 = 4;

/// Draws a probe vector from a counter-based stream keyed on `(seed, global index)`.
pub fn draw_probe<T: Element>(spec: &ProbeSpec, layout: &ShardLayout) -> Result<ShardedVector<T>> {
    let raw = match spec.distribution {
        ProbeDistribution::OneHot(index) => return ShardedVector::one_hot(layout, index),
        ProbeDistribution::Gaussian | ProbeDistribution::Rademacher => {
            let shards = layout
                .bounds()
                .par_iter()
                .map(|r| fill_range::<T>(spec, r.clone()))
                .collect();
            ShardedVector::from_shards(layout, shards)?
        }
    };
    if !spec.normalize {
        return Ok(raw);
    }
    let norm = raw.norm2();
    if norm == 0.0 || !norm.is_finite() {
        return Err(Error::Numerical(format!("probe has norm {norm}")));
    }
    raw.scale(1.0 / norm)
}

fn fill_range<T: Element>(spec: &ProbeSpec, range: Range<usize>) -> Vec<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_word_pos(WORDS_PER_INDEX * range.start as u128);
    range
        .map(|_| {
            let a = rng.next_u64();
            let b = rng.next_u64();
            let value = match spec.distribution {
                ProbeDistribution::Gaussian => box_muller(a, b),
                ProbeDistribution::Rademacher => {
                    if a >> 63 == 1 {
                        1.0
                    } else {
                        -1.0
                    }
                }
                ProbeDistribution::OneHot(_) => unreachable!("handled by draw_probe"),
            };
            T::narrow(value)
        })
        .collect()
}

fn box_muller(a: u64, b: u64) -> f64 {
    const SCALE: f64 = 1.0 / (1u64 << 53) as f64;
    // u1 in (0, 1] keeps the logarithm finite.
    let u1 = ((a >> 11) + 1) as f64 * SCALE;
    let u2 = (b >> 11) as f64 * SCALE;
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}
