//! Sample batches: a text loader and a seeded synthetic generator.

use std::path::Path;

use ndarray::{s, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// Rows of features with one target per row. Class targets are stored as
/// integral floats.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    inputs: Array2<f64>,
    targets: Vec<f64>,
}

impl Batch {
    pub fn new(inputs: Array2<f64>, targets: Vec<f64>) -> Result<Self> {
        if inputs.nrows() != targets.len() {
            return Err(Error::Shape(format!(
                "{} input rows but {} targets",
                inputs.nrows(),
                targets.len()
            )));
        }
        if inputs.iter().chain(&targets).any(|v| !v.is_finite()) {
            return Err(Error::Data("batch contains non-finite values".into()));
        }
        Ok(Self { inputs, targets })
    }

    pub fn inputs(&self) -> &Array2<f64> {
        &self.inputs
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn features(&self) -> usize {
        self.inputs.ncols()
    }

    /// Parses one sample per line: whitespace-separated features, target last.
    /// Blank lines and lines starting with `#` are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let values = line
                .split_whitespace()
                .map(|tok| {
                    tok.parse::<f64>()
                        .map_err(|e| Error::Data(format!("line {}: `{tok}`: {e}", lineno + 1)))
                })
                .collect::<Result<Vec<_>>>()?;
            if values.len() < 2 {
                return Err(Error::Data(format!(
                    "line {}: need at least one feature and a target",
                    lineno + 1
                )));
            }
            if let Some(first) = rows.first() {
                if first.len() != values.len() {
                    return Err(Error::Data(format!(
                        "line {}: {} columns, expected {}",
                        lineno + 1,
                        values.len(),
                        first.len()
                    )));
                }
            }
            rows.push(values);
        }
        if rows.is_empty() {
            return Err(Error::Data("no samples".into()));
        }
        let width = rows[0].len();
        let mut inputs = Array2::zeros((rows.len(), width - 1));
        let mut targets = Vec::with_capacity(rows.len());
        for (i, row) in rows.iter().enumerate() {
            for (j, &v) in row[..width - 1].iter().enumerate() {
                inputs[[i, j]] = v;
            }
            targets.push(row[width - 1]);
        }
        Self::new(inputs, targets)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Consecutive sub-batches of the given sizes.
    pub fn split(&self, sizes: &[usize]) -> Result<Vec<Batch>> {
        if sizes.iter().sum::<usize>() != self.len() || sizes.contains(&0) {
            return Err(Error::Argument(format!(
                "sizes {sizes:?} do not partition {} samples",
                self.len()
            )));
        }
        let mut start = 0;
        sizes
            .iter()
            .map(|&n| {
                let b = Batch::new(
                    self.inputs.slice(s![start..start + n, ..]).to_owned(),
                    self.targets[start..start + n].to_vec(),
                );
                start += n;
                b
            })
            .collect()
    }

    pub fn concat(batches: &[Batch]) -> Result<Batch> {
        let first = batches.first().ok_or_else(|| Error::Argument("no batches".into()))?;
        let views: Vec<_> = batches.iter().map(|b| b.inputs.view()).collect();
        if batches.iter().any(|b| b.features() != first.features()) {
            return Err(Error::Shape("batches disagree on feature count".into()));
        }
        let inputs = ndarray::concatenate(ndarray::Axis(0), &views)
            .map_err(|e| Error::Shape(e.to_string()))?;
        let targets = batches.iter().flat_map(|b| b.targets.iter().copied()).collect();
        Batch::new(inputs, targets)
    }
}

/// What the synthetic targets look like.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TargetKind {
    /// A smooth function of the features plus a little noise.
    Regression,
    /// Class labels in `0..classes`.
    Classes(usize),
}

/// Standard normal features with targets from a fixed random teacher.
pub fn synthetic_batch(samples: usize, features: usize, kind: TargetKind, seed: u64) -> Result<Batch> {
    if samples == 0 || features == 0 {
        return Err(Error::Argument("synthetic batch needs samples and features".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let teacher: Vec<f64> = (0..features).map(|_| StandardNormal.sample(&mut rng)).collect();
    let mut inputs = Array2::zeros((samples, features));
    let mut targets = Vec::with_capacity(samples);
    for i in 0..samples {
        for j in 0..features {
            inputs[[i, j]] = StandardNormal.sample(&mut rng);
        }
        let proj: f64 = (0..features).map(|j| inputs[[i, j]] * teacher[j]).sum::<f64>() / (features as f64).sqrt();
        targets.push(match kind {
            TargetKind::Regression => {
                let noise: f64 = StandardNormal.sample(&mut rng);
                proj.tanh() + 0.1 * noise
            }
            TargetKind::Classes(0) => return Err(Error::Argument("need at least one class".into())),
            TargetKind::Classes(c) => {
                // Mostly determined by the teacher, sometimes random.
                if rng.random_bool(0.8) {
                    let bucket = ((proj.tanh() + 1.0) / 2.0 * c as f64).floor() as usize;
                    bucket.min(c - 1) as f64
                } else {
                    rng.random_range(0..c) as f64
                }
            }
        });
    }
    Batch::new(inputs, targets)
}
