//! Ritz values and Gauss quadrature weights from a Lanczos tridiagonal.

use crate::error::{Error, Result};
use crate::lanczos::TridiagonalMatrix;

/// Eigenpairs of a symmetric tridiagonal matrix, ascending.
#[derive(Clone, Debug, PartialEq)]
pub struct TridiagonalEigen {
    pub values: Vec<f64>,
    /// Column-major: `vectors[j]` is the unit eigenvector for `values[j]`.
    pub vectors: Vec<Vec<f64>>,
}

/// Implicit-shift QL on the tridiagonal, accumulating rotations into the
/// eigenvector matrix.
pub fn tridiagonal_eigen(t: &TridiagonalMatrix) -> Result<TridiagonalEigen> {
    let n = t.k();
    let mut d = t.alphas().to_vec();
    let mut e = t.betas().to_vec();
    e.push(0.0);
    // v[row][col]
    let mut v = vec![vec![0.0; n]; n];
    for (i, row) in v.iter_mut().enumerate() {
        row[i] = 1.0;
    }

    let eps = f64::EPSILON;
    let max_iter = 30 * n.max(1);
    let mut f = 0.0;
    let mut tst1 = 0.0f64;
    for l in 0..n {
        tst1 = tst1.max(d[l].abs() + e[l].abs());
        let mut m = l;
        while m < n - 1 && e[m].abs() > eps * tst1 {
            m += 1;
        }
        if m > l {
            let mut iter = 0;
            loop {
                iter += 1;
                if iter > max_iter {
                    return Err(Error::Numerical(format!("tridiagonal QL did not converge at index {l}")));
                }
                let g = d[l];
                let mut p = (d[l + 1] - g) / (2.0 * e[l]);
                let mut r = p.hypot(1.0);
                if p < 0.0 {
                    r = -r;
                }
                d[l] = e[l] / (p + r);
                d[l + 1] = e[l] * (p + r);
                let dl1 = d[l + 1];
                let mut h = g - d[l];
                for di in d.iter_mut().skip(l + 2) {
                    *di -= h;
                }
                f += h;

                p = d[m];
                let mut c = 1.0;
                let mut c2 = c;
                let mut c3 = c;
                let el1 = e[l + 1];
                let mut s = 0.0;
                let mut s2 = 0.0;
                for i in (l..m).rev() {
                    c3 = c2;
                    c2 = c;
                    s2 = s;
                    let g = c * e[i];
                    h = c * p;
                    r = p.hypot(e[i]);
                    e[i + 1] = s * r;
                    s = e[i] / r;
                    c = p / r;
                    p = c * d[i] - s * g;
                    d[i + 1] = h + s * (c * g + s * d[i]);
                    for row in v.iter_mut() {
                        let h = row[i + 1];
                        row[i + 1] = s * row[i] + c * h;
                        row[i] = c * row[i] - s * h;
                    }
                }
                p = -s * s2 * c3 * el1 * e[l] / dl1;
                e[l] = s * p;
                d[l] = c * p;
                if e[l].abs() <= eps * tst1 {
                    break;
                }
            }
        }
        d[l] += f;
        e[l] = 0.0;
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| d[a].total_cmp(&d[b]));
    let values = order.iter().map(|&j| d[j]).collect();
    let vectors = order.iter().map(|&j| v.iter().map(|row| row[j]).collect()).collect();
    Ok(TridiagonalEigen { values, vectors })
}

/// `max_j ||T y_j - theta_j y_j||`.
pub fn eigen_residual(t: &TridiagonalMatrix, eig: &TridiagonalEigen) -> f64 {
    let (a, b) = (t.alphas(), t.betas());
    let n = t.k();
    let mut worst = 0.0f64;
    for (theta, y) in eig.values.iter().zip(&eig.vectors) {
        let mut sq = 0.0;
        for i in 0..n {
            let mut ty = a[i] * y[i];
            if i > 0 {
                ty += b[i - 1] * y[i - 1];
            }
            if i + 1 < n {
                ty += b[i] * y[i + 1];
            }
            let r = ty - theta * y[i];
            sq += r * r;
        }
        worst = worst.max(sq.sqrt());
    }
    worst
}

/// Nodes and weights of a discrete spectral measure.
#[derive(Clone, Debug, PartialEq)]
pub struct RitzSpectrum {
    values: Vec<f64>,
    weights: Vec<f64>,
}

impl RitzSpectrum {
    /// Sorts by value; weights must be finite and non-negative.
    pub fn new(values: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if values.len() != weights.len() {
            return Err(Error::Argument(format!(
                "{} values but {} weights",
                values.len(),
                weights.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite Ritz value".into()));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Numerical("weights must be finite and non-negative".into()));
        }
        let mut pairs: Vec<(f64, f64)> = values.into_iter().zip(weights).collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let (values, weights) = pairs.into_iter().unzip();
        Ok(Self { values, weights })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.values.iter().copied().zip(self.weights.iter().copied())
    }

    pub fn total_weight(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn max_weight(&self) -> f64 {
        self.weights.iter().copied().fold(0.0, f64::max)
    }

    pub fn width(&self) -> f64 {
        match (self.values.first(), self.values.last()) {
            (Some(lo), Some(hi)) => hi - lo,
            _ => 0.0,
        }
    }

    /// `sum_i w_i theta_i^m`.
    pub fn moment(&self, m: u32) -> f64 {
        self.iter().map(|(t, w)| w * t.powi(m as i32)).sum()
    }

    /// Gaussian-smoothed density at one point.
    pub fn density_at(&self, x: f64, sigma: f64) -> f64 {
        let norm = 1.0 / (sigma * (2.0 * std::f64::consts::PI).sqrt());
        self.iter()
            .map(|(t, w)| {
                let z = (x - t) / sigma;
                w * norm * (-0.5 * z * z).exp()
            })
            .sum()
    }
}

/// Ritz values of `T` with weights `(first eigenvector component)^2`.
pub fn ritz_decompose(t: &TridiagonalMatrix) -> Result<RitzSpectrum> {
    let eig = tridiagonal_eigen(t)?;
    let residual = eigen_residual(t, &eig);
    let scale = t.norm_inf().max(f64::MIN_POSITIVE);
    if residual > 1e-12 * scale {
        return Err(Error::Numerical(format!(
            "tridiagonal eigenpair residual {residual:e} exceeds 1e-12 * ||T|| = {:e}",
            1e-12 * scale
        )));
    }
    let weights = eig.vectors.iter().map(|y| y[0] * y[0]).collect();
    RitzSpectrum::new(eig.values, weights)
}

/// Bandwidth used when none is given: a hundredth of the Ritz range.
pub fn default_bandwidth(s: &RitzSpectrum) -> f64 {
    let width = s.width();
    if width > 0.0 {
        width / 100.0
    } else {
        let scale = s.values().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        scale.max(1.0) * 1e-2
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SmoothedDensity {
    pub grid: Vec<f64>,
    pub density: Vec<f64>,
    pub sigma: f64,
}

impl SmoothedDensity {
    /// Trapezoid rule over the grid.
    pub fn integral(&self) -> f64 {
        self.grid
            .windows(2)
            .zip(self.density.windows(2))
            .map(|(x, y)| 0.5 * (x[1] - x[0]) * (y[0] + y[1]))
            .sum()
    }
}

/// Evaluates the Gaussian-smoothed density on an even grid spanning the Ritz
/// values plus five bandwidths either side.
pub fn smooth_density(s: &RitzSpectrum, sigma: f64, grid_points: usize) -> Result<SmoothedDensity> {
    if s.is_empty() {
        return Err(Error::Argument("cannot smooth an empty spectrum".into()));
    }
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::Argument(format!("bandwidth must be positive, got {sigma}")));
    }
    if grid_points < 2 {
        return Err(Error::Argument("density grid needs at least two points".into()));
    }
    let lo = s.values()[0] - 5.0 * sigma;
    let hi = s.values()[s.len() - 1] + 5.0 * sigma;
    let step = (hi - lo) / (grid_points - 1) as f64;
    let grid: Vec<f64> = (0..grid_points).map(|i| lo + step * i as f64).collect();
    let density = grid.iter().map(|&x| s.density_at(x, sigma)).collect();
    Ok(SmoothedDensity { grid, density, sigma })
}

/// Pools several runs into one measure, each run carrying equal mass.
pub fn average_spectra(runs: &[RitzSpectrum]) -> Result<RitzSpectrum> {
    if runs.is_empty() {
        return Err(Error::Argument("no spectra to average".into()));
    }
    let share = 1.0 / runs.len() as f64;
    let (values, weights): (Vec<f64>, Vec<f64>) = runs
        .iter()
        .flat_map(|r| r.iter().map(move |(t, w)| (t, w * share)))
        .unzip();
    RitzSpectrum::new(values, weights)
}
