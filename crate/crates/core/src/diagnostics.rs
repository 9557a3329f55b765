//! Annotations on a Ritz spectrum: likely ghosts, rounding-error bounds and
//! the split between near-zero and outlying mass. Nothing here alters a spectrum.

use std::fmt::Write as _;

use crate::element::Precision;
use crate::quadrature::RitzSpectrum;

/// Gap between neighbouring Ritz values, as a fraction of the spectral width,
/// at or below which they are treated as copies of one eigenvalue.
pub const DEFAULT_CLUSTER_TOL: f64 = 1e-6;
/// Weight, relative to the largest weight, below which a clustered copy counts as a ghost.
pub const DEFAULT_GHOST_WEIGHT: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct GhostCluster {
    /// Value of the heaviest member.
    pub representative: f64,
    pub members: Vec<usize>,
    pub values: Vec<f64>,
    pub total_weight: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GhostReport {
    pub clusters: Vec<GhostCluster>,
    /// One flag per Ritz pair, in spectrum order.
    pub ghost_flags: Vec<bool>,
    pub cluster_tol: f64,
    pub weight_threshold: f64,
}

impl GhostReport {
    pub fn ghost_count(&self) -> usize {
        self.ghost_flags.iter().filter(|&&g| g).count()
    }

    pub fn render(&self, s: &RitzSpectrum) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "cluster_tol = {:e}", self.cluster_tol);
        let _ = writeln!(out, "ghost_weight_threshold = {:e}", self.weight_threshold);
        let _ = writeln!(out, "clusters = {}", self.clusters.len());
        let _ = writeln!(out, "likely_ghosts = {}", self.ghost_count());
        for (i, ((theta, w), flag)) in s.iter().zip(&self.ghost_flags).enumerate() {
            if *flag {
                let _ = writeln!(out, "likely_ghost[{i}] = value {theta:e} weight {w:e}");
            }
        }
        out
    }
}

/// Single-linkage clusters of the sorted Ritz values; inside each cluster with
/// several members, every member other than the heaviest whose weight is below
/// `weight_threshold * max_weight` is flagged.
pub fn detect_ghosts(s: &RitzSpectrum, cluster_tol: f64, weight_threshold: f64) -> GhostReport {
    let gap = cluster_tol * s.width();
    let cutoff = weight_threshold * s.max_weight();
    let (values, weights) = (s.values(), s.weights());
    let mut flags = vec![false; s.len()];
    let mut clusters = Vec::new();
    let mut start = 0;
    while start < s.len() {
        let mut end = start + 1;
        while end < s.len() && values[end] - values[end - 1] <= gap {
            end += 1;
        }
        let members: Vec<usize> = (start..end).collect();
        let heaviest = members
            .iter()
            .copied()
            .max_by(|&a, &b| weights[a].total_cmp(&weights[b]))
            .expect("cluster is non-empty");
        for &i in &members {
            if i != heaviest && weights[i] < cutoff {
                flags[i] = true;
            }
        }
        clusters.push(GhostCluster {
            representative: values[heaviest],
            values: members.iter().map(|&i| values[i]).collect(),
            total_weight: members.iter().map(|&i| weights[i]).sum(),
            members,
        });
        start = end;
    }
    GhostReport {
        clusters,
        ghost_flags: flags,
        cluster_tol,
        weight_threshold,
    }
}

pub fn detect_ghosts_default(s: &RitzSpectrum) -> GhostReport {
    detect_ghosts(s, DEFAULT_CLUSTER_TOL, DEFAULT_GHOST_WEIGHT)
}

/// A-priori relative error bound for Ritz weights computed in `precision`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PrecisionReport {
    pub precision: Precision,
    pub unit_roundoff: f64,
    pub k: usize,
    /// `2 k u`.
    pub weight_rel_bound: f64,
    pub machine_eps_threshold: f64,
}

impl PrecisionReport {
    pub fn render(&self) -> String {
        format!(
            "precision = {}\nunit_roundoff = {:e}\nk = {}\nweight_rel_bound = {:e}\nmachine_eps_threshold = {:e}\n",
            self.precision, self.unit_roundoff, self.k, self.weight_rel_bound, self.machine_eps_threshold
        )
    }
}

pub fn precision_report(precision: Precision, k: usize) -> PrecisionReport {
    let u = precision.unit_roundoff();
    PrecisionReport {
        precision,
        unit_roundoff: u,
        k,
        weight_rel_bound: 2.0 * k as f64 * u,
        machine_eps_threshold: precision.machine_epsilon(),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NearZeroSplit {
    /// Ritz pairs with `|theta| <= eps_threshold * width`.
    pub near_zero: Vec<usize>,
    pub near_zero_mass: f64,
    pub outlier_mass: f64,
    pub abs_threshold: f64,
}

impl NearZeroSplit {
    pub fn render(&self) -> String {
        format!(
            "near_zero_threshold = {:e}\nnear_zero_pairs = {}\nnear_zero_mass = {:e}\noutlier_mass = {:e}\n",
            self.abs_threshold,
            self.near_zero.len(),
            self.near_zero_mass,
            self.outlier_mass
        )
    }
}

/// Splits the spectral mass into the part within `eps_threshold` (relative to
/// the spectral width) of zero and the rest. Masses are normalized by the
/// total weight.
pub fn classify_near_zero(s: &RitzSpectrum, eps_threshold: f64) -> NearZeroSplit {
    let abs_threshold = eps_threshold * s.width();
    let near_zero: Vec<usize> = (0..s.len()).filter(|&i| s.values()[i].abs() <= abs_threshold).collect();
    let near: f64 = near_zero.iter().map(|&i| s.weights()[i]).fold(0.0, |a, w| a + w);
    let rest: f64 = (0..s.len())
        .filter(|i| !near_zero.contains(i))
        .map(|i| s.weights()[i])
        .fold(0.0, |a, w| a + w);
    let total = near + rest;
    let (near_zero_mass, outlier_mass) = if total > 0.0 { (near / total, rest / total) } else { (0.0, 0.0) };
    NearZeroSplit {
        near_zero,
        near_zero_mass,
        outlier_mass,
        abs_threshold,
    }
}
