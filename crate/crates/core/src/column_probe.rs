//! Single-column probes: apply the operator to a one-hot vector and summarize
//! how many entries of the resulting column are negligible.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::element::Element;
use crate::error::{Error, Result};
use crate::operators::{self, OperatorHandle};
use crate::sharded::{ShardLayout, ShardedVector};

pub const DEFAULT_BINS: usize = 50;

/// `1e-12, 1e-11, ..., 1e-1`.
pub fn default_thresholds() -> Vec<f64> {
    (1..=12).rev().map(|e| 10f64.powi(-e)).collect()
}

/// Column `index` of the operator, computed as `A e_index`.
pub fn probe_column<T: Element>(
    op: &OperatorHandle<T>,
    layout: &ShardLayout,
    index: usize,
) -> Result<ShardedVector<T>> {
    if layout.total_dim() != op.dim() {
        return Err(Error::Dimension {
            expected: op.dim(),
            actual: layout.total_dim(),
        });
    }
    let e = ShardedVector::one_hot(layout, index)?;
    operators::apply(op.as_ref(), &e)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Histogram {
    /// `counts.len() + 1` edges, uniform over `[0, max |entry|]`.
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ColumnProbeReport {
    pub column_index: usize,
    pub seed: Option<u64>,
    pub total_elements: usize,
    pub histogram: Histogram,
    /// `(threshold, fraction of entries with |x| < threshold)`, ascending thresholds.
    pub threshold_fractions: Vec<(f64, f64)>,
}

pub fn column_report<T: Element>(
    col: &ShardedVector<T>,
    column_index: usize,
    thresholds: &[f64],
    bins: usize,
) -> Result<ColumnProbeReport> {
    if col.is_empty() {
        return Err(Error::Argument("cannot report on an empty column".into()));
    }
    if bins == 0 {
        return Err(Error::Argument("histogram needs at least one bin".into()));
    }
    if let Some(t) = thresholds.iter().find(|t| !(t.is_finite() && **t > 0.0)) {
        return Err(Error::Argument(format!("threshold {t} must be positive")));
    }
    let magnitudes: Vec<f64> = col.shards().iter().flatten().map(|x| x.widen().abs()).collect();
    if magnitudes.iter().any(|m| !m.is_finite()) {
        return Err(Error::Numerical("column has non-finite entries".into()));
    }
    let total = magnitudes.len();
    let max = magnitudes.iter().copied().fold(0.0, f64::max);

    let edges: Vec<f64> = (0..=bins).map(|i| max * i as f64 / bins as f64).collect();
    let mut counts = vec![0u64; bins];
    for &m in &magnitudes {
        let bin = if max > 0.0 { ((m / max) * bins as f64) as usize } else { 0 };
        counts[bin.min(bins - 1)] += 1;
    }

    let mut sorted = thresholds.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    let threshold_fractions = sorted
        .into_iter()
        .map(|t| {
            let below = magnitudes.iter().filter(|&&m| m < t).count();
            (t, below as f64 / total as f64)
        })
        .collect();

    Ok(ColumnProbeReport {
        column_index,
        seed: None,
        total_elements: total,
        histogram: Histogram { edges, counts },
        threshold_fractions,
    })
}

/// Column index drawn uniformly from `0..dim` for a seed.
pub fn seeded_index(seed: u64, dim: usize) -> usize {
    ChaCha8Rng::seed_from_u64(seed).random_range(0..dim)
}

/// One random column per seed, probed concurrently; reports follow `seeds`.
pub fn multi_seed_probe<T: Element>(
    op: &OperatorHandle<T>,
    layout: &ShardLayout,
    seeds: &[u64],
    thresholds: &[f64],
    bins: usize,
) -> Result<Vec<ColumnProbeReport>> {
    if seeds.is_empty() {
        return Err(Error::Argument("need at least one seed".into()));
    }
    seeds
        .par_iter()
        .map(|&seed| {
            let index = seeded_index(seed, op.dim());
            let col = probe_column(op, layout, index)?;
            let mut report = column_report(&col, index, thresholds, bins)?;
            report.seed = Some(seed);
            Ok(report)
        })
        .collect()
}

fn threshold_label(t: f64) -> String {
    format!("{t:e}")
}

fn total_label(n: usize) -> String {
    let x = n as f64;
    match n {
        n if n >= 1_000_000_000 => format!("{:.1} B", x / 1e9),
        n if n >= 1_000_000 => format!("{:.1} M", x / 1e6),
        n if n >= 1_000 => format!("{:.1} K", x / 1e3),
        n => n.to_string(),
    }
}

/// Rows of `(threshold label, cells)`, folding the trailing thresholds whose
/// cells all print as `1.0000` into a single `first–last` row.
fn folded_rows(thresholds: &[f64], columns: &[Vec<String>]) -> (Vec<(String, Vec<String>)>, Option<(String, usize)>) {
    let n = thresholds.len();
    let all_one = |i: usize| columns.iter().all(|c| c[i] == "1.0000");
    let mut start = n;
    while start > 0 && all_one(start - 1) {
        start -= 1;
    }
    // A single saturated row stays as it is.
    if n - start < 2 {
        start = n;
    }
    let rows = (0..start)
        .map(|i| (threshold_label(thresholds[i]), columns.iter().map(|c| c[i].clone()).collect()))
        .collect();
    let folded = (start < n).then(|| {
        (
            format!("{}–{}", threshold_label(thresholds[start]), threshold_label(thresholds[n - 1])),
            start,
        )
    });
    (rows, folded)
}

impl ColumnProbeReport {
    fn cells(&self) -> Vec<String> {
        self.threshold_fractions.iter().map(|(_, f)| format!("{f:.4}")).collect()
    }

    fn thresholds(&self) -> Vec<f64> {
        self.threshold_fractions.iter().map(|(t, _)| *t).collect()
    }

    /// Two-column threshold table.
    pub fn render_table(&self) -> String {
        let (rows, folded) = folded_rows(&self.thresholds(), &[self.cells()]);
        let mut out = String::from("Threshold | Fraction\n");
        for (label, cells) in rows {
            let _ = writeln!(out, "{label} | {}", cells[0]);
        }
        if let Some((label, _)) = folded {
            let _ = writeln!(out, "{label} | 1.0000");
        }
        let _ = writeln!(out, "Total elems = {}", total_label(self.total_elements));
        out
    }

    pub fn fractions_csv(&self) -> String {
        let mut out = String::from("threshold,fraction\n");
        for (t, f) in &self.threshold_fractions {
            let _ = writeln!(out, "{t:e},{f:e}");
        }
        out
    }

    pub fn histogram_csv(&self) -> String {
        let mut out = String::from("bin_left,bin_right,count\n");
        for (i, c) in self.histogram.counts.iter().enumerate() {
            let _ = writeln!(out, "{:e},{:e},{c}", self.histogram.edges[i], self.histogram.edges[i + 1]);
        }
        out
    }
}

/// Side-by-side table of several probes sharing one threshold grid.
pub fn render_seed_table(reports: &[ColumnProbeReport]) -> Result<String> {
    let first = reports.first().ok_or_else(|| Error::Argument("no reports".into()))?;
    let thresholds = first.thresholds();
    if reports.iter().any(|r| r.thresholds() != thresholds) {
        return Err(Error::Argument("reports use different thresholds".into()));
    }
    let columns: Vec<Vec<String>> = reports.iter().map(ColumnProbeReport::cells).collect();
    let (rows, folded) = folded_rows(&thresholds, &columns);
    let mut out = String::from("Idx | Thres.");
    for i in 1..=reports.len() {
        let _ = write!(out, " | F{i}");
    }
    out.push('\n');
    for (i, (label, cells)) in rows.iter().enumerate() {
        let _ = writeln!(out, "{i} | {label} | {}", cells.join(" | "));
    }
    if let Some((label, start)) = folded {
        let _ = writeln!(out, "{start} | {label} | 1.0000");
    }
    let columns_line: Vec<String> = reports
        .iter()
        .map(|r| match r.seed {
            Some(s) => format!("{}@{s}", r.column_index),
            None => r.column_index.to_string(),
        })
        .collect();
    let _ = writeln!(out, "Columns = {}", columns_line.join(", "));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::{wigner_operator, DenseSymmetric};
    use proptest::prelude::*;
    use std::sync::Arc;

    fn report_with(fractions: &[f64], total: usize) -> ColumnProbeReport {
        ColumnProbeReport {
            column_index: 0,
            seed: None,
            total_elements: total,
            histogram: Histogram {
                edges: vec![0.0, 1.0],
                counts: vec![total as u64],
            },
            threshold_fractions: default_thresholds().into_iter().zip(fractions.iter().copied()).collect(),
        }
    }

    #[test]
    fn diagonal_column() {
        let op: OperatorHandle<f64> = Arc::new(DenseSymmetric::diagonal(&[1.0, 2.0, 3.0]).unwrap());
        let layout = ShardLayout::even(3, 2).unwrap();
        let col = probe_column(&op, &layout, 1).unwrap();
        assert_eq!(col.to_global(), vec![0.0, 2.0, 0.0]);
        assert!(matches!(probe_column(&op, &layout, 3), Err(Error::Index { .. })));
    }

    #[test]
    fn dense_column_is_exact() {
        let m = wigner_operator(64, 1.0, 17).unwrap();
        let op: OperatorHandle<f64> = Arc::new(m.clone());
        let layout = ShardLayout::even(64, 5).unwrap();
        for k in [0, 17, 63] {
            assert_eq!(probe_column(&op, &layout, k).unwrap().to_global(), m.column(k));
        }
    }

    #[test]
    fn small_column_fractions() {
        let layout = ShardLayout::single(3).unwrap();
        let col = ShardedVector::from_global(&layout, &[0.0, 0.0, 1.0]).unwrap();
        let r = column_report(&col, 2, &[0.1, 10.0], DEFAULT_BINS).unwrap();
        assert_eq!(r.threshold_fractions, vec![(0.1, 2.0 / 3.0), (10.0, 1.0)]);
        assert_eq!(r.histogram.counts[0], 2);
        assert_eq!(r.histogram.counts[49], 1);
        assert_eq!(r.histogram.edges.len(), 51);
    }

    #[test]
    fn zero_column_collapses_to_one_bin() {
        let layout = ShardLayout::single(4).unwrap();
        let col = ShardedVector::<f64>::zeros(&layout);
        let r = column_report(&col, 0, &default_thresholds(), DEFAULT_BINS).unwrap();
        assert_eq!(r.histogram.counts[0], 4);
        assert!(r.threshold_fractions.iter().all(|(_, f)| *f == 1.0));
    }

    #[test]
    fn strict_inequality_at_threshold() {
        let layout = ShardLayout::single(2).unwrap();
        let col = ShardedVector::from_global(&layout, &[0.1, 0.0]).unwrap();
        let r = column_report(&col, 0, &[0.1], 4).unwrap();
        assert_eq!(r.threshold_fractions[0].1, 0.5);
    }

    #[test]
    fn seed_table_layout() {
        let fractions = [0.0343, 0.0823, 0.2880, 0.8751, 0.9978, 0.9999, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0];
        let r = report_with(&fractions, 32_800_000_000);
        let expected = "Threshold | Fraction\n\
1e-12 | 0.0343\n\
1e-11 | 0.0823\n\
1e-10 | 0.2880\n\
1e-9 | 0.8751\n\
1e-8 | 0.9978\n\
1e-7 | 0.9999\n\
1e-6–1e-1 | 1.0000\n\
Total elems = 32.8 B\n";
        assert_eq!(r.render_table(), expected);
    }

    #[test]
    fn five_seed_table_layout() {
        let cols = [
            [0.0067, 0.0158, 0.0833, 0.5035, 0.9921, 0.9998],
            [0.0076, 0.0213, 0.1246, 0.6633, 0.9983, 0.9999],
            [0.0087, 0.0278, 0.1693, 0.8241, 0.9993, 1.0000],
            [0.0069, 0.0167, 0.0912, 0.5463, 0.9929, 0.9999],
            [0.0095, 0.0373, 0.2458, 0.8834, 0.9977, 1.0000],
        ];
        let reports: Vec<_> = cols
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let mut f = c.to_vec();
                f.extend([1.0; 6]);
                let mut r = report_with(&f, 100);
                r.column_index = i;
                r
            })
            .collect();
        let table = render_seed_table(&reports).unwrap();
        let lines: Vec<&str> = table.lines().collect();
        assert_eq!(lines[0], "Idx | Thres. | F1 | F2 | F3 | F4 | F5");
        assert_eq!(lines[1], "0 | 1e-12 | 0.0067 | 0.0076 | 0.0087 | 0.0069 | 0.0095");
        assert_eq!(lines[6], "5 | 1e-7 | 0.9998 | 0.9999 | 1.0000 | 0.9999 | 1.0000");
        assert_eq!(lines[7], "6 | 1e-6–1e-1 | 1.0000");
    }

    #[test]
    fn multi_seed_is_deterministic() {
        let op: OperatorHandle<f64> = Arc::new(wigner_operator(50, 1.0, 2).unwrap());
        let layout = ShardLayout::even(50, 3).unwrap();
        let seeds = [1, 2, 3, 4, 5];
        let a = multi_seed_probe(&op, &layout, &seeds, &default_thresholds(), DEFAULT_BINS).unwrap();
        let b = multi_seed_probe(&op, &layout, &seeds, &default_thresholds(), DEFAULT_BINS).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 5);
        for (r, s) in a.iter().zip(seeds) {
            assert_eq!(r.column_index, seeded_index(s, 50));
            assert_eq!(r.seed, Some(s));
        }
        assert!(multi_seed_probe(&op, &layout, &[], &default_thresholds(), DEFAULT_BINS).is_err());
    }

    proptest! {
        #[test]
        fn fractions_monotone_and_layout_invariant(
            values in prop::collection::vec(prop_oneof![-1e-6f64..1e-6, -1.0f64..1.0, Just(0.0)], 1..120),
            workers in 1usize..9,
        ) {
            let workers = workers.min(values.len());
            let single = ShardedVector::from_global(&ShardLayout::single(values.len()).unwrap(), &values).unwrap();
            let sharded = ShardedVector::from_global(&ShardLayout::even(values.len(), workers).unwrap(), &values).unwrap();
            let a = column_report(&single, 0, &default_thresholds(), DEFAULT_BINS).unwrap();
            let b = column_report(&sharded, 0, &default_thresholds(), DEFAULT_BINS).unwrap();
            prop_assert_eq!(&a, &b);
            prop_assert!(a.threshold_fractions.windows(2).all(|w| w[0].1 <= w[1].1));
            prop_assert_eq!(a.histogram.counts.iter().sum::<u64>() as usize, values.len());
        }
    }
}
