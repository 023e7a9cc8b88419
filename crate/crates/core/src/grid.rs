//! Uniform discretization of each variable and estimation of the
//! third-order histogram tensors from (possibly incomplete) records.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::tensor::Tensor3;

/// Default clipping quantiles: the grid covers the central 99% of each variable.
pub const DEFAULT_CLIP: (f64, f64) = (0.005, 0.995);

/// Per-variable uniform bin edges `d^0 < d^1 < … < d^I`, same `I` for all variables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscretizationGrid {
    bins: usize,
    edges: Vec<Vec<f64>>,
}

impl DiscretizationGrid {
    /// Uniform grid with `bins` intervals over each `(lo, hi)` range.
    pub fn uniform(ranges: &[(f64, f64)], bins: usize) -> Result<Self> {
        if bins < 1 {
            return Err(Error::InvalidArgument("bin count must be positive".into()));
        }
        let edges = ranges
            .iter()
            .enumerate()
            .map(|(n, &(lo, hi))| {
                if !(lo.is_finite() && hi.is_finite()) {
                    return Err(Error::InvalidValue(format!(
                        "non-finite range [{lo}, {hi}] for variable {n}"
                    )));
                }
                if hi <= lo {
                    return Err(Error::DegenerateSupport(n));
                }
                Ok(uniform_edges(lo, hi, bins))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { bins, edges })
    }

    /// Validates externally supplied edges (strictly increasing, uniform spacing).
    pub fn from_edges(edges: Vec<Vec<f64>>) -> Result<Self> {
        let bins = edges
            .first()
            .map(|e| e.len().saturating_sub(1))
            .ok_or_else(|| Error::InvalidArgument("grid has no variables".into()))?;
        if bins < 1 {
            return Err(Error::InvalidArgument("each variable needs at least 2 edges".into()));
        }
        for (n, e) in edges.iter().enumerate() {
            if e.len() != bins + 1 {
                return Err(Error::DimensionMismatch(format!(
                    "variable {n} has {} edges, expected {}",
                    e.len(),
                    bins + 1
                )));
            }
            if e.windows(2).any(|w| !(w[1] > w[0])) {
                return Err(Error::InvalidValue(format!(
                    "edges of variable {n} are not strictly increasing"
                )));
            }
            let spacing = (e[bins] - e[0]) / bins as f64;
            let scale = e[0].abs().max(e[bins].abs());
            let tol = 1e-9 * spacing + 8.0 * f64::EPSILON * scale;
            if e.windows(2).any(|w| ((w[1] - w[0]) - spacing).abs() > tol) {
                return Err(Error::InvalidValue(format!(
                    "edges of variable {n} are not uniformly spaced"
                )));
            }
        }
        Ok(Self { bins, edges })
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn num_vars(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self, n: usize) -> &[f64] {
        &self.edges[n]
    }

    pub fn all_edges(&self) -> &[Vec<f64>] {
        &self.edges
    }

    pub fn lower(&self, n: usize) -> f64 {
        self.edges[n][0]
    }

    pub fn upper(&self, n: usize) -> f64 {
        self.edges[n][self.bins]
    }

    /// Bin width of variable `n`.
    pub fn spacing(&self, n: usize) -> f64 {
        (self.upper(n) - self.lower(n)) / self.bins as f64
    }

    /// 0-based bin of `x` for variable `n`: bin `i` holds `(d^i, d^{i+1}]`,
    /// the lowest bin also holds `d^0`, and values outside the grid clamp to
    /// the edge bins.
    pub fn digitize(&self, n: usize, x: f64) -> Result<usize> {
        if x.is_nan() {
            return Err(Error::InvalidValue("cannot digitize NaN".into()));
        }
        if n >= self.edges.len() {
            return Err(Error::IndexOutOfRange(format!(
                "variable {n} of {}",
                self.edges.len()
            )));
        }
        Ok(self.bin_of(n, x))
    }

    #[inline]
    fn bin_of(&self, n: usize, x: f64) -> usize {
        let below = self.edges[n].partition_point(|&e| e < x);
        below.clamp(1, self.bins) - 1
    }
}

fn uniform_edges(lo: f64, hi: f64, bins: usize) -> Vec<f64> {
    let mut e: Vec<f64> = (0..=bins)
        .map(|i| lo + (hi - lo) * i as f64 / bins as f64)
        .collect();
    e[bins] = hi;
    e
}

/// Linear-interpolation empirical quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Per-variable support `[q_lo, q_hi]` split into `bins` equal intervals.
pub fn build_grid(data: &Dataset, bins: usize, clip: (f64, f64)) -> Result<DiscretizationGrid> {
    if bins < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 bins, got {bins}"
        )));
    }
    let (q_lo, q_hi) = clip;
    if !(0.0..1.0).contains(&q_lo) || !(q_hi > q_lo && q_hi <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "clip quantiles must satisfy 0 <= lo < hi <= 1, got ({q_lo}, {q_hi})"
        )));
    }
    let mut ranges = Vec::with_capacity(data.num_vars());
    for n in 0..data.num_vars() {
        let mut values = data.observed(n);
        if values.is_empty() {
            return Err(Error::UnusableVariable(n));
        }
        values.sort_by(f64::total_cmp);
        if values[0] == values[values.len() - 1] {
            return Err(Error::DegenerateSupport(n));
        }
        let lo = quantile_sorted(&values, q_lo);
        let hi = quantile_sorted(&values, q_hi);
        if hi <= lo {
            return Err(Error::DegenerateSupport(n));
        }
        ranges.push((lo, hi));
    }
    DiscretizationGrid::uniform(&ranges, bins)
}

/// Histogram of one ordered triple `j < k < l`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripleHistogram {
    pub triple: (usize, usize, usize),
    pub tensor: Tensor3,
    /// Records with all three variables observed.
    pub count: usize,
}

/// All available third-order histograms, ordered lexicographically by triple.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripleHistogramSet {
    bins: usize,
    vars: usize,
    entries: Vec<TripleHistogram>,
}

impl TripleHistogramSet {
    /// Validates and sorts a set of triple histograms.
    pub fn new(vars: usize, bins: usize, mut entries: Vec<TripleHistogram>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::EmptyStatistics);
        }
        for h in &entries {
            let (j, k, l) = h.triple;
            if !(j < k && k < l && l < vars) {
                return Err(Error::InvalidArgument(format!(
                    "triple ({j}, {k}, {l}) is not ordered within {vars} variables"
                )));
            }
            if h.tensor.dims() != [bins; 3] {
                return Err(Error::DimensionMismatch(format!(
                    "histogram {:?} has shape {:?}, expected {bins}^3",
                    h.triple,
                    h.tensor.dims()
                )));
            }
        }
        entries.sort_by_key(|h| h.triple);
        if entries.windows(2).any(|w| w[0].triple == w[1].triple) {
            return Err(Error::InvalidArgument("duplicate triple".into()));
        }
        Ok(Self {
            bins,
            vars,
            entries,
        })
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn num_vars(&self) -> usize {
        self.vars
    }

    pub fn entries(&self) -> &[TripleHistogram] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, j: usize, k: usize, l: usize) -> Option<&TripleHistogram> {
        self.entries
            .binary_search_by_key(&(j, k, l), |h| h.triple)
            .ok()
            .map(|i| &self.entries[i])
    }
}

/// Complete-case estimate of every `X_{jkl}`: each triple is normalized by
/// the number of records observing all three of its variables. Triples with
/// no such record are dropped with a warning.
pub fn estimate_triple_histograms(
    data: &Dataset,
    grid: &DiscretizationGrid,
) -> Result<TripleHistogramSet> {
    let n_vars = data.num_vars();
    if grid.num_vars() != n_vars {
        return Err(Error::DimensionMismatch(format!(
            "grid has {} variables, dataset has {n_vars}",
            grid.num_vars()
        )));
    }
    if n_vars < 3 {
        return Err(Error::InsufficientVariables(n_vars));
    }
    let bins = grid.bins();
    // Bin every observed cell once; u32::MAX marks a missing cell.
    const MISSING: u32 = u32::MAX;
    let mut binned = vec![MISSING; data.num_rows() * n_vars];
    for m in 0..data.num_rows() {
        for (n, cell) in data.row(m).iter().enumerate() {
            if let Some(x) = cell {
                binned[m * n_vars + n] = grid.bin_of(n, *x) as u32;
            }
        }
    }

    let mut entries = Vec::new();
    for j in 0..n_vars {
        for k in j + 1..n_vars {
            for l in k + 1..n_vars {
                let mut counts = vec![0u64; bins * bins * bins];
                let mut total = 0usize;
                for row in binned.chunks_exact(n_vars) {
                    let (a, b, c) = (row[j], row[k], row[l]);
                    if a == MISSING || b == MISSING || c == MISSING {
                        continue;
                    }
                    counts[a as usize + bins * (b as usize + bins * c as usize)] += 1;
                    total += 1;
                }
                if total == 0 {
                    warn!("dropping triple ({j}, {k}, {l}): no jointly observed record");
                    continue;
                }
                let values = counts
                    .into_iter()
                    .map(|c| c as f64 / total as f64)
                    .collect();
                entries.push(TripleHistogram {
                    triple: (j, k, l),
                    tensor: Tensor3::from_values([bins; 3], values)?,
                    count: total,
                });
            }
        }
    }
    TripleHistogramSet::new(n_vars, bins, entries)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn column(values: &[f64]) -> Dataset {
        Dataset::from_rows(&values.iter().map(|v| vec![*v]).collect::<Vec<_>>(), None).unwrap()
    }

    #[test]
    fn exact_range_split() {
        let ds = column(&(0..=10).map(f64::from).collect::<Vec<_>>());
        let g = build_grid(&ds, 5, (0.0, 1.0)).unwrap();
        assert_eq!(g.edges(0), &[0.0, 2.0, 4.0, 6.0, 8.0, 10.0]);
        assert_eq!(g.spacing(0), 2.0);
    }

    #[test]
    fn normal_support_matches_sample_quantiles() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let xs: Vec<f64> = (0..100_000).map(|_| rng.sample(StandardNormal)).collect();
        let g = build_grid(&column(&xs), 10, DEFAULT_CLIP).unwrap();
        // Independent quantile oracle: order statistics at the nearest ranks.
        let mut sorted = xs.clone();
        sorted.sort_by(f64::total_cmp);
        let lo_rank = sorted[(0.005 * 99_999.0f64).round() as usize];
        let hi_rank = sorted[(0.995 * 99_999.0f64).round() as usize];
        assert!((g.lower(0) - lo_rank).abs() < 1e-3);
        assert!((g.upper(0) - hi_rank).abs() < 1e-3);
        // And both near the standard normal's ±2.576 within sampling error.
        assert!((g.lower(0) + 2.576).abs() < 0.06);
        assert!((g.upper(0) - 2.576).abs() < 0.06);
    }

    #[test]
    fn grid_errors() {
        let ds = Dataset::new(
            vec!["a".into(), "b".into()],
            vec![Some(1.0), None, Some(2.0), None],
            None,
        )
        .unwrap();
        assert!(matches!(build_grid(&ds, 4, DEFAULT_CLIP), Err(Error::UnusableVariable(1))));
        let flat = column(&[3.0, 3.0, 3.0]);
        assert!(matches!(build_grid(&flat, 4, DEFAULT_CLIP), Err(Error::DegenerateSupport(0))));
        let ok = column(&[0.0, 1.0]);
        assert!(build_grid(&ok, 1, DEFAULT_CLIP).is_err());
    }

    #[test]
    fn digitize_conventions() {
        let g = DiscretizationGrid::uniform(&[(0.0, 10.0)], 5).unwrap();
        assert_eq!(g.digitize(0, 2.5).unwrap(), 1);
        assert_eq!(g.digitize(0, 0.0).unwrap(), 0);
        assert_eq!(g.digitize(0, 10.0).unwrap(), 4);
        assert_eq!(g.digitize(0, 2.0).unwrap(), 0);
        assert_eq!(g.digitize(0, 110.0).unwrap(), 4);
        assert_eq!(g.digitize(0, -5.0).unwrap(), 0);
        assert!(matches!(g.digitize(0, f64::NAN), Err(Error::InvalidValue(_))));
    }

    #[test]
    fn from_edges_validates() {
        assert!(DiscretizationGrid::from_edges(vec![vec![0.0, 1.0, 2.0]]).is_ok());
        assert!(DiscretizationGrid::from_edges(vec![vec![0.0, 1.0, 3.0]]).is_err());
        assert!(DiscretizationGrid::from_edges(vec![vec![0.0, 1.0], vec![0.0, 1.0, 2.0]]).is_err());
    }

    #[test]
    fn single_cell_and_diagonal_histograms() {
        let g = DiscretizationGrid::uniform(&[(0.0, 2.0); 3], 2).unwrap();
        let ds = Dataset::from_rows(&vec![vec![0.5, 0.5, 0.5]; 4], None).unwrap();
        let h = estimate_triple_histograms(&ds, &g).unwrap();
        assert_eq!(h.len(), 1);
        let t = &h.get(0, 1, 2).unwrap().tensor;
        assert_eq!(t.get(0, 0, 0), 1.0);
        assert_eq!(t.sum(), 1.0);

        let rows = vec![
            vec![0.5, 0.5, 0.5],
            vec![0.2, 0.1, 0.9],
            vec![1.5, 1.5, 1.5],
            vec![1.9, 1.2, 1.1],
        ];
        let h = estimate_triple_histograms(&Dataset::from_rows(&rows, None).unwrap(), &g).unwrap();
        let t = &h.entries()[0].tensor;
        assert_eq!(t.get(0, 0, 0), 0.5);
        assert_eq!(t.get(1, 1, 1), 0.5);
    }

    #[test]
    fn missing_cells_use_per_triple_counts() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let (m, n, bins) = (300, 5, 3);
        let cells: Vec<Option<f64>> = (0..m * n)
            .map(|_| {
                if rng.random::<f64>() < 0.25 {
                    None
                } else {
                    Some(rng.random_range(0.0..3.0))
                }
            })
            .collect();
        let ds = Dataset::new(crate::data::default_names(n), cells, None).unwrap();
        let g = DiscretizationGrid::uniform(&[(0.0, 3.0); 5], bins).unwrap();
        let h = estimate_triple_histograms(&ds, &g).unwrap();
        assert_eq!(h.len(), 10);
        for e in h.entries() {
            let (j, k, l) = e.triple;
            // Filter-then-count oracle with explicit bin arithmetic.
            let kept: Vec<[usize; 3]> = (0..m)
                .filter_map(|r| {
                    let (a, b, c) = (ds.get(r, j)?, ds.get(r, k)?, ds.get(r, l)?);
                    let bin = |x: f64| ((x.ceil() as usize).max(1) - 1).min(bins - 1);
                    Some([bin(a), bin(b), bin(c)])
                })
                .collect();
            assert_eq!(e.count, kept.len());
            for c in 0..bins {
                for b in 0..bins {
                    for a in 0..bins {
                        let cnt = kept.iter().filter(|t| **t == [a, b, c]).count();
                        assert_eq!(e.tensor.get(a, b, c), cnt as f64 / kept.len() as f64);
                    }
                }
            }
            assert!(e.tensor.is_probability(1e-9));
        }
    }

    #[test]
    fn marginal_consistency_on_complete_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let rows: Vec<Vec<f64>> = (0..500)
            .map(|_| (0..4).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let ds = Dataset::from_rows(&rows, None).unwrap();
        let g = build_grid(&ds, 4, (0.0, 1.0)).unwrap();
        let h = estimate_triple_histograms(&ds, &g).unwrap();
        let t = &h.get(0, 1, 3).unwrap().tensor;
        let mut pair = [[0usize; 4]; 4];
        for r in &rows {
            pair[g.digitize(0, r[0]).unwrap()][g.digitize(1, r[1]).unwrap()] += 1;
        }
        for a in 0..4 {
            for b in 0..4 {
                let summed: f64 = (0..4).map(|c| t.get(a, b, c)).sum();
                assert!((summed - pair[a][b] as f64 / 500.0).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn all_missing_triples_is_an_error() {
        let ds = Dataset::new(
            crate::data::default_names(3),
            vec![Some(0.1), Some(0.2), None, None, Some(0.3), Some(0.4)],
            None,
        )
        .unwrap();
        let g = DiscretizationGrid::uniform(&[(0.0, 1.0); 3], 2).unwrap();
        assert!(matches!(estimate_triple_histograms(&ds, &g), Err(Error::EmptyStatistics)));
    }

    proptest::proptest! {
        #[test]
        fn digitize_is_monotone(a in -20.0f64..20.0, b in -20.0f64..20.0) {
            let g = DiscretizationGrid::uniform(&[(-3.0, 7.0)], 7).unwrap();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            proptest::prop_assert!(g.digitize(0, lo).unwrap() <= g.digitize(0, hi).unwrap());
        }
    }
}
