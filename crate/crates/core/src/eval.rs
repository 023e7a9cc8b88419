//! Evaluation: Monte-Carlo KL, aligned clustering accuracy, conditional L1 errors.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::cpd::CoupledModel;
use crate::error::{Error, Result};
use crate::mixture::ProductMixture;
use crate::synth::ParametricMixture;
use crate::tensor::FactorMatrix;

/// Default number of Monte-Carlo test points.
pub const DEFAULT_MC_POINTS: usize = 1000;

/// Default quadrature resolution for L1 errors.
pub const DEFAULT_L1_POINTS: usize = 512;

/// Half-width of the truth window for L1 errors, in standard deviations.
const WINDOW_SDS: f64 = 8.0;

/// Minimum-cost perfect matching on a square `n × n` row-major cost matrix.
/// Returns `assignment[row] = column`.
pub fn hungarian(cost: &[f64], n: usize) -> Result<Vec<usize>> {
    if cost.len() != n * n {
        return Err(Error::DimensionMismatch(format!(
            "{} costs for a {n}x{n} assignment",
            cost.len()
        )));
    }
    if cost.iter().any(|c| !c.is_finite()) {
        return Err(Error::InvalidValue("assignment costs must be finite".into()));
    }
    // Shortest augmenting paths with row/column potentials; index 0 is a sentinel.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for row in 1..=n {
        owner[0] = row;
        let mut col0 = 0;
        let mut min_to = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[col0] = true;
            let i0 = owner[col0];
            let mut delta = f64::INFINITY;
            let mut col1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let reduced = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
                if reduced < min_to[j] {
                    min_to[j] = reduced;
                    way[j] = col0;
                }
                if min_to[j] < delta {
                    delta = min_to[j];
                    col1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    min_to[j] -= delta;
                }
            }
            col0 = col1;
            if owner[col0] == 0 {
                break;
            }
        }
        loop {
            let col1 = way[col0];
            owner[col0] = owner[col1];
            col0 = col1;
            if col0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; n];
    for j in 1..=n {
        assignment[owner[j] - 1] = j - 1;
    }
    Ok(assignment)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KlEstimate {
    pub estimate: f64,
    pub stderr: f64,
    pub points: usize,
}

/// `(1/M′) Σ ln f(x)/f̂(x)` over `points` draws from `truth`, with the sample
/// standard error of the mean.
pub fn kl_monte_carlo<T, L>(truth: &T, learned: &L, points: usize, seed: u64) -> Result<KlEstimate>
where
    T: ProductMixture + ?Sized,
    L: ProductMixture + ?Sized,
{
    if points == 0 {
        return Err(Error::InvalidArgument("need at least one Monte-Carlo point".into()));
    }
    if truth.num_vars() != learned.num_vars() {
        return Err(Error::LengthMismatch {
            left: truth.num_vars(),
            right: learned.num_vars(),
        });
    }
    let sample = truth.sample(points, seed)?;
    let ratios = (0..points)
        .map(|m| {
            let x = sample.row(m);
            Ok(truth.log_density(x)? - learned.log_density(x)?)
        })
        .collect::<Result<Vec<f64>>>()?;
    let mean = ratios.iter().sum::<f64>() / points as f64;
    let stderr = if points > 1 {
        let var = ratios.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (points - 1) as f64;
        (var / points as f64).sqrt()
    } else {
        0.0
    };
    Ok(KlEstimate {
        estimate: mean,
        stderr,
        points,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Alignment {
    pub accuracy: f64,
    /// `permutation[true component] = predicted component`.
    pub permutation: Vec<usize>,
}

/// Accuracy (correct / total) under the best matching of predicted to true labels.
pub fn clustering_accuracy(truth: &[usize], predicted: &[usize], rank: usize) -> Result<Alignment> {
    if truth.len() != predicted.len() {
        return Err(Error::LengthMismatch {
            left: truth.len(),
            right: predicted.len(),
        });
    }
    if truth.is_empty() || rank == 0 {
        return Err(Error::InvalidArgument("need labels and a positive rank".into()));
    }
    if let Some(l) = truth.iter().chain(predicted).find(|l| **l >= rank) {
        return Err(Error::IndexOutOfRange(format!("label {} with R={rank}", l + 1)));
    }
    let mut confusion = vec![0.0; rank * rank];
    for (t, p) in truth.iter().zip(predicted) {
        confusion[t * rank + p] += 1.0;
    }
    let cost: Vec<f64> = confusion.iter().map(|c| -c).collect();
    let permutation = hungarian(&cost, rank)?;
    let correct: f64 = permutation.iter().enumerate().map(|(t, p)| confusion[t * rank + p]).sum();
    Ok(Alignment {
        accuracy: correct / truth.len() as f64,
        permutation,
    })
}

/// Matches learned components to true ones by the summed column-wise L1
/// distance of the factor matrices. Returns `permutation[true] = learned`.
pub fn align_factors(truth: &[FactorMatrix], learned: &[FactorMatrix]) -> Result<Vec<usize>> {
    if truth.len() != learned.len() || truth.is_empty() {
        return Err(Error::LengthMismatch {
            left: truth.len(),
            right: learned.len(),
        });
    }
    let rank = truth[0].cols();
    for (a, b) in truth.iter().zip(learned) {
        if a.rows() != b.rows() || a.cols() != rank || b.cols() != rank {
            return Err(Error::DimensionMismatch("factor shapes differ".into()));
        }
    }
    let mut cost = vec![0.0; rank * rank];
    for (a, b) in truth.iter().zip(learned) {
        for r in 0..rank {
            for s in 0..rank {
                cost[r * rank + s] += (0..a.rows()).map(|i| (a.get(i, r) - b.get(i, s)).abs()).sum::<f64>();
            }
        }
    }
    hungarian(&cost, rank)
}

/// [`align_factors`] on two coupled models.
pub fn align_models(truth: &CoupledModel, learned: &CoupledModel) -> Result<Vec<usize>> {
    align_factors(truth.factors(), learned.factors())
}

/// Trapezoid approximation of `∫ |f − g|` over `[lo, hi]` with `points` nodes.
pub fn l1_distance(f: impl Fn(f64) -> f64, g: impl Fn(f64) -> f64, lo: f64, hi: f64, points: usize) -> f64 {
    let h = (hi - lo) / (points - 1) as f64;
    let mut total = 0.0;
    for i in 0..points {
        let x = lo + h * i as f64;
        let w = if i == 0 || i + 1 == points { 0.5 } else { 1.0 };
        total += w * (f(x) - g(x)).abs();
    }
    total * h
}

/// Per-(n, r) L1 distance between the true conditional of component `r` and
/// the learned conditional of component `permutation[r]`.
///
/// The window covers the true mean ± 8 standard deviations joined with
/// `learned_window(n, r)` when it is supplied.
pub fn conditional_l1_error<L: ProductMixture + ?Sized>(
    truth: &ParametricMixture,
    learned: &L,
    permutation: &[usize],
    learned_window: Option<&dyn Fn(usize, usize) -> (f64, f64)>,
    points: usize,
) -> Result<Vec<Vec<f64>>> {
    let rank = truth.num_components();
    if learned.num_vars() != truth.num_vars() || learned.num_components() != rank {
        return Err(Error::DimensionMismatch(format!(
            "truth is {}x{}, learned is {}x{}",
            truth.num_vars(),
            rank,
            learned.num_vars(),
            learned.num_components()
        )));
    }
    check_permutation(permutation, rank)?;
    if points < 2 {
        return Err(Error::InvalidArgument("need at least two quadrature points".into()));
    }
    Ok((0..truth.num_vars())
        .map(|n| {
            (0..rank)
                .map(|r| {
                    let c = truth.conditional(n, r);
                    let s = permutation[r];
                    let sd = c.variance().sqrt();
                    let (mut lo, mut hi) = (c.mean() - WINDOW_SDS * sd, c.mean() + WINDOW_SDS * sd);
                    if let Some(w) = learned_window {
                        let (a, b) = w(n, s);
                        lo = lo.min(a);
                        hi = hi.max(b);
                    }
                    l1_distance(|x| c.pdf(x), |x| learned.conditional_pdf(n, s, x), lo, hi, points)
                })
                .collect()
        })
        .collect())
}

fn check_permutation(permutation: &[usize], rank: usize) -> Result<()> {
    let mut seen = vec![false; rank];
    if permutation.len() != rank {
        return Err(Error::LengthMismatch {
            left: permutation.len(),
            right: rank,
        });
    }
    for &p in permutation {
        if p >= rank || seen[p] {
            return Err(Error::InvalidArgument(format!("{permutation:?} is not a permutation")));
        }
        seen[p] = true;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct EvalReport {
    pub kl: Option<KlEstimate>,
    pub accuracy: Option<f64>,
    pub permutation: Option<Vec<usize>>,
    /// `l1_errors[n][r]`, indexed by true component.
    pub l1_errors: Option<Vec<Vec<f64>>>,
    /// Monte-Carlo points, or the number of labelled records for accuracy-only reports.
    pub test_points: usize,
}

/// One row of a sweep table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub setting: String,
    pub method: String,
    pub samples: usize,
    pub trial: usize,
    pub kl: Option<f64>,
    pub kl_stderr: Option<f64>,
    pub accuracy: Option<f64>,
}

/// Writes sweep rows as CSV, with a header unless `header` is false (for appending).
pub fn write_sweep_csv<W: Write>(writer: W, rows: &[SweepRow], header: bool) -> Result<()> {
    let mut wtr = csv::WriterBuilder::new().has_headers(header).from_writer(writer);
    for row in rows {
        wtr.serialize(row)?;
    }
    wtr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::Conditional;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute_force(cost: &[f64], n: usize) -> f64 {
        fn rec(cost: &[f64], n: usize, row: usize, used: &mut [bool], acc: f64, best: &mut f64) {
            if row == n {
                *best = best.min(acc);
                return;
            }
            for c in 0..n {
                if !used[c] {
                    used[c] = true;
                    rec(cost, n, row + 1, used, acc + cost[row * n + c], best);
                    used[c] = false;
                }
            }
        }
        let mut best = f64::INFINITY;
        rec(cost, n, 0, &mut vec![false; n], 0.0, &mut best);
        best
    }

    #[test]
    fn hungarian_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for trial in 0..200 {
            let n = 1 + trial % 7;
            let cost: Vec<f64> = (0..n * n).map(|_| rng.random_range(-5.0..5.0)).collect();
            let a = hungarian(&cost, n).unwrap();
            let mut sorted = a.clone();
            sorted.sort_unstable();
            assert_eq!(sorted, (0..n).collect::<Vec<_>>());
            let total: f64 = a.iter().enumerate().map(|(r, c)| cost[r * n + c]).sum();
            assert!((total - brute_force(&cost, n)).abs() < 1e-9);
        }
    }

    fn single(mean: f64) -> ParametricMixture {
        ParametricMixture::new(vec![1.0], 1, vec![Conditional::Gaussian { mean, variance: 1.0 }]).unwrap()
    }

    #[test]
    fn kl_of_model_with_itself_is_zero() {
        let m = single(0.3);
        let kl = kl_monte_carlo(&m, &m, 500, 1).unwrap();
        assert_eq!(kl.estimate, 0.0);
        assert_eq!(kl.points, 500);
    }

    #[test]
    fn kl_between_unit_gaussians_is_half() {
        let kl = kl_monte_carlo(&single(0.0), &single(1.0), 10_000, 2).unwrap();
        assert!((kl.estimate - 0.5).abs() < 3.0 * kl.stderr, "{kl:?}");
    }

    #[test]
    fn accuracy_absorbs_permutations() {
        let truth: Vec<usize> = (0..300).map(|i| i % 3).collect();
        let same = clustering_accuracy(&truth, &truth, 3).unwrap();
        assert_eq!(same.accuracy, 1.0);
        assert_eq!(same.permutation, vec![0, 1, 2]);
        let perm = [2, 0, 1];
        let pred: Vec<usize> = truth.iter().map(|t| perm[*t]).collect();
        let a = clustering_accuracy(&truth, &pred, 3).unwrap();
        assert_eq!(a.accuracy, 1.0);
        assert_eq!(a.permutation, perm.to_vec());
        let b = clustering_accuracy(&pred, &truth, 3).unwrap();
        assert_eq!(b.accuracy, 1.0);
        assert!(clustering_accuracy(&truth, &pred[1..], 3).is_err());
        assert!(clustering_accuracy(&[0, 3], &[0, 1], 3).is_err());
    }

    #[test]
    fn random_labels_give_chance_accuracy() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let m = 10_000;
        let truth: Vec<usize> = (0..m).map(|_| rng.random_range(0..5)).collect();
        let pred: Vec<usize> = (0..m).map(|_| rng.random_range(0..5)).collect();
        let a = clustering_accuracy(&truth, &pred, 5).unwrap();
        // The best of 120 matchings sits slightly above 0.2; its excess is a
        // few standard errors at most.
        let se = (0.2f64 * 0.8 / m as f64).sqrt();
        assert!(a.accuracy >= 0.2 - 3.0 * se && a.accuracy < 0.2 + 6.0 * se, "{}", a.accuracy);
    }

    #[test]
    fn l1_extremes() {
        let boxf = |lo: f64| move |x: f64| if x > lo && x < lo + 1.0 { 1.0 } else { 0.0 };
        let d = l1_distance(boxf(0.0), boxf(2.0), -1.0, 4.0, 50_001);
        assert!((d - 2.0).abs() < 1e-3);
        let m = single(0.5);
        let e = conditional_l1_error(&m, &m, &[0], None, DEFAULT_L1_POINTS).unwrap();
        assert!(e[0][0].abs() < 1e-6);
        assert!(conditional_l1_error(&m, &m, &[1], None, 512).is_err());
    }

    #[test]
    fn l1_is_symmetric_and_bounded() {
        let a = single(0.0);
        let b = single(1.5);
        let ab = conditional_l1_error(&a, &b, &[0], Some(&|_, _| (-10.0, 10.0)), 2001).unwrap()[0][0];
        let ba = conditional_l1_error(&b, &a, &[0], Some(&|_, _| (-10.0, 10.0)), 2001).unwrap()[0][0];
        assert!((ab - ba).abs() < 1e-12);
        assert!(ab > 0.0 && ab <= 2.0);
    }

    #[test]
    fn factor_alignment_finds_planted_permutation() {
        let a = FactorMatrix::from_columns(&[vec![0.7, 0.2, 0.1], vec![0.1, 0.1, 0.8], vec![0.3, 0.4, 0.3]]).unwrap();
        let order = [1, 2, 0];
        let b = a.permute_columns(&order);
        let perm = align_factors(&[a.clone(), a.clone()], &[b.clone(), b]).unwrap();
        // Column `order[r]` of `a` landed at position r of `b`.
        for (r, o) in order.iter().enumerate() {
            assert_eq!(perm[*o], r);
        }
    }

    #[test]
    fn sweep_csv_shape() {
        let rows: Vec<SweepRow> = [1000, 10_000, 100_000]
            .iter()
            .map(|m| SweepRow {
                setting: "gaussian".into(),
                method: "smooth".into(),
                samples: *m,
                trial: 0,
                kl: Some(0.1),
                kl_stderr: Some(0.01),
                accuracy: None,
            })
            .collect();
        let mut buf = Vec::new();
        write_sweep_csv(&mut buf, &rows, true).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 4);
        assert!(text.starts_with("setting,method,samples,trial,kl,kl_stderr,accuracy"));
    }
}
