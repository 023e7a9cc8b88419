//! Smooth conditional CDFs and PDFs from discretized factor columns.
//!
//! A factor column holds the probability of each bin, so its cumulative sums
//! are CDF samples at the bin edges, spaced one bin width `T` apart. Treating
//! the CDF as band-limited, it is reconstructed by the truncated Shannon series
//!
//! ```text
//! F(x) = Σ_k F(d⁰ + kT) · sinc((x − d⁰ − kT) / T),
//! ```
//!
//! with `F = 0` to the left of the support and `F = 1` to the right, each side
//! padded with `L` samples. The PDF is the analytic derivative of that series.

use std::f64::consts::PI;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::cpd::CoupledModel;
use crate::error::{Error, Result};
use crate::grid::DiscretizationGrid;

/// Default one-sided padding length `L`.
pub const DEFAULT_PAD: usize = 128;

/// Floor applied when a PDF value feeds a logarithm or a product of densities.
pub const PDF_FLOOR: f64 = 1e-12;

/// Below this distance from a sample point the sinc derivative uses its Taylor series.
const SERIES_RADIUS: f64 = 1e-3;

/// Band-limited reconstruction of one conditional CDF.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothConditional {
    origin: f64,
    spacing: f64,
    samples: Vec<f64>,
    pad: usize,
}

impl SmoothConditional {
    /// CDF samples at the edges `origin + i·spacing`, `i = 0..=I`. They must
    /// lie in `[0, 1]` and be nondecreasing (tolerance 1e-9).
    pub fn from_cdf_samples(origin: f64, spacing: f64, samples: Vec<f64>, pad: usize) -> Result<Self> {
        if !(spacing > 0.0 && spacing.is_finite() && origin.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "invalid sample grid: origin {origin}, spacing {spacing}"
            )));
        }
        if samples.len() < 2 {
            return Err(Error::InvalidArgument("need at least two CDF samples".into()));
        }
        if samples.iter().any(|v| !(-1e-9..=1.0 + 1e-9).contains(v)) {
            return Err(Error::InvalidValue("CDF samples must lie in [0, 1]".into()));
        }
        if samples.windows(2).any(|w| w[1] < w[0] - 1e-9) {
            return Err(Error::InvalidValue("CDF samples must be nondecreasing".into()));
        }
        Ok(Self {
            origin,
            spacing,
            samples,
            pad,
        })
    }

    pub fn origin(&self) -> f64 {
        self.origin
    }

    /// Sample spacing `T`, equal to the bin width.
    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn pad(&self) -> usize {
        self.pad
    }

    pub fn bins(&self) -> usize {
        self.samples.len() - 1
    }

    /// `[d⁰, d^I]`.
    pub fn support(&self) -> (f64, f64) {
        (self.origin, self.origin + self.bins() as f64 * self.spacing)
    }

    /// Abscissae of the outermost padded samples.
    pub fn padded_support(&self) -> (f64, f64) {
        let pad = self.pad as f64;
        (
            self.origin - pad * self.spacing,
            self.origin + (self.bins() as f64 + pad) * self.spacing,
        )
    }

    /// Sample `k` of the padded sequence, `k` relative to `d⁰`.
    fn padded_value(&self, k: i64) -> f64 {
        if k < 0 {
            0.0
        } else if (k as usize) < self.samples.len() {
            self.samples[k as usize]
        } else {
            1.0
        }
    }

    /// Terms of the series with nonzero samples: `k ∈ 0..=I+L`.
    fn last_index(&self) -> i64 {
        (self.bins() + self.pad) as i64
    }

    /// The unclamped interpolant.
    pub fn interp_cdf_raw(&self, x: f64) -> f64 {
        let u = (x - self.origin) / self.spacing;
        let nearest = u.round();
        let delta = u - nearest;
        let k0 = nearest as i64;
        let s = (PI * delta).sin();
        let mut sum = 0.0;
        for k in 0..=self.last_index() {
            let f = self.padded_value(k);
            let m = k0 - k;
            let v = delta + m as f64;
            let term = if v == 0.0 {
                1.0
            } else {
                let sign = if m.rem_euclid(2) == 0 { 1.0 } else { -1.0 };
                sign * s / (PI * v)
            };
            sum += f * term;
        }
        sum
    }

    /// The interpolant clamped to `[0, 1]`.
    pub fn interp_cdf(&self, x: f64) -> f64 {
        self.interp_cdf_raw(x).clamp(0.0, 1.0)
    }

    /// Analytic derivative of the interpolant. Can dip slightly below zero.
    pub fn pdf(&self, x: f64) -> f64 {
        let u = (x - self.origin) / self.spacing;
        let nearest = u.round();
        let delta = u - nearest;
        let k0 = nearest as i64;
        let (s, c) = (PI * delta).sin_cos();
        let mut sum = 0.0;
        for k in 0..=self.last_index() {
            let f = self.padded_value(k);
            if f == 0.0 {
                continue;
            }
            let m = k0 - k;
            let v = delta + m as f64;
            let d = if v.abs() < SERIES_RADIUS {
                let v2 = v * v;
                -PI * PI * v / 3.0 + PI.powi(4) * v * v2 / 30.0
            } else {
                let sign = if m.rem_euclid(2) == 0 { 1.0 } else { -1.0 };
                sign * (c / v - s / (PI * v * v))
            };
            sum += f * d;
        }
        sum / self.spacing
    }

    /// `max(pdf(x), 1e-12)`, for log densities and products.
    pub fn pdf_floored(&self, x: f64) -> f64 {
        self.pdf(x).max(PDF_FLOOR)
    }
}

/// Cumulative sums of a simplex column, pinned to exactly 0 at `d⁰` and 1 at `d^I`.
pub fn cdf_samples_from_factor(column: &[f64], edges: &[f64], pad: usize) -> Result<SmoothConditional> {
    if column.len() + 1 != edges.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} bin masses for {} edges",
            column.len(),
            edges.len()
        )));
    }
    if let Some(v) = column.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
        return Err(Error::InvalidFactor(format!("entry {v} is not a nonnegative number")));
    }
    let total: f64 = column.iter().sum();
    if !(total > 0.0) {
        return Err(Error::InvalidFactor("column has zero mass".into()));
    }
    let bins = column.len();
    let mut samples = Vec::with_capacity(bins + 1);
    let mut acc = 0.0;
    samples.push(0.0);
    for v in column {
        acc += v;
        samples.push(acc / total);
    }
    samples[bins] = 1.0;
    let spacing = (edges[bins] - edges[0]) / bins as f64;
    SmoothConditional::from_cdf_samples(edges[0], spacing, samples, pad)
}

/// `T = π / ω_c`.
pub fn nyquist_spacing(omega_c: f64) -> Result<f64> {
    if !(omega_c > 0.0) || !omega_c.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "cutoff frequency must be positive, got {omega_c}"
        )));
    }
    Ok(PI / omega_c)
}

/// Reconstruction from exact CDF values at `I + 1` uniform edges over `[lo, hi]`.
/// The end samples keep their true values; the padding is still 0 and 1.
pub fn from_exact_cdf(
    cdf: impl Fn(f64) -> f64,
    lo: f64,
    hi: f64,
    bins: usize,
    pad: usize,
) -> Result<SmoothConditional> {
    if bins < 1 || !(hi > lo) {
        return Err(Error::InvalidArgument(format!(
            "need bins >= 1 and lo < hi, got {bins} bins over [{lo}, {hi}]"
        )));
    }
    let spacing = (hi - lo) / bins as f64;
    let samples: Vec<f64> = (0..=bins).map(|i| cdf(lo + i as f64 * spacing)).collect();
    SmoothConditional::from_cdf_samples(lo, spacing, samples, pad)
}

/// Smooth conditionals for every (variable, component) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothMarginalSet {
    vars: usize,
    rank: usize,
    conditionals: Vec<SmoothConditional>,
}

impl SmoothMarginalSet {
    pub fn from_model(model: &CoupledModel, grid: &DiscretizationGrid, pad: usize) -> Result<Self> {
        if grid.num_vars() != model.num_vars() || grid.bins() != model.bins() {
            return Err(Error::DimensionMismatch(format!(
                "grid is {}x{}, model is {}x{}",
                grid.num_vars(),
                grid.bins(),
                model.num_vars(),
                model.bins()
            )));
        }
        let mut conditionals = Vec::with_capacity(model.num_vars() * model.rank());
        for n in 0..model.num_vars() {
            for r in 0..model.rank() {
                conditionals.push(cdf_samples_from_factor(
                    &model.factor(n).column(r),
                    grid.edges(n),
                    pad,
                )?);
            }
        }
        Ok(Self {
            vars: model.num_vars(),
            rank: model.rank(),
            conditionals,
        })
    }

    /// `conditionals[n][r]`, flattened variable-major.
    pub fn from_conditionals(vars: usize, rank: usize, conditionals: Vec<SmoothConditional>) -> Result<Self> {
        if conditionals.len() != vars * rank || vars == 0 || rank == 0 {
            return Err(Error::DimensionMismatch(format!(
                "{} conditionals for {vars} variables x {rank} components",
                conditionals.len()
            )));
        }
        Ok(Self {
            vars,
            rank,
            conditionals,
        })
    }

    pub fn num_vars(&self) -> usize {
        self.vars
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn get(&self, n: usize, r: usize) -> &SmoothConditional {
        &self.conditionals[n * self.rank + r]
    }
}

/// One row of an exported curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurveRow {
    pub x: f64,
    pub cdf_true: Option<f64>,
    pub cdf_est: f64,
    pub pdf_true: Option<f64>,
    pub pdf_est: f64,
}

/// Evaluates `sc` at `resolution` evenly spaced points of `[lo, hi]`.
/// `truth` supplies optional reference `(cdf, pdf)` values.
pub fn sample_curve(
    sc: &SmoothConditional,
    lo: f64,
    hi: f64,
    resolution: usize,
    truth: Option<&dyn Fn(f64) -> (f64, f64)>,
) -> Result<Vec<CurveRow>> {
    if resolution < 2 || !(hi > lo) {
        return Err(Error::InvalidArgument(format!(
            "need resolution >= 2 and lo < hi, got {resolution} over [{lo}, {hi}]"
        )));
    }
    Ok((0..resolution)
        .map(|i| {
            let x = lo + (hi - lo) * i as f64 / (resolution - 1) as f64;
            let t = truth.map(|f| f(x));
            CurveRow {
                x,
                cdf_true: t.map(|v| v.0),
                cdf_est: sc.interp_cdf(x),
                pdf_true: t.map(|v| v.1),
                pdf_est: sc.pdf(x),
            }
        })
        .collect())
}

/// CSV with columns `x,cdf_true,cdf_est,pdf_true,pdf_est`; the truth columns
/// are omitted when no row carries them.
pub fn write_curves_csv<W: Write>(writer: W, rows: &[CurveRow]) -> Result<()> {
    let with_truth = rows.iter().any(|r| r.cdf_true.is_some());
    let mut wtr = csv::Writer::from_writer(writer);
    if with_truth {
        wtr.write_record(["x", "cdf_true", "cdf_est", "pdf_true", "pdf_est"])?;
    } else {
        wtr.write_record(["x", "cdf_est", "pdf_est"])?;
    }
    for r in rows {
        let mut fields = vec![r.x.to_string()];
        if with_truth {
            fields.push(r.cdf_true.map(|v| v.to_string()).unwrap_or_default());
        }
        fields.push(r.cdf_est.to_string());
        if with_truth {
            fields.push(r.pdf_true.map(|v| v.to_string()).unwrap_or_default());
        }
        fields.push(r.pdf_est.to_string());
        wtr.write_record(&fields)?;
    }
    wtr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use statrs::distribution::{Continuous, ContinuousCDF, Normal};

    fn edges(lo: f64, hi: f64, bins: usize) -> Vec<f64> {
        (0..=bins).map(|i| lo + (hi - lo) * i as f64 / bins as f64).collect()
    }

    fn random_column(bins: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v: Vec<f64> = (0..bins).map(|_| rng.random_range(0.0..1.0)).collect();
        let s: f64 = v.iter().sum();
        v.into_iter().map(|x| x / s).collect()
    }

    #[test]
    fn uniform_and_point_mass_columns() {
        let sc = cdf_samples_from_factor(&[0.25; 4], &edges(0.0, 4.0, 4), 16).unwrap();
        for (i, v) in sc.samples().iter().enumerate() {
            assert!((v - i as f64 / 4.0).abs() < 1e-15);
        }
        let sc = cdf_samples_from_factor(&[1.0, 0.0, 0.0], &edges(0.0, 3.0, 3), 16).unwrap();
        assert_eq!(sc.samples(), &[0.0, 1.0, 1.0, 1.0]);
        assert_eq!(sc.spacing(), 1.0);
    }

    #[test]
    fn random_column_cumsum() {
        let col = random_column(7, 3);
        let sc = cdf_samples_from_factor(&col, &edges(-2.0, 5.0, 7), 16).unwrap();
        let mut acc = 0.0;
        assert_eq!(sc.samples()[0], 0.0);
        for (i, v) in col.iter().enumerate().take(6) {
            acc += v;
            assert!((sc.samples()[i + 1] - acc).abs() < 1e-15);
        }
        assert_eq!(sc.samples()[7], 1.0);
        assert!(cdf_samples_from_factor(&[0.5, -0.1, 0.6], &edges(0.0, 1.0, 3), 4).is_err());
        assert!(cdf_samples_from_factor(&[0.5, 0.5], &edges(0.0, 1.0, 3), 4).is_err());
    }

    #[test]
    fn interpolation_identity_on_all_padded_samples() {
        let col = random_column(6, 11);
        let sc = cdf_samples_from_factor(&col, &edges(1.0, 4.0, 6), 20).unwrap();
        for k in -20..=26i64 {
            let x = 1.0 + k as f64 * 0.5;
            assert!((sc.interp_cdf_raw(x) - sc.padded_value(k)).abs() < 1e-12, "k={k}");
        }
    }

    #[test]
    fn constant_signal_ripple_is_small() {
        // 2L+1 unit samples centred on zero, nothing else in the series.
        let pad = 128;
        let dc = SmoothConditional::from_cdf_samples(-(pad as f64), 1.0, vec![1.0; 2 * pad + 1], 0)
            .unwrap();
        for i in 0..=400 {
            let x = -20.0 + 40.0 * i as f64 / 400.0;
            let v = dc.interp_cdf_raw(x);
            assert!((v - 1.0).abs() <= 1e-3, "x={x}: {v}");
        }
    }

    #[test]
    fn pdf_integrates_to_one_over_padded_support() {
        let sc = cdf_samples_from_factor(&random_column(8, 5), &edges(-3.0, 5.0, 8), 32).unwrap();
        let (lo, hi) = sc.padded_support();
        let n = 40_000;
        let h = (hi - lo) / n as f64;
        let mut total = 0.5 * (sc.pdf(lo) + sc.pdf(hi));
        for i in 1..n {
            total += sc.pdf(lo + i as f64 * h);
        }
        total *= h;
        assert!((total - 1.0).abs() < 1e-3, "{total}");
    }

    #[test]
    fn pdf_matches_cdf_finite_differences() {
        let sc = cdf_samples_from_factor(&random_column(10, 9), &edges(-5.0, 5.0, 10), 64).unwrap();
        let h = 1e-5;
        for i in 0..=400 {
            let x = -8.0 + 16.0 * i as f64 / 400.0;
            let fd = (sc.interp_cdf_raw(x + h) - sc.interp_cdf_raw(x - h)) / (2.0 * h);
            assert!((fd - sc.pdf(x)).abs() < 1e-6, "x={x}: {fd} vs {}", sc.pdf(x));
        }
        // Exactly on and next to sample points.
        for x in [-5.0, 0.0, 1.0 + 1e-9, 2.0 - 1e-4] {
            let fd = (sc.interp_cdf_raw(x + h) - sc.interp_cdf_raw(x - h)) / (2.0 * h);
            assert!((fd - sc.pdf(x)).abs() < 1e-6);
        }
    }

    #[test]
    fn gaussian_mixture_recovered_from_exact_samples() {
        let a = Normal::new(-6.0, 5.0).unwrap();
        let b = Normal::new(10.0, 5.0).unwrap();
        let cdf = |x: f64| 0.5 * a.cdf(x) + 0.5 * b.cdf(x);
        let pdf = |x: f64| 0.5 * a.pdf(x) + 0.5 * b.pdf(x);
        let (lo, hi) = (-19.0, 23.0);
        let e = edges(lo, hi, 10);
        let samples: Vec<f64> = e.iter().map(|x| cdf(*x)).collect();
        let sc = SmoothConditional::from_cdf_samples(lo, 4.2, samples, DEFAULT_PAD).unwrap();
        for i in 0..=1000 {
            let x = lo + (hi - lo) * i as f64 / 1000.0;
            assert!((sc.interp_cdf(x) - cdf(x)).abs() < 5e-3);
            assert!((sc.pdf(x) - pdf(x)).abs() < 1e-2);
        }
    }

    #[test]
    fn exact_samples_over_central_mass() {
        let c = *crate::synth::toy_mixture().conditional(0, 0);
        let (lo, hi) = (c.quantile(0.005).unwrap(), c.quantile(0.995).unwrap());
        let sc = from_exact_cdf(|x| c.cdf(x), lo, hi, 10, DEFAULT_PAD).unwrap();
        assert_eq!(sc.samples()[0], c.cdf(lo));
        for i in 0..=1000 {
            let x = lo + (hi - lo) * i as f64 / 1000.0;
            assert!((sc.interp_cdf(x) - c.cdf(x)).abs() < 5e-3);
            assert!((sc.pdf(x) - c.pdf(x)).abs() < 1e-2);
        }
        assert!(from_exact_cdf(|x| c.cdf(x), 1.0, 1.0, 10, 8).is_err());
    }

    #[test]
    fn nyquist() {
        assert!((nyquist_spacing(0.8).unwrap() - 3.927).abs() < 1e-3);
        assert!((nyquist_spacing(PI).unwrap() - 1.0).abs() < 1e-15);
        assert!((nyquist_spacing(1.6).unwrap() * 2.0 - nyquist_spacing(0.8).unwrap()).abs() < 1e-15);
        assert!(nyquist_spacing(0.0).is_err());
        assert!(nyquist_spacing(-1.0).is_err());
    }

    #[test]
    fn curve_rows_and_csv() {
        let sc = cdf_samples_from_factor(&[0.5, 0.5], &edges(0.0, 2.0, 2), 8).unwrap();
        let truth = |x: f64| (x / 2.0, 0.5);
        let rows = sample_curve(&sc, 0.0, 2.0, 5, Some(&truth)).unwrap();
        assert_eq!(rows.len(), 5);
        let mut buf = Vec::new();
        write_curves_csv(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("x,cdf_true,cdf_est,pdf_true,pdf_est\n"));
        assert_eq!(text.lines().count(), 6);
        assert!(sample_curve(&sc, 1.0, 0.0, 5, None).is_err());
    }
}
