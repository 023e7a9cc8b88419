//! Ground-truth parametric mixtures and synthetic datasets.

use std::f64::consts::{PI, SQRT_2};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;
use statrs::function::gamma::{gamma_lr, ln_gamma};

use crate::data::{default_names, Dataset};
use crate::error::{Error, Result};
use crate::mixture::ProductMixture;

/// Dirichlet concentration used for the mixing weights.
pub const DEFAULT_ALPHA: f64 = 10.0;

/// Shape of every shifted-Gamma conditional.
pub const GAMMA_SHAPE: f64 = 5.0;

/// A univariate conditional density with closed-form pdf, cdf and sampler.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Conditional {
    Gaussian { mean: f64, variance: f64 },
    /// Equal-weight mixture of two Gaussians.
    Gmm2 {
        mean1: f64,
        variance1: f64,
        mean2: f64,
        variance2: f64,
    },
    /// Support `x > shift`, pdf ∝ (x − shift)^(shape−1) exp(−(x − shift)/scale).
    ShiftedGamma { shape: f64, scale: f64, shift: f64 },
    /// Laplace with standard deviation `std_dev`.
    Laplace { mean: f64, std_dev: f64 },
}

fn normal_pdf(x: f64, mean: f64, variance: f64) -> f64 {
    (-(x - mean).powi(2) / (2.0 * variance)).exp() / (2.0 * PI * variance).sqrt()
}

fn normal_cdf(x: f64, mean: f64, variance: f64) -> f64 {
    0.5 * erfc(-(x - mean) / (2.0 * variance).sqrt())
}

impl Conditional {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            Conditional::Gaussian { mean, variance } => mean.is_finite() && variance > 0.0,
            Conditional::Gmm2 {
                mean1,
                variance1,
                mean2,
                variance2,
            } => mean1.is_finite() && mean2.is_finite() && variance1 > 0.0 && variance2 > 0.0,
            Conditional::ShiftedGamma { shape, scale, shift } => {
                shape > 0.0 && scale > 0.0 && shift.is_finite()
            }
            Conditional::Laplace { mean, std_dev } => mean.is_finite() && std_dev > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid parameters {self:?}")))
        }
    }

    pub fn pdf(&self, x: f64) -> f64 {
        match *self {
            Conditional::Gaussian { mean, variance } => normal_pdf(x, mean, variance),
            Conditional::Gmm2 {
                mean1,
                variance1,
                mean2,
                variance2,
            } => 0.5 * normal_pdf(x, mean1, variance1) + 0.5 * normal_pdf(x, mean2, variance2),
            Conditional::ShiftedGamma { shape, scale, shift } => {
                let z = x - shift;
                if z <= 0.0 {
                    return 0.0;
                }
                ((shape - 1.0) * z.ln() - z / scale - shape * scale.ln() - ln_gamma(shape)).exp()
            }
            Conditional::Laplace { mean, std_dev } => {
                (-SQRT_2 * (x - mean).abs() / std_dev).exp() / (SQRT_2 * std_dev)
            }
        }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        match *self {
            Conditional::Gaussian { mean, variance } => normal_cdf(x, mean, variance),
            Conditional::Gmm2 {
                mean1,
                variance1,
                mean2,
                variance2,
            } => 0.5 * normal_cdf(x, mean1, variance1) + 0.5 * normal_cdf(x, mean2, variance2),
            Conditional::ShiftedGamma { shape, scale, shift } => {
                let z = x - shift;
                if z <= 0.0 {
                    0.0
                } else {
                    gamma_lr(shape, z / scale)
                }
            }
            Conditional::Laplace { mean, std_dev } => {
                let b = std_dev / SQRT_2;
                if x < mean {
                    0.5 * ((x - mean) / b).exp()
                } else {
                    1.0 - 0.5 * (-(x - mean) / b).exp()
                }
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            Conditional::Gaussian { mean, variance } => {
                let z: f64 = rng.sample(StandardNormal);
                mean + variance.sqrt() * z
            }
            Conditional::Gmm2 {
                mean1,
                variance1,
                mean2,
                variance2,
            } => {
                let z: f64 = rng.sample(StandardNormal);
                if rng.random::<bool>() {
                    mean1 + variance1.sqrt() * z
                } else {
                    mean2 + variance2.sqrt() * z
                }
            }
            Conditional::ShiftedGamma { shape, scale, shift } => {
                shift + Gamma::new(shape, scale).expect("validated parameters").sample(rng)
            }
            Conditional::Laplace { mean, std_dev } => {
                let b = std_dev / SQRT_2;
                let u: f64 = rng.random::<f64>() - 0.5;
                mean - b * u.signum() * (1.0 - 2.0 * u.abs()).ln()
            }
        }
    }

    /// Inverse CDF by bisection, accurate to about 1e-12 in `x`.
    pub fn quantile(&self, p: f64) -> Result<f64> {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::InvalidArgument(format!("quantile level {p} outside (0, 1)")));
        }
        let spread = 10.0 * self.variance().sqrt().max(1.0);
        let (mut lo, mut hi) = (self.mean() - spread, self.mean() + spread);
        while self.cdf(lo) > p {
            lo -= spread;
        }
        while self.cdf(hi) < p {
            hi += spread;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.cdf(mid) < p {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= 1e-12 * (1.0 + mid.abs()) {
                break;
            }
        }
        Ok(0.5 * (lo + hi))
    }

    pub fn mean(&self) -> f64 {
        match *self {
            Conditional::Gaussian { mean, .. } | Conditional::Laplace { mean, .. } => mean,
            Conditional::Gmm2 { mean1, mean2, .. } => 0.5 * (mean1 + mean2),
            Conditional::ShiftedGamma { shape, scale, shift } => shift + shape * scale,
        }
    }

    pub fn variance(&self) -> f64 {
        match *self {
            Conditional::Gaussian { variance, .. } => variance,
            Conditional::Gmm2 {
                mean1,
                variance1,
                mean2,
                variance2,
            } => {
                let m = 0.5 * (mean1 + mean2);
                0.5 * (variance1 + mean1 * mean1) + 0.5 * (variance2 + mean2 * mean2) - m * m
            }
            Conditional::ShiftedGamma { shape, scale, .. } => shape * scale * scale,
            Conditional::Laplace { std_dev, .. } => std_dev * std_dev,
        }
    }
}

/// Mixture of products of parametric conditionals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParametricMixture {
    weights: Vec<f64>,
    vars: usize,
    /// `conditionals[n * R + r]`.
    conditionals: Vec<Conditional>,
}

impl ParametricMixture {
    pub fn new(weights: Vec<f64>, vars: usize, conditionals: Vec<Conditional>) -> Result<Self> {
        let rank = weights.len();
        if rank == 0 || vars == 0 || conditionals.len() != vars * rank {
            return Err(Error::DimensionMismatch(format!(
                "{} conditionals for {vars} variables x {rank} components",
                conditionals.len()
            )));
        }
        if weights.iter().any(|w| !(*w >= 0.0)) || (weights.iter().sum::<f64>() - 1.0).abs() > 1e-9
        {
            return Err(Error::InvalidArgument("weights are not on the simplex".into()));
        }
        for c in &conditionals {
            c.validate()?;
        }
        Ok(Self {
            weights,
            vars,
            conditionals,
        })
    }

    pub fn conditional(&self, n: usize, r: usize) -> &Conditional {
        &self.conditionals[n * self.weights.len() + r]
    }
}

impl ProductMixture for ParametricMixture {
    fn num_vars(&self) -> usize {
        self.vars
    }

    fn weights(&self) -> &[f64] {
        &self.weights
    }

    fn conditional_pdf(&self, n: usize, r: usize, x: f64) -> f64 {
        self.conditional(n, r).pdf(x)
    }

    fn sample_conditional(&self, n: usize, r: usize, rng: &mut ChaCha8Rng) -> f64 {
        self.conditional(n, r).sample(rng)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Gaussian,
    Gmm2,
    Gamma,
    Laplace,
}

impl Family {
    pub const ALL: [Family; 4] = [Family::Gaussian, Family::Gmm2, Family::Gamma, Family::Laplace];

    pub fn name(&self) -> &'static str {
        match self {
            Family::Gaussian => "gaussian",
            Family::Gmm2 => "gmm2",
            Family::Gamma => "gamma",
            Family::Laplace => "laplace",
        }
    }
}

impl std::str::FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gaussian" | "normal" => Ok(Family::Gaussian),
            "gmm2" | "gmm" => Ok(Family::Gmm2),
            "gamma" => Ok(Family::Gamma),
            "laplace" => Ok(Family::Laplace),
            other => Err(Error::UnknownFamily(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SettingSpec {
    pub family: Family,
    pub vars: usize,
    pub rank: usize,
    pub seed: u64,
    pub alpha: f64,
}

impl SettingSpec {
    pub fn new(family: Family, vars: usize, rank: usize, seed: u64) -> Self {
        Self {
            family,
            vars,
            rank,
            seed,
            alpha: DEFAULT_ALPHA,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.vars < 3 {
            return Err(Error::InsufficientVariables(self.vars));
        }
        if self.rank < 1 {
            return Err(Error::InvalidArgument("rank must be at least 1".into()));
        }
        if !(self.alpha > 0.0) {
            return Err(Error::InvalidArgument("Dirichlet concentration must be positive".into()));
        }
        Ok(())
    }
}

fn dirichlet(rank: usize, alpha: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let gamma = Gamma::new(alpha, 1.0).expect("positive concentration");
    let draws: Vec<f64> = (0..rank).map(|_| gamma.sample(rng).max(f64::MIN_POSITIVE)).collect();
    let total: f64 = draws.iter().sum();
    draws.into_iter().map(|g| g / total).collect()
}

/// Symmetric Dirichlet(α, …, α) draw of length `rank`.
pub fn gen_weights(rank: usize, alpha: f64, seed: u64) -> Result<Vec<f64>> {
    if rank < 1 || !(alpha > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "need rank >= 1 and alpha > 0, got rank={rank}, alpha={alpha}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(dirichlet(rank, alpha, &mut rng))
}

/// Draws a ground-truth mixture for one of the synthetic settings.
pub fn make_setting(spec: &SettingSpec) -> Result<ParametricMixture> {
    spec.validate()?;
    let weights = gen_weights(spec.rank, spec.alpha, spec.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(1);
    let mut u = |lo: f64, hi: f64| rng.random_range(lo..hi);
    let conditionals = (0..spec.vars * spec.rank)
        .map(|_| match spec.family {
            Family::Gaussian => Conditional::Gaussian {
                mean: u(-5.0, 5.0),
                variance: u(1.0, 2.0),
            },
            Family::Gmm2 => Conditional::Gmm2 {
                mean1: u(0.0, 7.0),
                variance1: u(1.0, 4.0),
                mean2: u(-7.0, 0.0),
                variance2: u(1.0, 4.0),
            },
            Family::Gamma => Conditional::ShiftedGamma {
                shape: GAMMA_SHAPE,
                shift: u(-5.0, 0.0),
                scale: u(0.1, 0.5),
            },
            Family::Laplace => Conditional::Laplace {
                mean: u(-5.0, 5.0),
                std_dev: u(5.0, 10.0).sqrt(),
            },
        })
        .collect();
    ParametricMixture::new(weights, spec.vars, conditionals)
}

/// The univariate two-Gaussian mixture `0.5 N(−6, 25) + 0.5 N(10, 25)` as a
/// one-variable, one-component model.
pub fn toy_mixture() -> ParametricMixture {
    ParametricMixture::new(
        vec![1.0],
        1,
        vec![Conditional::Gmm2 {
            mean1: -6.0,
            variance1: 25.0,
            mean2: 10.0,
            variance2: 25.0,
        }],
    )
    .expect("valid toy parameters")
}

/// Ancestral sampling of `rows` records; each cell is then hidden
/// independently with probability `missing_rate`. True labels are kept.
pub fn generate_dataset<M: ProductMixture>(
    mix: &M,
    rows: usize,
    missing_rate: f64,
    seed: u64,
) -> Result<Dataset> {
    if rows < 1 {
        return Err(Error::InvalidArgument("need at least one record".into()));
    }
    if !(0.0..1.0).contains(&missing_rate) {
        return Err(Error::InvalidArgument(format!(
            "missing rate must lie in [0, 1), got {missing_rate}"
        )));
    }
    let full = mix.sample(rows, seed)?;
    if missing_rate == 0.0 {
        return Ok(full);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let vars = full.num_vars();
    let cells = (0..rows * vars)
        .map(|idx| {
            let v = full.get(idx / vars, idx % vars);
            if rng.random::<f64>() < missing_rate {
                None
            } else {
                v
            }
        })
        .collect();
    Dataset::new(default_names(vars), cells, full.labels().map(<[usize]>::to_vec))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn moments(xs: &[f64]) -> (f64, f64) {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (mean, var)
    }

    fn check_sampler(c: Conditional) {
        let mut rng = ChaCha8Rng::seed_from_u64(123);
        let n = 100_000;
        let xs: Vec<f64> = (0..n).map(|_| c.sample(&mut rng)).collect();
        let (m, v) = moments(&xs);
        let se_mean = (c.variance() / n as f64).sqrt();
        assert!((m - c.mean()).abs() < 3.0 * se_mean, "{c:?}: mean {m}");
        // Standard error of the sample variance from the fourth central moment.
        let m4 = xs.iter().map(|x| (x - m).powi(4)).sum::<f64>() / n as f64;
        let se_var = ((m4 - v * v) / n as f64).sqrt();
        assert!((v - c.variance()).abs() < 3.0 * se_var, "{c:?}: var {v}");
    }

    #[test]
    fn samplers_match_closed_form_moments() {
        check_sampler(Conditional::Gaussian { mean: 1.5, variance: 1.7 });
        check_sampler(Conditional::Gmm2 {
            mean1: 3.0,
            variance1: 2.0,
            mean2: -4.0,
            variance2: 1.5,
        });
        check_sampler(Conditional::ShiftedGamma { shape: 5.0, scale: 0.3, shift: -2.0 });
        check_sampler(Conditional::Laplace { mean: -1.0, std_dev: 2.5 });
    }

    fn trapezoid(f: impl Fn(f64) -> f64, lo: f64, hi: f64, n: usize) -> f64 {
        let h = (hi - lo) / n as f64;
        let mut s = 0.5 * (f(lo) + f(hi));
        for i in 1..n {
            s += f(lo + i as f64 * h);
        }
        s * h
    }

    #[test]
    fn pdfs_integrate_to_one_and_match_cdfs() {
        let cases = [
            Conditional::Gaussian { mean: 0.5, variance: 2.0 },
            Conditional::Gmm2 {
                mean1: 3.0,
                variance1: 2.0,
                mean2: -4.0,
                variance2: 1.5,
            },
            Conditional::ShiftedGamma { shape: 5.0, scale: 0.4, shift: -1.0 },
            Conditional::Laplace { mean: 1.0, std_dev: 3.0 },
        ];
        for c in cases {
            assert!((trapezoid(|x| c.pdf(x), -60.0, 60.0, 400_000) - 1.0).abs() < 1e-6, "{c:?}");
            for x in [-3.0, -0.2, 0.7, 2.5] {
                let part = trapezoid(|t| c.pdf(t), -60.0, x, 200_000);
                assert!((part - c.cdf(x)).abs() < 1e-6, "{c:?} at {x}");
            }
        }
    }

    #[test]
    fn quantiles_invert_cdfs() {
        let cases = [
            Conditional::Gaussian { mean: 0.5, variance: 2.0 },
            Conditional::ShiftedGamma { shape: 5.0, scale: 0.4, shift: -1.0 },
            Conditional::Laplace { mean: 1.0, std_dev: 3.0 },
        ];
        for c in cases {
            for p in [0.005, 0.3, 0.5, 0.995] {
                assert!((c.cdf(c.quantile(p).unwrap()) - p).abs() < 1e-10, "{c:?} at {p}");
            }
        }
        let g = Conditional::Gaussian { mean: 0.0, variance: 1.0 };
        assert!((g.quantile(0.975).unwrap() - 1.959963984540054).abs() < 1e-9);
        assert!(g.quantile(1.0).is_err());
    }

    #[test]
    fn laplace_uses_standard_form() {
        let c = Conditional::Laplace { mean: 0.0, std_dev: 1.0 };
        assert!((c.pdf(0.0) - 1.0 / SQRT_2).abs() < 1e-15);
        assert!((c.pdf(1.0) - (-SQRT_2).exp() / SQRT_2).abs() < 1e-15);
    }

    #[test]
    fn weights() {
        assert_eq!(gen_weights(1, 10.0, 3).unwrap(), vec![1.0]);
        let w = gen_weights(5, 10.0, 4).unwrap();
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(w.iter().all(|v| *v > 0.0));
        assert_eq!(w, gen_weights(5, 10.0, 4).unwrap());
    }

    #[test]
    fn dirichlet_mean_is_uniform() {
        let (r, draws) = (4, 10_000);
        let mut sum = vec![0.0; r];
        let mut sq = vec![0.0; r];
        for seed in 0..draws {
            let w = gen_weights(r, 10.0, seed).unwrap();
            for k in 0..r {
                sum[k] += w[k];
                sq[k] += w[k] * w[k];
            }
        }
        for k in 0..r {
            let mean = sum[k] / draws as f64;
            let var = sq[k] / draws as f64 - mean * mean;
            let se = (var / draws as f64).sqrt();
            assert!((mean - 0.25).abs() < 3.0 * se, "component {k}: {mean}");
        }
    }

    #[test]
    fn settings_respect_parameter_ranges() {
        let g = make_setting(&SettingSpec::new(Family::Gaussian, 6, 4, 9)).unwrap();
        for n in 0..6 {
            for r in 0..4 {
                match *g.conditional(n, r) {
                    Conditional::Gaussian { mean, variance } => {
                        assert!((-5.0..=5.0).contains(&mean));
                        assert!((1.0..=2.0).contains(&variance));
                    }
                    other => panic!("unexpected {other:?}"),
                }
            }
        }
        let gm = make_setting(&SettingSpec::new(Family::Gamma, 4, 3, 1)).unwrap();
        for n in 0..4 {
            for r in 0..3 {
                match *gm.conditional(n, r) {
                    Conditional::ShiftedGamma { shape, scale, shift } => {
                        assert_eq!(shape, 5.0);
                        assert!((0.1..=0.5).contains(&scale));
                        assert!((-5.0..=0.0).contains(&shift));
                    }
                    other => panic!("unexpected {other:?}"),
                }
            }
        }
        let mix = make_setting(&SettingSpec::new(Family::Gmm2, 3, 2, 5)).unwrap();
        if let Conditional::Gmm2 { mean1, mean2, variance1, variance2 } = *mix.conditional(2, 1) {
            assert!((0.0..=7.0).contains(&mean1) && (-7.0..=0.0).contains(&mean2));
            assert!((1.0..=4.0).contains(&variance1) && (1.0..=4.0).contains(&variance2));
        }
        let lap = make_setting(&SettingSpec::new(Family::Laplace, 3, 2, 5)).unwrap();
        if let Conditional::Laplace { std_dev, .. } = *lap.conditional(0, 0) {
            assert!((5.0..=10.0).contains(&(std_dev * std_dev)));
        }
        assert_eq!(g, make_setting(&SettingSpec::new(Family::Gaussian, 6, 4, 9)).unwrap());
        assert!(make_setting(&SettingSpec::new(Family::Gaussian, 2, 4, 9)).is_err());
        assert!(matches!("cauchy".parse::<Family>(), Err(Error::UnknownFamily(_))));
    }

    #[test]
    fn datasets_and_missingness() {
        let mix = make_setting(&SettingSpec::new(Family::Gaussian, 3, 2, 2)).unwrap();
        let full = generate_dataset(&mix, 50, 0.0, 1).unwrap();
        assert_eq!(full.observed_fraction(), 1.0);
        assert_eq!(full, generate_dataset(&mix, 50, 0.0, 1).unwrap());

        let rows = 10_000;
        let partial = generate_dataset(&mix, rows, 0.2, 3).unwrap();
        let frac = partial.observed_fraction();
        // Binomial: sd = sqrt(0.16 / 30000) ≈ 0.0023, so 0.02 is far beyond 3 sd.
        assert!((frac - 0.8).abs() < 0.02, "{frac}");
        assert!(generate_dataset(&mix, 10, 1.0, 3).is_err());
    }

    #[test]
    fn label_frequencies_match_weights() {
        let mix = make_setting(&SettingSpec::new(Family::Laplace, 3, 3, 8)).unwrap();
        let rows = 100_000;
        let ds = generate_dataset(&mix, rows, 0.0, 4).unwrap();
        let labels = ds.labels().unwrap();
        for (r, w) in mix.weights().iter().enumerate() {
            let freq = labels.iter().filter(|l| **l == r).count() as f64 / rows as f64;
            let se = (w * (1.0 - w) / rows as f64).sqrt();
            assert!((freq - w).abs() < 3.0 * se, "component {r}: {freq} vs {w}");
        }
    }
}
