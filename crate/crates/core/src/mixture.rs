//! Mixtures of product densities: evaluation, posteriors, clustering, sampling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cpd::CoupledModel;
use crate::data::{default_names, Dataset};
use crate::error::{Error, Result};
use crate::grid::DiscretizationGrid;
use crate::smooth::{SmoothConditional, SmoothMarginalSet, PDF_FLOOR};

/// Points of the tabulated CDF used for inverse-transform sampling.
pub const SAMPLER_POINTS: usize = 1024;

/// A finite mixture whose components factorize over the variables.
///
/// Implementors supply the conditionals; everything else is derived. Densities
/// are floored at [`PDF_FLOOR`] before entering a product, and missing cells
/// are marginalized out by omitting their factor.
pub trait ProductMixture {
    fn num_vars(&self) -> usize;

    fn weights(&self) -> &[f64];

    /// Density of variable `n` under component `r`.
    fn conditional_pdf(&self, n: usize, r: usize, x: f64) -> f64;

    fn sample_conditional(&self, n: usize, r: usize, rng: &mut ChaCha8Rng) -> f64;

    fn num_components(&self) -> usize {
        self.weights().len()
    }

    /// `ln λ_r + Σ_n ln f_{n,r}(x_n)` over the observed cells.
    fn log_component_terms(&self, x: &[Option<f64>]) -> Result<Vec<f64>> {
        if x.len() != self.num_vars() {
            return Err(Error::LengthMismatch {
                left: x.len(),
                right: self.num_vars(),
            });
        }
        Ok(self
            .weights()
            .iter()
            .enumerate()
            .map(|(r, w)| {
                let mut acc = w.ln();
                for (n, v) in x.iter().enumerate() {
                    if let Some(v) = v {
                        acc += self.conditional_pdf(n, r, *v).max(PDF_FLOOR).ln();
                    }
                }
                acc
            })
            .collect())
    }

    fn log_density(&self, x: &[Option<f64>]) -> Result<f64> {
        Ok(log_sum_exp(&self.log_component_terms(x)?))
    }

    fn joint_density(&self, x: &[Option<f64>]) -> Result<f64> {
        Ok(self.log_density(x)?.exp())
    }

    fn posterior(&self, x: &[Option<f64>]) -> Result<Vec<f64>> {
        let terms = self.log_component_terms(x)?;
        let norm = log_sum_exp(&terms);
        Ok(terms.iter().map(|t| (t - norm).exp()).collect())
    }

    /// Most probable component; ties go to the lowest index.
    fn map_cluster(&self, x: &[Option<f64>]) -> Result<usize> {
        let terms = self.log_component_terms(x)?;
        let mut best = 0;
        for (r, t) in terms.iter().enumerate() {
            if *t > terms[best] {
                best = r;
            }
        }
        Ok(best)
    }

    fn cluster(&self, data: &Dataset) -> Result<Vec<usize>> {
        (0..data.num_rows()).map(|m| self.map_cluster(data.row(m))).collect()
    }

    /// Ancestral sampling; the returned dataset carries the 0-based component labels.
    fn sample(&self, count: usize, seed: u64) -> Result<Dataset> {
        if count == 0 {
            return Err(Error::InvalidArgument("need at least one sample".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let weights = self.weights();
        let vars = self.num_vars();
        let mut cells = Vec::with_capacity(count * vars);
        let mut labels = Vec::with_capacity(count);
        for _ in 0..count {
            let r = draw_component(weights, rng.random::<f64>());
            labels.push(r);
            for n in 0..vars {
                cells.push(Some(self.sample_conditional(n, r, &mut rng)));
            }
        }
        Dataset::new(default_names(vars), cells, Some(labels))
    }
}

pub fn log_sum_exp(terms: &[f64]) -> f64 {
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln()
}

fn draw_component(weights: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (r, w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return r;
        }
    }
    // Rounding left `u` above the cumulative sum: take the last positive weight.
    weights.iter().rposition(|w| *w > 0.0).unwrap_or(0)
}

/// Tabulated monotone CDF for inverse-transform sampling.
#[derive(Debug, Clone, PartialEq)]
struct InverseCdf {
    xs: Vec<f64>,
    fs: Vec<f64>,
}

impl InverseCdf {
    fn new(xs: Vec<f64>, raw: impl Iterator<Item = f64>) -> Self {
        let mut fs = Vec::with_capacity(xs.len());
        let mut run = 0.0f64;
        for v in raw {
            run = run.max(v.clamp(0.0, 1.0));
            fs.push(run);
        }
        let (lo, hi) = (fs[0], *fs.last().unwrap());
        let span = hi - lo;
        if span > 0.0 {
            for f in &mut fs {
                *f = (*f - lo) / span;
            }
        }
        Self { xs, fs }
    }

    fn invert(&self, u: f64) -> f64 {
        let j = self.fs.partition_point(|f| *f <= u).clamp(1, self.fs.len() - 1);
        let (f0, f1) = (self.fs[j - 1], self.fs[j]);
        let (x0, x1) = (self.xs[j - 1], self.xs[j]);
        if f1 > f0 {
            x0 + (x1 - x0) * (u - f0) / (f1 - f0)
        } else {
            0.5 * (x0 + x1)
        }
    }
}

fn tabulate(sc: &SmoothConditional) -> InverseCdf {
    let (lo, hi) = sc.support();
    let (lo, hi) = (lo - sc.spacing(), hi + sc.spacing());
    let xs: Vec<f64> = (0..SAMPLER_POINTS)
        .map(|i| lo + (hi - lo) * i as f64 / (SAMPLER_POINTS - 1) as f64)
        .collect();
    let values: Vec<f64> = xs.iter().map(|x| sc.interp_cdf(*x)).collect();
    InverseCdf::new(xs, values.into_iter())
}

/// The learned model: factor weights with sinc-smoothed conditionals.
#[derive(Debug, Clone)]
pub struct MixtureDensity {
    model: CoupledModel,
    grid: DiscretizationGrid,
    marginals: SmoothMarginalSet,
    samplers: Vec<InverseCdf>,
}

impl MixtureDensity {
    pub fn new(model: CoupledModel, grid: DiscretizationGrid, pad: usize) -> Result<Self> {
        let marginals = SmoothMarginalSet::from_model(&model, &grid, pad)?;
        let samplers = (0..model.num_vars())
            .flat_map(|n| (0..model.rank()).map(move |r| (n, r)))
            .map(|(n, r)| tabulate(marginals.get(n, r)))
            .collect();
        Ok(Self {
            model,
            grid,
            marginals,
            samplers,
        })
    }

    pub fn model(&self) -> &CoupledModel {
        &self.model
    }

    pub fn grid(&self) -> &DiscretizationGrid {
        &self.grid
    }

    pub fn marginals(&self) -> &SmoothMarginalSet {
        &self.marginals
    }

    pub fn pad(&self) -> usize {
        self.marginals.get(0, 0).pad()
    }

    pub fn conditional(&self, n: usize, r: usize) -> &SmoothConditional {
        self.marginals.get(n, r)
    }

    pub fn conditional_cdf(&self, n: usize, r: usize, x: f64) -> f64 {
        self.marginals.get(n, r).interp_cdf(x)
    }
}

impl ProductMixture for MixtureDensity {
    fn num_vars(&self) -> usize {
        self.model.num_vars()
    }

    fn weights(&self) -> &[f64] {
        self.model.weights()
    }

    fn conditional_pdf(&self, n: usize, r: usize, x: f64) -> f64 {
        self.marginals.get(n, r).pdf(x)
    }

    fn sample_conditional(&self, n: usize, r: usize, rng: &mut ChaCha8Rng) -> f64 {
        self.samplers[n * self.model.rank() + r].invert(rng.random::<f64>())
    }
}

/// The same factors read as piecewise-constant densities on the grid bins,
/// zero outside the support.
#[derive(Debug, Clone)]
pub struct HistogramMixture {
    model: CoupledModel,
    grid: DiscretizationGrid,
}

impl HistogramMixture {
    pub fn new(model: CoupledModel, grid: DiscretizationGrid) -> Result<Self> {
        if grid.num_vars() != model.num_vars() || grid.bins() != model.bins() {
            return Err(Error::DimensionMismatch(format!(
                "grid is {}x{}, model is {}x{}",
                grid.num_vars(),
                grid.bins(),
                model.num_vars(),
                model.bins()
            )));
        }
        Ok(Self { model, grid })
    }
}

impl ProductMixture for HistogramMixture {
    fn num_vars(&self) -> usize {
        self.model.num_vars()
    }

    fn weights(&self) -> &[f64] {
        self.model.weights()
    }

    fn conditional_pdf(&self, n: usize, r: usize, x: f64) -> f64 {
        if !(x >= self.grid.lower(n) && x <= self.grid.upper(n)) {
            return 0.0;
        }
        let bin = self.grid.digitize(n, x).expect("finite value inside the support");
        self.model.factor(n).get(bin, r) / self.grid.spacing(n)
    }

    fn sample_conditional(&self, n: usize, r: usize, rng: &mut ChaCha8Rng) -> f64 {
        let pmf = self.model.factor(n).column(r);
        let bin = draw_component(&pmf, rng.random::<f64>());
        let lo = self.grid.edges(n)[bin];
        lo + self.grid.spacing(n) * rng.random::<f64>()
    }
}
