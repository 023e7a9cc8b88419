//! Coupled nonnegative CPD of all triple histograms under simplex constraints.
//!
//! The objective is `Σ_{j<k<l} D(X_jkl, [[λ, A_j, A_k, A_l]])` with every
//! factor column and `λ` on the probability simplex. Blocks are updated
//! cyclically with exponentiated-gradient (entropic mirror descent) steps whose
//! size is chosen by backtracking. The coupling is handled by summing the
//! per-triple gradients of every triple a block appears in; the stacked block
//! tensor is never formed.

use log::{debug, warn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{TripleHistogram, TripleHistogramSet};
use crate::tensor::{self, FactorMatrix, Matrix, Tensor3, KL_FLOOR};

/// Entries are kept at or above this value after every multiplicative update.
pub const POSITIVITY_FLOOR: f64 = 1e-16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Loss {
    /// `Σ X log(X/Y)`
    #[default]
    Kl,
    /// `Σ (X − Y)²`
    Fro,
}

impl std::str::FromStr for Loss {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "kl" => Ok(Loss::Kl),
            "fro" | "frobenius" => Ok(Loss::Fro),
            other => Err(Error::InvalidArgument(format!("unknown loss `{other}`"))),
        }
    }
}

/// Mixing weights and column-stochastic factor matrices, one per variable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoupledModel {
    weights: Vec<f64>,
    factors: Vec<FactorMatrix>,
}

impl CoupledModel {
    /// Validates shapes and simplex feasibility (tolerance 1e-9).
    pub fn new(weights: Vec<f64>, factors: Vec<FactorMatrix>) -> Result<Self> {
        let rank = weights.len();
        if rank == 0 || factors.is_empty() {
            return Err(Error::InvalidArgument("empty model".into()));
        }
        if weights.iter().any(|w| !(*w >= 0.0)) || (weights.iter().sum::<f64>() - 1.0).abs() > 1e-9
        {
            return Err(Error::InvalidArgument("weights are not on the simplex".into()));
        }
        let bins = factors[0].rows();
        for (n, f) in factors.iter().enumerate() {
            if f.cols() != rank || f.rows() != bins {
                return Err(Error::DimensionMismatch(format!(
                    "factor {n} is {}x{}, expected {bins}x{rank}",
                    f.rows(),
                    f.cols()
                )));
            }
            if !f.is_column_stochastic(1e-9) {
                return Err(Error::InvalidArgument(format!(
                    "factor {n} is not column-stochastic"
                )));
            }
        }
        Ok(Self { weights, factors })
    }

    pub fn rank(&self) -> usize {
        self.weights.len()
    }

    pub fn bins(&self) -> usize {
        self.factors[0].rows()
    }

    pub fn num_vars(&self) -> usize {
        self.factors.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn factor(&self, n: usize) -> &FactorMatrix {
        &self.factors[n]
    }

    pub fn factors(&self) -> &[FactorMatrix] {
        &self.factors
    }

    /// Reorders components so that new component `r` is old component `order[r]`.
    pub fn permute_components(&self, order: &[usize]) -> Self {
        Self {
            weights: order.iter().map(|&r| self.weights[r]).collect(),
            factors: self.factors.iter().map(|f| f.permute_columns(order)).collect(),
        }
    }

    /// Largest deviation of any column sum (or `Σλ`) from one.
    pub fn simplex_violation(&self) -> f64 {
        let mut worst = (self.weights.iter().sum::<f64>() - 1.0).abs();
        for f in &self.factors {
            for s in f.column_sums() {
                worst = worst.max((s - 1.0).abs());
            }
        }
        worst
    }

    /// The model's own triple tensors `[[λ, A_j, A_k, A_l]]` for every triple.
    pub fn exact_histograms(&self) -> Result<TripleHistogramSet> {
        let n = self.num_vars();
        if n < 3 {
            return Err(Error::InsufficientVariables(n));
        }
        let mut entries = Vec::new();
        for j in 0..n {
            for k in j + 1..n {
                for l in k + 1..n {
                    entries.push(TripleHistogram {
                        triple: (j, k, l),
                        tensor: tensor::reconstruct(
                            &self.weights,
                            &self.factors[j],
                            &self.factors[k],
                            &self.factors[l],
                        )?,
                        count: 1,
                    });
                }
            }
        }
        TripleHistogramSet::new(n, self.bins(), entries)
    }
}

/// Backtracking parameters. The trial steps are `initial_step · backtrack^t`
/// for `t = 0..=max_backtracks`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArmijoParams {
    pub initial_step: f64,
    pub backtrack: f64,
    pub sufficient_decrease: f64,
    pub max_backtracks: usize,
}

impl Default for ArmijoParams {
    fn default() -> Self {
        Self {
            initial_step: 1.0,
            backtrack: 0.5,
            sufficient_decrease: 1e-4,
            max_backtracks: 30,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub loss: Loss,
    pub rank: usize,
    pub max_outer_iters: usize,
    /// EG steps per block per outer iteration.
    pub inner_iters: usize,
    /// Stop once the relative objective decrease over one outer iteration falls below this.
    pub tolerance: f64,
    pub armijo: ArmijoParams,
    pub seed: u64,
    pub restarts: usize,
}

impl SolverConfig {
    pub fn new(rank: usize) -> Self {
        Self {
            loss: Loss::Kl,
            rank,
            max_outer_iters: 500,
            inner_iters: 5,
            tolerance: 1e-6,
            armijo: ArmijoParams::default(),
            seed: 0,
            restarts: 5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let a = &self.armijo;
        let checks = [
            (self.rank >= 1, "rank must be at least 1"),
            (self.max_outer_iters >= 1, "max_outer_iters must be at least 1"),
            (self.inner_iters >= 1, "inner_iters must be at least 1"),
            (self.tolerance > 0.0, "tolerance must be positive"),
            (self.restarts >= 1, "restarts must be at least 1"),
            (a.initial_step > 0.0, "initial step must be positive"),
            (a.backtrack > 0.0 && a.backtrack < 1.0, "backtrack factor must lie in (0, 1)"),
            (
                a.sufficient_decrease > 0.0 && a.sufficient_decrease < 1.0,
                "sufficient-decrease constant must lie in (0, 1)",
            ),
        ];
        for (ok, msg) in checks {
            if !ok {
                return Err(Error::InvalidArgument(msg.into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    /// Objective before the first and after every outer iteration of the selected restart.
    pub trajectory: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub restart_objectives: Vec<f64>,
    pub selected_restart: usize,
    pub advisory: IdentifiabilityAdvisory,
}

impl FitReport {
    pub fn final_objective(&self) -> f64 {
        *self.trajectory.last().expect("trajectory is never empty")
    }
}

/// Outcome of a single solver run from one initialization.
#[derive(Debug, Clone, PartialEq)]
pub struct RunTrace {
    pub trajectory: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Uniqueness bounds for the coupled decomposition of `N` variables with `I` bins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentifiabilityAdvisory {
    pub vars: usize,
    pub bins: usize,
    pub rank: usize,
    /// Kruskal's condition on a single triple with generic factors (k-rank = min(I, R)).
    pub kruskal_ok: bool,
    /// `(⌊(N−1)/2⌋ − 1) · I`: the decomposition is computable algebraically below it.
    pub theorem1_bound: usize,
    pub theorem1_ok: bool,
    /// `⌊log2(⌊N/3⌋ · I)⌋`.
    pub alpha: u32,
    /// `2^(2(α−1))`: generic uniqueness below it.
    pub theorem2_bound: u64,
    pub theorem2_ok: bool,
    /// `(⌊N/3⌋ · I + 1)² / 16`.
    pub quadratic_bound: f64,
    pub quadratic_ok: bool,
}

pub fn check_identifiability(vars: usize, bins: usize, rank: usize) -> Result<IdentifiabilityAdvisory> {
    if vars < 3 {
        return Err(Error::InsufficientVariables(vars));
    }
    if bins < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 bins, got {bins}")));
    }
    let k = bins.min(rank);
    let theorem1_bound = ((vars - 1) / 2).saturating_sub(1) * bins;
    let stacked = (vars / 3) * bins;
    let alpha = stacked.ilog2();
    let theorem2_bound = 1u64 << (2 * (alpha - 1));
    let quadratic_bound = ((stacked + 1) as f64).powi(2) / 16.0;
    Ok(IdentifiabilityAdvisory {
        vars,
        bins,
        rank,
        kruskal_ok: 3 * k >= 2 * rank + 2,
        theorem1_bound,
        theorem1_ok: rank <= theorem1_bound,
        alpha,
        theorem2_bound,
        theorem2_ok: rank as u64 <= theorem2_bound,
        quadratic_bound,
        quadratic_ok: rank as f64 <= quadratic_bound,
    })
}

/// Entries i.i.d. uniform on (0.1, 1.0), then every column and `λ` normalized.
pub fn init_random(vars: usize, bins: usize, rank: usize, seed: u64) -> Result<CoupledModel> {
    init_restart(vars, bins, rank, seed, 0)
}

/// The initialization used by restart `stream` of [`fit`].
pub fn init_restart(
    vars: usize,
    bins: usize,
    rank: usize,
    seed: u64,
    stream: u64,
) -> Result<CoupledModel> {
    if vars < 3 {
        return Err(Error::InsufficientVariables(vars));
    }
    if bins < 2 || rank < 1 {
        return Err(Error::InvalidArgument(format!(
            "need bins >= 2 and rank >= 1, got bins={bins}, rank={rank}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let mut draw = |len: usize| -> Vec<f64> { (0..len).map(|_| rng.random_range(0.1..1.0)).collect() };
    let factors = (0..vars)
        .map(|_| {
            let mut f = FactorMatrix::from_raw(bins, rank, draw(bins * rank));
            normalize_columns(f.values_mut(), rank);
            f
        })
        .collect();
    let mut weights = draw(rank);
    normalize_columns(&mut weights, 1);
    Ok(CoupledModel { weights, factors })
}

fn normalize_columns(values: &mut [f64], cols: usize) {
    let mut sums = vec![0.0; cols];
    for row in values.chunks_exact(cols) {
        for (s, v) in sums.iter_mut().zip(row) {
            *s += v;
        }
    }
    for row in values.chunks_exact_mut(cols) {
        for (v, s) in row.iter_mut().zip(&sums) {
            *v /= s;
        }
    }
}

/// λ viewed as an `R × 1` column-stochastic block.
pub fn weights_block(weights: &[f64]) -> FactorMatrix {
    FactorMatrix::from_raw(weights.len(), 1, weights.to_vec())
}

/// Exponentiated-gradient step `block ∘ exp(−η · gradient)` followed by
/// per-column renormalization and the positivity floor.
pub fn eg_update(block: &FactorMatrix, gradient: &Matrix, step: f64) -> FactorMatrix {
    let (rows, cols) = (block.rows(), block.cols());
    debug_assert_eq!((gradient.rows(), gradient.cols()), (rows, cols));
    let g = gradient.values();
    // Shifting each gradient column by its minimum leaves the normalized
    // result unchanged and keeps every exponent nonpositive.
    let mut shift = vec![f64::INFINITY; cols];
    for row in g.chunks_exact(cols) {
        for (s, v) in shift.iter_mut().zip(row) {
            *s = s.min(*v);
        }
    }
    let mut values: Vec<f64> = block
        .values()
        .iter()
        .zip(g)
        .enumerate()
        .map(|(idx, (a, gv))| a * (-step * (gv - shift[idx % cols])).exp())
        .collect();
    normalize_columns(&mut values, cols);
    if values.iter().any(|v| *v < POSITIVITY_FLOOR) {
        values.iter_mut().for_each(|v| *v = v.max(POSITIVITY_FLOOR));
        normalize_columns(&mut values, cols);
    }
    FactorMatrix::from_raw(rows, cols, values)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArmijoOutcome {
    /// Accepted step, or 0 when every trial failed.
    pub step: f64,
    /// Objective at the returned block.
    pub objective: f64,
    pub block: FactorMatrix,
    /// Number of objective evaluations performed.
    pub evaluations: usize,
}

/// Backtracking along the EG arc: accepts the first `η = η₀ β^t` with
/// `f(x(η)) ≤ f(x) − σ ⟨∇f(x), x − x(η)⟩`, where `x(η)` is the EG update.
/// When all `t ≤ t_max` fail the block is returned unchanged with `η = 0`.
pub fn armijo_step<F>(
    block: &FactorMatrix,
    gradient: &Matrix,
    current: f64,
    params: &ArmijoParams,
    mut objective: F,
) -> ArmijoOutcome
where
    F: FnMut(&FactorMatrix) -> f64,
{
    let mut step = params.initial_step;
    for t in 0..=params.max_backtracks {
        let candidate = eg_update(block, gradient, step);
        let decrease: f64 = block
            .values()
            .iter()
            .zip(candidate.values())
            .zip(gradient.values())
            .map(|((x, y), g)| g * (x - y))
            .sum();
        let value = objective(&candidate);
        if value.is_finite() && value <= current - params.sufficient_decrease * decrease.max(0.0) {
            return ArmijoOutcome {
                step,
                objective: value,
                block: candidate,
                evaluations: t + 1,
            };
        }
        step *= params.backtrack;
    }
    ArmijoOutcome {
        step: 0.0,
        objective: current,
        block: block.clone(),
        evaluations: params.max_backtracks + 1,
    }
}

/// Backtracking restarts one expansion above the previously accepted step,
/// capped at the configured initial step.
fn warm(params: &ArmijoParams, last: f64) -> ArmijoParams {
    ArmijoParams {
        initial_step: (last / params.backtrack).min(params.initial_step),
        ..*params
    }
}

fn check_dims(model: &CoupledModel, hists: &TripleHistogramSet) -> Result<()> {
    if model.num_vars() != hists.num_vars() || model.bins() != hists.bins() {
        return Err(Error::DimensionMismatch(format!(
            "model has {} variables x {} bins, histograms have {} x {}",
            model.num_vars(),
            model.bins(),
            hists.num_vars(),
            hists.bins()
        )));
    }
    Ok(())
}

/// Position of a variable inside a triple.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Slot {
    First,
    Second,
    Third,
}

/// Per-loss evaluation against fixed histograms, with reusable buffers.
struct Evaluator<'a> {
    hists: &'a [TripleHistogram],
    loss: Loss,
    /// `Σ X log X` per triple (KL only).
    entropy: Vec<f64>,
    /// Triples containing each variable, with the slot it occupies.
    by_var: Vec<Vec<(usize, Slot)>>,
    y: Vec<f64>,
    w: Vec<f64>,
    scratch: Vec<f64>,
    acc: Vec<f64>,
}

impl<'a> Evaluator<'a> {
    fn new(hists: &'a TripleHistogramSet, loss: Loss, rank: usize) -> Self {
        let entries = hists.entries();
        let mut by_var = vec![Vec::new(); hists.num_vars()];
        for (t, h) in entries.iter().enumerate() {
            let (j, k, l) = h.triple;
            by_var[j].push((t, Slot::First));
            by_var[k].push((t, Slot::Second));
            by_var[l].push((t, Slot::Third));
        }
        let entropy = entries
            .iter()
            .map(|h| {
                h.tensor
                    .values()
                    .iter()
                    .filter(|x| **x > 0.0)
                    .map(|x| x * x.ln())
                    .sum()
            })
            .collect();
        let cells = hists.bins().pow(3);
        Self {
            hists: entries,
            loss,
            entropy,
            by_var,
            y: vec![0.0; cells],
            w: vec![0.0; cells],
            scratch: vec![0.0; rank],
            acc: vec![0.0; rank],
        }
    }

    fn factors<'m>(
        &self,
        model: &'m CoupledModel,
        t: usize,
        replace: Option<(usize, &'m FactorMatrix)>,
    ) -> [&'m FactorMatrix; 3] {
        let (j, k, l) = self.hists[t].triple;
        let pick = |n: usize| match replace {
            Some((m, f)) if m == n => f,
            _ => &model.factors[n],
        };
        [pick(j), pick(k), pick(l)]
    }

    /// Loss of one triple; leaves the reconstruction in `self.y`.
    fn triple_loss(&mut self, t: usize, weights: &[f64], f: [&FactorMatrix; 3]) -> f64 {
        tensor::reconstruct_into(weights, f[0], f[1], f[2], &mut self.scratch, &mut self.y);
        let x = self.hists[t].tensor.values();
        match self.loss {
            Loss::Kl => {
                let cross: f64 = x
                    .iter()
                    .zip(&self.y)
                    .filter(|(xv, _)| **xv > 0.0)
                    .map(|(xv, yv)| xv * yv.max(KL_FLOOR).ln())
                    .sum();
                self.entropy[t] - cross
            }
            Loss::Fro => tensor::fro_terms(x, &self.y),
        }
    }

    /// Fills `self.w` with dD/dY for the reconstruction currently in `self.y`.
    fn loss_derivative(&mut self, t: usize) {
        let x = self.hists[t].tensor.values();
        match self.loss {
            Loss::Kl => {
                for ((w, xv), yv) in self.w.iter_mut().zip(x).zip(&self.y) {
                    *w = if *xv > 0.0 { -xv / yv.max(KL_FLOOR) } else { 0.0 };
                }
            }
            Loss::Fro => {
                for ((w, xv), yv) in self.w.iter_mut().zip(x).zip(&self.y) {
                    *w = 2.0 * (yv - xv);
                }
            }
        }
    }

    fn total(&mut self, model: &CoupledModel) -> f64 {
        (0..self.hists.len())
            .map(|t| {
                let f = self.factors(model, t, None);
                self.triple_loss(t, &model.weights, f)
            })
            .sum()
    }

    /// Sum over the triples containing `var`, with that factor replaced by `candidate`.
    fn partial(&mut self, model: &CoupledModel, var: usize, candidate: &FactorMatrix) -> f64 {
        let mut sum = 0.0;
        for idx in 0..self.by_var[var].len() {
            let t = self.by_var[var][idx].0;
            let f = self.factors(model, t, Some((var, candidate)));
            sum += self.triple_loss(t, &model.weights, f);
        }
        sum
    }

    fn with_weights(&mut self, model: &CoupledModel, weights: &[f64]) -> f64 {
        (0..self.hists.len())
            .map(|t| {
                let f = self.factors(model, t, None);
                self.triple_loss(t, weights, f)
            })
            .sum()
    }

    /// Adds the gradient of triple `t` w.r.t. the factor in `slot` into `grad`
    /// (row-major `I × R`). Requires `self.w` filled for that triple.
    fn accumulate_factor_grad(
        &mut self,
        weights: &[f64],
        f: [&FactorMatrix; 3],
        slot: Slot,
        grad: &mut [f64],
    ) {
        let rank = weights.len();
        let (a, b, c) = (f[0], f[1], f[2]);
        let (i1, i2, i3) = (a.rows(), b.rows(), c.rows());
        let av = a.values();
        for ic in 0..i3 {
            for ib in 0..i2 {
                let base = i1 * (ib + i2 * ic);
                let w = &self.w[base..base + i1];
                match slot {
                    Slot::First => {
                        for r in 0..rank {
                            self.scratch[r] = weights[r] * b.get(ib, r) * c.get(ic, r);
                        }
                        for (ia, wv) in w.iter().enumerate() {
                            if *wv == 0.0 {
                                continue;
                            }
                            let g = &mut grad[ia * rank..(ia + 1) * rank];
                            for (gr, s) in g.iter_mut().zip(&self.scratch) {
                                *gr += wv * s;
                            }
                        }
                    }
                    Slot::Second | Slot::Third => {
                        self.acc.iter_mut().for_each(|v| *v = 0.0);
                        for (ia, wv) in w.iter().enumerate() {
                            if *wv == 0.0 {
                                continue;
                            }
                            for (acc, av) in self.acc.iter_mut().zip(&av[ia * rank..(ia + 1) * rank]) {
                                *acc += wv * av;
                            }
                        }
                        let (row, other) = match slot {
                            Slot::Second => (ib, c.values()),
                            _ => (ic, b.values()),
                        };
                        let other_row = if slot == Slot::Second { ic } else { ib };
                        let g = &mut grad[row * rank..(row + 1) * rank];
                        for r in 0..rank {
                            g[r] += weights[r] * other[other_row * rank + r] * self.acc[r];
                        }
                    }
                }
            }
        }
    }

    fn accumulate_weight_grad(&mut self, f: [&FactorMatrix; 3], grad: &mut [f64]) {
        let rank = grad.len();
        let (a, b, c) = (f[0], f[1], f[2]);
        let (i1, i2, i3) = (a.rows(), b.rows(), c.rows());
        let av = a.values();
        for ic in 0..i3 {
            for ib in 0..i2 {
                let base = i1 * (ib + i2 * ic);
                self.acc.iter_mut().for_each(|v| *v = 0.0);
                for (ia, wv) in self.w[base..base + i1].iter().enumerate() {
                    if *wv == 0.0 {
                        continue;
                    }
                    for (acc, a) in self.acc.iter_mut().zip(&av[ia * rank..(ia + 1) * rank]) {
                        *acc += wv * a;
                    }
                }
                for r in 0..rank {
                    grad[r] += self.acc[r] * b.get(ib, r) * c.get(ic, r);
                }
            }
        }
    }

    /// Gradient w.r.t. factor `var`; also returns the partial objective at the
    /// current model unless `known` already supplies it.
    fn factor_gradient(&mut self, model: &CoupledModel, var: usize, known: Option<f64>) -> (Matrix, f64) {
        let (bins, rank) = (model.bins(), model.rank());
        let mut grad = vec![0.0; bins * rank];
        let mut value = 0.0;
        for idx in 0..self.by_var[var].len() {
            let (t, slot) = self.by_var[var][idx];
            let f = self.factors(model, t, None);
            if known.is_some() {
                tensor::reconstruct_into(&model.weights, f[0], f[1], f[2], &mut self.scratch, &mut self.y);
            } else {
                value += self.triple_loss(t, &model.weights, f);
            }
            self.loss_derivative(t);
            self.accumulate_factor_grad(&model.weights, f, slot, &mut grad);
        }
        (matrix_from(bins, rank, grad), known.unwrap_or(value))
    }

    fn weight_gradient(&mut self, model: &CoupledModel, known: Option<f64>) -> (Vec<f64>, f64) {
        let mut grad = vec![0.0; model.rank()];
        let mut value = 0.0;
        for t in 0..self.hists.len() {
            let f = self.factors(model, t, None);
            if known.is_some() {
                tensor::reconstruct_into(&model.weights, f[0], f[1], f[2], &mut self.scratch, &mut self.y);
            } else {
                value += self.triple_loss(t, &model.weights, f);
            }
            self.loss_derivative(t);
            self.accumulate_weight_grad(f, &mut grad);
        }
        (grad, known.unwrap_or(value))
    }
}

fn matrix_from(rows: usize, cols: usize, values: Vec<f64>) -> Matrix {
    let mut m = Matrix::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            m.set(i, j, values[i * cols + j]);
        }
    }
    m
}

/// `Σ_{available triples} D(X_jkl, [[λ, A_j, A_k, A_l]])`.
pub fn objective(model: &CoupledModel, hists: &TripleHistogramSet, loss: Loss) -> Result<f64> {
    check_dims(model, hists)?;
    Ok(Evaluator::new(hists, loss, model.rank()).total(model))
}

/// Gradient of the objective with respect to factor `var` (an `I × R` matrix).
pub fn grad_factor(
    model: &CoupledModel,
    hists: &TripleHistogramSet,
    loss: Loss,
    var: usize,
) -> Result<Matrix> {
    check_dims(model, hists)?;
    if var >= model.num_vars() {
        return Err(Error::IndexOutOfRange(format!(
            "variable {var} of {}",
            model.num_vars()
        )));
    }
    Ok(Evaluator::new(hists, loss, model.rank()).factor_gradient(model, var, None).0)
}

/// Gradient of the objective with respect to the mixing weights.
pub fn grad_lambda(model: &CoupledModel, hists: &TripleHistogramSet, loss: Loss) -> Result<Vec<f64>> {
    check_dims(model, hists)?;
    Ok(Evaluator::new(hists, loss, model.rank()).weight_gradient(model, None).0)
}

/// Runs the block mirror-descent solver from `init` until convergence.
pub fn fit_from(
    init: CoupledModel,
    hists: &TripleHistogramSet,
    config: &SolverConfig,
) -> Result<(CoupledModel, RunTrace)> {
    config.validate()?;
    check_dims(&init, hists)?;
    let mut model = init;
    let mut eval = Evaluator::new(hists, config.loss, model.rank());
    let mut current = eval.total(&model);
    let mut trajectory = vec![current];
    let mut converged = false;
    let mut iterations = 0;
    // Last accepted step per block, the weights block last.
    let n = model.num_vars();
    let mut steps = vec![config.armijo.initial_step; n + 1];

    for _ in 0..config.max_outer_iters {
        iterations += 1;
        for var in 0..model.num_vars() {
            if eval.by_var[var].is_empty() {
                continue;
            }
            let mut known = None;
            for _ in 0..config.inner_iters {
                let (grad, value) = eval.factor_gradient(&model, var, known);
                let block = model.factors[var].clone();
                let params = warm(&config.armijo, steps[var]);
                let outcome = armijo_step(&block, &grad, value, &params, |cand| {
                    eval.partial(&model, var, cand)
                });
                if outcome.step == 0.0 {
                    break;
                }
                steps[var] = outcome.step;
                known = Some(outcome.objective);
                model.factors[var] = outcome.block;
            }
        }
        let mut known = None;
        for _ in 0..config.inner_iters {
            let (grad, value) = eval.weight_gradient(&model, known);
            let block = weights_block(&model.weights);
            let grad = matrix_from(grad.len(), 1, grad);
            let params = warm(&config.armijo, steps[n]);
            let outcome = armijo_step(&block, &grad, value, &params, |cand| {
                eval.with_weights(&model, cand.values())
            });
            if outcome.step == 0.0 {
                break;
            }
            steps[n] = outcome.step;
            known = Some(outcome.objective);
            model.weights = outcome.block.values().to_vec();
        }

        // The last accepted weights step already evaluated the full objective.
        let next = known.unwrap_or_else(|| eval.total(&model));
        trajectory.push(next);
        let decrease = current - next;
        current = next;
        if decrease <= config.tolerance * next.abs().max(f64::MIN_POSITIVE) {
            converged = true;
            break;
        }
    }
    debug!(
        "solver stopped after {iterations} iterations at objective {current:.6e} (converged: {converged})"
    );
    Ok((
        model,
        RunTrace {
            trajectory,
            iterations,
            converged,
        },
    ))
}

/// Best-of-`restarts` fit from random initializations; restart `k` draws its
/// initialization from stream `k` of the configured seed.
pub fn fit(hists: &TripleHistogramSet, config: &SolverConfig) -> Result<(CoupledModel, FitReport)> {
    config.validate()?;
    let advisory = check_identifiability(hists.num_vars(), hists.bins(), config.rank)?;
    if !advisory.theorem2_ok {
        warn!(
            "rank {} exceeds the generic uniqueness bound {} for N={}, I={}",
            config.rank, advisory.theorem2_bound, advisory.vars, advisory.bins
        );
    }
    let mut best: Option<(CoupledModel, RunTrace, usize)> = None;
    let mut restart_objectives = Vec::with_capacity(config.restarts);
    for restart in 0..config.restarts {
        let init = init_restart(
            hists.num_vars(),
            hists.bins(),
            config.rank,
            config.seed,
            restart as u64,
        )?;
        let (model, trace) = fit_from(init, hists, config)?;
        let value = *trace.trajectory.last().unwrap();
        restart_objectives.push(value);
        let better = best
            .as_ref()
            .is_none_or(|(_, t, _)| value < *t.trajectory.last().unwrap());
        if better {
            best = Some((model, trace, restart));
        }
    }
    let (model, trace, selected_restart) = best.expect("at least one restart");
    Ok((
        model,
        FitReport {
            trajectory: trace.trajectory,
            iterations: trace.iterations,
            converged: trace.converged,
            restart_objectives,
            selected_restart,
            advisory,
        },
    ))
}

/// Single-triple tensor for `hists` lookups in tests and tools.
pub fn model_triple(model: &CoupledModel, j: usize, k: usize, l: usize) -> Result<Tensor3> {
    tensor::reconstruct(&model.weights, &model.factors[j], &model.factors[k], &model.factors[l])
}
