//! Diagonal-covariance Gaussian mixture fitted by EM, used as a baseline.

use std::f64::consts::PI;

use log::debug;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::mixture::{log_sum_exp, ProductMixture};

pub const VARIANCE_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagGmm {
    weights: Vec<f64>,
    vars: usize,
    /// `means[r * N + n]`.
    means: Vec<f64>,
    variances: Vec<f64>,
}

impl DiagGmm {
    pub fn new(weights: Vec<f64>, vars: usize, means: Vec<f64>, variances: Vec<f64>) -> Result<Self> {
        let rank = weights.len();
        if rank == 0 || vars == 0 || means.len() != rank * vars || variances.len() != rank * vars {
            return Err(Error::DimensionMismatch(format!(
                "{} means and {} variances for {vars} variables x {rank} components",
                means.len(),
                variances.len()
            )));
        }
        if weights.iter().any(|w| !(*w >= 0.0)) || (weights.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument("weights are not on the simplex".into()));
        }
        if means.iter().any(|m| !m.is_finite()) || variances.iter().any(|v| !(*v >= VARIANCE_FLOOR)) {
            return Err(Error::InvalidArgument(format!(
                "means must be finite and variances at least {VARIANCE_FLOOR}"
            )));
        }
        Ok(Self {
            weights,
            vars,
            means,
            variances,
        })
    }

    pub fn mean(&self, n: usize, r: usize) -> f64 {
        self.means[r * self.vars + n]
    }

    pub fn variance(&self, n: usize, r: usize) -> f64 {
        self.variances[r * self.vars + n]
    }

    /// Per-component `ln w_r − ½ Σ_n ln(2π σ²)` and the precisions `1/σ²`.
    fn log_constants(&self) -> (Vec<f64>, Vec<f64>) {
        let n = self.vars;
        let consts = (0..self.weights.len())
            .map(|r| {
                let var = &self.variances[r * n..(r + 1) * n];
                self.weights[r].ln() - 0.5 * var.iter().map(|v| (2.0 * PI * v).ln()).sum::<f64>()
            })
            .collect();
        let precisions = self.variances.iter().map(|v| 1.0 / v).collect();
        (consts, precisions)
    }
}

/// Unfloored per-component log terms `ln w_r + Σ_n ln φ(x_n; μ, σ²)`.
fn log_terms(model: &DiagGmm, consts: &[f64], precisions: &[f64], x: &[f64], out: &mut [f64]) {
    let n = model.vars;
    for (r, o) in out.iter_mut().enumerate() {
        let mu = &model.means[r * n..(r + 1) * n];
        let prec = &precisions[r * n..(r + 1) * n];
        let mut quad = 0.0;
        for ((x, m), p) in x.iter().zip(mu).zip(prec) {
            quad += (x - m) * (x - m) * p;
        }
        *o = consts[r] - 0.5 * quad;
    }
}

impl ProductMixture for DiagGmm {
    fn num_vars(&self) -> usize {
        self.vars
    }

    fn weights(&self) -> &[f64] {
        &self.weights
    }

    fn conditional_pdf(&self, n: usize, r: usize, x: f64) -> f64 {
        let v = self.variance(n, r);
        (-(x - self.mean(n, r)).powi(2) / (2.0 * v)).exp() / (2.0 * PI * v).sqrt()
    }

    fn sample_conditional(&self, n: usize, r: usize, rng: &mut ChaCha8Rng) -> f64 {
        let z: f64 = rng.sample(StandardNormal);
        self.mean(n, r) + self.variance(n, r).sqrt() * z
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmConfig {
    pub rank: usize,
    pub max_iters: usize,
    /// Stop once the log-likelihood gain falls below `tolerance · |loglik|`.
    pub tolerance: f64,
    pub restarts: usize,
    pub seed: u64,
}

impl EmConfig {
    pub fn new(rank: usize) -> Self {
        Self {
            rank,
            max_iters: 500,
            tolerance: 1e-8,
            restarts: 5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmReport {
    /// Log-likelihood of the selected run after initialization and every M-step.
    pub trajectory: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Whether the variance floor was binding in the selected run's final M-step.
    pub variance_floor_active: bool,
    pub restart_logliks: Vec<f64>,
    pub selected_restart: usize,
}

/// Best-of-restarts EM on the complete rows of `data`.
pub fn em_fit(data: &Dataset, config: &EmConfig) -> Result<(DiagGmm, EmReport)> {
    if config.rank == 0 || config.restarts == 0 || config.max_iters == 0 || !(config.tolerance >= 0.0) {
        return Err(Error::InvalidArgument(
            "rank, restarts and max_iters must be positive, tolerance nonnegative".into(),
        ));
    }
    let rows = data.complete_rows();
    if rows.len() < config.rank {
        return Err(Error::TooFewRows {
            needed: config.rank,
            got: rows.len(),
        });
    }
    let vars = data.num_vars();
    let x: Vec<f64> = rows.into_iter().flatten().collect();
    let mut best: Option<(DiagGmm, Run, usize)> = None;
    let mut restart_logliks = Vec::with_capacity(config.restarts);
    for k in 0..config.restarts {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(k as u64);
        let init = kmeans_pp_init(&x, vars, config.rank, &mut rng);
        let (model, run) = em_run(&x, init, config);
        let ll = *run.trajectory.last().unwrap();
        restart_logliks.push(ll);
        if best.as_ref().is_none_or(|(_, b, _)| ll > *b.trajectory.last().unwrap()) {
            best = Some((model, run, k));
        }
    }
    let (model, run, selected_restart) = best.unwrap();
    debug!("EM selected restart {selected_restart} after {} iterations", run.iterations);
    Ok((
        model,
        EmReport {
            trajectory: run.trajectory,
            iterations: run.iterations,
            converged: run.converged,
            variance_floor_active: run.floor_active,
            restart_logliks,
            selected_restart,
        },
    ))
}

struct Run {
    trajectory: Vec<f64>,
    iterations: usize,
    converged: bool,
    floor_active: bool,
}

fn kmeans_pp_init(x: &[f64], vars: usize, rank: usize, rng: &mut ChaCha8Rng) -> DiagGmm {
    let m = x.len() / vars;
    let row = |i: usize| &x[i * vars..(i + 1) * vars];
    let mut centers = vec![rng.random_range(0..m)];
    let mut dist: Vec<f64> = (0..m).map(|i| sq_dist(row(i), row(centers[0]))).collect();
    while centers.len() < rank {
        let total: f64 = dist.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut chosen = m - 1;
            for (i, d) in dist.iter().enumerate() {
                if u < *d {
                    chosen = i;
                    break;
                }
                u -= d;
            }
            chosen
        } else {
            rng.random_range(0..m)
        };
        centers.push(pick);
        for (i, d) in dist.iter_mut().enumerate() {
            *d = d.min(sq_dist(row(i), row(pick)));
        }
    }
    let mut mean = vec![0.0; vars];
    for i in 0..m {
        for (a, v) in mean.iter_mut().zip(row(i)) {
            *a += v / m as f64;
        }
    }
    let mut var = vec![0.0; vars];
    for i in 0..m {
        for ((a, v), mu) in var.iter_mut().zip(row(i)).zip(&mean) {
            *a += (v - mu).powi(2) / m as f64;
        }
    }
    let variances: Vec<f64> = (0..rank).flat_map(|_| var.iter().map(|v| v.max(VARIANCE_FLOOR))).collect();
    let means: Vec<f64> = centers.iter().flat_map(|c| row(*c).to_vec()).collect();
    DiagGmm {
        weights: vec![1.0 / rank as f64; rank],
        vars,
        means,
        variances,
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

fn em_run(x: &[f64], mut model: DiagGmm, config: &EmConfig) -> (DiagGmm, Run) {
    let vars = model.vars;
    let rank = model.weights.len();
    let m = x.len() / vars;
    let mut resp = vec![0.0; m * rank];
    let mut trajectory = Vec::new();
    let mut converged = false;
    let mut floor_active = false;
    let mut iterations = 0;
    loop {
        // E-step.
        let mut ll = 0.0;
        let (consts, precisions) = model.log_constants();
        for i in 0..m {
            let g = &mut resp[i * rank..(i + 1) * rank];
            log_terms(&model, &consts, &precisions, &x[i * vars..(i + 1) * vars], g);
            let norm = log_sum_exp(g);
            ll += norm;
            g.iter_mut().for_each(|v| *v = (*v - norm).exp());
        }
        if let Some(prev) = trajectory.last() {
            if ll - prev <= config.tolerance * ll.abs() {
                converged = true;
            }
        }
        trajectory.push(ll);
        if converged || iterations == config.max_iters {
            break;
        }
        iterations += 1;

        // M-step.
        floor_active = false;
        let mut nk = vec![0.0; rank];
        let mut sums = vec![0.0; rank * vars];
        for i in 0..m {
            let xi = &x[i * vars..(i + 1) * vars];
            for r in 0..rank {
                let g = resp[i * rank + r];
                nk[r] += g;
                for (s, v) in sums[r * vars..(r + 1) * vars].iter_mut().zip(xi) {
                    *s += g * v;
                }
            }
        }
        let means: Vec<f64> = (0..rank * vars).map(|k| sums[k] / nk[k / vars]).collect();
        let mut sq = vec![0.0; rank * vars];
        for i in 0..m {
            let xi = &x[i * vars..(i + 1) * vars];
            for r in 0..rank {
                let g = resp[i * rank + r];
                let mu = &means[r * vars..(r + 1) * vars];
                for ((s, v), mu) in sq[r * vars..(r + 1) * vars].iter_mut().zip(xi).zip(mu) {
                    *s += g * (v - mu) * (v - mu);
                }
            }
        }
        for r in 0..rank {
            model.weights[r] = nk[r] / m as f64;
            if nk[r] <= f64::MIN_POSITIVE {
                continue;
            }
            for k in r * vars..(r + 1) * vars {
                let var = sq[k] / nk[r];
                if var < VARIANCE_FLOOR {
                    floor_active = true;
                }
                model.means[k] = means[k];
                model.variances[k] = var.max(VARIANCE_FLOOR);
            }
        }
    }
    (
        model,
        Run {
            trajectory,
            iterations,
            converged,
            floor_active,
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::clustering_accuracy;

    #[test]
    fn single_component_recovers_sample_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let rows: Vec<Vec<f64>> = (0..2000)
            .map(|_| {
                let a: f64 = rng.sample(StandardNormal);
                let b: f64 = rng.sample(StandardNormal);
                vec![1.0 + 2.0 * a, -3.0 + 0.5 * b]
            })
            .collect();
        let data = Dataset::from_rows(&rows, None).unwrap();
        let (model, report) = em_fit(&data, &EmConfig::new(1)).unwrap();
        for n in 0..2 {
            let col: Vec<f64> = rows.iter().map(|r| r[n]).collect();
            let mean = col.iter().sum::<f64>() / col.len() as f64;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / col.len() as f64;
            assert!((model.mean(n, 0) - mean).abs() <= 1e-12 * mean.abs().max(1.0));
            assert!((model.variance(n, 0) - var).abs() <= 1e-12 * var);
        }
        assert!(report.converged);
        assert!(!report.variance_floor_active);
    }

    #[test]
    fn separated_components_are_recovered_with_monotone_loglik() {
        let truth = DiagGmm::new(vec![0.4, 0.6], 2, vec![0.0, 0.0, 10.0, -10.0], vec![1.0; 4]).unwrap();
        let data = truth.sample(10_000, 7).unwrap();
        let (model, report) = em_fit(&data, &EmConfig::new(2)).unwrap();
        for w in report.trajectory.windows(2) {
            assert!(w[1] >= w[0] - 1e-8);
        }
        let pred = model.cluster(&data).unwrap();
        let align = clustering_accuracy(data.labels().unwrap(), &pred, 2).unwrap();
        assert!(align.accuracy > 0.999);
        for r in 0..2 {
            let s = align.permutation[r];
            let nk = 10_000.0 * truth.weights()[r];
            let se_w = (truth.weights()[r] * (1.0 - truth.weights()[r]) / 10_000.0).sqrt();
            assert!((model.weights()[s] - truth.weights()[r]).abs() < 3.0 * se_w);
            for n in 0..2 {
                assert!((model.mean(n, s) - truth.mean(n, r)).abs() < 3.0 / nk.sqrt());
                assert!((model.variance(n, s) - 1.0).abs() < 3.0 * (2.0 / nk).sqrt());
            }
        }
    }

    #[test]
    fn density_and_posterior() {
        let std = DiagGmm::new(vec![1.0], 1, vec![0.0], vec![1.0]).unwrap();
        let d = std.joint_density(&[Some(0.0)]).unwrap();
        assert!((d - 1.0 / (2.0 * PI).sqrt()).abs() < 1e-15);
        let sym = DiagGmm::new(vec![0.5, 0.5], 1, vec![-2.0, 2.0], vec![1.0, 1.0]).unwrap();
        let p = sym.posterior(&[Some(0.0)]).unwrap();
        assert!((p[0] - 0.5).abs() < 1e-15 && (p[1] - 0.5).abs() < 1e-15);
        assert_eq!(sym.map_cluster(&[Some(0.0)]).unwrap(), 0);

        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let g = DiagGmm::new(vec![0.3, 0.7], 2, vec![0.0, 1.0, -1.0, 2.0], vec![1.0, 2.0, 0.5, 1.5]).unwrap();
        for _ in 0..50 {
            let x = [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)];
            let phi = |x: f64, m: f64, v: f64| (-(x - m).powi(2) / (2.0 * v)).exp() / (2.0 * PI * v).sqrt();
            let direct = 0.3 * phi(x[0], 0.0, 1.0) * phi(x[1], 1.0, 2.0)
                + 0.7 * phi(x[0], -1.0, 0.5) * phi(x[1], 2.0, 1.5);
            let got = g.joint_density(&[Some(x[0]), Some(x[1])]).unwrap();
            assert!((got - direct).abs() <= 1e-12 * direct);
        }
    }

    #[test]
    fn too_few_complete_rows() {
        let data = Dataset::new(
            vec!["a".into(), "b".into()],
            vec![Some(1.0), None, Some(2.0), Some(3.0)],
            None,
        )
        .unwrap();
        assert!(matches!(
            em_fit(&data, &EmConfig::new(2)),
            Err(Error::TooFewRows { needed: 2, got: 1 })
        ));
    }
}
