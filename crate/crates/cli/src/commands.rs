use std::fs::OpenOptions;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde_json::json;
use smoothmix::baseline_em::{em_fit, EmConfig};
use smoothmix::cpd::{fit as cpd_fit, Loss, SolverConfig};
use smoothmix::data::{read_labels, write_labels, Dataset};
use smoothmix::eval::{
    clustering_accuracy, conditional_l1_error, kl_monte_carlo, write_sweep_csv, EvalReport, SweepRow,
};
use smoothmix::grid::{build_grid, estimate_triple_histograms, DEFAULT_CLIP};
use smoothmix::io::{DiagGmmRecord, HistogramFile, LoadedModel, ModelFile, ParametricRecord, SmoothModelRecord};
use smoothmix::mixture::ProductMixture;
use smoothmix::smooth::{from_exact_cdf, sample_curve, write_curves_csv, SmoothConditional, DEFAULT_PAD};
use smoothmix::synth::{
    generate_dataset, make_setting, toy_mixture, Conditional, Family, ParametricMixture, SettingSpec, DEFAULT_ALPHA,
};
use smoothmix::{Error, Result};

use crate::config::{pick, FileConfig};
use crate::{ClusterArgs, EvalArgs, ExportArgs, FitArgs, GenerateArgs};

fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

fn check_clip(lo: f64, hi: f64) -> Result<()> {
    if (0.0..hi).contains(&lo) && hi <= 1.0 {
        Ok(())
    } else {
        Err(invalid(format!("clip quantiles must satisfy 0 <= lo < hi <= 1, got ({lo}, {hi})")))
    }
}

fn load_parametric(path: &Path) -> Result<ParametricMixture> {
    match ModelFile::load(path)? {
        ModelFile::ParametricMixture(rec) => Ok(rec.model),
        other => Err(Error::ModelKindMismatch {
            expected: "parametric_mixture".into(),
            found: other.kind().into(),
        }),
    }
}

/// Converts 1-based (variable, component) flags to 0-based indices.
fn index_pair(var: usize, component: usize, vars: usize, rank: usize) -> Result<(usize, usize)> {
    if var == 0 || var > vars || component == 0 || component > rank {
        return Err(Error::IndexOutOfRange(format!(
            "variable {var} / component {component} with N={vars}, R={rank} (indices are 1-based)"
        )));
    }
    Ok((var - 1, component - 1))
}

fn default_truth_path(out: &Path) -> PathBuf {
    let stem = out.with_extension("");
    PathBuf::from(format!("{}.truth.json", stem.display()))
}

pub fn generate(a: &GenerateArgs, cfg: &FileConfig) -> Result<()> {
    let family = a
        .family
        .clone()
        .or_else(|| cfg.family.clone())
        .ok_or_else(|| invalid("--family is required"))?;
    let vars = pick(&a.vars, &cfg.vars, 10);
    let rank = pick(&a.rank, &cfg.rank, 5);
    let samples = pick(&a.samples, &cfg.samples, 10_000);
    let seed = pick(&a.seed, &cfg.seed, 0);
    let missing_rate = pick(&a.missing_rate, &cfg.missing_rate, 0.0);
    let alpha = pick(&a.alpha, &cfg.alpha, DEFAULT_ALPHA);
    if samples == 0 {
        return Err(invalid("--samples must be at least 1"));
    }
    if !(0.0..1.0).contains(&missing_rate) {
        return Err(invalid(format!("--missing-rate must lie in [0, 1), got {missing_rate}")));
    }

    let truth = if family.eq_ignore_ascii_case("toy") {
        toy_mixture()
    } else {
        let family: Family = family.parse()?;
        make_setting(&SettingSpec {
            family,
            vars,
            rank,
            seed,
            alpha,
        })?
    };
    // Keep the data stream apart from the parameter streams of the same seed.
    let data_seed = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(1);
    let data = generate_dataset(&truth, samples, missing_rate, data_seed)?;
    let truth_path = a.truth.clone().unwrap_or_else(|| default_truth_path(&a.out));
    data.save(&a.out)?;
    let generation = json!({
        "family": family.to_ascii_lowercase(),
        "vars": truth.num_vars(),
        "rank": truth.num_components(),
        "samples": samples,
        "seed": seed,
        "missing_rate": missing_rate,
        "alpha": alpha,
    });
    ModelFile::ParametricMixture(ParametricRecord {
        model: truth,
        generation: Some(generation),
    })
    .save(&truth_path)?;
    println!(
        "wrote {samples} records x {} variables to {}; ground truth in {}",
        data.num_vars(),
        a.out.display(),
        truth_path.display()
    );
    Ok(())
}

pub fn fit(a: &FitArgs, cfg: &FileConfig) -> Result<()> {
    let method = pick(&a.method, &cfg.method, "smooth".to_string());
    match method.as_str() {
        "smooth" => fit_smooth(a, cfg),
        "em" => fit_em(a, cfg),
        other => Err(invalid(format!("unknown method `{other}` (expected smooth or em)"))),
    }
}

fn fit_smooth(a: &FitArgs, cfg: &FileConfig) -> Result<()> {
    let rank = a.rank.or(cfg.rank).ok_or_else(|| invalid("--rank is required"))?;
    let bins = pick(&a.bins, &cfg.bins, 10);
    let loss: Loss = pick(&a.loss, &cfg.loss, "kl".to_string()).parse()?;
    let pad = pick(&a.sinc_pad, &cfg.sinc_pad, DEFAULT_PAD);
    let clip = (
        pick(&a.clip_lo, &cfg.clip_lo, DEFAULT_CLIP.0),
        pick(&a.clip_hi, &cfg.clip_hi, DEFAULT_CLIP.1),
    );
    let mut config = SolverConfig::new(rank);
    config.loss = loss;
    config.restarts = pick(&a.restarts, &cfg.restarts, config.restarts);
    config.seed = pick(&a.seed, &cfg.seed, config.seed);
    config.max_outer_iters = pick(&a.max_iters, &cfg.max_iters, config.max_outer_iters);
    config.inner_iters = pick(&a.inner_iters, &cfg.inner_iters, config.inner_iters);
    config.tolerance = pick(&a.tol, &cfg.tol, config.tolerance);
    config.validate()?;
    check_clip(clip.0, clip.1)?;
    if bins < 2 {
        return Err(invalid(format!("--bins must be at least 2, got {bins}")));
    }

    let (hists, grid) = match (&a.data, &a.histograms) {
        (Some(path), _) => {
            let data = Dataset::load(path)?;
            if data.num_vars() < 3 {
                return Err(Error::InsufficientVariables(data.num_vars()));
            }
            let grid = build_grid(&data, bins, clip)?;
            (estimate_triple_histograms(&data, &grid)?, grid)
        }
        (None, Some(path)) => HistogramFile::load(path)?.parts()?,
        (None, None) => return Err(invalid("either --data or --histograms is required")),
    };
    if let Some(path) = &a.save_histograms {
        HistogramFile::new(&hists, &grid).save(path)?;
    }

    let (model, report) = cpd_fit(&hists, &config)?;
    let adv = &report.advisory;
    println!(
        "identifiability: N={} I={} R={}: algebraic bound {} ({}), generic uniqueness bound {} with alpha={} ({}), quadratic bound {:.2} ({}), single-triple Kruskal {}",
        adv.vars,
        adv.bins,
        adv.rank,
        adv.theorem1_bound,
        verdict(adv.theorem1_ok),
        adv.theorem2_bound,
        adv.alpha,
        verdict(adv.theorem2_ok),
        adv.quadratic_bound,
        verdict(adv.quadratic_ok),
        verdict(adv.kruskal_ok)
    );
    if !adv.theorem2_ok {
        eprintln!(
            "warning: rank {} exceeds the generic identifiability bound {} for N={}, I={}; fitting anyway",
            adv.rank, adv.theorem2_bound, adv.vars, adv.bins
        );
    }
    println!(
        "final objective {:.6e} after {} iterations (converged: {}), restart {} of {}",
        report.final_objective(),
        report.iterations,
        report.converged,
        report.selected_restart + 1,
        config.restarts
    );

    let mut record = SmoothModelRecord::new(&model, &grid, pad, Some(&config), Some(&report));
    record.settings = Some(json!({
        "method": "smooth",
        "bins": grid.bins(),
        "clip_lo": clip.0,
        "clip_hi": clip.1,
        "sinc_pad": pad,
        "data": a.data.as_ref().map(|p| p.display().to_string()),
        "histograms": a.histograms.as_ref().map(|p| p.display().to_string()),
        "restart_objectives": report.restart_objectives,
    }));
    record.density()?;
    ModelFile::SmoothMixture(record).save(&a.out)?;
    println!("model written to {}", a.out.display());
    Ok(())
}

fn verdict(ok: bool) -> &'static str {
    if ok {
        "satisfied"
    } else {
        "exceeded"
    }
}

fn fit_em(a: &FitArgs, cfg: &FileConfig) -> Result<()> {
    let rank = a.rank.or(cfg.rank).ok_or_else(|| invalid("--rank is required"))?;
    let mut config = EmConfig::new(rank);
    config.restarts = pick(&a.restarts, &cfg.restarts, config.restarts);
    config.seed = pick(&a.seed, &cfg.seed, config.seed);
    config.max_iters = pick(&a.max_iters, &cfg.max_iters, config.max_iters);
    config.tolerance = pick(&a.tol, &cfg.tol, config.tolerance);
    if config.restarts == 0 || config.max_iters == 0 || !(config.tolerance >= 0.0) {
        return Err(invalid("restarts and max iterations must be positive, tolerance nonnegative"));
    }
    let path = a
        .data
        .as_ref()
        .ok_or_else(|| invalid("--method em needs --data"))?;
    let data = Dataset::load(path)?;
    let (model, report) = em_fit(&data, &config)?;
    if report.variance_floor_active {
        eprintln!("warning: the variance floor is active in the fitted model");
    }
    println!(
        "final log-likelihood {:.6e} after {} iterations (converged: {}), restart {} of {}",
        report.trajectory.last().unwrap(),
        report.iterations,
        report.converged,
        report.selected_restart + 1,
        config.restarts
    );
    ModelFile::DiagGmm(DiagGmmRecord {
        model,
        config: Some(config),
        report: Some(report),
        settings: Some(json!({ "method": "em", "data": path.display().to_string() })),
    })
    .save(&a.out)?;
    println!("model written to {}", a.out.display());
    Ok(())
}

pub fn eval(a: &EvalArgs, cfg: &FileConfig) -> Result<()> {
    let mc_points = pick(&a.mc_points, &cfg.mc_points, 1000);
    let l1_points = pick(&a.l1_points, &cfg.l1_points, 512);
    let seed = pick(&a.seed, &cfg.seed, 0);
    if mc_points == 0 || l1_points < 2 {
        return Err(invalid("--mc-points must be positive and --l1-points at least 2"));
    }
    if a.truth.is_none() && a.labels_true.is_none() {
        return Err(invalid("nothing to evaluate: pass --truth/--model and/or --labels-true/--labels-pred"));
    }

    let mut report = EvalReport::default();
    if let (Some(truth_path), Some(model_path)) = (&a.truth, &a.model) {
        let truth = load_parametric(truth_path)?;
        let learned = ModelFile::load(model_path)?.into_mixture()?;
        if learned.num_vars() != truth.num_vars() {
            return Err(Error::DimensionMismatch(format!(
                "truth has {} variables, model has {}",
                truth.num_vars(),
                learned.num_vars()
            )));
        }
        let kl = kl_monte_carlo(&truth, &learned, mc_points, seed)?;
        // The same draws serve as the labelled test set.
        let test = truth.sample(mc_points, seed)?;
        let pred = learned.cluster(&test)?;
        let rank = truth.num_components().max(learned.num_components());
        let align = clustering_accuracy(test.labels().expect("sampled labels"), &pred, rank)?;
        if truth.num_components() == learned.num_components() {
            let window = |n: usize, r: usize| match &learned {
                LoadedModel::Smooth(m) => {
                    let sc = m.conditional(n, r);
                    let (lo, hi) = sc.support();
                    (lo - sc.spacing(), hi + sc.spacing())
                }
                _ => (f64::INFINITY, f64::NEG_INFINITY),
            };
            report.l1_errors = Some(conditional_l1_error(&truth, &learned, &align.permutation, Some(&window), l1_points)?);
        }
        report.kl = Some(kl);
        report.accuracy = Some(align.accuracy);
        report.permutation = Some(align.permutation);
        report.test_points = mc_points;
    }
    if let (Some(t), Some(p)) = (&a.labels_true, &a.labels_pred) {
        let truth = read_labels(std::fs::File::open(t)?)?;
        let pred = read_labels(std::fs::File::open(p)?)?;
        let rank = truth.iter().chain(&pred).max().map_or(1, |m| m + 1);
        let align = clustering_accuracy(&truth, &pred, rank)?;
        report.accuracy = Some(align.accuracy);
        report.permutation = Some(align.permutation);
        if report.kl.is_none() {
            report.test_points = truth.len();
        }
    }

    let text = serde_json::to_string_pretty(&report)?;
    match &a.out {
        Some(path) => std::fs::write(path, text + "\n")?,
        None => println!("{text}"),
    }
    if let Some(path) = &a.sweep_csv {
        let fresh = !path.exists() || std::fs::metadata(path)?.len() == 0;
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        let row = SweepRow {
            setting: a.setting.clone(),
            method: a.method.clone(),
            samples: a.samples,
            trial: a.trial,
            kl: report.kl.map(|k| k.estimate),
            kl_stderr: report.kl.map(|k| k.stderr),
            accuracy: report.accuracy,
        };
        write_sweep_csv(BufWriter::new(file), &[row], fresh)?;
    }
    Ok(())
}

pub fn cluster(a: &ClusterArgs) -> Result<()> {
    let model = ModelFile::load(&a.model)?.into_mixture()?;
    let data = Dataset::load(&a.data)?;
    if data.num_vars() != model.num_vars() {
        return Err(Error::DimensionMismatch(format!(
            "dataset has {} variables, model has {}",
            data.num_vars(),
            model.num_vars()
        )));
    }
    let labels = model.cluster(&data)?;
    write_labels(BufWriter::new(std::fs::File::create(&a.out)?), &labels)?;
    println!("wrote {} labels to {}", labels.len(), a.out.display());
    Ok(())
}

pub fn export_curves(a: &ExportArgs, cfg: &FileConfig) -> Result<()> {
    let (sc, own_truth): (SmoothConditional, Option<Conditional>) = match (&a.model, &a.exact) {
        (Some(path), _) => match ModelFile::load(path)? {
            ModelFile::SmoothMixture(rec) => {
                let density = rec.density()?;
                let (n, r) = index_pair(a.var, a.component, density.num_vars(), density.num_components())?;
                (density.conditional(n, r).clone(), None)
            }
            other => {
                return Err(Error::ModelKindMismatch {
                    expected: "smooth_mixture".into(),
                    found: other.kind().into(),
                })
            }
        },
        (None, Some(path)) => {
            let truth = load_parametric(path)?;
            let (n, r) = index_pair(a.var, a.component, truth.num_vars(), truth.num_components())?;
            let c = *truth.conditional(n, r);
            let bins = pick(&a.bins, &cfg.bins, 10);
            let pad = pick(&a.sinc_pad, &cfg.sinc_pad, DEFAULT_PAD);
            let clip_lo = pick(&a.clip_lo, &cfg.clip_lo, DEFAULT_CLIP.0);
            let clip_hi = pick(&a.clip_hi, &cfg.clip_hi, DEFAULT_CLIP.1);
            check_clip(clip_lo, clip_hi)?;
            if clip_lo == 0.0 || clip_hi == 1.0 {
                return Err(invalid("--exact needs clip quantiles strictly inside (0, 1)"));
            }
            let (lo, hi) = (c.quantile(clip_lo)?, c.quantile(clip_hi)?);
            (from_exact_cdf(|x| c.cdf(x), lo, hi, bins, pad)?, Some(c))
        }
        (None, None) => return Err(invalid("either --model or --exact is required")),
    };
    let truth = match &a.truth {
        Some(path) => {
            let t = load_parametric(path)?;
            let comp = a.truth_component.unwrap_or(a.component);
            let (n, r) = index_pair(a.var, comp, t.num_vars(), t.num_components())?;
            Some(*t.conditional(n, r))
        }
        None => own_truth,
    };
    let (lo, hi) = sc.support();
    let (lo, hi) = (a.lo.unwrap_or(lo), a.hi.unwrap_or(hi));
    let truth_fn = truth.map(|c| move |x: f64| (c.cdf(x), c.pdf(x)));
    let rows = sample_curve(
        &sc,
        lo,
        hi,
        a.resolution,
        truth_fn.as_ref().map(|f| f as &dyn Fn(f64) -> (f64, f64)),
    )?;
    write_curves_csv(BufWriter::new(std::fs::File::create(&a.out)?), &rows)?;
    println!("wrote {} points on [{lo}, {hi}] to {}", rows.len(), a.out.display());
    if truth.is_some() {
        let max_err = |f: fn(&smoothmix::smooth::CurveRow) -> f64| rows.iter().map(f).fold(0.0, f64::max);
        println!(
            "max |cdf error| {:.3e}, max |pdf error| {:.3e}",
            max_err(|r| (r.cdf_est - r.cdf_true.unwrap()).abs()),
            max_err(|r| (r.pdf_est - r.pdf_true.unwrap()).abs())
        );
    }
    Ok(())
}
