//! JSON files for models and histogram sets.
//!
//! Every model file is an object tagged by `kind`: `smooth_mixture`,
//! `parametric_mixture` or `diag_gmm`. Loading validates the contents through
//! the regular constructors.

use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::baseline_em::{DiagGmm, EmConfig, EmReport};
use crate::cpd::{CoupledModel, FitReport, IdentifiabilityAdvisory, SolverConfig};
use crate::error::{Error, Result};
use crate::grid::{DiscretizationGrid, TripleHistogram, TripleHistogramSet};
use crate::mixture::{MixtureDensity, ProductMixture};
use crate::synth::ParametricMixture;
use crate::tensor::{FactorMatrix, Tensor3};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothModelRecord {
    #[serde(rename = "N")]
    pub vars: usize,
    #[serde(rename = "I")]
    pub bins: usize,
    #[serde(rename = "R")]
    pub rank: usize,
    pub lambda: Vec<f64>,
    /// `factors[n][r]` is the bin PMF of variable `n` under component `r`.
    pub factors: Vec<Vec<Vec<f64>>>,
    pub grid_edges: Vec<Vec<f64>>,
    pub sinc_pad: usize,
    #[serde(default)]
    pub config: Option<SolverConfig>,
    #[serde(default)]
    pub trajectory: Vec<f64>,
    #[serde(default)]
    pub advisory: Option<IdentifiabilityAdvisory>,
    /// Free-form echo of the run settings.
    #[serde(default)]
    pub settings: Option<serde_json::Value>,
}

impl SmoothModelRecord {
    pub fn new(
        model: &CoupledModel,
        grid: &DiscretizationGrid,
        pad: usize,
        config: Option<&SolverConfig>,
        report: Option<&FitReport>,
    ) -> Self {
        Self {
            vars: model.num_vars(),
            bins: model.bins(),
            rank: model.rank(),
            lambda: model.weights().to_vec(),
            factors: model
                .factors()
                .iter()
                .map(|f| (0..f.cols()).map(|r| f.column(r)).collect())
                .collect(),
            grid_edges: grid.all_edges().to_vec(),
            sinc_pad: pad,
            config: config.cloned(),
            trajectory: report.map(|r| r.trajectory.clone()).unwrap_or_default(),
            advisory: report.map(|r| r.advisory.clone()),
            settings: None,
        }
    }

    pub fn coupled_model(&self) -> Result<CoupledModel> {
        if self.factors.len() != self.vars || self.lambda.len() != self.rank {
            return Err(Error::DimensionMismatch(format!(
                "record declares N={}, R={} but holds {} factors and {} weights",
                self.vars,
                self.rank,
                self.factors.len(),
                self.lambda.len()
            )));
        }
        let factors = self
            .factors
            .iter()
            .map(|cols| FactorMatrix::from_columns(cols))
            .collect::<Result<Vec<_>>>()?;
        let model = CoupledModel::new(self.lambda.clone(), factors)?;
        if model.bins() != self.bins {
            return Err(Error::DimensionMismatch(format!(
                "record declares I={} but factors have {} rows",
                self.bins,
                model.bins()
            )));
        }
        Ok(model)
    }

    pub fn grid(&self) -> Result<DiscretizationGrid> {
        DiscretizationGrid::from_edges(self.grid_edges.clone())
    }

    pub fn density(&self) -> Result<MixtureDensity> {
        MixtureDensity::new(self.coupled_model()?, self.grid()?, self.sinc_pad)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagGmmRecord {
    pub model: DiagGmm,
    #[serde(default)]
    pub config: Option<EmConfig>,
    #[serde(default)]
    pub report: Option<EmReport>,
    #[serde(default)]
    pub settings: Option<serde_json::Value>,
}

/// A ground-truth mixture and, when generated, the settings that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParametricRecord {
    pub model: ParametricMixture,
    #[serde(default)]
    pub generation: Option<serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelFile {
    SmoothMixture(SmoothModelRecord),
    ParametricMixture(ParametricRecord),
    DiagGmm(DiagGmmRecord),
}

impl ModelFile {
    pub fn kind(&self) -> &'static str {
        match self {
            ModelFile::SmoothMixture(_) => "smooth_mixture",
            ModelFile::ParametricMixture(_) => "parametric_mixture",
            ModelFile::DiagGmm(_) => "diag_gmm",
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let file: ModelFile = serde_json::from_reader(std::io::BufReader::new(std::fs::File::open(path)?))?;
        file.validate()?;
        Ok(file)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer_pretty(&mut w, self)?;
        std::io::Write::write_all(&mut w, b"\n")?;
        Ok(())
    }

    fn validate(&self) -> Result<()> {
        match self {
            ModelFile::SmoothMixture(rec) => rec.density().map(|_| ()),
            ModelFile::ParametricMixture(rec) => {
                let p = &rec.model;
                let rank = p.weights().len();
                let conds = (0..p.num_vars())
                    .flat_map(|n| (0..rank).map(move |r| (n, r)))
                    .map(|(n, r)| *p.conditional(n, r))
                    .collect();
                ParametricMixture::new(p.weights().to_vec(), p.num_vars(), conds).map(|_| ())
            }
            ModelFile::DiagGmm(rec) => {
                let m = &rec.model;
                let (n, rank) = (m.num_vars(), m.num_components());
                let means = (0..rank).flat_map(|r| (0..n).map(move |v| m.mean(v, r))).collect();
                let vars = (0..rank).flat_map(|r| (0..n).map(move |v| m.variance(v, r))).collect();
                DiagGmm::new(m.weights().to_vec(), n, means, vars).map(|_| ())
            }
        }
    }

    /// The evaluable mixture held by this file.
    pub fn into_mixture(self) -> Result<LoadedModel> {
        Ok(match self {
            ModelFile::SmoothMixture(rec) => LoadedModel::Smooth(Box::new(rec.density()?)),
            ModelFile::ParametricMixture(rec) => LoadedModel::Parametric(rec.model),
            ModelFile::DiagGmm(rec) => LoadedModel::Gmm(rec.model),
        })
    }
}

/// A model file turned into something evaluable.
#[derive(Debug, Clone)]
pub enum LoadedModel {
    Smooth(Box<MixtureDensity>),
    Parametric(ParametricMixture),
    Gmm(DiagGmm),
}

impl LoadedModel {
    fn inner(&self) -> &dyn ProductMixture {
        match self {
            LoadedModel::Smooth(m) => m.as_ref(),
            LoadedModel::Parametric(m) => m,
            LoadedModel::Gmm(m) => m,
        }
    }
}

impl ProductMixture for LoadedModel {
    fn num_vars(&self) -> usize {
        self.inner().num_vars()
    }

    fn weights(&self) -> &[f64] {
        self.inner().weights()
    }

    fn conditional_pdf(&self, n: usize, r: usize, x: f64) -> f64 {
        self.inner().conditional_pdf(n, r, x)
    }

    fn sample_conditional(&self, n: usize, r: usize, rng: &mut ChaCha8Rng) -> f64 {
        self.inner().sample_conditional(n, r, rng)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramRecord {
    pub triple: [usize; 3],
    pub count: usize,
    /// Entries laid out first-index-fastest.
    pub values: Vec<f64>,
}

/// Triple histograms together with the grid that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramFile {
    #[serde(rename = "N")]
    pub vars: usize,
    #[serde(rename = "I")]
    pub bins: usize,
    pub grid_edges: Vec<Vec<f64>>,
    pub histograms: Vec<HistogramRecord>,
}

impl HistogramFile {
    pub fn new(hists: &TripleHistogramSet, grid: &DiscretizationGrid) -> Self {
        Self {
            vars: hists.num_vars(),
            bins: hists.bins(),
            grid_edges: grid.all_edges().to_vec(),
            histograms: hists
                .entries()
                .iter()
                .map(|h| HistogramRecord {
                    triple: [h.triple.0, h.triple.1, h.triple.2],
                    count: h.count,
                    values: h.tensor.values().to_vec(),
                })
                .collect(),
        }
    }

    pub fn parts(&self) -> Result<(TripleHistogramSet, DiscretizationGrid)> {
        let grid = DiscretizationGrid::from_edges(self.grid_edges.clone())?;
        if grid.num_vars() != self.vars || grid.bins() != self.bins {
            return Err(Error::DimensionMismatch(format!(
                "grid is {}x{}, file declares N={}, I={}",
                grid.num_vars(),
                grid.bins(),
                self.vars,
                self.bins
            )));
        }
        let entries = self
            .histograms
            .iter()
            .map(|h| {
                Ok(TripleHistogram {
                    triple: (h.triple[0], h.triple[1], h.triple[2]),
                    tensor: Tensor3::from_values([self.bins; 3], h.values.clone())?,
                    count: h.count,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok((TripleHistogramSet::new(self.vars, self.bins, entries)?, grid))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_reader(std::io::BufReader::new(std::fs::File::open(path)?))?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let w = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer(w, self)?;
        Ok(())
    }
}
