//! Optional JSON configuration file. Every field is optional and is used only
//! when the matching flag is absent.

use std::path::Path;

use serde::{Deserialize, Serialize};
use smoothmix::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub family: Option<String>,
    pub vars: Option<usize>,
    pub rank: Option<usize>,
    pub samples: Option<usize>,
    pub seed: Option<u64>,
    pub missing_rate: Option<f64>,
    pub alpha: Option<f64>,
    pub method: Option<String>,
    pub bins: Option<usize>,
    pub loss: Option<String>,
    pub restarts: Option<usize>,
    pub sinc_pad: Option<usize>,
    pub clip_lo: Option<f64>,
    pub clip_hi: Option<f64>,
    pub max_iters: Option<usize>,
    pub inner_iters: Option<usize>,
    pub tol: Option<f64>,
    pub mc_points: Option<usize>,
    pub l1_points: Option<usize>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p)?;
                serde_json::from_str(&text).map_err(Error::from)
            }
        }
    }
}

/// Flag, then config file, then default.
pub fn pick<T: Clone>(flag: &Option<T>, file: &Option<T>, default: T) -> T {
    flag.clone().or_else(|| file.clone()).unwrap_or(default)
}
