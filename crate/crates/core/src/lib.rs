//! Learning mixtures of smooth product distributions.
//!
//! The pipeline has two stages. Every third-order histogram of the data is
//! jointly factorized under probability-simplex constraints ([`cpd`]), which
//! yields the mixing weights and the discretized conditional PMFs of each
//! variable. Each PMF is then turned into CDF samples and reconstructed as a
//! smooth CDF/PDF by sinc interpolation ([`smooth`]). The assembled
//! [`mixture::MixtureDensity`] supports density evaluation, posterior
//! inference, MAP clustering and sampling.

pub mod baseline_em;
pub mod cpd;
pub mod data;
pub mod error;
pub mod eval;
pub mod grid;
pub mod io;
pub mod mixture;
pub mod smooth;
pub mod synth;
pub mod tensor;

pub use error::{Error, Result};
