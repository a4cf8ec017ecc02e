//! Flat TOML study manifests.

use serde::Deserialize;

use preavg::experiments::{gbm_mean_signal, omega_for_noise_ratio, ExpansionSource, PnRule, StudyConfig};
use preavg::simulate::ModelSpec;
use preavg::weights::validate_grid;
use preavg::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Gbm,
    ConstantVol,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExpansionKind {
    MonteCarlo,
    ClosedForm,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany<T> {
    One(T),
    Many(Vec<T>),
}

impl<T: Clone> OneOrMany<T> {
    fn to_vec(&self) -> Vec<T> {
        match self {
            OneOrMany::One(v) => vec![v.clone()],
            OneOrMany::Many(v) => v.clone(),
        }
    }
}

/// One study manifest; every key is top-level.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyFile {
    pub model: ModelKind,
    pub a: Option<f64>,
    pub sigma: Option<f64>,
    pub x0: Option<f64>,
    pub b: Option<f64>,
    pub drift: Option<f64>,
    /// Noise standard deviation; overrides `noise_ratio`.
    pub omega: Option<f64>,
    /// `ω² ψ₁ / (θ² ψ₂)` as a share of the mean squared volatility, with θ
    /// taken from the first grid.
    pub noise_ratio: Option<f64>,
    pub n: OneOrMany<usize>,
    pub k_n: OneOrMany<usize>,
    #[serde(default = "default_strict")]
    pub strict: bool,
    pub replications: usize,
    pub seed: u64,
    #[serde(default = "default_alphas")]
    pub alphas: Vec<f64>,
    pub expansion: Option<ExpansionKind>,
    #[serde(default = "default_paths")]
    pub expansion_paths: usize,
    pub expansion_seed: Option<u64>,
    pub p_n: Option<usize>,
    #[serde(default = "default_oversampling")]
    pub oversampling: usize,
    #[serde(default)]
    pub workers: usize,
    #[serde(default = "default_bins")]
    pub density_bins: usize,
    #[serde(default = "default_range")]
    pub density_range: f64,
}

fn default_strict() -> bool {
    true
}
fn default_alphas() -> Vec<f64> {
    vec![0.05]
}
fn default_paths() -> usize {
    10_000
}
fn default_oversampling() -> usize {
    1
}
fn default_bins() -> usize {
    60
}
fn default_range() -> f64 {
    5.0
}

pub const DEFAULT_NOISE_RATIO: f64 = 0.2;

pub fn parse_study(text: &str) -> Result<StudyFile> {
    toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string().trim_end().to_string()))
}

/// `ω` given explicitly or derived from a noise ratio at window ratio `theta`.
pub fn resolve_omega(
    kind: ModelKind,
    (a, sigma, x0, b): (f64, f64, f64, f64),
    omega: Option<f64>,
    noise_ratio: Option<f64>,
    theta: f64,
) -> Result<f64> {
    if let Some(w) = omega {
        return Ok(w);
    }
    let signal = match kind {
        ModelKind::Gbm => gbm_mean_signal(a, sigma, x0),
        ModelKind::ConstantVol => b * b,
    };
    omega_for_noise_ratio(signal, noise_ratio.unwrap_or(DEFAULT_NOISE_RATIO), theta)
}

impl StudyFile {
    pub fn into_config(self) -> Result<(StudyConfig, DensityOptions)> {
        let ns = self.n.to_vec();
        let ks = self.k_n.to_vec();
        if ns.len() != ks.len() {
            return Err(Error::InvalidConfig(format!(
                "`n` and `k_n` must have the same length, got {} and {}",
                ns.len(),
                ks.len()
            )));
        }
        let grids = ns
            .iter()
            .zip(&ks)
            .map(|(&n, &k)| validate_grid(n, k, self.strict))
            .collect::<Result<Vec<_>>>()?;
        let theta = grids.first().map_or(1.0, |g| g.theta());
        let params = (
            self.a.unwrap_or(0.05),
            self.sigma.unwrap_or(0.3),
            self.x0.unwrap_or(1.0),
            self.b.unwrap_or(0.2),
        );
        let omega = resolve_omega(self.model, params, self.omega, self.noise_ratio, theta)?;
        let model = match self.model {
            ModelKind::Gbm => ModelSpec::gbm(params.0, params.1, params.2, omega),
            ModelKind::ConstantVol => ModelSpec::constant_vol(params.3, self.drift.unwrap_or(0.0), params.2, omega),
        };
        let kind = self.expansion.unwrap_or(match self.model {
            ModelKind::Gbm => ExpansionKind::MonteCarlo,
            ModelKind::ConstantVol => ExpansionKind::ClosedForm,
        });
        let expansion = match kind {
            ExpansionKind::MonteCarlo => ExpansionSource::MonteCarlo {
                n_paths: self.expansion_paths,
                seed: self.expansion_seed,
            },
            ExpansionKind::ClosedForm => ExpansionSource::ClosedForm,
        };
        if self.density_bins == 0 || !(self.density_range > 0.0) {
            return Err(Error::InvalidConfig("density_bins and density_range must be positive".into()));
        }
        let config = StudyConfig {
            model,
            grids,
            replications: self.replications,
            master_seed: self.seed,
            alphas: self.alphas,
            expansion,
            p_n: self.p_n.map_or(PnRule::Default, PnRule::Fixed),
            oversampling: self.oversampling,
            workers: self.workers,
        };
        config.validate()?;
        Ok((
            config,
            DensityOptions {
                bins: self.density_bins,
                range: self.density_range,
            },
        ))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DensityOptions {
    pub bins: usize,
    pub range: f64,
}
