//! Monte Carlo studies: replicate simulate → estimate → studentize and
//! compare the studentized statistic with `N(0, 1)` and the corrected law.
//!
//! Each replication draws from its own counter-based streams and records are
//! reduced in replication order, so reports do not depend on the number of
//! workers.

use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::estimate::{build_report, QuantileSource, ReportOptions};
use crate::expansion::{
    clt2_kernels, expansion_coefficients, Clt2Kernels, EdgeworthLaw, ExpansionCoefficients,
    ExpansionConstants, MonteCarloSpec,
};
use crate::rng::{derive_seed, SeedKey};
use crate::simulate::{add_noise, simulate_latent, Dynamics, LatentPath, ModelSpec, SimOptions};
use crate::stats::{mean, median, normal_cdf, normal_quantile, pairwise_sum, skewness, std_error, variance};
use crate::weights::{psi_limits, validate_grid, GridSpec, WeightFunction, WeightScheme, DEFAULT_QUAD_PANELS};
use crate::{Error, Result};

/// Replications needed for the distributional metrics.
pub const MIN_REPLICATIONS: usize = 100;
/// Tainted replications above this share invalidate a study.
pub const MAX_TAINTED_SHARE: f64 = 0.01;

const EXPANSION_STREAM: u64 = 0x4558_5041_4e53_494f;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ExpansionSource {
    /// Fresh gbm ensemble; the seed defaults to one derived from the master seed.
    MonteCarlo { n_paths: usize, seed: Option<u64> },
    /// Constant volatility only.
    ClosedForm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PnRule {
    /// `⌊Δ_n^{-3/4}⌋`.
    #[default]
    Default,
    Fixed(usize),
}

impl PnRule {
    pub fn resolve(&self, grid: &GridSpec) -> usize {
        match *self {
            PnRule::Default => grid.default_pn(),
            PnRule::Fixed(p) => p,
        }
    }
}

#[derive(Debug, Clone)]
pub struct StudyConfig {
    pub model: ModelSpec,
    pub grids: Vec<GridSpec>,
    pub replications: usize,
    pub master_seed: u64,
    /// Two-sided levels; `0.05` gives 95% intervals.
    pub alphas: Vec<f64>,
    pub expansion: ExpansionSource,
    pub p_n: PnRule,
    pub oversampling: usize,
    /// Worker threads; 0 uses every core.
    pub workers: usize,
}

impl StudyConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.grids.is_empty() {
            return Err(Error::InvalidConfig("at least one grid is required".into()));
        }
        if self.replications < MIN_REPLICATIONS {
            return Err(Error::InvalidConfig(format!(
                "replications must be ≥ {MIN_REPLICATIONS}, got {}",
                self.replications
            )));
        }
        if self.alphas.is_empty() || self.alphas.iter().any(|a| !(*a > 0.0 && *a < 1.0)) {
            return Err(Error::InvalidConfig(format!("alphas must lie in (0, 1), got {:?}", self.alphas)));
        }
        if self.oversampling == 0 {
            return Err(Error::InvalidConfig("oversampling must be ≥ 1".into()));
        }
        match (&self.model.dynamics, self.expansion) {
            (Dynamics::Gbm(_), ExpansionSource::ClosedForm) => {
                return Err(Error::InvalidConfig("closed-form coefficients exist only for constant_vol".into()))
            }
            (Dynamics::Custom(_), _) => {
                return Err(Error::UnsupportedModel("studies need gbm or constant_vol".into()))
            }
            _ => {}
        }
        Ok(())
    }

    /// Master seed of the replication streams on `grid`.
    pub fn replication_seed(&self, grid: &GridSpec) -> u64 {
        derive_seed(self.master_seed, grid.n as u64)
    }

    /// Master seed of the independent coefficient ensemble on `grid`.
    pub fn expansion_seed(&self, grid: &GridSpec) -> u64 {
        match self.expansion {
            ExpansionSource::MonteCarlo { seed: Some(s), .. } => s,
            _ => derive_seed(derive_seed(self.master_seed, EXPANSION_STREAM), grid.n as u64),
        }
    }
}

/// Per-grid state shared by all replications.
#[derive(Debug, Clone)]
pub struct GridContext {
    pub grid: GridSpec,
    pub scheme: WeightScheme,
    pub kernels: Clt2Kernels,
    pub coefficients: ExpansionCoefficients,
    pub law: EdgeworthLaw,
    pub p_n: Option<usize>,
    /// Per α: normal and corrected `(q_{α/2}, q_{1−α/2})`.
    pub quantiles: Vec<((f64, f64), (f64, f64))>,
}

pub fn prepare_grid(config: &StudyConfig, grid: &GridSpec) -> Result<GridContext> {
    let scheme = WeightScheme::tent(grid.k_n)?;
    let constants = ExpansionConstants::new(grid.theta(), config.model.omega, *scheme.limits());
    let kernels = clt2_kernels(constants)?;
    let coefficients = match config.expansion {
        ExpansionSource::ClosedForm => expansion_coefficients(&config.model, grid, constants, &MonteCarloSpec::new(0, 0))?,
        ExpansionSource::MonteCarlo { n_paths, .. } => {
            let mut mc = MonteCarloSpec::new(n_paths, config.expansion_seed(grid));
            mc.oversampling = Some(config.oversampling);
            expansion_coefficients(&config.model, grid, constants, &mc)?
        }
    };
    let law = EdgeworthLaw::from_coefficients(&coefficients, grid.delta())?;
    let mut quantiles = Vec::with_capacity(config.alphas.len());
    for &a in &config.alphas {
        let normal = (normal_quantile(0.5 * a), normal_quantile(1.0 - 0.5 * a));
        let corrected = (law.quantile(0.5 * a)?, law.quantile(1.0 - 0.5 * a)?);
        quantiles.push((normal, corrected));
    }
    let p_n = (!grid.is_aligned()).then(|| config.p_n.resolve(grid));
    Ok(GridContext {
        grid: *grid,
        scheme,
        kernels,
        coefficients,
        law,
        p_n,
        quantiles,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Coverage {
    pub alpha: f64,
    pub normal: bool,
    pub corrected: bool,
    /// Normal quantiles with the path's `C` in place of `F_n`.
    pub oracle: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRecord {
    pub rep_id: u64,
    pub v_n: f64,
    pub v_corrected: f64,
    pub f_n: f64,
    pub z_star: f64,
    pub t_stat: f64,
    pub c_path: f64,
    pub true_v: f64,
    pub covered: Vec<Coverage>,
}

/// Why a replication was excluded.
#[derive(Debug, Clone, PartialEq)]
pub enum Taint {
    Diverged(Error),
    Degenerate(Error),
    NonFinite,
}

/// `C = ∫ Σ^{11}` along the latent path.
pub fn path_variance(path: &LatentPath, model: &ModelSpec, kernels: &Clt2Kernels) -> f64 {
    let coeffs = model.dynamics.coefficients();
    let n = path.grid.n;
    let terms: Vec<f64> = path.x[..n]
        .iter()
        .map(|&x| kernels.sigma11(coeffs.diffusion(x)))
        .collect();
    pairwise_sum(&terms) * path.grid.delta()
}

fn inside((lo, hi): (f64, f64), t: f64) -> bool {
    lo <= t && t <= hi
}

pub fn run_replication(
    config: &StudyConfig,
    ctx: &GridContext,
    rep_id: u64,
) -> std::result::Result<ReplicationRecord, Taint> {
    let key = SeedKey::new(config.replication_seed(&ctx.grid), rep_id);
    let opts = SimOptions {
        oversampling: config.oversampling,
    };
    let path = simulate_latent(&config.model, &ctx.grid, key, opts).map_err(Taint::Diverged)?;
    let series = add_noise(&path, config.model.omega, key);
    let ropts = ReportOptions {
        true_v: Some(path.true_v),
        alpha: config.alphas[0],
        p_n: ctx.p_n,
        quantiles: QuantileSource::Normal,
    };
    let report = build_report(&series, &ctx.scheme, &ctx.grid, &ropts).map_err(|e| match e {
        Error::DegenerateVariance(_) => Taint::Degenerate(e),
        other => Taint::Diverged(other),
    })?;
    let z_star = report.z_star.unwrap_or(f64::NAN);
    let t_stat = report.t_stat.unwrap_or(f64::NAN);
    let c_path = path_variance(&path, &config.model, &ctx.kernels);
    if ![report.v_n, report.f_n, z_star, t_stat, c_path].iter().all(|v| v.is_finite()) {
        return Err(Taint::NonFinite);
    }
    let t_oracle = z_star / c_path.sqrt();
    let covered = config
        .alphas
        .iter()
        .zip(&ctx.quantiles)
        .map(|(&alpha, &(normal, corrected))| Coverage {
            alpha,
            normal: inside(normal, t_stat),
            corrected: inside(corrected, t_stat),
            oracle: inside(normal, t_oracle),
        })
        .collect();
    Ok(ReplicationRecord {
        rep_id,
        v_n: report.v_n,
        v_corrected: report.v_corrected,
        f_n: report.f_n,
        z_star,
        t_stat,
        c_path,
        true_v: path.true_v,
        covered,
    })
}

/// `sup_y |F̂_m(y) − F(y)|`, checked on both sides of every jump.
pub fn ks_distance(samples: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut xs = samples.to_vec();
    xs.sort_by(f64::total_cmp);
    let m = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            ((i + 1) as f64 / m - f).max(f - i as f64 / m)
        })
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub alpha: f64,
    pub normal: f64,
    pub corrected: f64,
    pub oracle: f64,
    pub normal_quantiles: (f64, f64),
    pub corrected_quantiles: (f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridReport {
    pub n: usize,
    pub k_n: usize,
    pub d_n: usize,
    pub theta: f64,
    pub replications: usize,
    pub tainted: usize,
    pub t_mean: f64,
    pub t_variance: f64,
    pub t_skewness: f64,
    pub ks_normal: f64,
    pub ks_edgeworth: f64,
    pub coverage: Vec<CoverageReport>,
    pub v_rmse: f64,
    /// Mean of `V*_n − V`.
    pub v_bias: f64,
    pub v_bias_stderr: f64,
    /// Median of `|F_n − C| / C`.
    pub f_median_rel_error: f64,
    pub coefficients: ExpansionCoefficients,
    #[serde(skip)]
    pub wall_clock: Duration,
}

#[derive(Debug, Clone, Serialize)]
pub struct StudyReport {
    pub master_seed: u64,
    pub model: ModelSpec,
    pub grids: Vec<GridReport>,
}

/// Aggregates clean records of one grid.
pub fn summarize(ctx: &GridContext, config: &StudyConfig, records: &[ReplicationRecord], tainted: usize) -> GridReport {
    let t: Vec<f64> = records.iter().map(|r| r.t_stat).collect();
    let err: Vec<f64> = records.iter().map(|r| r.v_corrected - r.true_v).collect();
    let sq: Vec<f64> = err.iter().map(|e| e * e).collect();
    let rel: Vec<f64> = records.iter().map(|r| ((r.f_n - r.c_path) / r.c_path).abs()).collect();
    let m = records.len() as f64;
    let share = |pick: fn(&Coverage) -> bool, j: usize| {
        records.iter().filter(|r| pick(&r.covered[j])).count() as f64 / m
    };
    let coverage = config
        .alphas
        .iter()
        .enumerate()
        .map(|(j, &alpha)| CoverageReport {
            alpha,
            normal: share(|c| c.normal, j),
            corrected: share(|c| c.corrected, j),
            oracle: share(|c| c.oracle, j),
            normal_quantiles: ctx.quantiles[j].0,
            corrected_quantiles: ctx.quantiles[j].1,
        })
        .collect();
    GridReport {
        n: ctx.grid.n,
        k_n: ctx.grid.k_n,
        d_n: ctx.grid.d_n,
        theta: ctx.grid.theta(),
        replications: records.len() + tainted,
        tainted,
        t_mean: mean(&t),
        t_variance: variance(&t),
        t_skewness: skewness(&t),
        ks_normal: ks_distance(&t, normal_cdf),
        ks_edgeworth: ks_distance(&t, |y| ctx.law.cdf_monotone(y)),
        coverage,
        v_rmse: mean(&sq).sqrt(),
        v_bias: mean(&err),
        v_bias_stderr: std_error(&err),
        f_median_rel_error: median(&rel),
        coefficients: ctx.coefficients,
        wall_clock: Duration::ZERO,
    }
}

/// One grid: clean records in replication order plus the report.
pub fn run_grid(config: &StudyConfig, grid: &GridSpec) -> Result<(GridReport, Vec<ReplicationRecord>)> {
    let start = Instant::now();
    let ctx = prepare_grid(config, grid)?;
    let outcomes: Vec<_> = (0..config.replications as u64)
        .into_par_iter()
        .map(|rep| run_replication(config, &ctx, rep))
        .collect();
    let total = outcomes.len();
    let records: Vec<ReplicationRecord> = outcomes.into_iter().filter_map(|o| o.ok()).collect();
    let tainted = total - records.len();
    if tainted as f64 > MAX_TAINTED_SHARE * total as f64 {
        return Err(Error::StudyInvalid { tainted, total });
    }
    let mut report = summarize(&ctx, config, &records, tainted);
    report.wall_clock = start.elapsed();
    Ok((report, records))
}

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("cannot start {workers} workers: {e}")))
}

pub fn run_study(config: &StudyConfig) -> Result<StudyReport> {
    run_study_with_records(config).map(|(r, _)| r)
}

/// Like [`run_study`], also returning each grid's replication records.
pub fn run_study_with_records(config: &StudyConfig) -> Result<(StudyReport, Vec<Vec<ReplicationRecord>>)> {
    config.validate()?;
    pool(config.workers)?.install(|| {
        let mut grids = Vec::with_capacity(config.grids.len());
        let mut all = Vec::with_capacity(config.grids.len());
        for g in &config.grids {
            let (report, records) = run_grid(config, g)?;
            grids.push(report);
            all.push(records);
        }
        Ok((
            StudyReport {
                master_seed: config.master_seed,
                model: config.model.clone(),
                grids,
            },
            all,
        ))
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DensityRow {
    pub y: f64,
    pub empirical: f64,
    pub normal: f64,
    pub edgeworth: f64,
}

/// Histogram density of `t` on `bins` equal cells of `[lo, hi]` next to `φ`
/// and the corrected density at the cell centres.
pub fn density_table(t: &[f64], law: &EdgeworthLaw, lo: f64, hi: f64, bins: usize) -> Vec<DensityRow> {
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0usize; bins];
    for &v in t {
        if v >= lo && v < hi {
            counts[(((v - lo) / width) as usize).min(bins - 1)] += 1;
        }
    }
    let m = t.len().max(1) as f64;
    counts
        .iter()
        .enumerate()
        .map(|(i, &c)| {
            let y = lo + (i as f64 + 0.5) * width;
            DensityRow {
                y,
                empirical: c as f64 / (m * width),
                normal: crate::stats::normal_pdf(y),
                edgeworth: law.density(y),
            }
        })
        .collect()
}

/// Mean of `σ² X_t²` over `[0, 1]` for gbm: `σ² x0² (e^{2a+σ²} − 1)/(2a + σ²)`.
pub fn gbm_mean_signal(a: f64, sigma: f64, x0: f64) -> f64 {
    let r = 2.0 * a + sigma * sigma;
    let growth = if r.abs() < 1e-12 { 1.0 } else { r.exp_m1() / r };
    sigma * sigma * x0 * x0 * growth
}

/// `ω` making `ω² ψ₁ / (θ² ψ₂)` equal `ratio` times `signal`.
pub fn omega_for_noise_ratio(signal: f64, ratio: f64, theta: f64) -> Result<f64> {
    let psi = psi_limits(&WeightFunction::tent(), DEFAULT_QUAD_PANELS)?;
    Ok((ratio * signal * theta * theta * psi.psi2 / psi.psi1).sqrt())
}

/// Canonical gbm: `a = 0.05`, `σ = 0.3`, `x0 = 1`, noise at 0.2 of the mean
/// signal with `θ = 1`.
pub fn canonical_gbm() -> ModelSpec {
    let (a, sigma) = (0.05, 0.3);
    let omega = omega_for_noise_ratio(gbm_mean_signal(a, sigma, 1.0), 0.2, 1.0).expect("tent constants");
    ModelSpec::gbm(a, sigma, 1.0, omega)
}

/// `(3600, 60)` and `(14400, 120)`, both with `θ = 1`.
pub fn desk_grids() -> Vec<GridSpec> {
    [(3600, 60), (14400, 120)]
        .iter()
        .map(|&(n, k)| validate_grid(n, k, true).expect("aligned"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ks_constructions() {
        assert_eq!(ks_distance(&[0.0], normal_cdf), 0.5);
        let m = 50;
        let xs: Vec<f64> = (1..=m).map(|i| (i as f64 - 0.5) / m as f64).collect();
        let d = ks_distance(&xs, |y| y.clamp(0.0, 1.0));
        assert!((d - 0.5 / m as f64).abs() < 1e-15);
    }

    #[test]
    fn canonical_noise_level() {
        let model = canonical_gbm();
        // 0.2 · 0.09 · (e^{0.19} − 1) / 0.19 / 12
        let want = 0.2 * 0.09 * 0.19_f64.exp_m1() / 0.19 / 12.0;
        assert!((model.omega * model.omega - want).abs() < 1e-15, "{}", model.omega);
    }

    #[test]
    fn config_validation() {
        let mut cfg = StudyConfig {
            model: canonical_gbm(),
            grids: desk_grids(),
            replications: 100,
            master_seed: 1,
            alphas: vec![0.05],
            expansion: ExpansionSource::ClosedForm,
            p_n: PnRule::Default,
            oversampling: 1,
            workers: 1,
        };
        assert!(matches!(cfg.validate(), Err(Error::InvalidConfig(_))));
        cfg.expansion = ExpansionSource::MonteCarlo { n_paths: 100, seed: None };
        assert!(cfg.validate().is_ok());
        cfg.replications = 10;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn replications_are_reproducible() {
        let grid = validate_grid(3600, 60, true).unwrap();
        let cfg = StudyConfig {
            model: ModelSpec::constant_vol(0.2, 0.0, 1.0, 0.0),
            grids: vec![grid],
            replications: 100,
            master_seed: 3,
            alphas: vec![0.05, 0.1],
            expansion: ExpansionSource::ClosedForm,
            p_n: PnRule::Default,
            oversampling: 1,
            workers: 1,
        };
        let ctx = prepare_grid(&cfg, &grid).unwrap();
        let a = run_replication(&cfg, &ctx, 7).unwrap();
        let b = run_replication(&cfg, &ctx, 7).unwrap();
        assert_eq!(a, b);
        assert!(a.z_star.is_finite());
        assert_ne!(a, run_replication(&cfg, &ctx, 8).unwrap());
    }

    #[test]
    fn density_table_integrates_to_one() {
        let t: Vec<f64> = (0..1000).map(|i| -2.0 + 4.0 * i as f64 / 1000.0).collect();
        let rows = density_table(&t, &EdgeworthLaw::standard_normal(), -5.0, 5.0, 50);
        let mass: f64 = rows.iter().map(|r| r.empirical * 0.2).sum();
        assert!((mass - 1.0).abs() < 1e-12);
    }
}
