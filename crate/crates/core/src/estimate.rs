//! Pre-averaging estimators on an observation series.
//!
//! Windows for `V_n` and `F_n` are non-overlapping (stride `k_n`); the tail
//! estimator for the local volatility uses overlapping windows inside the
//! last `p_n` observations.

use std::io::Read;

use serde::{Deserialize, Serialize};

use crate::expansion::EdgeworthLaw;
use crate::simulate::ObservationSeries;
use crate::stats::normal_quantile;
use crate::weights::{GridSpec, WeightScheme};
use crate::{Error, Result};

/// Relative tolerance on timestamp spacing in data mode.
pub const SPACING_TOLERANCE: f64 = 1e-9;

/// `Ȳ_{t_i} = Σ_{j=1}^{k_n−1} g(j/k_n) (Y_{t_{i+j}} − Y_{t_{i+j−1}})`.
pub fn preaverage(y: &[f64], i: usize, scheme: &WeightScheme) -> Result<f64> {
    let n = y.len().saturating_sub(1);
    if i + scheme.k_n() > n {
        return Err(Error::OutOfRange { index: i, n });
    }
    Ok(preaverage_unchecked(y, i, scheme.taps()))
}

#[inline]
fn preaverage_unchecked(y: &[f64], i: usize, taps: &[f64]) -> f64 {
    taps.iter()
        .enumerate()
        .map(|(j, g)| g * (y[i + j + 1] - y[i + j]))
        .sum()
}

fn check_consistent(series: &ObservationSeries, scheme: &WeightScheme, grid: &GridSpec) -> Result<()> {
    if series.n() != grid.n {
        return Err(Error::InvalidGrid(format!(
            "series has {} increments but the grid expects n = {}",
            series.n(),
            grid.n
        )));
    }
    if scheme.k_n() != grid.k_n {
        return Err(Error::InvalidGrid(format!(
            "weight scheme built for k_n = {} but the grid has k_n = {}",
            scheme.k_n(),
            grid.k_n
        )));
    }
    Ok(())
}

/// `Σ_{i=1}^{n} (Δ_i Y)²`.
fn squared_increments(y: &[f64]) -> f64 {
    y.windows(2).map(|p| (p[1] - p[0]).powi(2)).sum()
}

/// Pre-averaged increments over the `d_n` non-overlapping windows.
fn block_preaverages<'a>(y: &'a [f64], scheme: &'a WeightScheme, grid: &GridSpec) -> impl Iterator<Item = f64> + 'a {
    let taps: &[f64] = scheme.taps();
    let k = grid.k_n;
    (0..grid.d_n).map(move |i| preaverage_unchecked(y, i * k, taps))
}

/// The pre-averaging estimator `V_n` of integrated volatility.
pub fn estimate_v(series: &ObservationSeries, scheme: &WeightScheme, grid: &GridSpec) -> Result<f64> {
    check_consistent(series, scheme, grid)?;
    let y = &series.y;
    let psi = scheme.discrete();
    let main: f64 = block_preaverages(y, scheme, grid).map(|b| b * b).sum();
    let bias = psi.psi1n * grid.d_n as f64 * grid.delta() / (2.0 * psi.psi2n * grid.k_n as f64)
        * squared_increments(y);
    Ok(main / psi.psi2n - bias)
}

/// The variance estimator `F_n`, consistent for the mixed-normal variance `C`.
pub fn estimate_f(series: &ObservationSeries, scheme: &WeightScheme, grid: &GridSpec) -> Result<f64> {
    check_consistent(series, scheme, grid)?;
    let psi2n = scheme.discrete().psi2n;
    let quartic: f64 = block_preaverages(&series.y, scheme, grid).map(|b| b.powi(4)).sum();
    Ok(2.0 * grid.delta().powf(-0.5) / (3.0 * psi2n * psi2n) * quartic)
}

/// `ω̂² = (2n)⁻¹ Σ (Δ_i Y)²`.
pub fn estimate_noise_variance(series: &ObservationSeries) -> Result<f64> {
    let n = series.n();
    if n == 0 {
        return Err(Error::InvalidGrid("need at least two observations".into()));
    }
    Ok(squared_increments(&series.y) / (2.0 * n as f64))
}

/// Local estimate of `(b¹)²` at the end of the sample from the last `p_n`
/// observations, `J_n = {n − p_n + 1, …, n}`.
pub fn estimate_edge_volatility(
    series: &ObservationSeries,
    scheme: &WeightScheme,
    grid: &GridSpec,
    p_n: usize,
) -> Result<f64> {
    check_consistent(series, scheme, grid)?;
    let (n, k) = (grid.n, grid.k_n);
    if p_n < k + 1 || p_n + k > n {
        return Err(Error::InvalidWindow(format!(
            "p_n must satisfy k_n + 1 ≤ p_n ≤ n − k_n, got p_n = {p_n} (k_n = {k}, n = {n})"
        )));
    }
    let y = &series.y;
    let psi = scheme.discrete();
    let taps = scheme.taps();
    let first = n + 1 - p_n;
    // i + k_n ∈ J_n
    let pre: f64 = (first - k..=n - k)
        .map(|i| preaverage_unchecked(y, i, taps).powi(2))
        .sum();
    // i ∈ J_n, Δ_i Y = y[i] − y[i−1]
    let incr: f64 = (first..=n).map(|i| (y[i] - y[i - 1]).powi(2)).sum();
    let pf = p_n as f64;
    let theta = grid.theta();
    Ok(pre / (psi.psi2n * k as f64 * grid.delta() * pf)
        - psi.psi1n / (2.0 * theta * theta * psi.psi2n * pf) * incr)
}

/// Where confidence-interval quantiles come from.
#[derive(Debug, Clone, Default)]
pub enum QuantileSource {
    #[default]
    Normal,
    Edgeworth(EdgeworthLaw),
}

#[derive(Debug, Clone, Default)]
pub struct ReportOptions {
    /// Integrated volatility of the latent path, when known.
    pub true_v: Option<f64>,
    /// Two-sided level: the interval covers with probability `1 − alpha`.
    pub alpha: f64,
    /// Tail block size for the local volatility estimate; `⌊Δ_n^{-3/4}⌋` if unset.
    pub p_n: Option<usize>,
    pub quantiles: QuantileSource,
}

impl ReportOptions {
    pub fn with_alpha(alpha: f64) -> Self {
        Self {
            alpha,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceInterval {
    pub alpha: f64,
    pub lower: f64,
    pub upper: f64,
    /// `(q_{α/2}, q_{1−α/2})` of the studentized law used.
    pub quantiles: (f64, f64),
    pub corrected: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub n: usize,
    pub k_n: usize,
    pub d_n: usize,
    pub v_n: f64,
    pub f_n: f64,
    pub omega2_hat: f64,
    /// Tail volatility estimate; absent when the windows cover `[0, 1]`.
    pub b2_edge: Option<f64>,
    pub p_n: Option<usize>,
    /// `1 − d_n k_n Δ_n`.
    pub correction_length: f64,
    pub v_corrected: f64,
    pub z_star: Option<f64>,
    pub t_stat: Option<f64>,
    pub ci: ConfidenceInterval,
    /// Set when `V_n < 0`; the value is reported unclamped.
    pub negative_v: bool,
}

/// Normal or corrected `(q_{α/2}, q_{1−α/2})`.
pub fn studentized_quantiles(source: &QuantileSource, alpha: f64) -> Result<(f64, f64)> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Numeric(format!("α must lie in (0, 1), got {alpha}")));
    }
    Ok(match source {
        QuantileSource::Normal => (
            normal_quantile(0.5 * alpha),
            normal_quantile(1.0 - 0.5 * alpha),
        ),
        QuantileSource::Edgeworth(law) => {
            (law.quantile(0.5 * alpha)?, law.quantile(1.0 - 0.5 * alpha)?)
        }
    })
}

/// Runs every estimator and assembles the bias-corrected point estimate,
/// the studentized statistic (when the true `V` is known) and the interval.
pub fn build_report(
    series: &ObservationSeries,
    scheme: &WeightScheme,
    grid: &GridSpec,
    opts: &ReportOptions,
) -> Result<EstimateReport> {
    let v_n = estimate_v(series, scheme, grid)?;
    let f_n = estimate_f(series, scheme, grid)?;
    let omega2_hat = estimate_noise_variance(series)?;
    let correction_length = grid.correction_length();
    let (b2_edge, p_n) = if grid.is_aligned() {
        (None, None)
    } else {
        let p_n = opts.p_n.unwrap_or_else(|| grid.default_pn());
        (Some(estimate_edge_volatility(series, scheme, grid, p_n)?), Some(p_n))
    };
    let v_corrected = v_n + b2_edge.map_or(0.0, |b2| correction_length * b2);
    if !(f_n > 0.0) || !f_n.is_finite() {
        return Err(Error::DegenerateVariance(f_n));
    }
    let rate = grid.delta().powf(0.25);
    let z_star = opts.true_v.map(|v| (v_corrected - v) / rate);
    let t_stat = z_star.map(|z| z / f_n.sqrt());
    let (q_lo, q_hi) = studentized_quantiles(&opts.quantiles, opts.alpha)?;
    let half = rate * f_n.sqrt();
    let ci = ConfidenceInterval {
        alpha: opts.alpha,
        lower: v_corrected - half * q_hi,
        upper: v_corrected - half * q_lo,
        quantiles: (q_lo, q_hi),
        corrected: matches!(opts.quantiles, QuantileSource::Edgeworth(_)),
    };
    Ok(EstimateReport {
        n: grid.n,
        k_n: grid.k_n,
        d_n: grid.d_n,
        v_n,
        f_n,
        omega2_hat,
        b2_edge,
        p_n,
        correction_length,
        v_corrected,
        z_star,
        t_stat,
        ci,
        negative_v: v_n < 0.0,
    })
}

/// Reads a `t,y` CSV (extra columns are ignored) with equidistant
/// timestamps. Rows are numbered from 1 at the header.
pub fn load_series_csv<R: Read>(input: R) -> Result<ObservationSeries> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let headers = rdr
        .headers()
        .map_err(|e| Error::Ingestion {
            row: 1,
            message: e.to_string(),
        })?
        .clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let (Some(tc), Some(yc)) = (col("t"), col("y")) else {
        return Err(Error::Ingestion {
            row: 1,
            message: format!("expected a header with columns `t` and `y`, found `{}`", headers.iter().collect::<Vec<_>>().join(",")),
        });
    };
    let mut ts = Vec::new();
    let mut ys = Vec::new();
    for (idx, rec) in rdr.records().enumerate() {
        let row = idx + 2;
        let rec = rec.map_err(|e| Error::Ingestion {
            row,
            message: e.to_string(),
        })?;
        let field = |c: usize, name: &str| -> Result<f64> {
            let raw = rec.get(c).ok_or_else(|| Error::Ingestion {
                row,
                message: format!("missing `{name}` field"),
            })?;
            let v: f64 = raw.parse().map_err(|_| Error::Ingestion {
                row,
                message: format!("`{name}` is not a number: `{raw}`"),
            })?;
            if !v.is_finite() {
                return Err(Error::Ingestion {
                    row,
                    message: format!("`{name}` is not finite"),
                });
            }
            Ok(v)
        };
        ts.push(field(tc, "t")?);
        ys.push(field(yc, "y")?);
    }
    if ys.len() < 3 {
        return Err(Error::Ingestion {
            row: ys.len() + 1,
            message: "need at least three observations".into(),
        });
    }
    let step = ts[1] - ts[0];
    if !(step > 0.0) {
        return Err(Error::Ingestion {
            row: 3,
            message: "timestamps must be strictly increasing".into(),
        });
    }
    for i in 1..ts.len() {
        let gap = ts[i] - ts[i - 1];
        if ((gap - step) / step).abs() > SPACING_TOLERANCE {
            return Err(Error::Ingestion {
                row: i + 2,
                message: format!("non-equidistant timestamp: spacing {gap} vs {step}"),
            });
        }
    }
    Ok(ObservationSeries::from_values(ys))
}
