//! The corrected law `p(y) = φ(y)[1 + Δ^{1/4}(lin·y + cub·y³)]` of the
//! studentized statistic.
//!
//! The density is reported as-is, negative tails included. Quantiles come
//! from the monotone rearrangement of the CDF (its running maximum, clamped
//! to `[0, 1]`), tabulated on `[−SUPPORT, SUPPORT]`.

use std::sync::Arc;

use super::ExpansionCoefficients;
use crate::stats::{normal_cdf, normal_pdf};
use crate::{Error, Result};

pub const SUPPORT: f64 = 10.0;
const TABLE_POINTS: usize = 20_001;
/// Largest CDF dip (or excursion outside `[0, 1]`) the rearrangement absorbs.
pub const MAX_REPAIR: f64 = 0.05;
pub const QUANTILE_TOL: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct EdgeworthLaw {
    lin: f64,
    cub: f64,
    /// `Δ_n^{1/4}`.
    scale: f64,
    running_max: Arc<[f64]>,
}

fn table_step() -> f64 {
    2.0 * SUPPORT / (TABLE_POINTS - 1) as f64
}

impl EdgeworthLaw {
    pub fn new(lin: f64, cub: f64, delta: f64) -> Result<Self> {
        if !(delta > 0.0) || !delta.is_finite() {
            return Err(Error::Numeric(format!("Δ_n must be positive, got {delta}")));
        }
        if !lin.is_finite() || !cub.is_finite() {
            return Err(Error::Numeric(format!("non-finite coefficients lin = {lin}, cub = {cub}")));
        }
        let mut law = Self {
            lin,
            cub,
            scale: delta.powf(0.25),
            running_max: Arc::from(Vec::new()),
        };
        law.running_max = law.tabulate()?.into();
        Ok(law)
    }

    pub fn from_coefficients(c: &ExpansionCoefficients, delta: f64) -> Result<Self> {
        Self::new(c.lin, c.cub, delta)
    }

    pub fn standard_normal() -> Self {
        Self::new(0.0, 0.0, 1.0).expect("the normal law is valid")
    }

    pub fn lin(&self) -> f64 {
        self.lin
    }

    pub fn cub(&self) -> f64 {
        self.cub
    }

    fn tabulate(&self) -> Result<Vec<f64>> {
        let h = table_step();
        let mut out = Vec::with_capacity(TABLE_POINTS);
        let mut peak = f64::NEG_INFINITY;
        let mut peak_at = -SUPPORT;
        for i in 0..TABLE_POINTS {
            let y = -SUPPORT + i as f64 * h;
            let f = self.cdf(y);
            if f < -MAX_REPAIR || f > 1.0 + MAX_REPAIR {
                return Err(self.offending(y, |v| v < -MAX_REPAIR || v > 1.0 + MAX_REPAIR));
            }
            if f >= peak {
                peak = f;
                peak_at = y;
            } else if peak - f > MAX_REPAIR {
                let rest = self.recovery(y, peak);
                return Err(Error::InvalidExpansion { lo: peak_at, hi: rest });
            }
            out.push(peak.clamp(0.0, 1.0));
        }
        Ok(out)
    }

    /// First grid point at or after `from` where the raw CDF climbs back to `level`.
    fn recovery(&self, from: f64, level: f64) -> f64 {
        let h = table_step();
        let mut y = from;
        while y < SUPPORT && self.cdf(y) < level {
            y += h;
        }
        y.min(SUPPORT)
    }

    /// The maximal stretch of grid points around `start` satisfying `bad`.
    fn offending(&self, start: f64, bad: impl Fn(f64) -> bool) -> Error {
        let h = table_step();
        let mut hi = start;
        while hi + h <= SUPPORT && bad(self.cdf(hi + h)) {
            hi += h;
        }
        Error::InvalidExpansion { lo: start, hi }
    }

    pub fn density(&self, y: f64) -> f64 {
        normal_pdf(y) * (1.0 + self.scale * (self.lin * y + self.cub * y.powi(3)))
    }

    /// Antiderivative of [`Self::density`], without rearrangement.
    pub fn cdf(&self, y: f64) -> f64 {
        normal_cdf(y) - self.scale * normal_pdf(y) * (self.lin + self.cub * (y * y + 2.0))
    }

    /// The rearranged CDF: non-decreasing with values in `[0, 1]`.
    pub fn cdf_monotone(&self, y: f64) -> f64 {
        if y < -SUPPORT {
            return self.cdf(y).clamp(0.0, self.running_max[0]);
        }
        let idx = (((y + SUPPORT) / table_step()).floor() as usize).min(TABLE_POINTS - 1);
        self.running_max[idx].max(self.cdf(y)).clamp(0.0, 1.0)
    }

    /// Bisection on the rearranged CDF.
    pub fn quantile(&self, p: f64) -> Result<f64> {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::Numeric(format!("probability must lie in (0, 1), got {p}")));
        }
        let (mut lo, mut hi) = (-SUPPORT, SUPPORT);
        while hi - lo > QUANTILE_TOL {
            let mid = 0.5 * (lo + hi);
            if self.cdf_monotone(mid) < p {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(0.5 * (lo + hi))
    }
}

pub fn studentized_density(c: &ExpansionCoefficients, delta: f64, y: f64) -> f64 {
    normal_pdf(y) * (1.0 + delta.powf(0.25) * (c.lin * y + c.cub * y.powi(3)))
}

pub fn studentized_cdf(c: &ExpansionCoefficients, delta: f64, y: f64) -> f64 {
    normal_cdf(y) - delta.powf(0.25) * normal_pdf(y) * (c.lin + c.cub * (y * y + 2.0))
}

/// The `p`-quantile of the corrected law.
pub fn corrected_quantile(c: &ExpansionCoefficients, delta: f64, p: f64) -> Result<f64> {
    EdgeworthLaw::from_coefficients(c, delta)?.quantile(p)
}
