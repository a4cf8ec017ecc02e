//! Second-order Edgeworth expansion of the studentized statistic.
//!
//! Three layers:
//! - [`Clt2Kernels`]: the state functions `μ₂`, `σ₂` and the entries of the
//!   limiting covariance `Σ_s`;
//! - per-path functionals `C, H̃₁, H₂, H̃₃, H₄, H₅` ([`functionals`]);
//! - their Monte Carlo expectations collapsed to the linear and cubic
//!   coefficients of the density correction ([`coefficients`]), and the
//!   resulting density, CDF and quantiles ([`edgeworth`]).

pub mod coefficients;
pub mod edgeworth;
pub mod functionals;

pub use coefficients::{expansion_coefficients, ExpansionCoefficients, Expectations, MonteCarloSpec};
pub use edgeworth::{corrected_quantile, studentized_cdf, studentized_density, EdgeworthLaw};
pub use functionals::{
    h2_generic, h4_generic, path_functionals_bs, path_functionals_constvol, PathFunctionals,
};

use serde::{Deserialize, Serialize};

use crate::simulate::StateSymbols;
use crate::weights::PsiLimits;
use crate::{Error, Result};

/// Everything the kernels depend on besides the state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpansionConstants {
    pub theta: f64,
    pub omega: f64,
    pub psi: PsiLimits,
}

impl ExpansionConstants {
    pub fn new(theta: f64, omega: f64, psi: PsiLimits) -> Self {
        Self { theta, omega, psi }
    }

    /// `ω² ψ₁ / (θ² ψ₂)`.
    pub fn noise_level(&self) -> f64 {
        self.omega * self.omega * self.psi.psi1 / (self.theta * self.theta * self.psi.psi2)
    }

    /// `a = (b¹)² + ω² ψ₁ / (θ² ψ₂)`.
    pub fn local_level(&self, b1: f64) -> f64 {
        b1 * b1 + self.noise_level()
    }
}

/// State functions of the joint stable limit of `(M_n, N_n, Ĉ_n, F̂_n)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Clt2Kernels {
    consts: ExpansionConstants,
}

pub fn clt2_kernels(consts: ExpansionConstants) -> Result<Clt2Kernels> {
    if !(consts.theta > 0.0) {
        return Err(Error::Numeric(format!("θ must be positive, got {}", consts.theta)));
    }
    if !(consts.psi.psi2 > 0.0) {
        return Err(Error::Numeric(format!("ψ₂ must be positive, got {}", consts.psi.psi2)));
    }
    Ok(Clt2Kernels { consts })
}

impl Clt2Kernels {
    pub fn constants(&self) -> &ExpansionConstants {
        &self.consts
    }

    /// `μ₂(x, y, z)` with `x = b¹`, `y = b²`, `z = b^{[1.1]}`.
    pub fn mu2(&self, x: f64, y: f64, z: f64) -> f64 {
        let ExpansionConstants { theta, psi, .. } = self.consts;
        let p3sq = psi.psi3 * psi.psi3;
        theta * x / psi.psi2 * ((p3sq + 2.0 * psi.psi4 - psi.psi2) * z + 2.0 * p3sq * y)
    }

    /// `σ₂(x, y, z)`.
    pub fn sigma2(&self, x: f64, y: f64, z: f64) -> f64 {
        let ExpansionConstants { theta, omega, psi } = self.consts;
        let p2sq = psi.psi2 * psi.psi2;
        let p3sq = psi.psi3 * psi.psi3;
        let w2 = omega * omega;
        4.0 * theta * theta * x * x / p2sq
            * ((psi.psi7 + psi.psi6) * z * z
                + (4.0 * psi.psi5 - psi.psi2) * psi.psi3 * y * z
                + p3sq * psi.psi2 * y * y)
            + 4.0 * w2 * psi.psi1 / p2sq * (p3sq * y * y + psi.psi4 * z * z)
            + 3.0 * w2 * w2 * psi.psi1 * psi.psi1 / (theta.powi(4) * p2sq)
    }

    /// `Σ^{11} = 2θ a²`.
    pub fn sigma11(&self, b1: f64) -> f64 {
        2.0 * self.consts.theta * self.consts.local_level(b1).powi(2)
    }

    /// `Σ^{22} = σ₂ − μ₂²`.
    pub fn sigma22(&self, x: f64, y: f64, z: f64) -> f64 {
        self.sigma2(x, y, z) - self.mu2(x, y, z).powi(2)
    }

    /// `Σ^{33} = (16/3) θ³ a⁴`.
    pub fn sigma33(&self, b1: f64) -> f64 {
        16.0 / 3.0 * self.consts.theta.powi(3) * self.consts.local_level(b1).powi(4)
    }

    /// `Σ^{44} = (128/3) θ³ a⁴`.
    pub fn sigma44(&self, b1: f64) -> f64 {
        128.0 / 3.0 * self.consts.theta.powi(3) * self.consts.local_level(b1).powi(4)
    }

    /// `Σ^{13} = (8/3) θ² a³`.
    pub fn sigma13(&self, b1: f64) -> f64 {
        8.0 / 3.0 * self.consts.theta.powi(2) * self.consts.local_level(b1).powi(3)
    }

    /// `Σ^{14} = 8 θ² a³`.
    pub fn sigma14(&self, b1: f64) -> f64 {
        8.0 * self.consts.theta.powi(2) * self.consts.local_level(b1).powi(3)
    }

    /// `Σ^{34} = (44/3) θ² a³`.
    pub fn sigma34(&self, b1: f64) -> f64 {
        44.0 / 3.0 * self.consts.theta.powi(2) * self.consts.local_level(b1).powi(3)
    }

    /// Integrand of the deterministic part `N₂ + N₃ + N₄` of `H₂`.
    pub fn drift_density(&self, s: &StateSymbols) -> f64 {
        let ExpansionConstants { theta, psi, .. } = self.consts;
        let p3sq = psi.psi3 * psi.psi3;
        theta * p3sq / psi.psi2 * (s.b1 * s.b21 + s.b2 * s.b2)
            + theta * (2.0 * psi.psi4 - psi.psi2) / (2.0 * psi.psi2)
                * (2.0 * s.b1 * s.b12 + s.b11 * s.b11)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::weights::{psi_limits, WeightFunction};

    fn kernels(theta: f64, omega: f64) -> Clt2Kernels {
        let psi = psi_limits(&WeightFunction::tent(), 64).unwrap();
        clt2_kernels(ExpansionConstants::new(theta, omega, psi)).unwrap()
    }

    #[test]
    fn kernels_at_zero_signal() {
        let k = kernels(1.3, 0.02);
        let c = k.constants();
        let psi = c.psi;
        for &x in &[0.0, 0.4, 2.0] {
            assert_eq!(k.mu2(x, 0.0, 0.0), 0.0);
            let expected = 3.0 * c.omega.powi(4) * psi.psi1.powi(2) / (c.theta.powi(4) * psi.psi2.powi(2));
            assert!((k.sigma2(x, 0.0, 0.0) - expected).abs() <= 1e-15 * expected);
        }
    }

    #[test]
    fn covariance_ratios() {
        let k = kernels(0.8, 0.03);
        for &b in &[0.0, 0.1, 0.35, 1.7] {
            let a = k.constants().local_level(b);
            let r13 = k.sigma13(b) / k.sigma11(b);
            assert!((r13 - 4.0 * 0.8 / 3.0 * a).abs() < 1e-14 * r13.abs().max(1.0));
            let r14 = k.sigma14(b) / k.sigma11(b);
            assert!((r14 - 3.0 * r13).abs() < 1e-14 * r14);
        }
    }

    #[test]
    fn bad_constants_rejected() {
        let psi = psi_limits(&WeightFunction::tent(), 64).unwrap();
        assert!(clt2_kernels(ExpansionConstants::new(0.0, 0.1, psi)).is_err());
    }
}
