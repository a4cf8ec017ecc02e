//! Per-path random quantities of the expansion.
//!
//! Every time integral is a left-point Riemann sum on the path grid, and the
//! stochastic integral in `H₂` is the matching Itô sum.

use serde::{Deserialize, Serialize};

use super::Clt2Kernels;
use crate::simulate::{ConstantVol, DiffusionCoefficients, Gbm, LatentPath, StateSymbols};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathFunctionals {
    /// `C = ∫ Σ^{11}`.
    pub c_big: f64,
    pub h1_tilde: f64,
    pub h2: f64,
    pub h3_tilde: f64,
    pub h4: f64,
    pub h5: f64,
}

impl PathFunctionals {
    pub fn is_finite(&self) -> bool {
        [self.c_big, self.h1_tilde, self.h2, self.h3_tilde, self.h4, self.h5]
            .iter()
            .all(|v| v.is_finite())
    }
}

/// `(C, H̃₁, H̃₃)` from the covariance kernels along the path.
fn covariance_functionals(b1: impl Iterator<Item = f64>, kernels: &Clt2Kernels, dt: f64) -> (f64, f64, f64) {
    let (mut s11, mut s13, mut s14) = (0.0, 0.0, 0.0);
    for b in b1 {
        s11 += kernels.sigma11(b);
        s13 += kernels.sigma13(b);
        s14 += kernels.sigma14(b);
    }
    (s11 * dt, s13 / (2.0 * s11), s14 / s11)
}

/// `out[i] = dt · Σ_{j ≥ i} f[j]`, i.e. the left Riemann sum of `∫_{t_i}^1`.
fn tail_sums(f: &[f64], dt: f64) -> Vec<f64> {
    let mut out = vec![0.0; f.len()];
    let mut acc = 0.0;
    for i in (0..f.len()).rev() {
        acc += f[i];
        out[i] = acc * dt;
    }
    out
}

/// Black–Scholes functionals, using `D_s X_t = σ X_t` for `s ≤ t`.
pub fn path_functionals_bs(path: &LatentPath, gbm: &Gbm, kernels: &Clt2Kernels) -> PathFunctionals {
    let n = path.grid.n;
    let dt = path.grid.delta();
    let Gbm { a, sigma } = *gbm;
    let consts = kernels.constants();
    let psi = consts.psi;
    let theta = consts.theta;
    let lambda = consts.noise_level();
    let x = &path.x[..n];

    let (c_big, h1_tilde, h3_tilde) = covariance_functionals(x.iter().map(|&x| sigma * x), kernels, dt);

    let p3sq = psi.psi3 * psi.psi3;
    let s2 = sigma * sigma;
    let stoch = theta * sigma / psi.psi2 * ((p3sq + 2.0 * psi.psi4 - psi.psi2) * s2 + 2.0 * p3sq * a);
    let drift = theta * p3sq / psi.psi2 * (a * s2 + a * a)
        + theta * (2.0 * psi.psi4 - psi.psi2) / (2.0 * psi.psi2) * (2.0 * a * s2 + s2 * s2);
    let mut ito = 0.0;
    let mut sq = 0.0;
    for i in 0..n {
        let x2 = x[i] * x[i];
        ito += x2 * (path.w[i + 1] - path.w[i]);
        sq += x2;
    }
    let h2 = stoch * ito + drift * sq * dt;

    let c1: Vec<f64> = x.iter().map(|&x| 4.0 * s2 * x * (s2 * x * x + lambda) * x).collect();
    let c2: Vec<f64> = x
        .iter()
        .map(|&x| (12.0 * s2 * s2 * x * x + 4.0 * s2 * lambda) * x * x + 4.0 * s2 * x * (s2 * x * x + lambda) * x)
        .collect();
    let t1 = tail_sums(&c1, dt);
    let t2 = tail_sums(&c2, dt);
    let (mut q4, mut q5) = (0.0, 0.0);
    for i in 0..n {
        let x2 = x[i] * x[i];
        q4 += x2 * t1[i] * t1[i];
        q5 += x2 * t2[i];
    }
    let s4 = s2 * s2;
    let h4 = 4.0 * theta.powi(3) * p3sq * s4 / psi.psi2 * q4 * dt;
    let h5 = 2.0 * theta * theta * p3sq * s4 / psi.psi2 * q5 * dt;

    PathFunctionals {
        c_big,
        h1_tilde,
        h2,
        h3_tilde,
        h4,
        h5,
    }
}

/// Constant volatility: every functional is deterministic except `H₂`,
/// which is replaced by its mean `N₃`.
pub fn path_functionals_constvol(model: &ConstantVol, kernels: &Clt2Kernels) -> PathFunctionals {
    let (c_big, h1_tilde, h3_tilde) = covariance_functionals(std::iter::once(model.b), kernels, 1.0);
    let sym = StateSymbols {
        b1: model.b,
        b2: model.drift,
        b11: 0.0,
        b12: 0.0,
        b21: 0.0,
    };
    PathFunctionals {
        c_big,
        h1_tilde,
        h2: kernels.drift_density(&sym),
        h3_tilde,
        h4: 0.0,
        h5: 0.0,
    }
}

/// `H₂ = ∫ μ₂ dW + N₂ + N₃ + N₄` for any coefficient set.
pub fn h2_generic(path: &LatentPath, coeffs: &dyn DiffusionCoefficients, kernels: &Clt2Kernels) -> f64 {
    let n = path.grid.n;
    let dt = path.grid.delta();
    let mut ito = 0.0;
    let mut det = 0.0;
    for i in 0..n {
        let s = coeffs.symbols(path.x[i]);
        ito += kernels.mu2(s.b1, s.b2, s.b11) * (path.w[i + 1] - path.w[i]);
        det += kernels.drift_density(&s);
    }
    ito + det * dt
}

/// `H₄` with the Malliavin derivative `D_t X_r = b¹(X_t) Y_r / Y_t`, where
/// `Y` is the first-variation process, advanced with the exponential scheme
/// `Y_{j+1} = Y_j exp(b¹′ ΔW + (b²′ − ½ b¹′²) Δ)`.
pub fn h4_generic(path: &LatentPath, coeffs: &dyn DiffusionCoefficients, kernels: &Clt2Kernels) -> f64 {
    let n = path.grid.n;
    let dt = path.grid.delta();
    let consts = kernels.constants();
    let psi = consts.psi;
    let lambda = consts.noise_level();
    let x = &path.x[..n];

    let mut y = Vec::with_capacity(n);
    let mut log_y = 0.0_f64;
    for i in 0..n {
        y.push(log_y.exp());
        let d1 = coeffs.diffusion_prime(x[i]);
        log_y += d1 * (path.w[i + 1] - path.w[i]) + (coeffs.drift_prime(x[i]) - 0.5 * d1 * d1) * dt;
    }
    let weighted: Vec<f64> = (0..n)
        .map(|j| {
            let b = coeffs.diffusion(x[j]);
            4.0 * b * coeffs.diffusion_prime(x[j]) * (b * b + lambda) * y[j]
        })
        .collect();
    let tails = tail_sums(&weighted, dt);
    let mut q = 0.0;
    for i in 0..n {
        let b = coeffs.diffusion(x[i]);
        let d = b * b / y[i] * tails[i];
        q += d * d;
    }
    4.0 * consts.theta.powi(3) * psi.psi3 * psi.psi3 / psi.psi2 * q * dt
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expansion::{clt2_kernels, ExpansionConstants};
    use crate::simulate::{simulate_gbm, ModelSpec};
    use crate::weights::{psi_limits, validate_grid, WeightFunction};

    fn kernels(theta: f64, omega: f64) -> Clt2Kernels {
        let psi = psi_limits(&WeightFunction::tent(), 64).unwrap();
        clt2_kernels(ExpansionConstants::new(theta, omega, psi)).unwrap()
    }

    #[test]
    fn bs_routes_agree_with_generic_forms() {
        let gbm = Gbm { a: 0.05, sigma: 0.3 };
        let model = ModelSpec::gbm(gbm.a, gbm.sigma, 1.0, 0.04);
        let grid = validate_grid(3600, 60, true).unwrap();
        let k = kernels(grid.theta(), model.omega);
        for seed in 0..4 {
            let p = simulate_gbm(&model, &grid, seed.into()).unwrap();
            let f = path_functionals_bs(&p, &gbm, &k);
            let h2 = h2_generic(&p, &gbm, &k);
            assert!((f.h2 - h2).abs() <= 1e-11 * f.h2.abs().max(1e-3), "{} vs {h2}", f.h2);
            let h4 = h4_generic(&p, &gbm, &k);
            assert!((f.h4 - h4).abs() <= 1e-10 * f.h4, "{} vs {h4}", f.h4);
            assert!(f.h4 >= 0.0);
        }
    }

    #[test]
    fn flat_gbm_limits() {
        let gbm = Gbm { a: 0.0, sigma: 0.0 };
        let model = ModelSpec::gbm(0.0, 0.0, 1.0, 0.02);
        let grid = validate_grid(400, 20, true).unwrap();
        let k = kernels(grid.theta(), model.omega);
        let p = simulate_gbm(&model, &grid, 1.into()).unwrap();
        let f = path_functionals_bs(&p, &gbm, &k);
        let lambda = k.constants().noise_level();
        let want = 2.0 * grid.theta() / 3.0 * lambda;
        assert!((f.h1_tilde - want).abs() < 1e-12 * want, "{} vs {want}", f.h1_tilde);
        assert_eq!(f.h4, 0.0);
        assert_eq!(f.h5, 0.0);
    }

    #[test]
    fn constvol_closed_form() {
        let k = kernels(1.0, 0.01);
        let f = path_functionals_constvol(&ConstantVol { b: 0.2, drift: 0.0 }, &k);
        let want = 2.0 * (0.04_f64 + 0.0001 * 12.0).powi(2);
        assert!((f.c_big - want).abs() < 1e-15);
        assert_eq!(f.h2, 0.0);
        assert_eq!((f.h4, f.h5), (0.0, 0.0));
        assert!((f.h3_tilde / f.h1_tilde - 6.0).abs() < 1e-14);
        let g = path_functionals_constvol(&ConstantVol { b: 0.2, drift: 0.3 }, &k);
        assert!((g.h2 - 0.25 * 0.25 * 12.0 * 0.09).abs() < 1e-15);
    }
}
