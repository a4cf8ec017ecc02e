//! Monte Carlo expectations of the path functionals and the polynomial
//! coefficients of the studentized density correction.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{clt2_kernels, path_functionals_bs, path_functionals_constvol, ExpansionConstants};
use crate::rng::SeedKey;
use crate::simulate::{simulate_gbm_with, Dynamics, ModelSpec, SimOptions};
use crate::stats::{mean, std_error};
use crate::weights::GridSpec;
use crate::{Error, Result};

/// Fewest paths accepted for a Monte Carlo ensemble.
pub const MIN_PATHS: usize = 100;

/// `E[H₂C^{-1/2}], E[H₅C^{-3/2}], E[H₄C^{-5/2}], E[H̃₃C^{-1/2}], E[H̃₁C^{-1/2}]`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Expectations {
    pub e_h2: f64,
    pub e_h5: f64,
    pub e_h4: f64,
    pub e_h3: f64,
    pub e_h1: f64,
}

impl Expectations {
    pub fn lin(&self) -> f64 {
        self.e_h2 - 0.5 * self.e_h5 + 0.75 * self.e_h4 + self.e_h3 - 3.0 * self.e_h1
    }

    pub fn cub(&self) -> f64 {
        self.e_h1 - 0.5 * self.e_h3
    }

    fn as_array(&self) -> [f64; 5] {
        [self.e_h2, self.e_h5, self.e_h4, self.e_h3, self.e_h1]
    }

    fn from_array(v: [f64; 5]) -> Self {
        Self {
            e_h2: v[0],
            e_h5: v[1],
            e_h4: v[2],
            e_h3: v[3],
            e_h1: v[4],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MonteCarloSpec {
    pub n_paths: usize,
    pub seed: u64,
    #[serde(default)]
    pub oversampling: Option<usize>,
}

impl MonteCarloSpec {
    pub fn new(n_paths: usize, seed: u64) -> Self {
        Self {
            n_paths,
            seed,
            oversampling: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpansionCoefficients {
    pub e_h2: f64,
    pub e_h5: f64,
    pub e_h4: f64,
    pub e_h3: f64,
    pub e_h1: f64,
    pub mc_stderr: Expectations,
    pub lin: f64,
    pub cub: f64,
    /// Standard errors of `lin` and `cub`, from the per-path combinations.
    pub lin_stderr: f64,
    pub cub_stderr: f64,
    /// 0 for closed forms.
    pub n_paths: usize,
    pub seed: Option<u64>,
}

impl ExpansionCoefficients {
    /// Exact expectations (no Monte Carlo error).
    pub fn from_expectations(e: Expectations) -> Self {
        Self {
            e_h2: e.e_h2,
            e_h5: e.e_h5,
            e_h4: e.e_h4,
            e_h3: e.e_h3,
            e_h1: e.e_h1,
            mc_stderr: Expectations::default(),
            lin: e.lin(),
            cub: e.cub(),
            lin_stderr: 0.0,
            cub_stderr: 0.0,
            n_paths: 0,
            seed: None,
        }
    }

    /// All coefficients zero: the law is `N(0, 1)`.
    pub fn zero() -> Self {
        Self::from_expectations(Expectations::default())
    }

    pub fn expectations(&self) -> Expectations {
        Expectations {
            e_h2: self.e_h2,
            e_h5: self.e_h5,
            e_h4: self.e_h4,
            e_h3: self.e_h3,
            e_h1: self.e_h1,
        }
    }
}

/// Expectations of the Corollary's ratios: closed form for constant
/// volatility, plain Monte Carlo over fresh exact paths for gbm.
///
/// `constants.omega` is the noise level used in the kernels; the model's `ω`
/// only matters through it.
pub fn expansion_coefficients(
    model: &ModelSpec,
    grid: &GridSpec,
    constants: ExpansionConstants,
    mc: &MonteCarloSpec,
) -> Result<ExpansionCoefficients> {
    model.validate()?;
    let kernels = clt2_kernels(constants)?;
    match &model.dynamics {
        Dynamics::ConstantVol(cv) => {
            let f = path_functionals_constvol(cv, &kernels);
            let r = f.c_big.sqrt();
            let e = Expectations {
                e_h2: f.h2 / r,
                e_h5: 0.0,
                e_h4: 0.0,
                e_h3: f.h3_tilde / r,
                e_h1: f.h1_tilde / r,
            };
            if !e.as_array().iter().all(|v| v.is_finite()) {
                return Err(Error::Numeric(format!("non-finite closed-form coefficients: {e:?}")));
            }
            Ok(ExpansionCoefficients::from_expectations(e))
        }
        Dynamics::Gbm(gbm) => {
            if mc.n_paths < MIN_PATHS {
                return Err(Error::InvalidConfig(format!(
                    "n_paths must be ≥ {MIN_PATHS}, got {}",
                    mc.n_paths
                )));
            }
            let opts = SimOptions {
                oversampling: mc.oversampling.unwrap_or(1),
            };
            let rows: Vec<Result<[f64; 5]>> = (0..mc.n_paths as u64)
                .into_par_iter()
                .map(|i| {
                    let tainted = Error::TaintedReplication {
                        path: i,
                        seed: mc.seed,
                    };
                    let path = simulate_gbm_with(model, grid, SeedKey::new(mc.seed, i), opts)
                        .map_err(|_| tainted.clone())?;
                    let f = path_functionals_bs(&path, gbm, &kernels);
                    let r = f.c_big.sqrt();
                    let row = [
                        f.h2 / r,
                        f.h5 / (r * f.c_big),
                        f.h4 / (r * f.c_big * f.c_big),
                        f.h3_tilde / r,
                        f.h1_tilde / r,
                    ];
                    if row.iter().all(|v| v.is_finite()) {
                        Ok(row)
                    } else {
                        Err(tainted)
                    }
                })
                .collect();
            let rows: Vec<[f64; 5]> = rows.into_iter().collect::<Result<_>>()?;
            let column = |j: usize| rows.iter().map(|r| r[j]).collect::<Vec<f64>>();
            let mut means = [0.0; 5];
            let mut errs = [0.0; 5];
            for j in 0..5 {
                let c = column(j);
                means[j] = mean(&c);
                errs[j] = std_error(&c);
            }
            let e = Expectations::from_array(means);
            let lin_rows: Vec<f64> = rows
                .iter()
                .map(|r| Expectations::from_array(*r).lin())
                .collect();
            let cub_rows: Vec<f64> = rows
                .iter()
                .map(|r| Expectations::from_array(*r).cub())
                .collect();
            Ok(ExpansionCoefficients {
                e_h2: e.e_h2,
                e_h5: e.e_h5,
                e_h4: e.e_h4,
                e_h3: e.e_h3,
                e_h1: e.e_h1,
                mc_stderr: Expectations::from_array(errs),
                lin: e.lin(),
                cub: e.cub(),
                lin_stderr: std_error(&lin_rows),
                cub_stderr: std_error(&cub_rows),
                n_paths: mc.n_paths,
                seed: Some(mc.seed),
            })
        }
        Dynamics::Custom(_) => Err(Error::UnsupportedModel(
            "H₅ needs the second Malliavin derivative, available only for gbm and constant_vol".into(),
        )),
    }
}
