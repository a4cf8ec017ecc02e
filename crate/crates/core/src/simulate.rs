//! Latent diffusion paths and noisy observations.
//!
//! Paths are generated on the observation grid (optionally refined by an
//! oversampling factor) from the Brownian stream of a [`SeedKey`]; noise
//! comes from the independent noise stream of the same key.

use std::fmt;
use std::io::Write;
use std::sync::Arc;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::rng::{SeedKey, StreamRole};
use crate::weights::GridSpec;
use crate::{Error, Result};

/// Paths with `|X|` beyond this are declared diverged.
pub const OVERFLOW_GUARD: f64 = 1e100;

/// Itô coefficients of `b¹(X_t)` and `b²(X_t)` at one state:
/// `d b^{[k]}(X_t) = b^{[k.1]} dW_t + b^{[k.2]} dt`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateSymbols {
    pub b1: f64,
    pub b2: f64,
    pub b11: f64,
    pub b12: f64,
    pub b21: f64,
}

/// Coefficients of `dX = b¹(X) dW + b²(X) dt` and their first two
/// derivatives.
pub trait DiffusionCoefficients: Send + Sync {
    fn diffusion(&self, x: f64) -> f64;
    fn diffusion_prime(&self, x: f64) -> f64;
    fn diffusion_second(&self, x: f64) -> f64;
    fn drift(&self, x: f64) -> f64;
    fn drift_prime(&self, x: f64) -> f64;
    fn drift_second(&self, x: f64) -> f64;

    fn symbols(&self, x: f64) -> StateSymbols {
        let (b1, b2) = (self.diffusion(x), self.drift(x));
        let (b1p, b2p) = (self.diffusion_prime(x), self.drift_prime(x));
        StateSymbols {
            b1,
            b2,
            b11: b1p * b1,
            b12: b1p * b2 + 0.5 * self.diffusion_second(x) * b1 * b1,
            b21: b2p * b1,
        }
    }
}

/// Black–Scholes: `dX = a X dt + σ X dW`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gbm {
    pub a: f64,
    pub sigma: f64,
}

impl DiffusionCoefficients for Gbm {
    fn diffusion(&self, x: f64) -> f64 {
        self.sigma * x
    }
    fn diffusion_prime(&self, _: f64) -> f64 {
        self.sigma
    }
    fn diffusion_second(&self, _: f64) -> f64 {
        0.0
    }
    fn drift(&self, x: f64) -> f64 {
        self.a * x
    }
    fn drift_prime(&self, _: f64) -> f64 {
        self.a
    }
    fn drift_second(&self, _: f64) -> f64 {
        0.0
    }
}

/// `dX = b dW + drift dt`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstantVol {
    pub b: f64,
    pub drift: f64,
}

impl DiffusionCoefficients for ConstantVol {
    fn diffusion(&self, _: f64) -> f64 {
        self.b
    }
    fn diffusion_prime(&self, _: f64) -> f64 {
        0.0
    }
    fn diffusion_second(&self, _: f64) -> f64 {
        0.0
    }
    fn drift(&self, _: f64) -> f64 {
        self.drift
    }
    fn drift_prime(&self, _: f64) -> f64 {
        0.0
    }
    fn drift_second(&self, _: f64) -> f64 {
        0.0
    }
}

#[derive(Clone, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Dynamics {
    Gbm(Gbm),
    ConstantVol(ConstantVol),
    #[serde(skip)]
    Custom(Arc<dyn DiffusionCoefficients>),
}

impl fmt::Debug for Dynamics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Dynamics::Gbm(g) => g.fmt(f),
            Dynamics::ConstantVol(c) => c.fmt(f),
            Dynamics::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

impl Dynamics {
    pub fn coefficients(&self) -> &dyn DiffusionCoefficients {
        match self {
            Dynamics::Gbm(g) => g,
            Dynamics::ConstantVol(c) => c,
            Dynamics::Custom(c) => c.as_ref(),
        }
    }
}

/// A latent model plus the noise level `ω`.
#[derive(Debug, Clone, Serialize)]
pub struct ModelSpec {
    pub dynamics: Dynamics,
    pub x0: f64,
    pub omega: f64,
}

impl ModelSpec {
    pub fn gbm(a: f64, sigma: f64, x0: f64, omega: f64) -> Self {
        Self {
            dynamics: Dynamics::Gbm(Gbm { a, sigma }),
            x0,
            omega,
        }
    }

    pub fn constant_vol(b: f64, drift: f64, x0: f64, omega: f64) -> Self {
        Self {
            dynamics: Dynamics::ConstantVol(ConstantVol { b, drift }),
            x0,
            omega,
        }
    }

    pub fn custom(coefficients: Arc<dyn DiffusionCoefficients>, x0: f64, omega: f64) -> Self {
        Self {
            dynamics: Dynamics::Custom(coefficients),
            x0,
            omega,
        }
    }

    /// `σ = 0` is accepted as a degenerate diffusion.
    pub fn validate(&self) -> Result<()> {
        if !(self.omega >= 0.0) || !self.omega.is_finite() {
            return Err(Error::InvalidModel(format!("ω must be ≥ 0, got {}", self.omega)));
        }
        if !self.x0.is_finite() {
            return Err(Error::InvalidModel("x0 must be finite".into()));
        }
        match &self.dynamics {
            Dynamics::Gbm(g) => {
                if !(g.sigma >= 0.0) || !g.sigma.is_finite() || !g.a.is_finite() {
                    return Err(Error::InvalidModel(format!(
                        "gbm needs finite a and σ ≥ 0, got a = {}, σ = {}",
                        g.a, g.sigma
                    )));
                }
                if self.x0 <= 0.0 {
                    return Err(Error::InvalidModel(format!(
                        "gbm needs x0 > 0, got {}",
                        self.x0
                    )));
                }
            }
            Dynamics::ConstantVol(c) => {
                if !(c.b >= 0.0) || !c.b.is_finite() || !c.drift.is_finite() {
                    return Err(Error::InvalidModel(format!(
                        "constant_vol needs b ≥ 0 and finite drift, got b = {}, drift = {}",
                        c.b, c.drift
                    )));
                }
            }
            Dynamics::Custom(_) => {}
        }
        Ok(())
    }
}

/// Simulation knobs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimOptions {
    /// Internal steps per observation interval; `true_v` is the left Riemann
    /// sum on the refined grid.
    pub oversampling: usize,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self { oversampling: 1 }
    }
}

/// A latent path sampled at the `n + 1` observation times.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentPath {
    pub grid: GridSpec,
    /// `X_{t_i}`, `i = 0 … n`.
    pub x: Vec<f64>,
    /// `W_{t_i}`, with `w[0] = 0`.
    pub w: Vec<f64>,
    /// `∫₀¹ (b¹(X_t))² dt`.
    pub true_v: f64,
}

/// Noisy observations `Y_{t_i} = X_{t_i} + ε_{t_i}`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSeries {
    pub y: Vec<f64>,
    /// ω used to generate the noise; `None` for real data.
    pub omega_true: Option<f64>,
}

impl ObservationSeries {
    pub fn from_values(y: Vec<f64>) -> Self {
        Self { y, omega_true: None }
    }

    /// Number of increments.
    pub fn n(&self) -> usize {
        self.y.len().saturating_sub(1)
    }
}

/// Exact log-normal scheme for geometric Brownian motion.
pub fn simulate_gbm(model: &ModelSpec, grid: &GridSpec, key: SeedKey) -> Result<LatentPath> {
    simulate_gbm_with(model, grid, key, SimOptions::default())
}

pub fn simulate_gbm_with(
    model: &ModelSpec,
    grid: &GridSpec,
    key: SeedKey,
    opts: SimOptions,
) -> Result<LatentPath> {
    let Dynamics::Gbm(gbm) = model.dynamics else {
        return Err(Error::InvalidModel("simulate_gbm needs a gbm model".into()));
    };
    model.validate()?;
    let Gbm { a, sigma } = gbm;
    let log_drift = (a - 0.5 * sigma * sigma) * fine_dt(grid, opts);
    drive(grid, key, opts, model.x0, |x, dw, _dt| {
        x * (log_drift + sigma * dw).exp()
    }, |x| sigma * sigma * x * x)
}

/// Euler–Maruyama on the (optionally refined) observation grid.
pub fn simulate_sde_euler(model: &ModelSpec, grid: &GridSpec, key: SeedKey) -> Result<LatentPath> {
    simulate_sde_euler_with(model, grid, key, SimOptions::default())
}

pub fn simulate_sde_euler_with(
    model: &ModelSpec,
    grid: &GridSpec,
    key: SeedKey,
    opts: SimOptions,
) -> Result<LatentPath> {
    model.validate()?;
    let coeffs = model.dynamics.coefficients();
    let mut path = drive(
        grid,
        key,
        opts,
        model.x0,
        |x, dw, dt| x + coeffs.diffusion(x) * dw + coeffs.drift(x) * dt,
        |x| coeffs.diffusion(x).powi(2),
    )?;
    if let Dynamics::ConstantVol(c) = model.dynamics {
        // constant integrand
        path.true_v = c.b * c.b;
    }
    Ok(path)
}

/// Exact scheme for gbm, Euler otherwise.
pub fn simulate_latent(
    model: &ModelSpec,
    grid: &GridSpec,
    key: SeedKey,
    opts: SimOptions,
) -> Result<LatentPath> {
    match model.dynamics {
        Dynamics::Gbm(_) => simulate_gbm_with(model, grid, key, opts),
        _ => simulate_sde_euler_with(model, grid, key, opts),
    }
}

fn fine_dt(grid: &GridSpec, opts: SimOptions) -> f64 {
    1.0 / (grid.n * opts.oversampling.max(1)) as f64
}

fn drive<S, V>(
    grid: &GridSpec,
    key: SeedKey,
    opts: SimOptions,
    x0: f64,
    step: S,
    vol2: V,
) -> Result<LatentPath>
where
    S: Fn(f64, f64, f64) -> f64,
    V: Fn(f64) -> f64,
{
    let m = opts.oversampling.max(1);
    let dt = fine_dt(grid, opts);
    let sqrt_dt = dt.sqrt();
    let mut rng = key.stream(StreamRole::Brownian);
    let mut x = Vec::with_capacity(grid.n + 1);
    let mut w = Vec::with_capacity(grid.n + 1);
    let (mut xc, mut wc, mut qv) = (x0, 0.0, 0.0);
    x.push(xc);
    w.push(wc);
    for i in 0..grid.n {
        for _ in 0..m {
            let z: f64 = StandardNormal.sample(&mut rng);
            let dw = sqrt_dt * z;
            qv += vol2(xc);
            xc = step(xc, dw, dt);
            wc += dw;
        }
        if !xc.is_finite() || xc.abs() > OVERFLOW_GUARD {
            return Err(Error::SimulationDiverged {
                step: i + 1,
                value: xc,
            });
        }
        x.push(xc);
        w.push(wc);
    }
    Ok(LatentPath {
        grid: *grid,
        x,
        w,
        true_v: qv * dt,
    })
}

/// `y_i = x_i + ε_i` with `ε_i` i.i.d. `N(0, ω²)` from the noise stream.
pub fn add_noise(path: &LatentPath, omega: f64, key: SeedKey) -> ObservationSeries {
    if omega == 0.0 {
        return ObservationSeries {
            y: path.x.clone(),
            omega_true: Some(0.0),
        };
    }
    let mut rng = key.stream(StreamRole::Noise);
    let y = path
        .x
        .iter()
        .map(|&x| {
            let z: f64 = StandardNormal.sample(&mut rng);
            x + omega * z
        })
        .collect();
    ObservationSeries {
        y,
        omega_true: Some(omega),
    }
}

/// Float formatting with 17 significant digits.
pub fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes `t,x,w,y`, one row per grid point.
pub fn write_path_csv<W: Write>(
    out: W,
    path: &LatentPath,
    series: &ObservationSeries,
) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record(["t", "x", "w", "y"])?;
    let dt = path.grid.delta();
    for i in 0..path.x.len() {
        wtr.write_record([
            fmt17(i as f64 * dt),
            fmt17(path.x[i]),
            fmt17(path.w[i]),
            fmt17(series.y[i]),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::weights::validate_grid;

    fn grid(n: usize) -> GridSpec {
        validate_grid(n, 2, false).unwrap()
    }

    #[test]
    fn degenerate_gbm_is_flat() {
        let model = ModelSpec::gbm(0.0, 0.0, 1.0, 0.0);
        let p = simulate_gbm(&model, &grid(100), 5.into()).unwrap();
        assert!(p.x.iter().all(|&x| x == 1.0));
        assert_eq!(p.true_v, 0.0);
        assert_eq!(p.w[0], 0.0);
        assert_eq!(p.x.len(), 101);
    }

    #[test]
    fn gbm_is_deterministic() {
        let model = ModelSpec::gbm(0.0, 0.3, 100.0, 0.0);
        let a = simulate_gbm(&model, &grid(500), 11.into()).unwrap();
        let b = simulate_gbm(&model, &grid(500), 11.into()).unwrap();
        assert_eq!(a, b);
        let c = simulate_gbm(&model, &grid(500), 12.into()).unwrap();
        assert_ne!(a.x, c.x);
    }

    #[test]
    fn zero_dynamics_stay_put() {
        let model = ModelSpec::constant_vol(0.0, 0.0, 3.5, 0.0);
        let p = simulate_sde_euler(&model, &grid(200), 1.into()).unwrap();
        assert!(p.x.iter().all(|&x| x == 3.5));
    }

    #[test]
    fn constant_vol_true_v_is_exact() {
        let model = ModelSpec::constant_vol(0.2, 0.0, 1.0, 0.01);
        let p = simulate_sde_euler(&model, &grid(1000), 2.into()).unwrap();
        assert_eq!(p.true_v, 0.2 * 0.2);
    }

    #[test]
    fn explosive_sde_reports_divergence() {
        struct Explosive;
        impl DiffusionCoefficients for Explosive {
            fn diffusion(&self, _: f64) -> f64 {
                0.0
            }
            fn diffusion_prime(&self, _: f64) -> f64 {
                0.0
            }
            fn diffusion_second(&self, _: f64) -> f64 {
                0.0
            }
            fn drift(&self, x: f64) -> f64 {
                x * x * 1e3
            }
            fn drift_prime(&self, x: f64) -> f64 {
                2e3 * x
            }
            fn drift_second(&self, _: f64) -> f64 {
                2e3
            }
        }
        let model = ModelSpec::custom(Arc::new(Explosive), 10.0, 0.0);
        let err = simulate_sde_euler(&model, &grid(100), 1.into()).unwrap_err();
        assert!(matches!(err, Error::SimulationDiverged { .. }));
    }

    #[test]
    fn noise_is_reproducible_and_separate_from_path() {
        let model = ModelSpec::gbm(0.05, 0.3, 1.0, 0.0);
        let key = SeedKey::new(3, 9);
        let p = simulate_gbm(&model, &grid(300), key).unwrap();
        assert_eq!(add_noise(&p, 0.0, key).y, p.x);
        let a = add_noise(&p, 0.01, key);
        let b = add_noise(&p, 0.01, key);
        assert_eq!(a, b);
        // changing ω rescales the same draws and leaves x untouched
        let c = add_noise(&p, 0.02, key);
        for i in 0..p.x.len() {
            let ea = a.y[i] - p.x[i];
            let ec = c.y[i] - p.x[i];
            assert!((2.0 * ea - ec).abs() < 1e-12);
        }
    }

    #[test]
    fn noise_variance_matches_omega() {
        let n = 1_000_000;
        let model = ModelSpec::constant_vol(0.0, 0.0, 0.0, 0.0);
        let p = simulate_sde_euler(&model, &grid(n), 4.into()).unwrap();
        let s = add_noise(&p, 0.01, 4.into());
        let var = s.y.iter().map(|e| e * e).sum::<f64>() / s.y.len() as f64;
        assert!((var / 1e-4 - 1.0).abs() < 0.01, "{var}");
    }

    #[test]
    fn oversampling_refines_true_v() {
        let model = ModelSpec::gbm(0.05, 0.3, 1.0, 0.0);
        let g = grid(400);
        let p = simulate_gbm_with(&model, &g, 8.into(), SimOptions { oversampling: 4 }).unwrap();
        assert_eq!(p.x.len(), 401);
        assert!(p.true_v > 0.0 && p.true_v.is_finite());
    }

    #[test]
    fn csv_dump_has_header_and_rows() {
        let model = ModelSpec::gbm(0.0, 0.3, 1.0, 0.0);
        let p = simulate_gbm(&model, &grid(4), 1.into()).unwrap();
        let s = add_noise(&p, 0.01, 1.into());
        let mut buf = Vec::new();
        write_path_csv(&mut buf, &p, &s).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], "t,x,w,y");
        assert_eq!(lines.len(), 6);
        let cell = lines[1].split(',').nth(1).unwrap();
        assert_eq!(cell.parse::<f64>().unwrap(), 1.0);
        assert_eq!(cell, "1.0000000000000000e0");
    }
}
