//! Pre-averaging weight functions, their discrete and limit constants, and
//! the observation grid every estimator runs on.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::quadrature::{integrate_unit, Cumulative};
use crate::{Error, Result};

/// Panel count used by [`WeightScheme::new`] for the limit constants.
pub const DEFAULT_QUAD_PANELS: usize = 1024;

/// Minimum panel count accepted by [`psi_limits`].
pub const MIN_QUAD_PANELS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightKind {
    Tent,
    Custom,
}

type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// A continuous non-negative weight `g` on `[0, 1]` with `g(0) = g(1) = 0`,
/// together with its piecewise derivative.
#[derive(Clone)]
pub struct WeightFunction {
    kind: WeightKind,
    label: String,
    eval: ScalarFn,
    deriv: ScalarFn,
}

impl fmt::Debug for WeightFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("WeightFunction")
            .field("kind", &self.kind)
            .field("label", &self.label)
            .finish()
    }
}

impl WeightFunction {
    /// The tent `g(x) = min(x, 1 − x)`.
    pub fn tent() -> Self {
        Self {
            kind: WeightKind::Tent,
            label: "tent".to_string(),
            eval: Arc::new(|x: f64| x.min(1.0 - x)),
            deriv: Arc::new(|x: f64| if x < 0.5 { 1.0 } else { -1.0 }),
        }
    }

    /// A user-supplied weight. The boundary, positivity and finiteness
    /// conditions are checked on a fine grid; the derivative contract
    /// (piecewise Lipschitz) is the caller's responsibility.
    pub fn custom<G, D>(label: impl Into<String>, g: G, dg: D) -> Result<Self>
    where
        G: Fn(f64) -> f64 + Send + Sync + 'static,
        D: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        let w = Self {
            kind: WeightKind::Custom,
            label: label.into(),
            eval: Arc::new(g),
            deriv: Arc::new(dg),
        };
        w.validate()?;
        Ok(w)
    }

    /// Piecewise-linear weight through `(x, g)` knots. Knots must start at
    /// `x = 0`, end at `x = 1` and be strictly increasing in `x`.
    pub fn from_table(knots: &[(f64, f64)]) -> Result<Self> {
        if knots.len() < 3 {
            return Err(Error::InvalidWeight(
                "a weight table needs at least three knots".into(),
            ));
        }
        if knots[0].0 != 0.0 || knots[knots.len() - 1].0 != 1.0 {
            return Err(Error::InvalidWeight(
                "weight table must span x = 0 to x = 1".into(),
            ));
        }
        if knots.windows(2).any(|p| p[1].0 <= p[0].0) {
            return Err(Error::InvalidWeight(
                "weight table abscissae must be strictly increasing".into(),
            ));
        }
        let knots: Arc<Vec<(f64, f64)>> = Arc::new(knots.to_vec());
        let segment = {
            let knots = Arc::clone(&knots);
            move |x: f64| -> usize {
                let idx = knots.partition_point(|&(kx, _)| kx <= x);
                idx.saturating_sub(1).min(knots.len() - 2)
            }
        };
        let segment = Arc::new(segment);
        let eval = {
            let knots = Arc::clone(&knots);
            let segment = Arc::clone(&segment);
            move |x: f64| {
                let i = segment(x);
                let (x0, y0) = knots[i];
                let (x1, y1) = knots[i + 1];
                y0 + (y1 - y0) * (x - x0) / (x1 - x0)
            }
        };
        let deriv = {
            let knots = Arc::clone(&knots);
            move |x: f64| {
                let i = segment(x);
                let (x0, y0) = knots[i];
                let (x1, y1) = knots[i + 1];
                (y1 - y0) / (x1 - x0)
            }
        };
        Self::custom("table", eval, deriv)
    }

    fn validate(&self) -> Result<()> {
        let (g0, g1) = (self.eval(0.0), self.eval(1.0));
        if g0.abs() > 1e-12 || g1.abs() > 1e-12 {
            return Err(Error::InvalidWeight(format!(
                "g must vanish at both ends, got g(0) = {g0}, g(1) = {g1}"
            )));
        }
        const PROBES: usize = 4096;
        let mut energy = 0.0;
        for i in 0..=PROBES {
            let x = i as f64 / PROBES as f64;
            let v = self.eval(x);
            if !v.is_finite() || v < -1e-12 {
                return Err(Error::InvalidWeight(format!(
                    "g must be finite and non-negative, got g({x}) = {v}"
                )));
            }
            if !self.deriv(x).is_finite() {
                return Err(Error::InvalidWeight(format!("g' is not finite at {x}")));
            }
            energy += v * v;
        }
        if energy <= 0.0 {
            return Err(Error::InvalidWeight("∫g² must be positive".into()));
        }
        Ok(())
    }

    pub fn eval(&self, x: f64) -> f64 {
        (self.eval)(x)
    }

    pub fn deriv(&self, x: f64) -> f64 {
        (self.deriv)(x)
    }

    pub fn kind(&self) -> WeightKind {
        self.kind
    }

    pub fn label(&self) -> &str {
        &self.label
    }
}

/// Finite-`k_n` weight constants ψ₁ⁿ … ψ₄ⁿ.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PsiDiscrete {
    pub k_n: usize,
    pub psi1n: f64,
    pub psi2n: f64,
    pub psi3n: f64,
    pub psi4n: f64,
}

/// Limit constants ψ₁ … ψ₇.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PsiLimits {
    pub psi1: f64,
    pub psi2: f64,
    pub psi3: f64,
    pub psi4: f64,
    pub psi5: f64,
    pub psi6: f64,
    pub psi7: f64,
}

impl PsiLimits {
    pub fn as_array(&self) -> [f64; 7] {
        [
            self.psi1, self.psi2, self.psi3, self.psi4, self.psi5, self.psi6, self.psi7,
        ]
    }
}

/// A non-negative rational `num / den`, used for exact tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rational {
    pub num: u128,
    pub den: u128,
}

impl Rational {
    fn reduced(num: u128, den: u128) -> Self {
        let g = gcd(num, den).max(1);
        Self {
            num: num / g,
            den: den / g,
        }
    }

    /// Correctly rounded when both parts are below 2⁵³.
    pub fn to_f64(self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

impl fmt::Display for Rational {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.den == 1 {
            write!(f, "{}", self.num)
        } else {
            write!(f, "{}/{}", self.num, self.den)
        }
    }
}

fn gcd(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Exact ψ₁ⁿ … ψ₄ⁿ for the tent, from integer sums over `m_j = min(j, k − j)`
/// (so that `g(j/k) = m_j / k`).
pub fn tent_psi_discrete_exact(k_n: usize) -> Result<[Rational; 4]> {
    check_kn(k_n)?;
    let k = k_n as u128;
    let m = |j: u128| j.min(k - j);
    let mut s1 = 0u128; // Σ (m_{j+1} − m_j)²,  j = 0..k−1
    let mut s2 = 0u128; // Σ m_j²
    let mut s3 = 0u128; // Σ m_j
    let mut s4 = 0u128; // Σ m_j² (2j − 1)
    for j in 0..k {
        let step = m(j + 1).abs_diff(m(j));
        s1 += step * step;
        if j >= 1 {
            let mj = m(j);
            s2 += mj * mj;
            s3 += mj;
            s4 += mj * mj * (2 * j - 1);
        }
    }
    Ok([
        Rational::reduced(s1, k),
        Rational::reduced(s2, k * k * k),
        Rational::reduced(s3, k * k),
        Rational::reduced(s4, 2 * k * k * k * k),
    ])
}

/// Exact tent limits ψ₁ … ψ₇.
pub fn tent_psi_limits_exact() -> [Rational; 7] {
    [(1, 1), (1, 12), (1, 4), (1, 24), (1, 96), (143, 24192), (1, 105)]
        .map(|(num, den)| Rational { num, den })
}

fn check_kn(k_n: usize) -> Result<()> {
    if k_n < 2 {
        return Err(Error::InvalidGrid("k_n must be ≥ 2".into()));
    }
    Ok(())
}

/// ψ₁ⁿ … ψ₄ⁿ by direct summation. The tent goes through integer arithmetic
/// so each constant is a single correctly rounded division.
pub fn psi_discrete(w: &WeightFunction, k_n: usize) -> Result<PsiDiscrete> {
    check_kn(k_n)?;
    if w.kind() == WeightKind::Tent {
        let [p1, p2, p3, p4] = tent_psi_discrete_exact(k_n)?;
        return Ok(PsiDiscrete {
            k_n,
            psi1n: p1.to_f64(),
            psi2n: p2.to_f64(),
            psi3n: p3.to_f64(),
            psi4n: p4.to_f64(),
        });
    }
    let kf = k_n as f64;
    let g = |j: usize| w.eval(j as f64 / kf);
    let mut s1 = 0.0;
    for j in 0..k_n {
        let h = g(j + 1) - g(j);
        s1 += h * h;
    }
    let (mut s2, mut s3, mut s4) = (0.0, 0.0, 0.0);
    for j in 1..k_n {
        let gj = g(j);
        s2 += gj * gj;
        s3 += gj;
        s4 += gj * gj * (j as f64 - 0.5);
    }
    let out = PsiDiscrete {
        k_n,
        psi1n: kf * s1,
        psi2n: s2 / kf,
        psi3n: s3 / kf,
        psi4n: s4 / (kf * kf),
    };
    if !(out.psi2n > 0.0) {
        return Err(Error::InvalidWeight(format!(
            "ψ₂ⁿ = {} at k_n = {k_n}; the weight vanishes on the grid",
            out.psi2n
        )));
    }
    Ok(out)
}

/// ψ₁ … ψ₇. The tent returns its closed forms; anything else goes through
/// [`psi_limits_quadrature`].
pub fn psi_limits(w: &WeightFunction, quad_panels: usize) -> Result<PsiLimits> {
    if quad_panels < MIN_QUAD_PANELS {
        return Err(Error::Numeric(format!(
            "quadrature needs at least {MIN_QUAD_PANELS} panels, got {quad_panels}"
        )));
    }
    if w.kind() == WeightKind::Tent {
        let v = tent_psi_limits_exact().map(Rational::to_f64);
        return Ok(PsiLimits {
            psi1: v[0],
            psi2: v[1],
            psi3: v[2],
            psi4: v[3],
            psi5: v[4],
            psi6: v[5],
            psi7: v[6],
        });
    }
    psi_limits_quadrature(w, quad_panels)
}

/// ψ₁ … ψ₇ by composite Gauss–Legendre quadrature, whatever the kind.
///
/// The nested integrals are reduced to cumulative ones:
/// with `G(u) = ∫₀ᵘ g`, `G₂(u) = ∫₀ᵘ g²`,
/// `ψ₅ = ∫ G g²`, `ψ₆ = ∫ (G g − G + ψ₂ u)²` and
/// `ψ₇ = ∫ K g²` where `K(u) = ∫₀ᵘ (4 s g(s)² + 4 g(s) G(s) + G₂(s)) ds`.
pub fn psi_limits_quadrature(w: &WeightFunction, quad_panels: usize) -> Result<PsiLimits> {
    if quad_panels < MIN_QUAD_PANELS {
        return Err(Error::Numeric(format!(
            "quadrature needs at least {MIN_QUAD_PANELS} panels, got {quad_panels}"
        )));
    }
    let m = quad_panels;
    let g = |x: f64| w.eval(x);
    let psi1 = integrate_unit(|x| w.deriv(x).powi(2), m);
    let psi2 = integrate_unit(|x| g(x).powi(2), m);
    let psi3 = integrate_unit(g, m);
    let psi4 = integrate_unit(|x| x * g(x).powi(2), m);

    let big_g = Cumulative::new(g, m);
    let big_g2 = Cumulative::new(|x| g(x).powi(2), m);
    let psi5 = integrate_unit(|u| big_g.at(u) * g(u).powi(2), m);
    let psi6 = integrate_unit(
        |u| {
            let gu = big_g.at(u);
            (gu * g(u) - gu + psi2 * u).powi(2)
        },
        m,
    );
    let inner = Cumulative::new(
        |s| {
            let gs = g(s);
            4.0 * s * gs * gs + 4.0 * gs * big_g.at(s) + big_g2.at(s)
        },
        m,
    );
    let psi7 = integrate_unit(|u| inner.at(u) * g(u).powi(2), m);

    let out = PsiLimits {
        psi1,
        psi2,
        psi3,
        psi4,
        psi5,
        psi6,
        psi7,
    };
    if out.as_array().iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!("non-finite ψ constant: {out:?}")));
    }
    if !(psi2 > 0.0) {
        return Err(Error::InvalidWeight("ψ₂ must be positive".into()));
    }
    Ok(out)
}

/// Sampling skeleton: `n` observations after time zero on `[0, 1]`, window
/// length `k_n`, and `d_n = ⌊n / k_n⌋` non-overlapping windows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridSpec {
    pub n: usize,
    pub k_n: usize,
    pub d_n: usize,
    pub strict: bool,
}

impl GridSpec {
    /// `Δ_n = 1/n`.
    pub fn delta(&self) -> f64 {
        1.0 / self.n as f64
    }

    /// `θ_n = k_n √Δ_n`.
    pub fn theta(&self) -> f64 {
        self.k_n as f64 / (self.n as f64).sqrt()
    }

    /// `1 − d_n k_n Δ_n`, the length of the tail not covered by windows.
    pub fn correction_length(&self) -> f64 {
        (self.n - self.d_n * self.k_n) as f64 / self.n as f64
    }

    pub fn is_aligned(&self) -> bool {
        self.d_n * self.k_n == self.n
    }

    /// `⌊Δ_n^{-3/4}⌋`.
    pub fn default_pn(&self) -> usize {
        (self.n as f64).powf(0.75).floor() as usize
    }
}

impl fmt::Display for GridSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n={} k_n={} d_n={}", self.n, self.k_n, self.d_n)
    }
}

/// Builds a [`GridSpec`]. Strict mode insists on `k_n · d_n = n`.
pub fn validate_grid(n: usize, k_n: usize, strict: bool) -> Result<GridSpec> {
    check_kn(k_n)?;
    if n < k_n {
        return Err(Error::InvalidGrid(format!(
            "need n ≥ k_n, got n = {n}, k_n = {k_n}"
        )));
    }
    let d_n = n / k_n;
    if d_n == 0 {
        return Err(Error::InvalidGrid("d_n = 0".into()));
    }
    if strict && d_n * k_n != n {
        return Err(Error::MisalignedGrid { n, k_n });
    }
    Ok(GridSpec {
        n,
        k_n,
        d_n,
        strict,
    })
}

/// A weight function bound to a window length: the sampled weights
/// `g(j/k_n)`, `j = 1 … k_n − 1`, and both constant families.
#[derive(Debug, Clone)]
pub struct WeightScheme {
    weight: WeightFunction,
    k_n: usize,
    taps: Vec<f64>,
    discrete: PsiDiscrete,
    limits: PsiLimits,
}

impl WeightScheme {
    pub fn new(weight: WeightFunction, k_n: usize) -> Result<Self> {
        let discrete = psi_discrete(&weight, k_n)?;
        let limits = psi_limits(&weight, DEFAULT_QUAD_PANELS)?;
        let taps = (1..k_n)
            .map(|j| weight.eval(j as f64 / k_n as f64))
            .collect();
        Ok(Self {
            weight,
            k_n,
            taps,
            discrete,
            limits,
        })
    }

    pub fn tent(k_n: usize) -> Result<Self> {
        Self::new(WeightFunction::tent(), k_n)
    }

    pub fn weight(&self) -> &WeightFunction {
        &self.weight
    }

    pub fn k_n(&self) -> usize {
        self.k_n
    }

    /// `g(j/k_n)` for `j = 1 … k_n − 1`.
    pub fn taps(&self) -> &[f64] {
        &self.taps
    }

    pub fn discrete(&self) -> &PsiDiscrete {
        &self.discrete
    }

    pub fn limits(&self) -> &PsiLimits {
        &self.limits
    }
}
