//! Small numerical helpers: fixed-order summation, sample moments and the
//! standard normal law.

const PAIRWISE_BLOCK: usize = 64;

/// Pairwise summation in a fixed tree order: the result depends only on the
/// slice contents, never on how it was produced.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= PAIRWISE_BLOCK {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

pub fn mean(xs: &[f64]) -> f64 {
    pairwise_sum(xs) / xs.len() as f64
}

/// Unbiased sample variance (two-pass).
pub fn variance(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    let sq: Vec<f64> = xs.iter().map(|x| (x - m).powi(2)).collect();
    pairwise_sum(&sq) / (xs.len() - 1) as f64
}

/// Standard error of the mean.
pub fn std_error(xs: &[f64]) -> f64 {
    (variance(xs) / xs.len() as f64).sqrt()
}

/// Moment skewness `m₃ / m₂^{3/2}`.
pub fn skewness(xs: &[f64]) -> f64 {
    let m = mean(xs);
    let c2: Vec<f64> = xs.iter().map(|x| (x - m).powi(2)).collect();
    let c3: Vec<f64> = xs.iter().map(|x| (x - m).powi(3)).collect();
    let n = xs.len() as f64;
    let m2 = pairwise_sum(&c2) / n;
    let m3 = pairwise_sum(&c3) / n;
    m3 / m2.powf(1.5)
}

pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// `φ(y)`.
pub fn normal_pdf(y: f64) -> f64 {
    const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;
    INV_SQRT_2PI * (-0.5 * y * y).exp()
}

/// `Φ(y)`.
pub fn normal_cdf(y: f64) -> f64 {
    0.5 * libm::erfc(-y / std::f64::consts::SQRT_2)
}

/// `Φ⁻¹(p)` for `p ∈ (0, 1)`: statrs' inverse, polished by one Newton step.
pub fn normal_quantile(p: f64) -> f64 {
    use statrs::distribution::{ContinuousCDF, Normal};
    let q = Normal::standard().inverse_cdf(p);
    if !q.is_finite() {
        return q;
    }
    q - (normal_cdf(q) - p) / normal_pdf(q)
}
