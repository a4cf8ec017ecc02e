//! Composite Gauss–Legendre quadrature on uniform panels of `[0, 1]`,
//! plus a cumulative integrator that can be nested.
//!
//! Panels have equal width so any kink at a panel edge (the tent peak at
//! one half, for an even panel count) is integrated exactly as long as the
//! integrand is polynomial of degree < 10 on each panel.

const NODES: [f64; 5] = [
    -0.906_179_845_938_664,
    -0.538_469_310_105_683_1,
    0.0,
    0.538_469_310_105_683_1,
    0.906_179_845_938_664,
];
const WEIGHTS: [f64; 5] = [
    0.236_926_885_056_189_1,
    0.478_628_670_499_366_5,
    0.568_888_888_888_888_9,
    0.478_628_670_499_366_5,
    0.236_926_885_056_189_1,
];

/// Five-point Gauss–Legendre rule on `[a, b]`.
pub(crate) fn gauss5<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> f64 {
    let half = 0.5 * (b - a);
    if half == 0.0 {
        return 0.0;
    }
    let mid = 0.5 * (a + b);
    NODES
        .iter()
        .zip(WEIGHTS.iter())
        .map(|(&x, &w)| w * f(mid + half * x))
        .sum::<f64>()
        * half
}

/// `∫₀¹ f` on `panels` equal panels.
pub(crate) fn integrate_unit<F: Fn(f64) -> f64>(f: F, panels: usize) -> f64 {
    let h = 1.0 / panels as f64;
    (0..panels)
        .map(|c| gauss5(&f, c as f64 * h, (c + 1) as f64 * h))
        .sum()
}

/// `x ↦ ∫₀ˣ f` for `x ∈ [0, 1]`, with the panel-edge values cached so that an
/// evaluation costs one partial panel.
pub(crate) struct Cumulative<F> {
    f: F,
    h: f64,
    edges: Vec<f64>,
}

impl<F: Fn(f64) -> f64> Cumulative<F> {
    pub(crate) fn new(f: F, panels: usize) -> Self {
        let h = 1.0 / panels as f64;
        let mut edges = Vec::with_capacity(panels + 1);
        let mut acc = 0.0;
        edges.push(acc);
        for c in 0..panels {
            acc += gauss5(&f, c as f64 * h, (c + 1) as f64 * h);
            edges.push(acc);
        }
        Self { f, h, edges }
    }

    pub(crate) fn at(&self, x: f64) -> f64 {
        let panels = self.edges.len() - 1;
        let x = x.clamp(0.0, 1.0);
        let c = ((x / self.h) as usize).min(panels - 1);
        let start = c as f64 * self.h;
        self.edges[c] + gauss5(&self.f, start, x)
    }

    #[cfg(test)]
    pub(crate) fn total(&self) -> f64 {
        *self.edges.last().expect("at least one panel")
    }
}
