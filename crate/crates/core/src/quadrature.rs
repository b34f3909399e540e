//! One-dimensional quadrature rules on the unit interval.
//!
//! Everything here is expressed on `[0, 1]` because panels are parametrised
//! by the fraction of their length.

use std::f64::consts::PI;

/// A quadrature rule on `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Rule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Rule {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.nodes.iter().copied().zip(self.weights.iter().copied())
    }

    /// Maps the rule affinely onto `[a, b]`.
    pub fn mapped(&self, a: f64, b: f64) -> Rule {
        let len = b - a;
        Rule {
            nodes: self.nodes.iter().map(|x| a + len * x).collect(),
            weights: self.weights.iter().map(|w| w * len).collect(),
        }
    }

    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.iter().map(|(x, w)| w * f(x)).sum()
    }
}

/// Legendre polynomial `P_n(x)` and its derivative, by the three-term recurrence.
pub fn legendre(n: usize, x: f64) -> (f64, f64) {
    if n == 0 {
        return (1.0, 0.0);
    }
    let (mut p0, mut p1) = (1.0, x);
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    // derivative from P_n and P_{n-1}; fine away from x = ±1, handled below at the ends
    let nf = n as f64;
    let dp = if (1.0 - x * x).abs() < 1e-300 {
        0.5 * nf * (nf + 1.0) * if x > 0.0 { 1.0 } else { (-1.0f64).powi(n as i32 + 1) }
    } else {
        nf * (x * p1 - p0) / (x * x - 1.0)
    };
    (p1, dp)
}

/// Gauss–Legendre rule with `n` points on `[0, 1]`.
pub fn gauss_legendre(n: usize) -> Rule {
    assert!(n > 0, "Gauss-Legendre rule needs at least one point");
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let nf = n as f64;
    for i in 0..n.div_ceil(2) {
        let mut x = (PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre(n, x);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = 0.5 * (1.0 - x);
        nodes[n - 1 - i] = 0.5 * (1.0 + x);
        weights[i] = 0.5 * w;
        weights[n - 1 - i] = 0.5 * w;
    }
    Rule { nodes, weights }
}

/// Gauss–Lobatto–Legendre points (including both ends) for polynomial degree `degree`,
/// returned on `[0, 1]` in increasing order.
pub fn gauss_lobatto_points(degree: usize) -> Vec<f64> {
    assert!(degree >= 1);
    let n = degree;
    let mut pts = vec![0.0; n + 1];
    pts[0] = 0.0;
    pts[n] = 1.0;
    // interior points are the roots of P_n'
    for j in 1..n {
        let mut x = -(PI * j as f64 / n as f64).cos();
        for _ in 0..100 {
            let (p, dp) = legendre(n, x);
            let ddp = (2.0 * x * dp - (n * (n + 1)) as f64 * p) / (1.0 - x * x);
            let dx = dp / ddp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        pts[j] = 0.5 * (1.0 + x);
    }
    pts
}

/// Composite Gauss rule geometrically graded towards the left end point.
///
/// The subintervals are `[σ^{j+1}, σ^j]` for `j < levels` plus `[0, σ^levels]`.
/// Level `j` uses `max(n_min, n_max - j)` points. Integrands with a logarithmic or
/// algebraic singularity at `0` are integrated with exponential convergence.
pub fn graded(sigma: f64, levels: usize, n_max: usize, n_min: usize) -> Rule {
    let mut nodes = Vec::new();
    let mut weights = Vec::new();
    let mut right = 1.0;
    for j in 0..levels {
        let left = right * sigma;
        let n = n_max.saturating_sub(j).max(n_min);
        let r = gauss_legendre(n).mapped(left, right);
        nodes.extend(r.nodes);
        weights.extend(r.weights);
        right = left;
    }
    let r = gauss_legendre(n_min).mapped(0.0, right);
    nodes.extend(r.nodes);
    weights.extend(r.weights);
    Rule { nodes, weights }
}

/// Rule for log-singular integrands `∫_0^1 f(w) dw` with `f ~ log w` at zero.
pub fn log_singular() -> Rule {
    graded(0.2, 20, 18, 6)
}

/// Rule for integrands behaving like `w log w` at zero (Duffy-regularised corners).
pub fn weakly_singular() -> Rule {
    graded(0.2, 12, 14, 4)
}
