//! Convolution quadrature: BDF and Runge-Kutta symbols, weights, and the
//! frequency-decoupled evaluation of discrete convolutions.
//!
//! Histories are sequences of real vectors indexed by CQ node. For BDF schemes the
//! nodes are `t_0, …, t_N`; for Runge-Kutta schemes they are the stages
//! `t_n + c_i k` for `n = 0, …, N−1`, stored as `n·s + i`.
//!
//! Everything is computed by scaling with `R^n`, transforming to the frequencies
//! `ζ_l = R e^{−2πi l/N_ζ}`, applying the operator at `δ(ζ_l)/k` and transforming back.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};

use crate::kernel::LaplaceFrequency;
use crate::operators::{CMatrix, CVector, FrequencySystem};
use crate::quadrature::gauss_legendre;
use crate::{Error, Result};

/// Largest eigenvector condition number accepted when diagonalizing an RK symbol.
const MAX_EIGEN_CONDITION: f64 = 1e8;
/// Relative radial shift applied to `ζ` when the symbol is badly conditioned.
const RADIAL_PERTURBATION: f64 = 1e-8;

/// Butcher tableau of an implicit Runge-Kutta method.
#[derive(Debug, Clone, PartialEq)]
pub struct RkTableau {
    q: DMatrix<f64>,
    b: DVector<f64>,
    c: DVector<f64>,
    order: usize,
    stage_order: usize,
}

impl RkTableau {
    /// Builds a tableau and checks the structural requirements of the CQ engine.
    pub fn new(q: DMatrix<f64>, b: DVector<f64>, c: DVector<f64>, order: usize, stage_order: usize) -> Result<Self> {
        let s = b.len();
        if s == 0 || q.nrows() != s || q.ncols() != s || c.len() != s {
            return Err(Error::param("tableau", "Q must be s×s with b and c of length s"));
        }
        let t = RkTableau {
            q,
            b,
            c,
            order,
            stage_order,
        };
        t.check_hypotheses()?;
        Ok(t)
    }

    /// s-stage Radau IIA, built by collocation at the right Radau points.
    pub fn radau_iia(stages: usize) -> Result<Self> {
        let c: Vec<f64> = match stages {
            2 => vec![1.0 / 3.0, 1.0],
            3 => {
                let r6 = 6f64.sqrt();
                vec![(4.0 - r6) / 10.0, (4.0 + r6) / 10.0, 1.0]
            }
            _ => return Err(Error::Unsupported(format!("Radau IIA with {stages} stages (use 2 or 3)"))),
        };
        let q = collocation_matrix(&c);
        let b = q.row(stages - 1).transpose();
        RkTableau::new(q, b, DVector::from_vec(c), 2 * stages - 1, stages)
    }

    pub fn stages(&self) -> usize {
        self.b.len()
    }

    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn b(&self) -> &DVector<f64> {
        &self.b
    }

    pub fn c(&self) -> &DVector<f64> {
        &self.c
    }

    /// Classical order.
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn stage_order(&self) -> usize {
        self.stage_order
    }

    /// `r(z) = 1 + z bᵀ(I − zQ)⁻¹1`. Returns `None` where `I − zQ` is singular.
    pub fn stability_function(&self, z: Complex64) -> Option<Complex64> {
        let s = self.stages();
        let m = DMatrix::<Complex64>::identity(s, s) - self.q.map(|x| z * x);
        let sol = m.lu().solve(&DVector::from_element(s, Complex64::new(1.0, 0.0)))?;
        let bt: Complex64 = self.b.iter().zip(sol.iter()).map(|(b, x)| x * b).sum();
        Some(Complex64::new(1.0, 0.0) + z * bt)
    }

    /// Checks order and stage order, A-stability, stiff accuracy with `Q1 = c`,
    /// and invertibility of `Q`. The first failure is reported.
    pub fn check_hypotheses(&self) -> Result<()> {
        let s = self.stages();
        let tol = 1e-12;
        let ones = DVector::from_element(s, 1.0);
        let pw = |v: &DVector<f64>, e: usize| v.map(|x| x.powi(e as i32));

        // row sums and stiff accuracy
        if (&self.q * &ones - &self.c).amax() > tol {
            return Err(Error::param("tableau", "row sums of Q differ from c"));
        }
        if (self.q.row(s - 1).transpose() - &self.b).amax() > tol {
            return Err(Error::param("tableau", "not stiffly accurate: b differs from the last row of Q"));
        }
        if (self.c[s - 1] - 1.0).abs() > tol {
            return Err(Error::param("tableau", "last node must be 1"));
        }

        // invertibility, spectrum of Q in the right half plane
        let qc = self.q.map(|x| Complex64::new(x, 0.0));
        let eig = qc.clone().schur().eigenvalues().unwrap_or_else(|| DVector::zeros(s));
        if eig.iter().any(|l| l.re <= 0.0) || self.q.clone().lu().determinant().abs() < 1e-14 {
            return Err(Error::param("tableau", "Q must be invertible with spectrum in the right half plane"));
        }

        // order conditions: B(p), C(q) exactly, D(p − q − 1)
        let (p, q) = (self.order, self.stage_order);
        if q == 0 || q > p.saturating_sub(1) {
            return Err(Error::param("tableau", format!("stage order {q} must satisfy 1 ≤ q ≤ p − 1 = {}", p.saturating_sub(1))));
        }
        for k in 1..=p {
            let lhs = self.b.dot(&pw(&self.c, k - 1));
            if (lhs - 1.0 / k as f64).abs() > tol {
                return Err(Error::param("tableau", format!("quadrature condition B({k}) fails")));
            }
        }
        let c_cond = |k: usize| (&self.q * pw(&self.c, k - 1) - pw(&self.c, k) / k as f64).amax();
        for k in 1..=q {
            if c_cond(k) > tol {
                return Err(Error::param("tableau", format!("stage condition C({k}) fails")));
            }
        }
        if c_cond(q + 1) <= tol {
            return Err(Error::param("tableau", format!("stage order exceeds the declared {q}")));
        }
        let xi = p - q - 1;
        for k in 1..=xi {
            let lhs = (self.b.component_mul(&pw(&self.c, k - 1))).transpose() * &self.q;
            let rhs = self.b.component_mul(&(ones.clone() - pw(&self.c, k))) / k as f64;
            if (lhs.transpose() - rhs).amax() > tol {
                return Err(Error::param("tableau", format!("condition D({k}) fails")));
            }
        }
        if p > (q + xi + 1).min(2 * q + 2) {
            return Err(Error::param("tableau", format!("order {p} not implied by the simplifying conditions")));
        }

        // A-stability: poles lie in the right half plane, so |r| ≤ 1 on the imaginary axis suffices
        let mut ys = vec![0.0];
        ys.extend((0..=400).map(|j| 10f64.powf(-4.0 + 12.0 * j as f64 / 400.0)));
        for y in ys {
            for sign in [1.0, -1.0] {
                match self.stability_function(Complex64::new(0.0, sign * y)) {
                    Some(r) if r.norm() <= 1.0 + 1e-12 => {}
                    _ => return Err(Error::param("tableau", format!("not A-stable: |r(iy)| > 1 at y = {}", sign * y))),
                }
            }
        }
        Ok(())
    }
}

/// `Q_ij = ∫_0^{c_i} ℓ_j(τ) dτ` with `ℓ_j` the Lagrange basis on the nodes `c`.
fn collocation_matrix(c: &[f64]) -> DMatrix<f64> {
    let s = c.len();
    let rule = gauss_legendre(s + 1);
    DMatrix::from_fn(s, s, |i, j| {
        rule.iter()
            .map(|(x, w)| {
                let tau = c[i] * x;
                let lj: f64 = (0..s).filter(|&m| m != j).map(|m| (tau - c[m]) / (c[j] - c[m])).product();
                w * c[i] * lj
            })
            .sum()
    })
}

/// BDF symbol `δ(ζ) = Σ_{j=1}^q (1−ζ)^j / j`.
pub fn bdf_delta(order: usize, zeta: Complex64) -> Complex64 {
    let one_minus = Complex64::new(1.0, 0.0) - zeta;
    let mut pow = Complex64::new(1.0, 0.0);
    let mut sum = Complex64::new(0.0, 0.0);
    for j in 1..=order {
        pow *= one_minus;
        sum += pow / j as f64;
    }
    sum
}

/// Taylor coefficients `α_0, …, α_q` of the BDF symbol.
pub fn bdf_coefficients(order: usize) -> Vec<f64> {
    let mut alpha = vec![0.0; order + 1];
    for j in 1..=order {
        let mut binom = 1.0;
        for (n, a) in alpha.iter_mut().enumerate().take(j + 1) {
            let sign = if n % 2 == 0 { 1.0 } else { -1.0 };
            *a += sign * binom / j as f64;
            binom = binom * (j - n) as f64 / (n + 1) as f64;
        }
    }
    alpha
}

/// RK symbol `δ(ζ) = Q⁻¹ − ζ Q⁻¹ 1 bᵀ Q⁻¹`.
pub fn rk_delta(tableau: &RkTableau, zeta: Complex64) -> Result<DMatrix<Complex64>> {
    if (zeta - 1.0).norm() < f64::EPSILON {
        return Err(Error::Domain {
            function: "rk_delta",
            detail: "ζ = 1 is a pole of the symbol".into(),
        });
    }
    let s = tableau.stages();
    let qinv = tableau
        .q
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::SingularMatrix("Runge-Kutta matrix Q".into()))?;
    let u = &qinv * DVector::from_element(s, 1.0);
    let v = tableau.b.transpose() * &qinv;
    let rank_one = &u * &v;
    Ok(DMatrix::from_fn(s, s, |i, j| Complex64::new(qinv[(i, j)], 0.0) - zeta * rank_one[(i, j)]))
}

/// The same symbol in the form `(Q + ζ/(1−ζ) 1bᵀ)⁻¹`.
pub fn rk_delta_inverse_form(tableau: &RkTableau, zeta: Complex64) -> Result<DMatrix<Complex64>> {
    let one = Complex64::new(1.0, 0.0);
    if (one - zeta).norm() < f64::EPSILON {
        return Err(Error::Domain {
            function: "rk_delta_inverse_form",
            detail: "ζ = 1 is a pole of the symbol".into(),
        });
    }
    let s = tableau.stages();
    let f = zeta / (one - zeta);
    let m = DMatrix::from_fn(s, s, |i, j| tableau.q[(i, j)] + f * tableau.b[j]);
    m.try_inverse()
        .ok_or_else(|| Error::SingularMatrix(format!("Q + ζ/(1−ζ)·1bᵀ at ζ = {zeta}")))
}

/// Underlying time integrator of a CQ scheme.
#[derive(Debug, Clone, PartialEq)]
pub enum CqMethod {
    Bdf { order: usize },
    RungeKutta(RkTableau),
}

/// A CQ discretization: method, step size and number of steps.
#[derive(Debug, Clone, PartialEq)]
pub struct CqScheme {
    method: CqMethod,
    step: f64,
    steps: usize,
}

impl CqScheme {
    pub fn bdf(order: usize, step: f64, steps: usize) -> Result<Self> {
        if !(1..=6).contains(&order) {
            return Err(Error::param("order", format!("BDF order must be in 1..=6, got {order}")));
        }
        Self::with_method(CqMethod::Bdf { order }, step, steps)
    }

    pub fn radau_iia(stages: usize, step: f64, steps: usize) -> Result<Self> {
        Self::with_method(CqMethod::RungeKutta(RkTableau::radau_iia(stages)?), step, steps)
    }

    pub fn runge_kutta(tableau: RkTableau, step: f64, steps: usize) -> Result<Self> {
        tableau.check_hypotheses()?;
        Self::with_method(CqMethod::RungeKutta(tableau), step, steps)
    }

    fn with_method(method: CqMethod, step: f64, steps: usize) -> Result<Self> {
        if !(step > 0.0 && step.is_finite()) {
            return Err(Error::param("k", format!("step size must be positive, got {step}")));
        }
        if steps == 0 {
            return Err(Error::param("steps", "need at least one time step"));
        }
        Ok(CqScheme { method, step, steps })
    }

    pub fn method(&self) -> &CqMethod {
        &self.method
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    /// Number of time steps `N`.
    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn final_time(&self) -> f64 {
        self.step * self.steps as f64
    }

    pub fn is_runge_kutta(&self) -> bool {
        matches!(self.method, CqMethod::RungeKutta(_))
    }

    /// Nodes per block: 1 for BDF, the stage count for RK.
    pub fn stages(&self) -> usize {
        match &self.method {
            CqMethod::Bdf { .. } => 1,
            CqMethod::RungeKutta(t) => t.stages(),
        }
    }

    /// Length of the ζ-series: `N + 1` for BDF (including `t_0`), `N` for RK.
    pub fn num_blocks(&self) -> usize {
        match &self.method {
            CqMethod::Bdf { .. } => self.steps + 1,
            CqMethod::RungeKutta(_) => self.steps,
        }
    }

    /// Total number of nodes in a history.
    pub fn num_nodes(&self) -> usize {
        self.num_blocks() * self.stages()
    }

    pub fn node_time(&self, node: usize) -> f64 {
        match &self.method {
            CqMethod::Bdf { .. } => node as f64 * self.step,
            CqMethod::RungeKutta(t) => {
                let s = t.stages();
                ((node / s) as f64 + t.c[node % s]) * self.step
            }
        }
    }

    pub fn node_times(&self) -> Vec<f64> {
        (0..self.num_nodes()).map(|i| self.node_time(i)).collect()
    }

    /// Node carrying the value at `t_n`, `n = 0, …, N`. For RK this is the last stage of
    /// step `n − 1`; `t_0` is not a node there and gives `None`.
    pub fn step_node(&self, n: usize) -> Option<usize> {
        if n > self.steps {
            return None;
        }
        match &self.method {
            CqMethod::Bdf { .. } => Some(n),
            CqMethod::RungeKutta(t) => (n > 0).then(|| n * t.stages() - 1),
        }
    }

    /// Symbol `δ(ζ)` as an `s×s` matrix (1×1 for BDF).
    pub fn delta(&self, zeta: Complex64) -> Result<DMatrix<Complex64>> {
        match &self.method {
            CqMethod::Bdf { order } => Ok(DMatrix::from_element(1, 1, bdf_delta(*order, zeta))),
            CqMethod::RungeKutta(t) => rk_delta(t, zeta),
        }
    }
}

/// Compact scheme descriptor, written `bdf:q` or `radau:s`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SchemeKind {
    Bdf(usize),
    RadauIIA(usize),
}

impl SchemeKind {
    pub fn build(self, step: f64, steps: usize) -> Result<CqScheme> {
        match self {
            SchemeKind::Bdf(q) => CqScheme::bdf(q, step, steps),
            SchemeKind::RadauIIA(s) => CqScheme::radau_iia(s, step, steps),
        }
    }
}

impl std::fmt::Display for SchemeKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SchemeKind::Bdf(q) => write!(f, "bdf:{q}"),
            SchemeKind::RadauIIA(s) => write!(f, "radau:{s}"),
        }
    }
}

impl std::str::FromStr for SchemeKind {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        let bad = || Error::param("scheme", format!("expected `bdf:q` (q = 1..6) or `radau:s` (s = 2, 3), got `{text}`"));
        let (name, num) = text.trim().split_once(':').ok_or_else(bad)?;
        let n: usize = num.trim().parse().map_err(|_| bad())?;
        match name.trim().to_ascii_lowercase().as_str() {
            "bdf" if (1..=6).contains(&n) => Ok(SchemeKind::Bdf(n)),
            "radau" if (2..=3).contains(&n) => Ok(SchemeKind::RadauIIA(n)),
            _ => Err(bad()),
        }
    }
}

/// Size and radius of the scaled transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContourParameters {
    pub points: usize,
    pub radius: f64,
}

impl ContourParameters {
    /// `N_ζ = 2(N+1)` rounded up to a power of two and `R = ε^{1/(2N_ζ)}`.
    pub fn for_scheme(scheme: &CqScheme) -> Self {
        Self::with_points(2 * (scheme.steps() + 1))
    }

    /// Rounds `points` up to a power of two and applies the radius rule.
    pub fn with_points(points: usize) -> Self {
        let points = points.max(2).next_power_of_two();
        ContourParameters {
            points,
            radius: f64::EPSILON.powf(0.5 / points as f64),
        }
    }

    pub fn validate(&self, scheme: &CqScheme) -> Result<()> {
        if self.points < scheme.num_blocks() {
            return Err(Error::param(
                "contour points",
                format!("{} points cannot resolve {} time blocks", self.points, scheme.num_blocks()),
            ));
        }
        if !(self.radius > 0.0 && self.radius < 1.0) {
            return Err(Error::param("contour radius", format!("must lie in (0, 1), got {}", self.radius)));
        }
        if self.radius.powf(self.points as f64) < f64::EPSILON {
            return Err(Error::param("contour radius", "R^N_ζ below machine epsilon"));
        }
        Ok(())
    }

    pub fn zeta(&self, l: usize) -> Complex64 {
        Complex64::from_polar(self.radius, -2.0 * PI * l as f64 / self.points as f64)
    }
}

/// Operator symbol at one contour point: `δ(ζ_l)/k`.
#[derive(Debug, Clone, PartialEq)]
pub enum FrequencySymbol {
    Scalar(Complex64),
    Matrix(DMatrix<Complex64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CqFrequency {
    pub index: usize,
    pub zeta: Complex64,
    pub symbol: FrequencySymbol,
}

/// All contour frequencies, checked for admissibility.
pub fn cq_frequencies(scheme: &CqScheme, contour: &ContourParameters) -> Result<Vec<CqFrequency>> {
    contour.validate(scheme)?;
    (0..contour.points)
        .map(|l| {
            let zeta = contour.zeta(l);
            let symbol = match &scheme.method {
                CqMethod::Bdf { order } => {
                    let s = bdf_delta(*order, zeta) / scheme.step;
                    LaplaceFrequency::new(s).map_err(|e| contour_error(l, e))?;
                    FrequencySymbol::Scalar(s)
                }
                CqMethod::RungeKutta(_) => {
                    let d = decompose(scheme, contour, l)?;
                    FrequencySymbol::Matrix(d.symbol)
                }
            };
            Ok(CqFrequency { index: l, zeta, symbol })
        })
        .collect()
}

fn contour_error(index: usize, e: Error) -> Error {
    match e {
        Error::Contour { .. } => e,
        other => Error::Contour {
            index,
            detail: other.to_string(),
        },
    }
}

/// `δ(ζ_l)/k = E diag(s_j) E⁻¹` at one contour point.
struct Decomposition {
    symbol: DMatrix<Complex64>,
    frequencies: Vec<LaplaceFrequency>,
    vectors: DMatrix<Complex64>,
    inverse: DMatrix<Complex64>,
}

fn decompose(scheme: &CqScheme, contour: &ContourParameters, l: usize) -> Result<Decomposition> {
    let zeta = contour.zeta(l);
    let k = scheme.step;
    match &scheme.method {
        CqMethod::Bdf { order } => {
            let s = bdf_delta(*order, zeta) / k;
            let f = LaplaceFrequency::new(s).map_err(|e| contour_error(l, e))?;
            let id = DMatrix::identity(1, 1);
            Ok(Decomposition {
                symbol: DMatrix::from_element(1, 1, s),
                frequencies: vec![f],
                vectors: id.clone(),
                inverse: id,
            })
        }
        CqMethod::RungeKutta(t) => {
            let mut z = zeta;
            for attempt in 0..2 {
                let symbol = rk_delta(t, z)? / Complex64::from(k);
                if let Some((vals, vecs, inv, cond)) = eigen_decomposition(&symbol) {
                    if cond <= MAX_EIGEN_CONDITION {
                        let frequencies = vals
                            .iter()
                            .map(|&v| {
                                if v.re <= 0.0 {
                                    return Err(Error::Contour {
                                        index: l,
                                        detail: format!("symbol eigenvalue {v} outside the right half plane"),
                                    });
                                }
                                LaplaceFrequency::new(v).map_err(|e| contour_error(l, e))
                            })
                            .collect::<Result<Vec<_>>>()?;
                        return Ok(Decomposition {
                            symbol,
                            frequencies,
                            vectors: vecs,
                            inverse: inv,
                        });
                    }
                }
                if attempt == 0 {
                    log::debug!("ill-conditioned RK symbol at frequency {l}; perturbing ζ");
                    z *= 1.0 - RADIAL_PERTURBATION;
                }
            }
            Err(Error::Contour {
                index: l,
                detail: "RK symbol not diagonalizable to the required condition".into(),
            })
        }
    }
}

/// Eigenvalues, unit eigenvectors (as columns), inverse and condition number.
fn eigen_decomposition(
    m: &DMatrix<Complex64>,
) -> Option<(Vec<Complex64>, DMatrix<Complex64>, DMatrix<Complex64>, f64)> {
    let n = m.nrows();
    let (z, t) = m.clone().try_schur(1e-15, 10_000)?.unpack();
    let mut y = DMatrix::<Complex64>::zeros(n, n);
    for j in 0..n {
        let lam = t[(j, j)];
        y[(j, j)] = Complex64::new(1.0, 0.0);
        for i in (0..j).rev() {
            let mut acc = Complex64::new(0.0, 0.0);
            for l in i + 1..=j {
                acc += t[(i, l)] * y[(l, j)];
            }
            let den = t[(i, i)] - lam;
            if den.norm() < 1e-14 * lam.norm().max(1.0) {
                return None;
            }
            y[(i, j)] = -acc / den;
        }
    }
    let mut e = z * y;
    for j in 0..n {
        let nrm = e.column(j).norm();
        e.column_mut(j).unscale_mut(nrm);
    }
    let sv = e.clone().svd(false, false).singular_values;
    let cond = sv.max() / sv.min();
    if !cond.is_finite() {
        return None;
    }
    let inv = e.clone().try_inverse()?;
    let vals = (0..n).map(|j| t[(j, j)]).collect();
    Some((vals, e, inv, cond))
}

/// Operator family `F(s)` evaluable at complex frequencies, acting on vectors.
pub trait FrequencyOperator: Sync {
    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    fn apply(&self, s: &LaplaceFrequency, x: &CVector) -> Result<CVector>;
}

/// A scalar transfer function `F(s)` acting componentwise on vectors of a given length.
pub struct ScalarOperator<F> {
    dim: usize,
    f: F,
}

impl<F> ScalarOperator<F>
where
    F: Fn(Complex64) -> Complex64 + Sync,
{
    pub fn new(dim: usize, f: F) -> Self {
        ScalarOperator { dim, f }
    }
}

impl<F> FrequencyOperator for ScalarOperator<F>
where
    F: Fn(Complex64) -> Complex64 + Sync,
{
    fn input_dim(&self) -> usize {
        self.dim
    }

    fn output_dim(&self) -> usize {
        self.dim
    }

    fn apply(&self, s: &LaplaceFrequency, x: &CVector) -> Result<CVector> {
        Ok(x * (self.f)(s.value()))
    }
}

/// Discrete convolution `y_n = Σ_{m≤n} ω_{n−m}^F g_m` over a full history.
pub fn forward_convolution<O: FrequencyOperator + ?Sized>(
    op: &O,
    history: &[DVector<f64>],
    scheme: &CqScheme,
    contour: &ContourParameters,
) -> Result<Vec<DVector<f64>>> {
    check_history(history, scheme, op.input_dim())?;
    decoupled_map(scheme, contour, history, op.output_dim(), |_, s, x| op.apply(s, x))
}

/// Solves the discrete convolution system `A(∂_k) x = B(∂_k) data`.
///
/// `assembler` builds the factorized block system at a scalar frequency; each contour
/// point (and each eigenvalue of the RK symbol) gets its own system.
pub fn solve_convolution_system<A>(
    assembler: A,
    data: &[DVector<f64>],
    scheme: &CqScheme,
    contour: &ContourParameters,
) -> Result<Vec<DVector<f64>>>
where
    A: Fn(&LaplaceFrequency) -> Result<FrequencySystem> + Sync,
{
    let dim = data.first().map(|d| d.len()).unwrap_or(0);
    check_history(data, scheme, dim)?;
    decoupled_map(scheme, contour, data, dim, |_, s, x| {
        let sys = assembler(s)?;
        if sys.dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: sys.dim(),
            });
        }
        sys.solve_data(x)
    })
}

fn check_history(history: &[DVector<f64>], scheme: &CqScheme, dim: usize) -> Result<()> {
    if history.len() != scheme.num_nodes() {
        return Err(Error::DimensionMismatch {
            expected: scheme.num_nodes(),
            found: history.len(),
        });
    }
    if let Some(v) = history.iter().find(|v| v.len() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            found: v.len(),
        });
    }
    Ok(())
}

/// Scaled transform of a history: entry `l` is the `d×s` matrix `Σ_n R^n g_n e^{−2πi ln/N_ζ}`
/// with column `i` collecting stage `i`.
pub fn scaled_transform(
    history: &[DVector<f64>],
    scheme: &CqScheme,
    contour: &ContourParameters,
) -> Result<Vec<CMatrix>> {
    let dim = history.first().map(|d| d.len()).unwrap_or(0);
    check_history(history, scheme, dim)?;
    contour.validate(scheme)?;
    let np = contour.points;
    let st = scheme.stages();
    let fft = FftPlanner::new().plan_fft_forward(np);
    let mut out = vec![CMatrix::zeros(dim, st); np];
    let mut buf = vec![Complex64::new(0.0, 0.0); np];
    for i in 0..st {
        for c in 0..dim {
            fill_scaled(&mut buf, history, st, i, c, contour.radius);
            fft.process(&mut buf);
            for (l, v) in buf.iter().enumerate() {
                out[l][(c, i)] = *v;
            }
        }
    }
    Ok(out)
}

fn fill_scaled(buf: &mut [Complex64], history: &[DVector<f64>], st: usize, stage: usize, comp: usize, radius: f64) {
    let blocks = history.len() / st;
    let mut scale = 1.0;
    for (b, slot) in buf.iter_mut().enumerate() {
        *slot = if b < blocks {
            let v = Complex64::new(scale * history[b * st + stage][comp], 0.0);
            scale *= radius;
            v
        } else {
            Complex64::new(0.0, 0.0)
        };
    }
}

/// Core engine: transform, apply `f(l, s_j, ·)` per scalar frequency, transform back.
fn decoupled_map<F>(
    scheme: &CqScheme,
    contour: &ContourParameters,
    history: &[DVector<f64>],
    out_dim: usize,
    f: F,
) -> Result<Vec<DVector<f64>>>
where
    F: Fn(usize, &LaplaceFrequency, &CVector) -> Result<CVector> + Sync,
{
    let spectrum = scaled_transform(history, scheme, contour)?;
    let np = contour.points;
    let st = scheme.stages();
    let half = np / 2;

    let results: Vec<Result<CMatrix>> = (0..=half)
        .into_par_iter()
        .map(|l| {
            let dec = decompose(scheme, contour, l)?;
            let z = &spectrum[l] * dec.inverse.transpose();
            let mut w = CMatrix::zeros(out_dim, st);
            for (j, s) in dec.frequencies.iter().enumerate() {
                let col = z.column(j).into_owned();
                let y = if col.iter().all(|v| *v == Complex64::new(0.0, 0.0)) {
                    CVector::zeros(out_dim)
                } else {
                    f(l, s, &col).map_err(|e| contour_error(l, e))?
                };
                if y.len() != out_dim {
                    return Err(Error::DimensionMismatch {
                        expected: out_dim,
                        found: y.len(),
                    });
                }
                w.set_column(j, &y);
            }
            Ok(w * dec.vectors.transpose())
        })
        .collect();

    let mut out_spec: Vec<CMatrix> = Vec::with_capacity(np);
    for r in results {
        out_spec.push(r?);
    }
    for l in half + 1..np {
        let mirrored = out_spec[np - l].map(|v| v.conj());
        out_spec.push(mirrored);
    }
    Ok(inverse_transform(&out_spec, scheme, contour, out_dim))
}

fn inverse_transform(
    spectrum: &[CMatrix],
    scheme: &CqScheme,
    contour: &ContourParameters,
    dim: usize,
) -> Vec<DVector<f64>> {
    let np = contour.points;
    let st = scheme.stages();
    let blocks = scheme.num_blocks();
    let ifft: Arc<dyn Fft<f64>> = FftPlanner::new().plan_fft_inverse(np);
    let mut out = vec![DVector::<f64>::zeros(dim); blocks * st];
    let mut buf = vec![Complex64::new(0.0, 0.0); np];
    let unscale: Vec<f64> = (0..blocks)
        .map(|b| contour.radius.powi(-(b as i32)) / np as f64)
        .collect();
    for i in 0..st {
        for c in 0..dim {
            for (l, slot) in buf.iter_mut().enumerate() {
                *slot = spectrum[l][(c, i)];
            }
            ifft.process(&mut buf);
            for b in 0..blocks {
                out[b * st + i][c] = buf[b].re * unscale[b];
            }
        }
    }
    out
}

/// CQ weights `ω_0, …, ω_{count−1}` of a scalar transfer function, as `s×s` stage
/// matrices (1×1 for BDF): the Taylor coefficients of `F(δ(ζ)/k)`.
pub fn cq_weights<F>(f: F, scheme: &CqScheme, contour: &ContourParameters, count: usize) -> Result<Vec<DMatrix<Complex64>>>
where
    F: Fn(Complex64) -> Complex64 + Sync,
{
    operator_weights(
        |s| Ok(DMatrix::from_element(1, 1, f(s.value()))),
        scheme,
        contour,
        count,
    )
}

/// CQ weights of a matrix-valued transfer function `F(s)` of size `r×c`.
///
/// Weight `n` is an `(s·r)×(s·c)` matrix whose entry `(i·r + a, j·c + b)` couples
/// stage `i` of output `a` to stage `j` of input `b`.
pub fn operator_weights<F>(
    f: F,
    scheme: &CqScheme,
    contour: &ContourParameters,
    count: usize,
) -> Result<Vec<DMatrix<Complex64>>>
where
    F: Fn(&LaplaceFrequency) -> Result<DMatrix<Complex64>> + Sync,
{
    contour.validate(scheme)?;
    let np = contour.points;
    if count > np {
        return Err(Error::param("count", format!("at most {np} weights available")));
    }
    let st = scheme.stages();
    let values: Vec<DMatrix<Complex64>> = (0..np)
        .into_par_iter()
        .map(|l| {
            let dec = decompose(scheme, contour, l)?;
            let blocks = dec.frequencies.iter().map(&f).collect::<Result<Vec<_>>>()?;
            let (r, c) = blocks[0].shape();
            if let Some(b) = blocks.iter().find(|b| b.shape() != (r, c)) {
                return Err(Error::DimensionMismatch {
                    expected: r * c,
                    found: b.nrows() * b.ncols(),
                });
            }
            let mut out = DMatrix::zeros(st * r, st * c);
            for i in 0..st {
                for j in 0..st {
                    let mut blk = out.view_mut((i * r, j * c), (r, c));
                    for (m, fm) in blocks.iter().enumerate() {
                        blk += fm * (dec.vectors[(i, m)] * dec.inverse[(m, j)]);
                    }
                }
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    let (rows, cols) = values[0].shape();
    let ifft = FftPlanner::new().plan_fft_inverse(np);
    let mut weights = vec![DMatrix::zeros(rows, cols); count];
    let mut buf = vec![Complex64::new(0.0, 0.0); np];
    for i in 0..rows {
        for j in 0..cols {
            for (l, slot) in buf.iter_mut().enumerate() {
                *slot = values[l][(i, j)];
            }
            ifft.process(&mut buf);
            for (n, w) in weights.iter_mut().enumerate() {
                w[(i, j)] = buf[n] * (contour.radius.powi(-(n as i32)) / np as f64);
            }
        }
    }
    Ok(weights)
}
