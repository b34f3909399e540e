//! Manufactured solutions, error quantities and observed convergence rates.

use std::sync::Arc;

use nalgebra::DVector;
use rayon::prelude::*;

use crate::cq::{ContourParameters, CqMethod, CqScheme, SchemeKind};
use crate::geometry::{BoundaryMesh, Point, Polygon};
use crate::kernel::{heat_kernel_time, heat_kernel_time_derivatives};
use crate::solver::{solve_transmission, DensityHistory, TransmissionProblem};
use crate::trace_spaces::{DiscreteNormOperators, NormKind, Space, TraceSpacePair};
use crate::{Error, Result};

/// Interior heat-kernel solution with `u_+ ≡ 0`:
/// `u_−(x, t) = exp(−|x − x_sc|²/(4m(t + t_lag))) / (4πm(t + t_lag))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ManufacturedSolution {
    source: Point,
    m: f64,
    kappa: f64,
    t_lag: f64,
}

/// Builds the solution for an inclusion; the source must lie strictly outside.
pub fn make_manufactured(
    polygon: &Polygon,
    source: Point,
    m: f64,
    kappa: f64,
    t_lag: f64,
) -> Result<ManufacturedSolution> {
    for (name, v) in [("m", m), ("kappa", kappa)] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::param(name, format!("must be positive, got {v}")));
        }
    }
    if !(t_lag >= 0.0 && t_lag.is_finite()) {
        return Err(Error::param("t_lag", format!("must be non-negative, got {t_lag}")));
    }
    if polygon.contains(&source) || polygon.distance_to_boundary(&source) <= 1e-12 * polygon.diameter() {
        return Err(Error::param("source", "must lie strictly outside the closed inclusion"));
    }
    Ok(ManufacturedSolution {
        source,
        m,
        kappa,
        t_lag,
    })
}

impl ManufacturedSolution {
    /// Source `(1.5, 1.6)` with `m = 0.8`, `κ = 1.2`, `t_lag = 0`.
    pub fn reference(polygon: &Polygon) -> Result<Self> {
        make_manufactured(polygon, Point::new(1.5, 1.6), 0.8, 1.2, 0.0)
    }

    pub fn source(&self) -> Point {
        self.source
    }

    pub fn m(&self) -> f64 {
        self.m
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn rho(&self) -> f64 {
        self.kappa / self.m
    }

    pub fn t_lag(&self) -> f64 {
        self.t_lag
    }

    pub fn u_minus(&self, x: &Point, t: f64) -> f64 {
        heat_kernel_time(self.m, x, &self.source, t + self.t_lag)
    }

    /// Interior trace `γ⁻u_−`.
    pub fn trace(&self, x: &Point, t: f64) -> f64 {
        self.u_minus(x, t)
    }

    /// Interior normal derivative `∂_ν⁻u_−`.
    pub fn normal_derivative(&self, x: &Point, normal: &Point, t: f64) -> f64 {
        heat_kernel_time_derivatives(self.m, x, &self.source, t + self.t_lag).1.dot(normal)
    }

    /// `∂_t u_−`.
    pub fn time_derivative(&self, x: &Point, t: f64) -> f64 {
        heat_kernel_time_derivatives(self.m, x, &self.source, t + self.t_lag).0
    }

    /// Transmission problem whose solution this is: `β₀ = γ⁻u_−`, `β₁ = κ ∂_ν⁻u_−`.
    pub fn problem(&self, polygon: &Polygon, final_time: f64) -> Result<TransmissionProblem> {
        let (a, b) = (*self, *self);
        TransmissionProblem::new(
            polygon.clone(),
            self.rho(),
            self.kappa,
            final_time,
            Arc::new(move |x, t| a.trace(x, t)),
            Arc::new(move |x, n, t| b.kappa * b.normal_derivative(x, n, t)),
        )
    }
}

/// Error quantities of one run, maxima over step times.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorTriple {
    /// `max_n ‖φ(t_n) − φ_n‖_{L²(Γ)}`
    pub phi: f64,
    /// `max_n ‖λ(t_n) − λ_n‖_{L²(Γ)}`
    pub lambda_l2: f64,
    /// `max_n ‖Π_{L²}λ(t_n) − λ_n‖_{−1/2}`
    pub lambda_mhalf: f64,
}

/// Measures the densities against the exact traces at every step `t_0, …, t_N`.
/// For Runge-Kutta schemes the step value is the last stage.
pub fn compute_errors(
    densities: &DensityHistory,
    exact: &ManufacturedSolution,
    spaces: &TraceSpacePair,
    norms: &DiscreteNormOperators,
) -> Result<ErrorTriple> {
    let scheme = densities.scheme();
    let per_step: Vec<Result<(f64, f64, f64)>> = (0..=scheme.steps())
        .into_par_iter()
        .map(|n| {
            let t = n as f64 * scheme.step();
            let phi = densities.step_phi(n);
            let lambda = densities.step_lambda(n);
            let e_phi = spaces.l2_error(Space::Y, &phi, |x, _| exact.trace(x, t));
            let e_l2 = spaces.l2_error(Space::X, &lambda, |x, nu| exact.normal_derivative(x, nu, t));
            let proj = spaces.l2_project(Space::X, |x, nu| exact.normal_derivative(x, nu, t))?;
            let e_mh = norms.norm(&(proj - lambda), NormKind::HMinusHalf)?;
            Ok((e_phi, e_l2, e_mh))
        })
        .collect();
    let mut out = ErrorTriple {
        phi: 0.0,
        lambda_l2: 0.0,
        lambda_mhalf: 0.0,
    };
    for r in per_step {
        let (a, b, c) = r?;
        out.phi = out.phi.max(a);
        out.lambda_l2 = out.lambda_l2.max(b);
        out.lambda_mhalf = out.lambda_mhalf.max(c);
    }
    Ok(out)
}

/// Per-level results of a convergence study.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LevelResult {
    pub level: usize,
    pub k: f64,
    pub h: f64,
    pub errors: ErrorTriple,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceRecord {
    pub scheme: SchemeKind,
    pub degree: usize,
    pub levels: Vec<LevelResult>,
}

impl ConvergenceRecord {
    pub fn ks(&self) -> Vec<f64> {
        self.levels.iter().map(|l| l.k).collect()
    }

    pub fn series(&self, which: ErrorKind) -> Vec<f64> {
        self.levels
            .iter()
            .map(|l| match which {
                ErrorKind::Phi => l.errors.phi,
                ErrorKind::LambdaL2 => l.errors.lambda_l2,
                ErrorKind::LambdaMinusHalf => l.errors.lambda_mhalf,
            })
            .collect()
    }

    pub fn rate(&self, which: ErrorKind) -> Result<RateEstimate> {
        estimate_rates(&self.ks(), &self.series(which))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Phi,
    LambdaL2,
    LambdaMinusHalf,
}

/// Observed order from a least-squares fit of `log e` against `log k`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateEstimate {
    pub rate: f64,
    /// Levels `first..end` entered the fit.
    pub first: usize,
    pub end: usize,
    /// Some consecutive errors increased.
    pub non_monotone: bool,
    /// The fit was cut where the error stopped decreasing.
    pub floor_hit: bool,
}

/// Consecutive errors decreasing by less than this factor count as an error floor.
pub const FLOOR_RATIO: f64 = 1.4142135623730951;

/// Fits the observed order over all but the coarsest level, cutting a trailing error floor.
pub fn estimate_rates(ks: &[f64], errors: &[f64]) -> Result<RateEstimate> {
    if ks.len() != errors.len() {
        return Err(Error::DimensionMismatch {
            expected: ks.len(),
            found: errors.len(),
        });
    }
    if ks.len() < 3 {
        return Err(Error::param("levels", format!("need at least 3 levels, got {}", ks.len())));
    }
    if ks.windows(2).any(|w| !(w[1] < w[0])) || ks.iter().chain(errors).any(|v| !(*v > 0.0 && v.is_finite())) {
        return Err(Error::param("levels", "step sizes must decrease and errors must be positive"));
    }
    let non_monotone = errors.windows(2).any(|w| w[1] > w[0]);
    if non_monotone {
        log::warn!("non-monotone error sequence {errors:?}; preasymptotic levels likely");
    }
    // error floor: drop trailing levels whose decrease has stalled (a stall at the
    // coarse end is preasymptotic, not a floor)
    let mut end = errors.len();
    while end >= 2 && errors[end - 2] / errors[end - 1] < FLOOR_RATIO {
        end -= 1;
    }
    let floor_hit = end < errors.len();
    let first = if end >= 3 { 1 } else { 0 };
    let rate = if end - first >= 2 {
        slope(&ks[first..end], &errors[first..end])
    } else {
        f64::NAN
    };
    Ok(RateEstimate {
        rate,
        first,
        end,
        non_monotone,
        floor_hit,
    })
}

fn slope(ks: &[f64], errs: &[f64]) -> f64 {
    let n = ks.len() as f64;
    let x: Vec<f64> = ks.iter().map(|k| k.ln()).collect();
    let y: Vec<f64> = errs.iter().map(|e| e.ln()).collect();
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

/// Predicted orders for `E^φ` and `E^{λ,−1/2}`, with the sharper conjectured values for RK.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpectedRates {
    pub phi: f64,
    pub lambda: f64,
    pub conjectured_phi: Option<f64>,
    pub conjectured_lambda: Option<f64>,
    /// Polynomial degree of `X_h` (`Y_h` has one more).
    pub degree: usize,
}

/// Multistep methods converge with full order; RK methods of order `p` and stage order `q`
/// show `min{q + 3/4, 3p/4 + q/4}` for `φ` and `q` for `λ`.
pub fn expected_rates(method: &CqMethod) -> ExpectedRates {
    match method {
        CqMethod::Bdf { order } => ExpectedRates {
            phi: *order as f64,
            lambda: *order as f64,
            conjectured_phi: None,
            conjectured_lambda: None,
            degree: *order,
        },
        CqMethod::RungeKutta(t) => {
            let (p, q) = (t.order() as f64, t.stage_order() as f64);
            ExpectedRates {
                phi: (q + 0.75).min(0.75 * p + 0.25 * q),
                lambda: q,
                conjectured_phi: Some((q + 1.0).min(0.75 * p + 0.25 * q + 1.0 / 16.0)),
                conjectured_lambda: Some(q + 0.25),
                degree: t.stage_order() + 1,
            }
        }
    }
}

/// A manufactured-solution convergence study with `k/h` held fixed.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceStudy {
    pub polygon: Polygon,
    pub exact: ManufacturedSolution,
    pub scheme: SchemeKind,
    pub degree: usize,
    /// Mesh width of level 0; each level refines uniformly once more.
    pub base_mesh_size: f64,
    /// Step count of level 0; doubled per level.
    pub base_steps: usize,
    pub final_time: f64,
    pub levels: usize,
    /// Contour size override (`None`: default rule).
    pub contour_points: Option<usize>,
}

impl ConvergenceStudy {
    pub fn level_scheme(&self, level: usize) -> Result<CqScheme> {
        let n = self.base_steps << level;
        self.scheme.build(self.final_time / n as f64, n)
    }

    pub fn level_spaces(&self, level: usize) -> Result<TraceSpacePair> {
        let base = BoundaryMesh::from_polygon(&self.polygon, self.base_mesh_size)?;
        TraceSpacePair::new(base.refined(level), self.degree)
    }

    /// Solves and measures one level.
    pub fn run_level(&self, level: usize) -> Result<(LevelResult, DensityHistory)> {
        let scheme = self.level_scheme(level)?;
        let spaces = self.level_spaces(level)?;
        let contour = match self.contour_points {
            Some(p) => ContourParameters::with_points(p.max(2 * (scheme.steps() + 1))),
            None => ContourParameters::for_scheme(&scheme),
        };
        let problem = self.exact.problem(&self.polygon, self.final_time)?;
        let densities = solve_transmission(&problem, &spaces, &scheme, &contour)?;
        let norms = DiscreteNormOperators::new(&spaces)?;
        let errors = compute_errors(&densities, &self.exact, &spaces, &norms)?;
        log::info!(
            "{} level {level}: k = {:.3e}, panels = {}, errors {:?}",
            self.scheme,
            scheme.step(),
            spaces.num_panels(),
            errors
        );
        Ok((
            LevelResult {
                level,
                k: scheme.step(),
                h: spaces.mesh().max_panel_length(),
                errors,
            },
            densities,
        ))
    }

    pub fn run(&self) -> Result<ConvergenceRecord> {
        if self.levels == 0 || self.base_steps == 0 {
            return Err(Error::param("levels", "need at least one level and one step"));
        }
        let levels = (0..self.levels)
            .into_par_iter()
            .map(|l| self.run_level(l).map(|(r, _)| r))
            .collect::<Result<Vec<_>>>()?;
        Ok(ConvergenceRecord {
            scheme: self.scheme,
            degree: self.degree,
            levels,
        })
    }
}

/// `Π_{L²}` of the exact Neumann trace at time `t`, as `X_h` coefficients.
pub fn projected_normal_derivative(
    exact: &ManufacturedSolution,
    spaces: &TraceSpacePair,
    t: f64,
) -> Result<DVector<f64>> {
    spaces.l2_project(Space::X, |x, nu| exact.normal_derivative(x, nu, t))
}
