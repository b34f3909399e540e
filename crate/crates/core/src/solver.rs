//! Time-domain transmission solver: data sampling, the all-at-once CQ-BEM solve,
//! and field evaluation through the layer potentials.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::DVector;
use rayon::prelude::*;

use crate::cq::{forward_convolution, solve_convolution_system, ContourParameters, CqScheme, FrequencyOperator, SchemeKind};
use crate::geometry::{BoundaryMesh, Point, Polygon};
use crate::kernel::{heat_kernel_time, heat_kernel_time_derivatives, LaplaceFrequency};
use crate::operators::{assemble_frequency_system, check_points, potential_matrices, CVector};
use crate::trace_spaces::{Space, TraceSpacePair};
use crate::{Error, Result};

/// Dirichlet jump datum `β₀(x, t)`.
pub type DirichletData = Arc<dyn Fn(&Point, f64) -> f64 + Send + Sync>;
/// Neumann jump datum `β₁(x, ν, t)`.
pub type NeumannData = Arc<dyn Fn(&Point, &Point, f64) -> f64 + Send + Sync>;

/// Heat transmission across the boundary of one inclusion.
///
/// Inside: `ρ ∂_t u = κ Δu`; outside: `∂_t u = Δu`. The jumps are
/// `γ⁻u − γ⁺u = β₀` and `κ ∂_ν⁻u − ∂_ν⁺u = β₁`.
#[derive(Clone)]
pub struct TransmissionProblem {
    polygon: Polygon,
    rho: f64,
    kappa: f64,
    final_time: f64,
    beta0: DirichletData,
    beta1: NeumannData,
}

impl std::fmt::Debug for TransmissionProblem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TransmissionProblem")
            .field("polygon", &self.polygon)
            .field("rho", &self.rho)
            .field("kappa", &self.kappa)
            .field("final_time", &self.final_time)
            .finish_non_exhaustive()
    }
}

impl TransmissionProblem {
    pub fn new(
        polygon: Polygon,
        rho: f64,
        kappa: f64,
        final_time: f64,
        beta0: DirichletData,
        beta1: NeumannData,
    ) -> Result<Self> {
        for (name, v) in [("rho", rho), ("kappa", kappa), ("final_time", final_time)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::param(name, format!("must be positive, got {v}")));
            }
        }
        Ok(TransmissionProblem {
            polygon,
            rho,
            kappa,
            final_time,
            beta0,
            beta1,
        })
    }

    /// Problem with vanishing jump data.
    pub fn homogeneous(polygon: Polygon, rho: f64, kappa: f64, final_time: f64) -> Result<Self> {
        Self::new(polygon, rho, kappa, final_time, Arc::new(|_, _| 0.0), Arc::new(|_, _, _| 0.0))
    }

    pub fn polygon(&self) -> &Polygon {
        &self.polygon
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    /// Interior diffusivity `κ/ρ`.
    pub fn m(&self) -> f64 {
        self.kappa / self.rho
    }

    pub fn final_time(&self) -> f64 {
        self.final_time
    }

    pub fn beta0(&self, x: &Point, t: f64) -> f64 {
        (self.beta0)(x, t)
    }

    pub fn beta1(&self, x: &Point, normal: &Point, t: f64) -> f64 {
        (self.beta1)(x, normal, t)
    }

    /// Same geometry and coefficients with the data multiplied by `alpha`.
    pub fn scaled_data(&self, alpha: f64) -> Self {
        let (b0, b1) = (self.beta0.clone(), self.beta1.clone());
        TransmissionProblem {
            beta0: Arc::new(move |x, t| alpha * b0(x, t)),
            beta1: Arc::new(move |x, n, t| alpha * b1(x, n, t)),
            ..self.clone()
        }
    }
}

/// Sampled data per CQ node: `[β₁ ∈ X_h; β₀ ∈ Y_h]` coefficient vectors (L² projections).
pub fn sample_boundary_data(
    problem: &TransmissionProblem,
    spaces: &TraceSpacePair,
    scheme: &CqScheme,
) -> Result<Vec<DVector<f64>>> {
    let (dx, dy) = (spaces.dim_x(), spaces.dim_y());
    scheme
        .node_times()
        .into_par_iter()
        .map(|t| {
            let b1 = spaces.l2_project(Space::X, |x, n| problem.beta1(x, n, t))?;
            let b0 = spaces.l2_project(Space::Y, |x, _| problem.beta0(x, t))?;
            let mut v = DVector::zeros(dx + dy);
            v.rows_mut(0, dx).copy_from(&b1);
            v.rows_mut(dx, dy).copy_from(&b0);
            Ok(v)
        })
        .collect()
}

/// Densities `λ ∈ X_h` (interior normal derivative) and `φ ∈ Y_h` (interior trace)
/// at every CQ node, together with the sampled data they were computed from.
#[derive(Debug, Clone)]
pub struct DensityHistory {
    scheme: CqScheme,
    contour: ContourParameters,
    dim_x: usize,
    dim_y: usize,
    lambda: Vec<DVector<f64>>,
    phi: Vec<DVector<f64>>,
    data: Vec<DVector<f64>>,
}

impl DensityHistory {
    /// Assembles a history from per-node coefficient vectors.
    pub fn from_parts(
        scheme: &CqScheme,
        contour: &ContourParameters,
        spaces: &TraceSpacePair,
        lambda: Vec<DVector<f64>>,
        phi: Vec<DVector<f64>>,
        data: Vec<DVector<f64>>,
    ) -> Result<Self> {
        let (dx, dy) = (spaces.dim_x(), spaces.dim_y());
        let nodes = scheme.num_nodes();
        for (len, expected) in [(lambda.len(), nodes), (phi.len(), nodes), (data.len(), nodes)] {
            if len != expected {
                return Err(Error::DimensionMismatch { expected, found: len });
            }
        }
        let bad = |v: &[DVector<f64>], d: usize| v.iter().find(|x| x.len() != d).map(|x| x.len());
        for (found, expected) in [(bad(&lambda, dx), dx), (bad(&phi, dy), dy), (bad(&data, dx + dy), dx + dy)] {
            if let Some(found) = found {
                return Err(Error::DimensionMismatch { expected, found });
            }
        }
        Ok(DensityHistory {
            scheme: scheme.clone(),
            contour: *contour,
            dim_x: dx,
            dim_y: dy,
            lambda,
            phi,
            data,
        })
    }

    pub fn scheme(&self) -> &CqScheme {
        &self.scheme
    }

    pub fn contour(&self) -> &ContourParameters {
        &self.contour
    }

    pub fn num_nodes(&self) -> usize {
        self.lambda.len()
    }

    pub fn lambda(&self, node: usize) -> &DVector<f64> {
        &self.lambda[node]
    }

    pub fn phi(&self, node: usize) -> &DVector<f64> {
        &self.phi[node]
    }

    /// Sampled `[β₁; β₀]` at a node.
    pub fn data(&self, node: usize) -> &DVector<f64> {
        &self.data[node]
    }

    /// `λ` at step `t_n`; zero at `t_0` when that is not a node.
    pub fn step_lambda(&self, n: usize) -> DVector<f64> {
        match self.scheme.step_node(n) {
            Some(i) => self.lambda[i].clone(),
            None => DVector::zeros(self.dim_x),
        }
    }

    pub fn step_phi(&self, n: usize) -> DVector<f64> {
        match self.scheme.step_node(n) {
            Some(i) => self.phi[i].clone(),
            None => DVector::zeros(self.dim_y),
        }
    }

    /// Stacked `[λ; φ]` at a node.
    pub fn unknowns(&self, node: usize) -> DVector<f64> {
        let mut v = DVector::zeros(self.dim_x + self.dim_y);
        v.rows_mut(0, self.dim_x).copy_from(&self.lambda[node]);
        v.rows_mut(self.dim_x, self.dim_y).copy_from(&self.phi[node]);
        v
    }
}

fn check_problem(problem: &TransmissionProblem, spaces: &TraceSpacePair, scheme: &CqScheme) -> Result<()> {
    if spaces.mesh().polygon() != problem.polygon() {
        return Err(Error::Geometry("trace spaces are built on a different polygon".into()));
    }
    if scheme.final_time() > problem.final_time() * (1.0 + 1e-12) {
        return Err(Error::param(
            "steps",
            format!("scheme runs to {} beyond the end time {}", scheme.final_time(), problem.final_time()),
        ));
    }
    Ok(())
}

/// Runs the fully discrete CQ-BEM solve. The interior operators are evaluated at
/// `s/m`, the exterior ones at `s`.
pub fn solve_transmission(
    problem: &TransmissionProblem,
    spaces: &TraceSpacePair,
    scheme: &CqScheme,
    contour: &ContourParameters,
) -> Result<DensityHistory> {
    check_problem(problem, spaces, scheme)?;
    let data = sample_boundary_data(problem, spaces, scheme)?;
    solve_sampled(problem, spaces, scheme, contour, data)
}

/// As [`solve_transmission`], with data already sampled at the nodes of `scheme`.
pub fn solve_sampled(
    problem: &TransmissionProblem,
    spaces: &TraceSpacePair,
    scheme: &CqScheme,
    contour: &ContourParameters,
    data: Vec<DVector<f64>>,
) -> Result<DensityHistory> {
    let (m, kappa) = (problem.m(), problem.kappa());
    let out = solve_convolution_system(
        |s: &LaplaceFrequency| assemble_frequency_system(s, m, kappa, spaces),
        &data,
        scheme,
        contour,
    )?;
    let (dx, dy) = (spaces.dim_x(), spaces.dim_y());
    let lambda = out.iter().map(|v| v.rows(0, dx).into_owned()).collect();
    let phi = out.iter().map(|v| v.rows(dx, dy).into_owned()).collect();
    Ok(DensityHistory {
        scheme: scheme.clone(),
        contour: *contour,
        dim_x: dx,
        dim_y: dy,
        lambda,
        phi,
        data,
    })
}

/// Which side of the boundary a point lies on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Region {
    Interior,
    Exterior,
}

/// Fields at a set of points and one step time.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldSnapshot {
    pub step: usize,
    pub time: f64,
    pub points: Vec<Point>,
    pub regions: Vec<Region>,
    /// Interior representation, evaluated everywhere.
    pub u_minus: Vec<f64>,
    /// Exterior representation, evaluated everywhere.
    pub u_plus: Vec<f64>,
    /// `u_−` inside, `u_+` outside.
    pub combined: Vec<f64>,
}

/// Both representations at all points, for input `[λ; φ; β₁; β₀]`.
struct FieldOperator<'a> {
    spaces: &'a TraceSpacePair,
    points: &'a [Point],
    m: f64,
    kappa: f64,
}

impl FrequencyOperator for FieldOperator<'_> {
    fn input_dim(&self) -> usize {
        2 * (self.spaces.dim_x() + self.spaces.dim_y())
    }

    fn output_dim(&self) -> usize {
        2 * self.points.len()
    }

    fn apply(&self, s: &LaplaceFrequency, x: &CVector) -> Result<CVector> {
        let (dx, dy) = (self.spaces.dim_x(), self.spaces.dim_y());
        let lambda = x.rows(0, dx);
        let phi = x.rows(dx, dy);
        let b1 = x.rows(dx + dy, dx);
        let b0 = x.rows(2 * dx + dy, dy);

        let (sm, dm) = potential_matrices(&s.scaled(self.m), self.spaces, self.points)?;
        let inner = &sm * lambda - &dm * phi;
        let (se, de) = potential_matrices(s, self.spaces, self.points)?;
        let neumann = lambda * num_complex::Complex64::from(self.kappa) - b1;
        let outer = -(&se * neumann) + &de * (phi - b0);

        let np = self.points.len();
        let mut out = CVector::zeros(2 * np);
        out.rows_mut(0, np).copy_from(&inner);
        out.rows_mut(np, np).copy_from(&outer);
        Ok(out)
    }
}

/// Evaluates `u_−` and `u_+` at `points` for the requested step indices `n ∈ 0..=N`.
pub fn evaluate_fields(
    densities: &DensityHistory,
    problem: &TransmissionProblem,
    spaces: &TraceSpacePair,
    points: &[Point],
    steps: &[usize],
) -> Result<Vec<FieldSnapshot>> {
    let scheme = densities.scheme();
    if let Some(&n) = steps.iter().find(|&&n| n > scheme.steps()) {
        return Err(Error::param("steps", format!("step {n} beyond the last step {}", scheme.steps())));
    }
    if densities.dim_x != spaces.dim_x() || densities.dim_y != spaces.dim_y() {
        return Err(Error::DimensionMismatch {
            expected: densities.dim_x + densities.dim_y,
            found: spaces.dim_x() + spaces.dim_y(),
        });
    }
    check_points(spaces, points)?;
    let regions: Vec<Region> = points
        .iter()
        .map(|p| {
            if problem.polygon().contains(p) {
                Region::Interior
            } else {
                Region::Exterior
            }
        })
        .collect();
    let np = points.len();

    let values = if steps.is_empty() || np == 0 {
        vec![DVector::zeros(2 * np); scheme.num_nodes()]
    } else {
        let input: Vec<DVector<f64>> = (0..densities.num_nodes())
            .map(|i| {
                let u = densities.unknowns(i);
                let d = &densities.data[i];
                let (dx, dy) = (densities.dim_x, densities.dim_y);
                let mut v = DVector::zeros(2 * (dx + dy));
                v.rows_mut(0, dx + dy).copy_from(&u);
                v.rows_mut(dx + dy, dx).copy_from(&d.rows(0, dx));
                v.rows_mut(2 * dx + dy, dy).copy_from(&d.rows(dx, dy));
                v
            })
            .collect();
        let op = FieldOperator {
            spaces,
            points,
            m: problem.m(),
            kappa: problem.kappa(),
        };
        forward_convolution(&op, &input, scheme, densities.contour())?
    };

    Ok(steps
        .iter()
        .map(|&n| {
            let (u_minus, u_plus) = match scheme.step_node(n) {
                Some(i) => (
                    values[i].rows(0, np).iter().copied().collect::<Vec<_>>(),
                    values[i].rows(np, np).iter().copied().collect::<Vec<_>>(),
                ),
                None => (vec![0.0; np], vec![0.0; np]),
            };
            let combined = regions
                .iter()
                .enumerate()
                .map(|(j, r)| match r {
                    Region::Interior => u_minus[j],
                    Region::Exterior => u_plus[j],
                })
                .collect();
            FieldSnapshot {
                step: n,
                time: n as f64 * scheme.step(),
                points: points.to_vec(),
                regions: regions.clone(),
                u_minus,
                u_plus,
                combined,
            }
        })
        .collect())
}

/// Sum of unit heat sources (diffusivity 1) restricted to the exterior, time-shifted by `t_lag`.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceField {
    pub sources: Vec<Point>,
    pub t_lag: f64,
}

impl SourceField {
    /// `count` sources equally spaced on a circle.
    pub fn on_circle(center: Point, radius: f64, count: usize, t_lag: f64) -> Self {
        let sources = (0..count)
            .map(|j| {
                let a = 2.0 * PI * j as f64 / count as f64;
                center + Point::new(radius * a.cos(), radius * a.sin())
            })
            .collect();
        SourceField { sources, t_lag }
    }

    pub fn value(&self, x: &Point, t: f64) -> f64 {
        self.sources.iter().map(|c| heat_kernel_time(1.0, x, c, t + self.t_lag)).sum()
    }

    pub fn normal_derivative(&self, x: &Point, normal: &Point, t: f64) -> f64 {
        self.sources
            .iter()
            .map(|c| heat_kernel_time_derivatives(1.0, x, c, t + self.t_lag).1.dot(normal))
            .sum()
    }
}

/// Setup of the qualitative simulation with exterior point sources.
#[derive(Debug, Clone, PartialEq)]
pub struct DemoConfig {
    pub polygon: Polygon,
    pub rho: f64,
    pub kappa: f64,
    pub sources: SourceField,
    pub scheme: SchemeKind,
    pub step: f64,
    pub final_time: f64,
    pub degree: usize,
    pub mesh_size: f64,
    pub snapshot_times: Vec<f64>,
    pub points: Vec<Point>,
}

/// The default horseshoe: a U-shaped polygon open towards `+y`.
pub fn horseshoe() -> Polygon {
    Polygon::from_coords(&[
        [-0.5, -0.5],
        [0.5, -0.5],
        [0.5, 0.5],
        [0.25, 0.5],
        [0.25, -0.25],
        [-0.25, -0.25],
        [-0.25, 0.5],
        [-0.5, 0.5],
    ])
    .expect("horseshoe vertices form a simple polygon")
}

impl DemoConfig {
    /// Scaled-down horseshoe run: `κ = 100`, `ρ = 1`, BDF(4), `k = 1/128`, `T = 1`,
/// eight sources on a circle of radius 0.9 around the origin.
    pub fn horseshoe_default() -> Self {
        let n = 41;
        let points = (0..n)
            .flat_map(|i| {
                (0..n).map(move |j| Point::new(-1.0 + 2.0 * i as f64 / (n - 1) as f64, -1.0 + 2.0 * j as f64 / (n - 1) as f64))
            })
            .collect();
        DemoConfig {
            polygon: horseshoe(),
            rho: 1.0,
            kappa: 100.0,
            sources: SourceField::on_circle(Point::new(0.0, 0.0), 0.9, 8, 0.001),
            scheme: SchemeKind::Bdf(4),
            step: 1.0 / 128.0,
            final_time: 1.0,
            degree: 3,
            mesh_size: 0.125,
            snapshot_times: vec![0.0, 0.06, 0.2, 0.375, 0.75, 1.0],
            points,
        }
    }
}

/// A frame of the simulation: total field `u^src + u` with `u^src` vanishing inside.
#[derive(Debug, Clone, PartialEq)]
pub struct DemoFrame {
    pub snapshot: FieldSnapshot,
    pub total: Vec<f64>,
    /// Points skipped because they lie on (or too close to) the boundary.
    pub skipped: Vec<Point>,
}

/// Splits points into those safely away from the boundary and the rest.
pub fn split_evaluable(spaces: &TraceSpacePair, points: &[Point]) -> (Vec<Point>, Vec<Point>) {
    points
        .iter()
        .partition(|p| check_points(spaces, std::slice::from_ref(*p)).is_ok())
}

/// Nearest step index for a time.
pub fn step_index(scheme: &CqScheme, time: f64) -> usize {
    ((time / scheme.step()).round().max(0.0) as usize).min(scheme.steps())
}

/// Runs the scattered-field formulation with jump data `β₀ = γu^src`, `β₁ = ∂_ν u^src`.
pub fn run_demo_simulation(config: &DemoConfig) -> Result<Vec<DemoFrame>> {
    let steps = (config.final_time / config.step).round() as usize;
    let scheme = config.scheme.build(config.step, steps.max(1))?;
    let contour = ContourParameters::for_scheme(&scheme);
    let mesh = BoundaryMesh::from_polygon(&config.polygon, config.mesh_size)?;
    let spaces = TraceSpacePair::new(mesh, config.degree)?;

    let (src0, src1) = (config.sources.clone(), config.sources.clone());
    let problem = TransmissionProblem::new(
        config.polygon.clone(),
        config.rho,
        config.kappa,
        scheme.final_time(),
        Arc::new(move |x, t| src0.value(x, t)),
        Arc::new(move |x, n, t| src1.normal_derivative(x, n, t)),
    )?;
    log::info!(
        "demo: {} panels, {} unknowns, {} steps, {} contour points",
        spaces.num_panels(),
        spaces.dim_x() + spaces.dim_y(),
        scheme.steps(),
        contour.points
    );
    let densities = solve_transmission(&problem, &spaces, &scheme, &contour)?;
    let (points, skipped) = split_evaluable(&spaces, &config.points);
    let step_ids: Vec<usize> = config.snapshot_times.iter().map(|&t| step_index(&scheme, t)).collect();
    let snaps = evaluate_fields(&densities, &problem, &spaces, &points, &step_ids)?;
    Ok(snaps
        .into_iter()
        .map(|snap| {
            let total = snap
                .combined
                .iter()
                .zip(&snap.points)
                .zip(&snap.regions)
                .map(|((u, x), r)| match r {
                    Region::Interior => *u,
                    Region::Exterior => u + config.sources.value(x, snap.time),
                })
                .collect();
            DemoFrame {
                snapshot: snap,
                total,
                skipped: skipped.clone(),
            }
        })
        .collect())
}
