//! Galerkin matrices of the Laplace-domain boundary integral operators, the
//! transmission block system and potential evaluation.
//!
//! Conventions: `ν` points from the inclusion into the exterior,
//! `V = γS`, `K = {γD}`, `Kᵀ = {∂_ν S}`, `W = −∂_ν D`, so that the interior traces of
//! `u = Sλ − Dφ` satisfy `½φ = Vλ − Kφ` and `½λ = Kᵀλ + Wφ`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, Dyn, LU};
use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{point_segment_distance, segment_segment_distance, Panel, Point};
use crate::kernel::{k01_unchecked, LaplaceFrequency};
use crate::quadrature::{gauss_legendre, log_singular, weakly_singular, Rule};
use crate::trace_spaces::TraceSpacePair;

pub type CMatrix = DMatrix<Complex64>;
pub type CVector = DVector<Complex64>;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Selects one of the four boundary integral operators.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundaryOperator {
    SingleLayer,
    DoubleLayer,
    AdjointDoubleLayer,
    Hypersingular,
}

/// Selects one of the two layer potentials.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Potential {
    SingleLayer,
    DoubleLayer,
}

/// Galerkin matrices at one frequency.
///
/// `v[i][j] = ⟨μ_i, V μ_j⟩`, `k[i][j] = ⟨μ_i, K φ_j⟩`, `kt[i][j] = ⟨Kᵀ μ_j, φ_i⟩`,
/// `w[i][j] = ⟨W φ_j, φ_i⟩` and `duality[i][j] = ⟨μ_i, φ_j⟩`.
#[derive(Debug, Clone)]
pub struct OperatorMatrices {
    pub v: CMatrix,
    pub k: CMatrix,
    pub kt: CMatrix,
    pub w: CMatrix,
    pub duality: DMatrix<f64>,
}

/// Assembles a single operator matrix.
pub fn assemble_operator(which: BoundaryOperator, s: &LaplaceFrequency, spaces: &TraceSpacePair) -> CMatrix {
    let ops = assemble_all(s, spaces);
    match which {
        BoundaryOperator::SingleLayer => ops.v,
        BoundaryOperator::DoubleLayer => ops.k,
        BoundaryOperator::AdjointDoubleLayer => ops.kt,
        BoundaryOperator::Hypersingular => ops.w,
    }
}

/// Assembles all four operator matrices in one sweep over panel pairs.
pub fn assemble_all(s: &LaplaceFrequency, spaces: &TraceSpacePair) -> OperatorMatrices {
    assemble_with(s, spaces, QuadratureOrders::default_for(spaces.degree()))
}

/// Gauss orders used for regular panel pairs. Exposed for quadrature convergence tests.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureOrders {
    /// Pairs separated by at least three panel lengths.
    pub far: usize,
    /// Pairs separated by one to three panel lengths, and smooth parts of singular pairs.
    pub near: usize,
    /// Angular direction of the corner transform.
    pub corner: usize,
}

impl QuadratureOrders {
    pub fn default_for(p: usize) -> Self {
        QuadratureOrders {
            far: (p + 4).max(6),
            near: (p + 8).max(12),
            corner: 20,
        }
    }

    pub fn doubled(self) -> Self {
        QuadratureOrders {
            far: 2 * self.far,
            near: 2 * self.near,
            corner: 2 * self.corner,
        }
    }
}

/// Assembly with explicit quadrature orders.
pub fn assemble_with(s: &LaplaceFrequency, spaces: &TraceSpacePair, orders: QuadratureOrders) -> OperatorMatrices {
    let asm = PairAssembler::new(s, spaces, orders);
    let np = spaces.num_panels();
    let rows: Vec<Vec<(usize, LocalBlocks)>> = (0..np)
        .into_par_iter()
        .map(|a| (a..np).map(|b| (b, asm.pair(a, b))).collect())
        .collect();

    let nx_dim = spaces.dim_x();
    let ny_dim = spaces.dim_y();
    let (nx, ny) = (spaces.local_x(), spaces.local_y());
    let mut v = CMatrix::zeros(nx_dim, nx_dim);
    let mut k = CMatrix::zeros(nx_dim, ny_dim);
    let mut w = CMatrix::zeros(ny_dim, ny_dim);
    for (a, row) in rows.iter().enumerate() {
        let ya = spaces.y_dofs(a);
        for (b, loc) in row {
            let b = *b;
            let yb = spaces.y_dofs(b);
            for i in 0..nx {
                for j in 0..nx {
                    let val = loc.v[i * nx + j];
                    v[(spaces.x_dof(a, i), spaces.x_dof(b, j))] += val;
                    if a != b {
                        v[(spaces.x_dof(b, j), spaces.x_dof(a, i))] += val;
                    }
                }
            }
            for i in 0..ny {
                for j in 0..ny {
                    let val = loc.w[i * ny + j];
                    w[(ya[i], yb[j])] += val;
                    if a != b {
                        w[(yb[j], ya[i])] += val;
                    }
                }
            }
            for i in 0..nx {
                for j in 0..ny {
                    k[(spaces.x_dof(a, i), yb[j])] += loc.k_ab[i * ny + j];
                    if a != b {
                        k[(spaces.x_dof(b, i), ya[j])] += loc.k_ba[i * ny + j];
                    }
                }
            }
        }
    }
    let kt = k.transpose();
    OperatorMatrices {
        v,
        k,
        kt,
        w,
        duality: spaces.duality(),
    }
}

/// Local contributions of an ordered panel pair `(A, B)`: `v` and `w` couple test
/// functions on `A` with trial functions on `B`; `k_ab` tests on `A`, `k_ba` tests on `B`.
#[derive(Debug, Clone)]
struct LocalBlocks {
    v: Vec<Complex64>,
    w: Vec<Complex64>,
    k_ab: Vec<Complex64>,
    k_ba: Vec<Complex64>,
}

impl LocalBlocks {
    fn zeros(nx: usize, ny: usize) -> Self {
        LocalBlocks {
            v: vec![ZERO; nx * nx],
            w: vec![ZERO; ny * ny],
            k_ab: vec![ZERO; nx * ny],
            k_ba: vec![ZERO; nx * ny],
        }
    }

    /// The blocks of `(B, A)` from those of `(A, B)`.
    fn swapped(self, nx: usize, ny: usize) -> Self {
        let tr = |m: &[Complex64], n: usize| {
            let mut out = vec![ZERO; n * n];
            for i in 0..n {
                for j in 0..n {
                    out[j * n + i] = m[i * n + j];
                }
            }
            out
        };
        LocalBlocks {
            v: tr(&self.v, nx),
            w: tr(&self.w, ny),
            k_ab: self.k_ba,
            k_ba: self.k_ab,
        }
    }
}

/// Basis values on one panel at a list of parameters.
struct BasisTable {
    mu: Vec<f64>,
    phi: Vec<f64>,
    /// Arclength derivative of `phi`.
    dphi: Vec<f64>,
}

/// Moments of basis products along a line for the translation-invariant singular pairs.
struct LineMoments {
    nodes: Vec<f64>,
    weights: Vec<f64>,
    v: Vec<f64>,
    dd: Vec<f64>,
    ss: Vec<f64>,
}

struct PairAssembler<'a> {
    spaces: &'a TraceSpacePair,
    s: LaplaceFrequency,
    far: Rule,
    near: Rule,
    corner_radial: Rule,
    corner_angular: Rule,
    coincident: LineMoments,
    collinear: LineMoments,
}

impl<'a> PairAssembler<'a> {
    fn new(s: &LaplaceFrequency, spaces: &'a TraceSpacePair, orders: QuadratureOrders) -> Self {
        let inner = gauss_legendre(spaces.degree() + 3);
        let log = log_singular();
        let near = gauss_legendre(orders.near);
        let coincident = Self::line_moments(spaces, &log, &inner, 0.0);
        let mut collinear = Self::line_moments(spaces, &log, &inner, 1.0);
        let tail = Self::line_moments(spaces, &near.mapped(1.0, 2.0), &inner, 1.0);
        collinear.nodes.extend(tail.nodes);
        collinear.weights.extend(tail.weights);
        collinear.v.extend(tail.v);
        collinear.dd.extend(tail.dd);
        collinear.ss.extend(tail.ss);
        PairAssembler {
            spaces,
            s: *s,
            far: gauss_legendre(orders.far),
            near,
            corner_radial: weakly_singular(),
            corner_angular: gauss_legendre(orders.corner),
            coincident,
            collinear,
        }
    }

    /// For panels on one line with equal parameter speed and `B = A + offset·L`,
    /// the distance is `L·w` with `w = |v + offset − u|`. Integrating out the
    /// direction along the diagonal leaves polynomial weights in `w`.
    fn line_moments(spaces: &TraceSpacePair, wrule: &Rule, inner: &Rule, offset: f64) -> LineMoments {
        let nx = spaces.local_x();
        let ny = spaces.local_y();
        let mut out = LineMoments {
            nodes: wrule.nodes.clone(),
            weights: wrule.weights.clone(),
            v: Vec::with_capacity(wrule.len() * nx * nx),
            dd: Vec::with_capacity(wrule.len() * ny * ny),
            ss: Vec::with_capacity(wrule.len() * ny * ny),
        };
        let mut mu_u = vec![0.0; nx];
        let mut mu_v = vec![0.0; nx];
        let (mut ph_u, mut dph_u) = (vec![0.0; ny], vec![0.0; ny]);
        let (mut ph_v, mut dph_v) = (vec![0.0; ny], vec![0.0; ny]);
        for &w in &wrule.nodes {
            let mut cv = vec![0.0; nx * nx];
            let mut cd = vec![0.0; ny * ny];
            let mut cs = vec![0.0; ny * ny];
            // pairs (u, v) of test and trial parameters at distance w
            let mut pairs: Vec<(f64, f64, f64)> = Vec::new();
            if offset == 0.0 {
                for (t, wt) in inner.mapped(0.0, 1.0 - w).iter() {
                    pairs.push((t + w, t, wt));
                    pairs.push((t, t + w, wt));
                }
            } else {
                let lo = (1.0 - w).max(0.0);
                let hi = (2.0 - w).min(1.0);
                for (u, wt) in inner.mapped(lo, hi).iter() {
                    pairs.push((u, u + w - 1.0, wt));
                }
            }
            for (u, v, wt) in pairs {
                spaces.eval_x(u, &mut mu_u);
                spaces.eval_x(v, &mut mu_v);
                spaces.eval_y(u, &mut ph_u, &mut dph_u);
                spaces.eval_y(v, &mut ph_v, &mut dph_v);
                for i in 0..nx {
                    for j in 0..nx {
                        cv[i * nx + j] += wt * mu_u[i] * mu_v[j];
                    }
                }
                for i in 0..ny {
                    for j in 0..ny {
                        cd[i * ny + j] += wt * dph_u[i] * dph_v[j];
                        cs[i * ny + j] += wt * ph_u[i] * ph_v[j];
                    }
                }
            }
            out.v.extend(cv);
            out.dd.extend(cd);
            out.ss.extend(cs);
        }
        out
    }

    #[inline]
    fn kernel(&self, r: f64) -> (Complex64, Complex64) {
        let (k0, k1) = k01_unchecked(self.s.root() * r);
        (k0 / (2.0 * PI), self.s.root() * k1 / (2.0 * PI * r))
    }

    fn pair(&self, a: usize, b: usize) -> LocalBlocks {
        let mesh = self.spaces.mesh();
        let (pa, pb) = (mesh.panel(a), mesh.panel(b));
        let nx = self.spaces.local_x();
        let ny = self.spaces.local_y();
        if a == b {
            return self.same_line(pa, &self.coincident);
        }
        if mesh.next(a) == b {
            return self.adjacent(pa, pb);
        }
        if mesh.next(b) == a {
            return self.adjacent(pb, pa).swapped(nx, ny);
        }
        let mut loc = LocalBlocks::zeros(nx, ny);
        self.regular(pa, pb, (0.0, 1.0), (0.0, 1.0), &mut loc, 0);
        loc
    }

    /// `B` follows `A` along the curve.
    fn adjacent(&self, pa: &Panel, pb: &Panel) -> LocalBlocks {
        let collinear = pa.edge == pb.edge
            && (pa.length - pb.length).abs() <= 1e-12 * pa.length
            && (pa.tangent - pb.tangent).norm() <= 1e-12;
        if collinear {
            self.same_line(pa, &self.collinear)
        } else {
            self.corner(pa, pb)
        }
    }

    fn same_line(&self, pa: &Panel, mom: &LineMoments) -> LocalBlocks {
        let nx = self.spaces.local_x();
        let ny = self.spaces.local_y();
        let l = pa.length;
        let sl2 = self.s.value() * (l * l);
        let mut loc = LocalBlocks::zeros(nx, ny);
        for (q, (&w, &wt)) in mom.nodes.iter().zip(&mom.weights).enumerate() {
            let (g, _) = self.kernel(l * w);
            let g = g * wt;
            let gv = g * (l * l);
            for (dst, c) in loc.v.iter_mut().zip(&mom.v[q * nx * nx..(q + 1) * nx * nx]) {
                *dst += gv * *c;
            }
            let dd = &mom.dd[q * ny * ny..(q + 1) * ny * ny];
            let ss = &mom.ss[q * ny * ny..(q + 1) * ny * ny];
            for ((dst, d), s) in loc.w.iter_mut().zip(dd).zip(ss) {
                *dst += g * (*d + sl2 * *s);
            }
        }
        loc
    }

    fn table(&self, panel: &Panel, nodes: &[f64]) -> BasisTable {
        let nx = self.spaces.local_x();
        let ny = self.spaces.local_y();
        let mut t = BasisTable {
            mu: vec![0.0; nodes.len() * nx],
            phi: vec![0.0; nodes.len() * ny],
            dphi: vec![0.0; nodes.len() * ny],
        };
        for (q, &x) in nodes.iter().enumerate() {
            self.spaces.eval_x(x, &mut t.mu[q * nx..(q + 1) * nx]);
            let (ph, dph) = (&mut t.phi[q * ny..(q + 1) * ny], &mut t.dphi[q * ny..(q + 1) * ny]);
            self.spaces.eval_y(x, ph, dph);
            for d in dph.iter_mut() {
                *d /= panel.length;
            }
        }
        t
    }

    /// Non-touching panels, recursively bisected until well separated.
    fn regular(&self, pa: &Panel, pb: &Panel, ia: (f64, f64), ib: (f64, f64), loc: &mut LocalBlocks, depth: usize) {
        let la = (ia.1 - ia.0) * pa.length;
        let lb = (ib.1 - ib.0) * pb.length;
        let dist = segment_segment_distance(&pa.point(ia.0), &pa.point(ia.1), &pb.point(ib.0), &pb.point(ib.1));
        let ratio = dist / la.max(lb);
        if ratio >= 3.0 {
            self.tensor(pa, pb, &self.far.mapped(ia.0, ia.1), &self.far.mapped(ib.0, ib.1), loc);
        } else if ratio >= 1.0 || depth > 40 {
            self.tensor(pa, pb, &self.near.mapped(ia.0, ia.1), &self.near.mapped(ib.0, ib.1), loc);
        } else if la >= lb {
            let mid = 0.5 * (ia.0 + ia.1);
            self.regular(pa, pb, (ia.0, mid), ib, loc, depth + 1);
            self.regular(pa, pb, (mid, ia.1), ib, loc, depth + 1);
        } else {
            let mid = 0.5 * (ib.0 + ib.1);
            self.regular(pa, pb, ia, (ib.0, mid), loc, depth + 1);
            self.regular(pa, pb, ia, (mid, ib.1), loc, depth + 1);
        }
    }

    fn tensor(&self, pa: &Panel, pb: &Panel, ra: &Rule, rb: &Rule, loc: &mut LocalBlocks) {
        let nx = self.spaces.local_x();
        let ny = self.spaces.local_y();
        let ta = self.table(pa, &ra.nodes);
        let tb = self.table(pb, &rb.nodes);
        let xs: Vec<Point> = ra.nodes.iter().map(|&t| pa.point(t)).collect();
        let ys: Vec<Point> = rb.nodes.iter().map(|&t| pb.point(t)).collect();
        let s_nn = self.s.value() * pa.normal.dot(&pb.normal);
        let mut tv = vec![ZERO; nx];
        let mut tws = vec![ZERO; ny];
        let mut twd = vec![ZERO; ny];
        let mut tk = vec![ZERO; ny];
        let mut tkb = vec![ZERO; nx];
        for (qa, x) in xs.iter().enumerate() {
            tv.fill(ZERO);
            tws.fill(ZERO);
            twd.fill(ZERO);
            tk.fill(ZERO);
            tkb.fill(ZERO);
            for (qb, y) in ys.iter().enumerate() {
                let d = x - y;
                let r = d.norm();
                let (g, kr) = self.kernel(r);
                let wb = rb.weights[qb] * pb.length;
                let g = g * wb;
                let dab = kr * (d.dot(&pb.normal) * wb);
                let dba = kr * (-d.dot(&pa.normal) * wb);
                let mu = &tb.mu[qb * nx..(qb + 1) * nx];
                let ph = &tb.phi[qb * ny..(qb + 1) * ny];
                let dph = &tb.dphi[qb * ny..(qb + 1) * ny];
                for j in 0..nx {
                    tv[j] += g * mu[j];
                    tkb[j] += dba * mu[j];
                }
                for j in 0..ny {
                    tws[j] += g * ph[j];
                    twd[j] += g * dph[j];
                    tk[j] += dab * ph[j];
                }
            }
            let wa = ra.weights[qa] * pa.length;
            let mu = &ta.mu[qa * nx..(qa + 1) * nx];
            let ph = &ta.phi[qa * ny..(qa + 1) * ny];
            let dph = &ta.dphi[qa * ny..(qa + 1) * ny];
            for i in 0..nx {
                let c = wa * mu[i];
                for j in 0..nx {
                    loc.v[i * nx + j] += tv[j] * c;
                }
                for j in 0..ny {
                    loc.k_ab[i * ny + j] += tk[j] * c;
                    loc.k_ba[i * ny + j] += tkb[i] * (wa * ph[j]);
                }
            }
            for i in 0..ny {
                let cd = wa * dph[i];
                let cs = s_nn * (wa * ph[i]);
                for j in 0..ny {
                    loc.w[i * ny + j] += twd[j] * cd + tws[j] * cs;
                }
            }
        }
    }

    /// Panels meeting at a polygon vertex: `A` ends where `B` starts. Each triangle of
    /// the parameter square is mapped so that the shared vertex becomes an edge.
    fn corner(&self, pa: &Panel, pb: &Panel) -> LocalBlocks {
        let nx = self.spaces.local_x();
        let ny = self.spaces.local_y();
        let mut loc = LocalBlocks::zeros(nx, ny);
        let s_nn = self.s.value() * pa.normal.dot(&pb.normal);
        let mut mu_a = vec![0.0; nx];
        let mut mu_b = vec![0.0; nx];
        let (mut ph_a, mut dph_a) = (vec![0.0; ny], vec![0.0; ny]);
        let (mut ph_b, mut dph_b) = (vec![0.0; ny], vec![0.0; ny]);
        let scale = pa.length * pb.length;
        for (u, wu) in self.corner_radial.iter() {
            for (z, wz) in self.corner_angular.iter() {
                let wt = wu * wz * u * scale;
                for (da, db) in [(u, u * z), (u * z, u)] {
                    // distances from the shared vertex, as fractions of panel length
                    let ta = 1.0 - da;
                    let tb = db;
                    let x = pa.point(ta);
                    let y = pb.point(tb);
                    let d = x - y;
                    let (g, kr) = self.kernel(d.norm());
                    let g = g * wt;
                    let dab = kr * (d.dot(&pb.normal) * wt);
                    let dba = kr * (-d.dot(&pa.normal) * wt);
                    self.spaces.eval_x(ta, &mut mu_a);
                    self.spaces.eval_x(tb, &mut mu_b);
                    self.spaces.eval_y(ta, &mut ph_a, &mut dph_a);
                    self.spaces.eval_y(tb, &mut ph_b, &mut dph_b);
                    for i in 0..nx {
                        for j in 0..nx {
                            loc.v[i * nx + j] += g * (mu_a[i] * mu_b[j]);
                        }
                        for j in 0..ny {
                            loc.k_ab[i * ny + j] += dab * (mu_a[i] * ph_b[j]);
                            loc.k_ba[i * ny + j] += dba * (mu_b[i] * ph_a[j]);
                        }
                    }
                    for i in 0..ny {
                        for j in 0..ny {
                            let dd = dph_a[i] * dph_b[j] / scale;
                            loc.w[i * ny + j] += g * dd + g * s_nn * (ph_a[i] * ph_b[j]);
                        }
                    }
                }
            }
        }
        loc
    }
}

/// Matrix mapping density coefficients to values of a layer potential at points off `Γ`.
pub fn potential_eval_matrix(
    which: Potential,
    s: &LaplaceFrequency,
    spaces: &TraceSpacePair,
    points: &[Point],
) -> Result<CMatrix> {
    let (sl, dl) = potential_matrices(s, spaces, points)?;
    Ok(match which {
        Potential::SingleLayer => sl,
        Potential::DoubleLayer => dl,
    })
}

/// Checks that all points keep a safe distance from the boundary.
pub fn check_points(spaces: &TraceSpacePair, points: &[Point]) -> Result<()> {
    let mesh = spaces.mesh();
    let tol = 1e-10 * mesh.diameter();
    for (index, x) in points.iter().enumerate() {
        let distance = mesh.distance_to_boundary(x);
        if !(distance > tol) {
            return Err(Error::NearBoundary { index, distance });
        }
    }
    Ok(())
}

/// Single- and double-layer potential matrices (`points × dim X_h`, `points × dim Y_h`).
pub fn potential_matrices(
    s: &LaplaceFrequency,
    spaces: &TraceSpacePair,
    points: &[Point],
) -> Result<(CMatrix, CMatrix)> {
    check_points(spaces, points)?;
    let rule = gauss_legendre((spaces.degree() + 4).max(8));
    let rows: Vec<(Vec<Complex64>, Vec<Complex64>)> = points
        .par_iter()
        .map(|x| {
            let mut srow = vec![ZERO; spaces.dim_x()];
            let mut drow = vec![ZERO; spaces.dim_y()];
            let mut ev = PotentialRow {
                spaces,
                s: *s,
                rule: &rule,
                mu: vec![0.0; spaces.local_x()],
                phi: vec![0.0; spaces.local_y()],
                dphi: vec![0.0; spaces.local_y()],
            };
            for e in 0..spaces.num_panels() {
                ev.panel(x, e, 0.0, 1.0, &mut srow, &mut drow, 0);
            }
            (srow, drow)
        })
        .collect();
    let mut sl = CMatrix::zeros(points.len(), spaces.dim_x());
    let mut dl = CMatrix::zeros(points.len(), spaces.dim_y());
    for (i, (sr, dr)) in rows.into_iter().enumerate() {
        for (j, v) in sr.into_iter().enumerate() {
            sl[(i, j)] = v;
        }
        for (j, v) in dr.into_iter().enumerate() {
            dl[(i, j)] = v;
        }
    }
    Ok((sl, dl))
}

struct PotentialRow<'a> {
    spaces: &'a TraceSpacePair,
    s: LaplaceFrequency,
    rule: &'a Rule,
    mu: Vec<f64>,
    phi: Vec<f64>,
    dphi: Vec<f64>,
}

impl PotentialRow<'_> {
    #[allow(clippy::too_many_arguments)]
    fn panel(
        &mut self,
        x: &Point,
        e: usize,
        t0: f64,
        t1: f64,
        srow: &mut [Complex64],
        drow: &mut [Complex64],
        depth: usize,
    ) {
        let p = self.spaces.panel(e);
        let len = (t1 - t0) * p.length;
        let dist = point_segment_distance(x, &p.point(t0), &p.point(t1));
        if dist < 2.0 * len && depth < 60 {
            let mid = 0.5 * (t0 + t1);
            self.panel(x, e, t0, mid, srow, drow, depth + 1);
            self.panel(x, e, mid, t1, srow, drow, depth + 1);
            return;
        }
        for (t, w) in self.rule.mapped(t0, t1).iter() {
            let d = x - p.point(t);
            let r = d.norm();
            let (k0, k1) = k01_unchecked(self.s.root() * r);
            let wl = w * p.length;
            let g = k0 * (wl / (2.0 * PI));
            let dn = self.s.root() * k1 * (wl * d.dot(&p.normal) / (2.0 * PI * r));
            self.spaces.eval_x(t, &mut self.mu);
            self.spaces.eval_y(t, &mut self.phi, &mut self.dphi);
            for (i, m) in self.mu.iter().enumerate() {
                srow[self.spaces.x_dof(e, i)] += g * *m;
            }
            for (j, f) in self.phi.iter().enumerate() {
                drow[self.spaces.y_dof(e, j)] += dn * *f;
            }
        }
    }
}

/// The transmission block system at one frequency, with its factorization.
///
/// Unknowns are `[λ ∈ X_h; φ ∈ Y_h]`, data are `[β₁ ∈ X_h; β₀ ∈ Y_h]` as coefficient
/// vectors. The first block row is tested with `X_h`, the second with `Y_h`.
#[derive(Debug, Clone)]
pub struct FrequencySystem {
    s: LaplaceFrequency,
    matrix: CMatrix,
    rhs_map: CMatrix,
    lu: LU<Complex64, Dyn, Dyn>,
    dim_x: usize,
}

/// Builds the block matrix `A(s)` and the data map `B(s)` and factorizes `A(s)`.
pub fn assemble_frequency_system(
    s: &LaplaceFrequency,
    m: f64,
    kappa: f64,
    spaces: &TraceSpacePair,
) -> Result<FrequencySystem> {
    if !(m > 0.0 && m.is_finite()) {
        return Err(Error::param("m", format!("must be positive, got {m}")));
    }
    if !(kappa > 0.0 && kappa.is_finite()) {
        return Err(Error::param("kappa", format!("must be positive, got {kappa}")));
    }
    let inner = assemble_all(&s.scaled(m), spaces);
    let outer = assemble_all(s, spaces);
    FrequencySystem::from_matrices(*s, kappa, &inner, &outer)
}

impl FrequencySystem {
    /// Combines interior (`s/m`) and exterior (`s`) operator matrices.
    pub fn from_matrices(
        s: LaplaceFrequency,
        kappa: f64,
        inner: &OperatorMatrices,
        outer: &OperatorMatrices,
    ) -> Result<Self> {
        let dx = outer.v.nrows();
        let dy = outer.w.nrows();
        let n = dx + dy;
        let mut a = CMatrix::zeros(n, n);
        a.view_mut((0, 0), (dx, dx)).copy_from(&(&inner.v + &outer.v * Complex64::from(kappa)));
        a.view_mut((0, dx), (dx, dy)).copy_from(&(-(&inner.k + &outer.k)));
        a.view_mut((dx, 0), (dy, dx)).copy_from(&(&inner.kt + &outer.kt));
        a.view_mut((dx, dx), (dy, dy)).copy_from(&(&inner.w + &outer.w * Complex64::from(1.0 / kappa)));

        let half_m = outer.duality.map(|x| Complex64::new(0.5 * x, 0.0));
        let mut b = CMatrix::zeros(n, n);
        b.view_mut((0, 0), (dx, dx)).copy_from(&outer.v);
        b.view_mut((0, dx), (dx, dy)).copy_from(&(&half_m - &outer.k));
        b.view_mut((dx, 0), (dy, dx)).copy_from(&((half_m.transpose() + &outer.kt) * Complex64::from(1.0 / kappa)));
        b.view_mut((dx, dx), (dy, dy)).copy_from(&(&outer.w * Complex64::from(1.0 / kappa)));

        if a.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::SingularMatrix(format!("non-finite entries at s = {}", s.value())));
        }
        let lu = a.clone().lu();
        if !lu.is_invertible() {
            return Err(Error::SingularMatrix(format!("block system singular at s = {}", s.value())));
        }
        Ok(FrequencySystem {
            s,
            matrix: a,
            rhs_map: b,
            lu,
            dim_x: dx,
        })
    }

    pub fn frequency(&self) -> LaplaceFrequency {
        self.s
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn dim_x(&self) -> usize {
        self.dim_x
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    pub fn rhs_map(&self) -> &CMatrix {
        &self.rhs_map
    }

    /// `B(s)·[β₁; β₀]`.
    pub fn rhs(&self, data: &CVector) -> Result<CVector> {
        if data.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: data.len(),
            });
        }
        Ok(&self.rhs_map * data)
    }

    /// Solves `A(s) x = b`.
    pub fn solve(&self, rhs: &CVector) -> Result<CVector> {
        if rhs.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: rhs.len(),
            });
        }
        self.lu
            .solve(rhs)
            .ok_or_else(|| Error::SingularMatrix(format!("solve failed at s = {}", self.s.value())))
    }

    /// Densities `[λ; φ]` for data `[β₁; β₀]`.
    pub fn solve_data(&self, data: &CVector) -> Result<CVector> {
        self.solve(&self.rhs(data)?)
    }
}
