use std::f64::consts::PI;

use cqbem::geometry::{BoundaryMesh, Point, Polygon};
use cqbem::kernel::{bessel_k0, fundamental_solution, grad_y_fundamental_solution, LaplaceFrequency};
use cqbem::operators::{
    assemble_all, assemble_frequency_system, assemble_with, potential_matrices, BoundaryOperator, CMatrix,
    CVector, QuadratureOrders,
};
use cqbem::quadrature::{gauss_legendre, graded};
use cqbem::trace_spaces::{DiscreteNormOperators, NormKind, Space, TraceSpacePair};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

fn quad() -> Polygon {
    Polygon::from_coords(&[[0.0, 0.0], [1.0, 0.0], [0.8, 0.8], [0.2, 1.0]]).unwrap()
}

fn spaces(h: f64, p: usize) -> TraceSpacePair {
    TraceSpacePair::new(BoundaryMesh::from_polygon(&quad(), h).unwrap(), p).unwrap()
}

fn refined_spaces(h: f64, times: usize, p: usize) -> TraceSpacePair {
    let mesh = BoundaryMesh::from_polygon(&quad(), h).unwrap().refined(times);
    TraceSpacePair::new(mesh, p).unwrap()
}

fn rel(a: &CMatrix, b: &CMatrix) -> f64 {
    (a - b).norm() / a.norm()
}

fn project(sp: &TraceSpacePair, space: Space, f: impl Fn(&Point, &Point) -> Complex64) -> CVector {
    let re = sp.l2_project(space, |x, n| f(x, n).re).unwrap();
    let im = sp.l2_project(space, |x, n| f(x, n).im).unwrap();
    CVector::from_fn(re.len(), |i, _| c(re[i], im[i]))
}

fn l2_error(sp: &TraceSpacePair, space: Space, v: &CVector, f: impl Fn(&Point, &Point) -> Complex64) -> f64 {
    let re = v.map(|z| z.re);
    let im = v.map(|z| z.im);
    let er = sp.l2_error(space, &re, |x, n| f(x, n).re);
    let ei = sp.l2_error(space, &im, |x, n| f(x, n).im);
    er.hypot(ei)
}

/// Interior solution of the modified Helmholtz equation: a point source outside the inclusion.
struct PointSource {
    s: LaplaceFrequency,
    x0: Point,
}

impl PointSource {
    fn value(&self, x: &Point) -> Complex64 {
        fundamental_solution(&self.s, x, &self.x0).unwrap()
    }
    fn normal_derivative(&self, x: &Point, n: &Point) -> Complex64 {
        let g = grad_y_fundamental_solution(&self.s, &self.x0, x).unwrap();
        g[0] * n.x + g[1] * n.y
    }
}

#[test]
fn single_layer_and_hypersingular_are_complex_symmetric() {
    let s = LaplaceFrequency::new(c(2.0, 3.0)).unwrap();
    for p in [0, 2] {
        let sp = spaces(0.3, p);
        let ops = assemble_all(&s, &sp);
        assert!(rel(&ops.v, &ops.v.transpose()) <= 1e-8, "V asymmetric for p = {p}");
        assert!(rel(&ops.w, &ops.w.transpose()) <= 1e-8, "W asymmetric for p = {p}");
        assert_eq!(ops.kt, ops.k.transpose());
    }
    let sp = spaces(1.2, 0);
    let v = cqbem::operators::assemble_operator(BoundaryOperator::SingleLayer, &s, &sp);
    assert!(rel(&v, &v.transpose()) <= 1e-8);
}

/// `∫_0^L ∫_0^L g(|x − y|) dx dy = 2 ∫_0^L (L − r) g(r) dr` for a straight panel, integrated
/// with a finer dyadic grading than the assembler uses.
#[test]
fn single_layer_self_interaction_matches_radial_formula() {
    let sp = spaces(10.0, 0);
    for s in [c(1.0, 0.0), c(2.0, 3.0), c(50.0, -80.0)] {
        let f = LaplaceFrequency::new(s).unwrap();
        let v = assemble_all(&f, &sp).v;
        for e in 0..sp.num_panels() {
            let l = sp.mesh().panel(e).length;
            let rule = graded(0.5, 60, 20, 10);
            let mut acc = c(0.0, 0.0);
            for (t, w) in rule.iter() {
                let r = t * l;
                acc += bessel_k0(f.root() * r).unwrap() * (2.0 * (l - r) * w * l / (2.0 * PI));
            }
            // p = 0 basis is the constant 1
            let got = v[(e, e)];
            assert!((got - acc).norm() <= 1e-12 * acc.norm(), "s = {s}: {got} vs {acc}");
        }
    }
}

/// Entries whose supports are well separated, against brute-force tensor Gauss of the
/// adjoint double-layer kernel `∂_ν(x) G(x, y)`.
#[test]
fn adjoint_double_layer_matches_brute_force_on_separated_supports() {
    let sp = spaces(0.25, 1);
    let s = LaplaceFrequency::new(c(3.0, -2.0)).unwrap();
    let ops = assemble_all(&s, &sp);
    let mesh = sp.mesh();
    let np = sp.num_panels();
    let g = gauss_legendre(30);
    let (mut mu, mut ph, mut dph) = (vec![0.0; sp.local_x()], vec![0.0; sp.local_y()], vec![0.0; sp.local_y()]);
    let mut checked = 0;
    for b in 0..np {
        // Y basis functions with local index 1 live on a single panel
        let a = (b + np / 2) % np;
        let (pa, pb) = (mesh.panel(a), mesh.panel(b));
        for j in 0..sp.local_x() {
            let mut acc = c(0.0, 0.0);
            for (ta, wa) in g.iter() {
                sp.eval_y(ta, &mut ph, &mut dph);
                let x = pa.point(ta);
                for (tb, wb) in g.iter() {
                    sp.eval_x(tb, &mut mu);
                    let y = pb.point(tb);
                    // ∇_x G(x, y) = ∇_y G(y, x)
                    let grad = grad_y_fundamental_solution(&s, &y, &x).unwrap();
                    let dn = grad[0] * pa.normal.x + grad[1] * pa.normal.y;
                    acc += dn * (wa * wb * pa.length * pb.length * ph[1] * mu[j]);
                }
            }
            let got = ops.kt[(sp.y_dof(a, 1), sp.x_dof(b, j))];
            assert!((got - acc).norm() <= 1e-10 * acc.norm().max(1e-14), "{got} vs {acc}");
            checked += 1;
        }
    }
    assert!(checked > 10);
}

#[test]
fn coercivity_of_single_layer_and_hypersingular() {
    let sp = spaces(0.3, 1);
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..6 {
        let theta = rng.gen_range(-0.99 * PI..0.99 * PI);
        let s = LaplaceFrequency::new(Complex64::from_polar(4.0, theta)).unwrap();
        let ops = assemble_all(&s, &sp);
        // xᴴ V x = ‖∇u‖² + conj(s)‖u‖² for the single-layer potential u, while
        // yᴴ W y = ‖∇u‖² + s‖u‖² for the double-layer potential
        let root = s.root();
        let conj_root = s.root().conj();
        for _ in 0..100 {
            let x = CVector::from_fn(sp.dim_x(), |_, _| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
            let y = CVector::from_fn(sp.dim_y(), |_, _| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
            let qv = (root * x.dotc(&(&ops.v * &x))).re;
            let qw = (conj_root * y.dotc(&(&ops.w * &y))).re;
            assert!(qv > 0.0, "V form {qv} at θ = {theta}");
            assert!(qw > 0.0, "W form {qw} at θ = {theta}");
        }
    }
}

#[test]
fn quadrature_doubling_changes_entries_negligibly() {
    let sp = spaces(0.4, 2);
    let s = LaplaceFrequency::real(1.0).unwrap();
    let orders = QuadratureOrders::default_for(2);
    let a = assemble_with(&s, &sp, orders);
    let b = assemble_with(&s, &sp, orders.doubled());
    for (x, y) in [(&a.v, &b.v), (&a.k, &b.k), (&a.w, &b.w)] {
        let scale = x.iter().map(|z| z.norm()).fold(0.0, f64::max);
        let diff = (x - y).iter().map(|z| z.norm()).fold(0.0, f64::max);
        assert!(diff <= 1e-10 * scale, "difference {diff:e} vs scale {scale:e}");
    }
}

/// `⟨W φ_j, φ_i⟩ = −⟨∂_ν D φ_j, φ_i⟩` with the normal derivative by central differences.
#[test]
fn hypersingular_matches_differenced_double_layer() {
    let sp = spaces(0.25, 1);
    let s = LaplaceFrequency::new(c(1.5, 0.5)).unwrap();
    let ops = assemble_all(&s, &sp);
    let mesh = sp.mesh();
    let np = sp.num_panels();
    let g = gauss_legendre(16);
    let delta = 1e-4;
    let (mut ph, mut dph) = (vec![0.0; sp.local_y()], vec![0.0; sp.local_y()]);
    for pair in 0..10 {
        let a = (3 * pair) % np;
        let b = (a + np / 2) % np;
        let pa = mesh.panel(a);
        // test function: interior node of panel a; trial: interior node of panel b
        let (i_dof, j_dof) = (sp.y_dof(a, 1), sp.y_dof(b, 1));
        let mut pts = Vec::new();
        for (t, _) in g.iter() {
            let x = pa.point(t);
            pts.push(x + pa.normal * delta);
            pts.push(x - pa.normal * delta);
        }
        let (_, dl) = potential_matrices(&s, &sp, &pts).unwrap();
        let mut acc = c(0.0, 0.0);
        for (q, (t, w)) in g.iter().enumerate() {
            sp.eval_y(t, &mut ph, &mut dph);
            let dn = (dl[(2 * q, j_dof)] - dl[(2 * q + 1, j_dof)]) / (2.0 * delta);
            acc -= dn * (w * pa.length * ph[1]);
        }
        let got = ops.w[(i_dof, j_dof)];
        assert!((got - acc).norm() <= 1e-6 * got.norm(), "pair {a},{b}: {got} vs {acc}");
    }
}

#[test]
fn block_solve_residual_is_small() {
    let sp = spaces(0.2, 2);
    let s = LaplaceFrequency::new(c(4.0, 7.0)).unwrap();
    let sys = assemble_frequency_system(&s, 0.8, 1.2, &sp).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let b = CVector::from_fn(sys.dim(), |_, _| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
    let x = sys.solve(&b).unwrap();
    let res = (sys.matrix() * &x - &b).norm() / b.norm();
    assert!(res <= 1e-12, "residual {res:e}");
}

#[test]
fn single_layer_norm_decreases_with_real_frequency() {
    let sp = spaces(0.3, 1);
    let mut last = f64::INFINITY;
    for sigma in [1.0, 4.0, 16.0, 64.0] {
        let v = assemble_all(&LaplaceFrequency::real(sigma).unwrap(), &sp).v;
        let norm = v.singular_values().max();
        assert!(norm < last, "‖V({sigma})‖ = {norm} did not decrease");
        last = norm;
    }
}

fn calderon_residual(h: f64, times: usize, p: usize, s: Complex64) -> f64 {
    let sp = refined_spaces(h, times, p);
    let f = LaplaceFrequency::new(s).unwrap();
    let src = PointSource { s: f, x0: Point::new(1.5, 1.6) };
    let lambda = project(&sp, Space::X, |x, n| src.normal_derivative(x, n));
    let phi = project(&sp, Space::Y, |x, _| src.value(x));
    let ops = assemble_all(&f, &sp);
    let half_m = ops.duality.map(|x| c(0.5 * x, 0.0));
    (&ops.v * &lambda - (half_m + &ops.k) * &phi).norm()
}

#[test]
fn calderon_residual_decays_at_order_p_plus_one() {
    for (p, h) in [(0, 0.2), (1, 0.2), (2, 0.4)] {
        for s in [c(1.0, 0.0), c(2.0, 3.0)] {
            let r1 = calderon_residual(h, 0, p, s);
            let r2 = calderon_residual(h, 1, p, s);
            let r3 = calderon_residual(h, 2, p, s);
            let rate = (r2 / r3).log2();
            println!("p = {p}, s = {s}: residuals {r1:e} {r2:e} {r3:e}, rate {rate:.2}");
            assert!(rate >= p as f64 + 1.0 - 0.3, "p = {p}, s = {s}: rate {rate}");
        }
    }
}

fn manufactured_errors(h: f64, times: usize, p: usize, s: Complex64) -> (f64, f64) {
    let (m, kappa) = (0.8, 1.2);
    let sp = refined_spaces(h, times, p);
    let f = LaplaceFrequency::new(s).unwrap();
    // the interior medium sees the frequency s/m
    let src = PointSource { s: f.scaled(m), x0: Point::new(1.5, 1.6) };
    let b1 = project(&sp, Space::X, |x, n| src.normal_derivative(x, n) * kappa);
    let b0 = project(&sp, Space::Y, |x, _| src.value(x));
    let mut data = CVector::zeros(sp.dim_x() + sp.dim_y());
    data.rows_mut(0, sp.dim_x()).copy_from(&b1);
    data.rows_mut(sp.dim_x(), sp.dim_y()).copy_from(&b0);
    let sys = assemble_frequency_system(&f, m, kappa, &sp).unwrap();
    let sol = sys.solve_data(&data).unwrap();
    let lambda = sol.rows(0, sp.dim_x()).into_owned();
    let phi = sol.rows(sp.dim_x(), sp.dim_y()).into_owned();
    (
        l2_error(&sp, Space::X, &lambda, |x, n| src.normal_derivative(x, n)),
        l2_error(&sp, Space::Y, &phi, |x, _| src.value(x)),
    )
}

#[test]
fn frequency_domain_manufactured_solution_converges() {
    for (p, h) in [(0, 0.1), (1, 0.2), (2, 0.4)] {
        let s = c(2.0, 3.0);
        let (l1, f1) = manufactured_errors(h, 1, p, s);
        let (l2, f2) = manufactured_errors(h, 2, p, s);
        let rl = (l1 / l2).log2();
        let rf = (f1 / f2).log2();
        println!("p = {p}: λ errors {l1:e} {l2:e} rate {rl:.2}; φ errors {f1:e} {f2:e} rate {rf:.2}");
        assert!(rl >= p as f64 + 1.0 - 0.3);
        assert!(rf >= p as f64 + 1.0 - 0.3);
    }
}

#[test]
fn representation_formula_reproduces_interior_solution() {
    let s = LaplaceFrequency::new(c(2.0, 1.0)).unwrap();
    let src = PointSource { s, x0: Point::new(1.5, 1.6) };
    let inside = [Point::new(0.4, 0.4), Point::new(0.6, 0.7)];
    let outside = [Point::new(1.2, 0.3), Point::new(-0.4, 0.6)];
    let pts: Vec<Point> = inside.iter().chain(outside.iter()).copied().collect();
    let mut errs = Vec::new();
    for times in [0, 1] {
        let sp = refined_spaces(0.2, times, 1);
        let lambda = project(&sp, Space::X, |x, n| src.normal_derivative(x, n));
        let phi = project(&sp, Space::Y, |x, _| src.value(x));
        let (sl, dl) = potential_matrices(&s, &sp, &pts).unwrap();
        let u = sl * lambda - dl * phi;
        let mut e: f64 = 0.0;
        for (i, x) in pts.iter().enumerate() {
            let exact = if i < inside.len() { src.value(x) } else { c(0.0, 0.0) };
            e = e.max((u[i] - exact).norm());
        }
        errs.push(e);
    }
    println!("representation errors {errs:?}");
    assert!(errs[1] < 1e-4);
    assert!((errs[0] / errs[1]).log2() >= 1.7);
}

#[test]
fn double_layer_jumps_by_minus_the_density() {
    let sp = spaces(0.2, 1);
    let s = LaplaceFrequency::new(c(1.0, 2.0)).unwrap();
    let phi = project(&sp, Space::Y, |x, _| c((2.0 * x.x).cos() + x.y, 0.0));
    let e = 5;
    let panel = sp.mesh().panel(e);
    let t = 0.37;
    let x = panel.point(t);
    let value = sp.evaluate(Space::Y, &phi.map(|z| z.re), e, t);
    let mut errs = Vec::new();
    for eps in [1e-2, 1e-3, 1e-4] {
        let pts = [x - panel.normal * eps, x + panel.normal * eps];
        let (_, dl) = potential_matrices(&s, &sp, &pts).unwrap();
        let d = &dl * &phi;
        errs.push((d[0] - d[1] + value).norm());
    }
    println!("jump errors {errs:?}");
    assert!(errs[2] < 1e-3 && errs[2] < errs[0]);
}

#[test]
fn single_layer_norm_matches_direct_quadratic_form() {
    let sp = spaces(0.3, 1);
    let norms = DiscreteNormOperators::new(&sp).unwrap();
    let v1 = assemble_all(&LaplaceFrequency::real(1.0).unwrap(), &sp).v;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let lam = nalgebra::DVector::from_fn(sp.dim_x(), |_, _| rng.gen_range(-1.0..1.0));
    let lc = lam.map(|x| c(x, 0.0));
    let direct = lc.dot(&(&v1 * &lc)).re.sqrt();
    let n = norms.norm(&lam, NormKind::HMinusHalf).unwrap();
    assert!((n - direct).abs() <= 1e-12 * direct);
}

#[test]
fn l2_norm_dominates_scaled_minus_half_norm() {
    let sp = spaces(0.3, 1);
    let norms = DiscreteNormOperators::new(&sp).unwrap();
    // generalized eigenvalues of (V(1), Gram) are positive, so c ‖v‖_{-1/2} ≤ ‖v‖_0 with c > 0
    let g = &norms.l2_x;
    let ginv_sqrt = g.map_diagonal(|d| 1.0 / d.sqrt());
    let scaled = nalgebra::DMatrix::from_diagonal(&ginv_sqrt) * &norms.h_minus_half
        * nalgebra::DMatrix::from_diagonal(&ginv_sqrt);
    let eig = scaled.symmetric_eigenvalues();
    assert!(eig.min() > 0.0);
    for i in 0..sp.dim_x() {
        let mut e = nalgebra::DVector::zeros(sp.dim_x());
        e[i] = 1.0;
        let c1 = 1.0 / eig.max().sqrt();
        assert!(c1 * norms.norm(&e, NormKind::HMinusHalf).unwrap() <= norms.norm(&e, NormKind::L2(Space::X)).unwrap() * (1.0 + 1e-12));
    }
}
