//! Discrete trace spaces on a panel mesh.
//!
//! `X_h` holds discontinuous piecewise polynomials of degree `p` (densities in
//! `H^{-1/2}`), `Y_h` globally continuous piecewise polynomials of degree `p + 1`
//! (densities in `H^{1/2}`). Both have `(p + 1)` unknowns per panel on a closed curve.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};
use crate::geometry::{BoundaryMesh, Panel, Point};
use crate::quadrature::{gauss_legendre, gauss_lobatto_points, Rule};

/// Which of the two discrete spaces a coefficient vector belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Space {
    /// Discontinuous `P_p`, the Neumann-type space.
    X,
    /// Continuous `P_{p+1}`, the Dirichlet-type space.
    Y,
}

/// The pair `X_h × Y_h` on a fixed mesh.
#[derive(Debug, Clone)]
pub struct TraceSpacePair {
    mesh: BoundaryMesh,
    degree: usize,
    lobatto: Vec<f64>,
    bary: Vec<f64>,
    rule: Rule,
    gram_y_chol: Cholesky<f64, Dyn>,
}

impl TraceSpacePair {
    pub fn new(mesh: BoundaryMesh, degree: usize) -> Result<Self> {
        let lobatto = gauss_lobatto_points(degree + 1);
        let bary = (0..lobatto.len())
            .map(|j| {
                1.0 / lobatto
                    .iter()
                    .enumerate()
                    .filter(|&(i, _)| i != j)
                    .map(|(_, x)| lobatto[j] - x)
                    .product::<f64>()
            })
            .collect();
        let rule = gauss_legendre(degree + 4);
        let mut spaces = TraceSpacePair {
            mesh,
            degree,
            lobatto,
            bary,
            rule,
            // placeholder, replaced below
            gram_y_chol: Cholesky::new(DMatrix::identity(1, 1)).unwrap(),
        };
        let gram = spaces.gram(Space::Y);
        spaces.gram_y_chol = Cholesky::new(gram)
            .ok_or_else(|| Error::SingularMatrix("Y_h mass matrix is not positive definite".into()))?;
        Ok(spaces)
    }

    pub fn mesh(&self) -> &BoundaryMesh {
        &self.mesh
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    /// Quadrature rule used for smooth panel integrals (`p + 4` Gauss points).
    pub fn rule(&self) -> &Rule {
        &self.rule
    }

    pub fn num_panels(&self) -> usize {
        self.mesh.num_panels()
    }

    /// Local basis functions per panel for `X_h`.
    pub fn local_x(&self) -> usize {
        self.degree + 1
    }

    /// Local basis functions per panel for `Y_h`.
    pub fn local_y(&self) -> usize {
        self.degree + 2
    }

    pub fn dim(&self, _space: Space) -> usize {
        (self.degree + 1) * self.mesh.num_panels()
    }

    pub fn dim_x(&self) -> usize {
        self.dim(Space::X)
    }

    pub fn dim_y(&self) -> usize {
        self.dim(Space::Y)
    }

    #[inline]
    pub fn x_dof(&self, panel: usize, local: usize) -> usize {
        panel * (self.degree + 1) + local
    }

    #[inline]
    pub fn y_dof(&self, panel: usize, local: usize) -> usize {
        if local <= self.degree {
            panel * (self.degree + 1) + local
        } else {
            self.mesh.next(panel) * (self.degree + 1)
        }
    }

    /// Global Y dofs of a panel, in local order.
    pub fn y_dofs(&self, panel: usize) -> Vec<usize> {
        (0..self.local_y()).map(|j| self.y_dof(panel, j)).collect()
    }

    /// Orthonormal Legendre basis of `X_h` on a panel at parameter `t ∈ [0, 1]`.
    #[inline]
    pub fn eval_x(&self, t: f64, out: &mut [f64]) {
        let x = 2.0 * t - 1.0;
        let (mut p0, mut p1) = (1.0, x);
        out[0] = 1.0;
        if self.degree >= 1 {
            out[1] = 3f64.sqrt() * x;
        }
        for k in 2..=self.degree {
            let kf = k as f64;
            let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
            p0 = p1;
            p1 = p2;
            out[k] = (2.0 * kf + 1.0).sqrt() * p2;
        }
    }

    /// Lagrange basis of `Y_h` (nodes at Gauss–Lobatto points) and its
    /// derivative with respect to the panel parameter `t`.
    #[inline]
    pub fn eval_y(&self, t: f64, vals: &mut [f64], ders: &mut [f64]) {
        let n = self.lobatto.len();
        for j in 0..n {
            let mut v = self.bary[j];
            let mut d = 0.0;
            for i in 0..n {
                if i == j {
                    continue;
                }
                let diff = t - self.lobatto[i];
                d = d * diff + v;
                v *= diff;
            }
            vals[j] = v;
            ders[j] = d;
        }
    }

    /// Lobatto nodes of the `Y_h` basis on a panel, on `[0, 1]`.
    pub fn y_nodes(&self) -> &[f64] {
        &self.lobatto
    }

    /// Value of a coefficient vector of `space` at parameter `t` on `panel`.
    pub fn evaluate(&self, space: Space, coeffs: &DVector<f64>, panel: usize, t: f64) -> f64 {
        match space {
            Space::X => {
                let mut b = vec![0.0; self.local_x()];
                self.eval_x(t, &mut b);
                b.iter()
                    .enumerate()
                    .map(|(i, v)| v * coeffs[self.x_dof(panel, i)])
                    .sum()
            }
            Space::Y => {
                let mut v = vec![0.0; self.local_y()];
                let mut d = vec![0.0; self.local_y()];
                self.eval_y(t, &mut v, &mut d);
                v.iter()
                    .enumerate()
                    .map(|(j, b)| b * coeffs[self.y_dof(panel, j)])
                    .sum()
            }
        }
    }

    /// L² Gram matrix of a space.
    pub fn gram(&self, space: Space) -> DMatrix<f64> {
        let n = self.dim(space);
        let mut g = DMatrix::zeros(n, n);
        match space {
            Space::X => {
                // orthonormal Legendre basis: block diagonal with the panel length
                for (e, p) in self.mesh.panels().iter().enumerate() {
                    for i in 0..self.local_x() {
                        let d = self.x_dof(e, i);
                        g[(d, d)] = p.length;
                    }
                }
            }
            Space::Y => {
                let ny = self.local_y();
                let rule = gauss_legendre(self.degree + 3);
                let mut v = vec![0.0; ny];
                let mut dv = vec![0.0; ny];
                for (e, p) in self.mesh.panels().iter().enumerate() {
                    let dofs = self.y_dofs(e);
                    for (t, w) in rule.iter() {
                        self.eval_y(t, &mut v, &mut dv);
                        for i in 0..ny {
                            for j in 0..ny {
                                g[(dofs[i], dofs[j])] += w * p.length * v[i] * v[j];
                            }
                        }
                    }
                }
            }
        }
        g
    }

    /// Duality matrix `M_ij = ⟨μ_i, φ_j⟩_Γ` between `X_h` and `Y_h`.
    pub fn duality(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.dim_x(), self.dim_y());
        let nx = self.local_x();
        let ny = self.local_y();
        let rule = gauss_legendre(self.degree + 3);
        let mut bx = vec![0.0; nx];
        let mut v = vec![0.0; ny];
        let mut dv = vec![0.0; ny];
        for (e, p) in self.mesh.panels().iter().enumerate() {
            let dofs = self.y_dofs(e);
            for (t, w) in rule.iter() {
                self.eval_x(t, &mut bx);
                self.eval_y(t, &mut v, &mut dv);
                for i in 0..nx {
                    for j in 0..ny {
                        m[(self.x_dof(e, i), dofs[j])] += w * p.length * bx[i] * v[j];
                    }
                }
            }
        }
        m
    }

    /// Load vector `∫_Γ f b_i` for a boundary function `f(x, ν(x))`.
    pub fn load<F>(&self, space: Space, f: F) -> DVector<f64>
    where
        F: Fn(&Point, &Point) -> f64,
    {
        let mut out = DVector::zeros(self.dim(space));
        let nx = self.local_x();
        let ny = self.local_y();
        let mut bx = vec![0.0; nx];
        let mut v = vec![0.0; ny];
        let mut dv = vec![0.0; ny];
        for (e, p) in self.mesh.panels().iter().enumerate() {
            for (t, w) in self.rule.iter() {
                let val = f(&p.point(t), &p.normal) * w * p.length;
                match space {
                    Space::X => {
                        self.eval_x(t, &mut bx);
                        for i in 0..nx {
                            out[self.x_dof(e, i)] += val * bx[i];
                        }
                    }
                    Space::Y => {
                        self.eval_y(t, &mut v, &mut dv);
                        for j in 0..ny {
                            out[self.y_dof(e, j)] += val * v[j];
                        }
                    }
                }
            }
        }
        out
    }

    /// Solves `Gram · c = rhs` for the given space.
    pub fn solve_gram(&self, space: Space, rhs: &DVector<f64>) -> Result<DVector<f64>> {
        if rhs.len() != self.dim(space) {
            return Err(Error::DimensionMismatch {
                expected: self.dim(space),
                found: rhs.len(),
            });
        }
        Ok(match space {
            Space::X => {
                let mut c = rhs.clone();
                for (e, p) in self.mesh.panels().iter().enumerate() {
                    for i in 0..self.local_x() {
                        c[self.x_dof(e, i)] /= p.length;
                    }
                }
                c
            }
            Space::Y => self.gram_y_chol.solve(rhs),
        })
    }

    /// L² projection of `f(x, ν(x))` onto a space.
    pub fn l2_project<F>(&self, space: Space, f: F) -> Result<DVector<f64>>
    where
        F: Fn(&Point, &Point) -> f64,
    {
        let rhs = self.load(space, f);
        self.solve_gram(space, &rhs)
    }

    /// `‖f − f_h‖_{L²(Γ)}` by panel quadrature of the exact function.
    pub fn l2_error<F>(&self, space: Space, coeffs: &DVector<f64>, f: F) -> f64
    where
        F: Fn(&Point, &Point) -> f64,
    {
        let rule = gauss_legendre(self.degree + 6);
        let mut acc = 0.0;
        for (e, p) in self.mesh.panels().iter().enumerate() {
            for (t, w) in rule.iter() {
                let diff = f(&p.point(t), &p.normal) - self.evaluate(space, coeffs, e, t);
                acc += w * p.length * diff * diff;
            }
        }
        acc.sqrt()
    }

    pub(crate) fn panel(&self, i: usize) -> &Panel {
        self.mesh.panel(i)
    }
}

/// Which discrete norm to compute.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormKind {
    L2(Space),
    /// Energy norm of `W(1)` plus the `L²` Gram on `Y_h`.
    HHalf,
    /// Energy norm of `V(1)` on `X_h`.
    HMinusHalf,
}

/// Gram matrices realising the discrete norms.
#[derive(Debug, Clone)]
pub struct DiscreteNormOperators {
    pub l2_x: DMatrix<f64>,
    pub l2_y: DMatrix<f64>,
    pub h_minus_half: DMatrix<f64>,
    pub h_half: DMatrix<f64>,
}

impl DiscreteNormOperators {
    pub fn new(spaces: &TraceSpacePair) -> Result<Self> {
        let one = crate::kernel::LaplaceFrequency::real(1.0)?;
        let ops = crate::operators::assemble_all(&one, spaces);
        let l2_y = spaces.gram(Space::Y);
        let v1 = ops.v.map(|c| c.re);
        let w1 = ops.w.map(|c| c.re);
        Ok(DiscreteNormOperators {
            l2_x: spaces.gram(Space::X),
            h_minus_half: (&v1 + v1.transpose()) * 0.5,
            h_half: (&w1 + w1.transpose()) * 0.5 + &l2_y,
            l2_y,
        })
    }

    pub fn matrix(&self, kind: NormKind) -> &DMatrix<f64> {
        match kind {
            NormKind::L2(Space::X) => &self.l2_x,
            NormKind::L2(Space::Y) => &self.l2_y,
            NormKind::HHalf => &self.h_half,
            NormKind::HMinusHalf => &self.h_minus_half,
        }
    }

    /// `sqrt(vᵀ G v)`.
    pub fn norm(&self, v: &DVector<f64>, kind: NormKind) -> Result<f64> {
        let g = self.matrix(kind);
        if v.len() != g.nrows() {
            return Err(Error::DimensionMismatch {
                expected: g.nrows(),
                found: v.len(),
            });
        }
        Ok(v.dot(&(g * v)).max(0.0).sqrt())
    }
}
