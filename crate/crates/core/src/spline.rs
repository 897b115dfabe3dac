//! Tensor-product quadratic B-spline spaces on the square `[0, L]²`.
//!
//! Basis functions are indexed lexicographically, row-major: the function
//! with x-index `i` and y-index `j` has global index `j * n1 + i`, where
//! `n1 = elements_per_side + 2` is the number of functions per direction.

use std::sync::{Arc, OnceLock};

use crate::error::{Error, Result};
use crate::linalg::{cg_solve, SparseMatrix};

pub const DEGREE: usize = 2;
/// Local basis functions per direction on one element.
pub(crate) const LOCAL_1D: usize = DEGREE + 1;
/// Local basis functions per element.
pub(crate) const LOCAL: usize = LOCAL_1D * LOCAL_1D;

const MASS_SOLVE_TOL: f64 = 1e-12;

/// Gauss-Legendre rule mapped to `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    points: Vec<f64>,
    weights: Vec<f64>,
}

impl QuadratureRule {
    pub fn gauss(n: usize) -> Self {
        assert!(n >= 1, "quadrature needs at least one point");
        let mut points = vec![0.0; n];
        let mut weights = vec![0.0; n];
        for i in 0..n {
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (mut p0, mut p1) = (1.0, x);
                for k in 2..=n {
                    let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                    p0 = p1;
                    p1 = p2;
                }
                let pn = if n == 1 { x } else { p1 };
                let pm = if n == 1 { 1.0 } else { p0 };
                dp = n as f64 * (x * pn - pm) / (x * x - 1.0);
                let dx = pn / dp;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            // ascending order on [0, 1]
            points[n - 1 - i] = 0.5 * (1.0 + x);
            weights[n - 1 - i] = 1.0 / ((1.0 - x * x) * dp * dp);
        }
        QuadratureRule { points, weights }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

/// Values and physical first derivatives of the three nonzero 1-D basis
/// functions at one point. `first` is the index of the first of them.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Basis1d {
    pub first: usize,
    pub val: [f64; LOCAL_1D],
    pub der: [f64; LOCAL_1D],
}

/// 1-D basis data at the quadrature points of one element.
#[derive(Debug, Clone)]
pub(crate) struct ElementBasis1d {
    pub val: Vec<[f64; LOCAL_1D]>,
    pub der: Vec<[f64; LOCAL_1D]>,
    /// Quadrature weights scaled by the physical element length.
    pub weight: Vec<f64>,
}

/// Tensor-product C¹ quadratic B-spline space on `[0, L]²` with open
/// uniform knots.
#[derive(Debug)]
pub struct SplineSpace {
    elements_per_side: usize,
    domain_side: f64,
    knots: Vec<f64>,
    quadrature: QuadratureRule,
    element_basis: Vec<ElementBasis1d>,
    dirichlet_mask: Vec<bool>,
    mass: OnceLock<SparseMatrix>,
    mass_constrained: OnceLock<SparseMatrix>,
    stiffness: OnceLock<SparseMatrix>,
    block_pattern: OnceLock<SparseMatrix>,
}

impl SplineSpace {
    /// Space with the default 3×3 Gauss rule per element.
    pub fn new(elements_per_side: usize, domain_side: f64) -> Result<Arc<Self>> {
        Self::with_quadrature(elements_per_side, domain_side, QuadratureRule::gauss(3))
    }

    pub fn with_quadrature(
        elements_per_side: usize,
        domain_side: f64,
        quadrature: QuadratureRule,
    ) -> Result<Arc<Self>> {
        if elements_per_side < 2 {
            return Err(Error::Config(format!(
                "elements_per_side must be >= 2 (got {elements_per_side})"
            )));
        }
        if !(domain_side > 0.0 && domain_side.is_finite()) {
            return Err(Error::Config(format!(
                "domain side must be positive (got {domain_side})"
            )));
        }
        let ne = elements_per_side;
        let mut knots = vec![0.0; DEGREE];
        knots.extend((0..=ne).map(|k| k as f64 / ne as f64));
        knots.extend(std::iter::repeat(1.0).take(DEGREE));

        let n1 = ne + DEGREE;
        let dirichlet_mask = (0..n1 * n1)
            .map(|a| {
                let (i, j) = (a % n1, a / n1);
                i == 0 || j == 0 || i == n1 - 1 || j == n1 - 1
            })
            .collect();

        let mut space = SplineSpace {
            elements_per_side: ne,
            domain_side,
            knots,
            quadrature,
            element_basis: Vec::new(),
            dirichlet_mask,
            mass: OnceLock::new(),
            mass_constrained: OnceLock::new(),
            stiffness: OnceLock::new(),
            block_pattern: OnceLock::new(),
        };
        let h = domain_side / ne as f64;
        space.element_basis = (0..ne)
            .map(|e| {
                let mut eb = ElementBasis1d {
                    val: Vec::new(),
                    der: Vec::new(),
                    weight: Vec::new(),
                };
                for (&xi, &w) in space.quadrature.points().iter().zip(space.quadrature.weights()) {
                    let u = (e as f64 + xi) / ne as f64;
                    let b = space.basis_1d_in_element(e, u);
                    eb.val.push(b.val);
                    eb.der.push(b.der);
                    eb.weight.push(w * h);
                }
                eb
            })
            .collect();
        Ok(Arc::new(space))
    }

    pub fn degree(&self) -> usize {
        DEGREE
    }

    pub fn elements_per_side(&self) -> usize {
        self.elements_per_side
    }

    pub fn domain_side(&self) -> f64 {
        self.domain_side
    }

    pub fn element_size(&self) -> f64 {
        self.domain_side / self.elements_per_side as f64
    }

    /// Knot vector in parametric coordinates (identical in both directions).
    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    /// Basis functions per direction.
    pub fn n1(&self) -> usize {
        self.elements_per_side + DEGREE
    }

    /// Total number of basis functions `n_f`.
    pub fn n_f(&self) -> usize {
        self.n1() * self.n1()
    }

    pub fn quadrature(&self) -> &QuadratureRule {
        &self.quadrature
    }

    /// True for the functions with nonzero trace on the boundary; these are
    /// the control variables fixed to zero in the zero-trace subspace.
    pub fn dirichlet_mask(&self) -> &[bool] {
        &self.dirichlet_mask
    }

    pub(crate) fn element_basis(&self) -> &[ElementBasis1d] {
        &self.element_basis
    }

    /// Two spaces are interchangeable when they share mesh and domain.
    pub fn same_as(&self, other: &SplineSpace) -> bool {
        std::ptr::eq(self, other)
            || (self.elements_per_side == other.elements_per_side
                && self.domain_side == other.domain_side)
    }

    fn basis_1d_in_element(&self, e: usize, u: f64) -> Basis1d {
        let span = e + DEGREE;
        let (val, dval) = basis_funs_with_derivative(span, u, &self.knots);
        let scale = 1.0 / self.domain_side;
        Basis1d {
            first: e,
            val,
            der: [dval[0] * scale, dval[1] * scale, dval[2] * scale],
        }
    }

    /// 1-D basis at physical coordinate `x`, which must lie in `[0, L]`.
    pub(crate) fn basis_1d(&self, x: f64) -> Basis1d {
        let u = (x / self.domain_side).clamp(0.0, 1.0);
        let ne = self.elements_per_side;
        let e = ((u * ne as f64).floor() as usize).min(ne - 1);
        self.basis_1d_in_element(e, u)
    }

    fn check_point(&self, x: f64, y: f64) -> Result<()> {
        let tol = 1e-12 * self.domain_side;
        let inside = |v: f64| v >= -tol && v <= self.domain_side + tol;
        if inside(x) && inside(y) {
            Ok(())
        } else {
            Err(Error::OutsideDomain {
                x,
                y,
                side: self.domain_side,
            })
        }
    }

    /// Values of all basis functions with support containing `(x, y)`, as
    /// (global index, value) pairs.
    pub fn basis_at(&self, x: f64, y: f64) -> Result<Vec<(usize, f64)>> {
        self.check_point(x, y)?;
        let (bx, by) = (self.basis_1d(x), self.basis_1d(y));
        let n1 = self.n1();
        let mut out = Vec::with_capacity(LOCAL);
        for b in 0..LOCAL_1D {
            for a in 0..LOCAL_1D {
                out.push(((by.first + b) * n1 + bx.first + a, bx.val[a] * by.val[b]));
            }
        }
        Ok(out)
    }

    /// Consistent mass matrix `M_AB = ∫ N_A N_B dx`.
    pub fn mass_matrix(&self) -> &SparseMatrix {
        self.mass.get_or_init(|| self.assemble_bilinear(1.0, 0.0))
    }

    /// Stiffness matrix `K_AB = ∫ ∇N_A · ∇N_B dx`.
    pub fn stiffness_matrix(&self) -> &SparseMatrix {
        self.stiffness.get_or_init(|| self.assemble_bilinear(0.0, 1.0))
    }

    /// Mass matrix with identity rows and columns on the Dirichlet mask.
    fn mass_matrix_constrained(&self) -> &SparseMatrix {
        self.mass_constrained.get_or_init(|| {
            let mut m = self.mass_matrix().clone();
            m.set_identity_rows_cols(&self.dirichlet_mask);
            m
        })
    }

    /// Empty matrix with the scalar sparsity pattern of this space.
    pub fn scalar_pattern(&self) -> SparseMatrix {
        let n1 = self.n1();
        SparseMatrix::from_pattern(
            self.n_f(),
            (0..self.n_f()).map(|a| {
                let w = window(a, n1);
                let mut cols = Vec::with_capacity(w.len());
                for j in w.jlo..=w.jhi {
                    for i in w.ilo..=w.ihi {
                        cols.push(j * n1 + i);
                    }
                }
                cols
            }),
        )
    }

    /// Empty 3×3 block matrix for three coupled fields. Row `f·n_f + A`
    /// holds the window of `A` once per column block, so entry `(f, g, A, B)`
    /// sits at `f·3·nnz + 3·row_ptr[A] + g·len(A) + offset(A, B)` where
    /// `nnz` and `row_ptr` refer to [`Self::scalar_pattern`].
    pub(crate) fn block_pattern(&self) -> &SparseMatrix {
        self.block_pattern.get_or_init(|| {
            let n = self.n_f();
            let n1 = self.n1();
            SparseMatrix::from_pattern(
                3 * n,
                (0..3 * n).map(|r| {
                    let w = window(r % n, n1);
                    let mut cols = Vec::with_capacity(3 * w.len());
                    for g in 0..3 {
                        for j in w.jlo..=w.jhi {
                            for i in w.ilo..=w.ihi {
                                cols.push(g * n + j * n1 + i);
                            }
                        }
                    }
                    cols
                }),
            )
        })
    }

    fn assemble_bilinear(&self, mass_coeff: f64, stiff_coeff: f64) -> SparseMatrix {
        let mut m = self.scalar_pattern();
        let n1 = self.n1();
        let ne = self.elements_per_side;
        let nq = self.quadrature.len();
        let row_ptr = m.row_ptr().to_vec();
        let vals = m.values_mut();
        for ey in 0..ne {
            let eby = &self.element_basis[ey];
            for ex in 0..ne {
                let ebx = &self.element_basis[ex];
                let mut local = [[0.0; LOCAL]; LOCAL];
                for qy in 0..nq {
                    for qx in 0..nq {
                        let w = ebx.weight[qx] * eby.weight[qy];
                        let (n, gx, gy) = tensor_basis(ebx, eby, qx, qy);
                        for l in 0..LOCAL {
                            for k in 0..LOCAL {
                                local[l][k] += w
                                    * (mass_coeff * n[l] * n[k]
                                        + stiff_coeff * (gx[l] * gx[k] + gy[l] * gy[k]));
                            }
                        }
                    }
                }
                let idx = element_indices(ex, ey, n1);
                for l in 0..LOCAL {
                    let base = row_ptr[idx[l]];
                    let w = window(idx[l], n1);
                    for k in 0..LOCAL {
                        vals[base + w.offset(idx[k], n1)] += local[l][k];
                    }
                }
            }
        }
        m
    }

    /// Load vector `b_A = ∫ f N_A dx`, integrating each element on a
    /// `subcells × subcells` grid of Gauss rules.
    pub fn load_vector(&self, f: &dyn Fn(f64, f64) -> f64, subcells: usize) -> Vec<f64> {
        let subcells = subcells.max(1);
        let n1 = self.n1();
        let ne = self.elements_per_side;
        let h = self.element_size();
        let q = &self.quadrature;
        // 1-D data at every sub-quadrature point of every element
        let sub: Vec<Vec<(f64, Basis1d, f64)>> = (0..ne)
            .map(|e| {
                let mut pts = Vec::with_capacity(subcells * q.len());
                for s in 0..subcells {
                    for (&xi, &w) in q.points().iter().zip(q.weights()) {
                        let local = (s as f64 + xi) / subcells as f64;
                        let u = (e as f64 + local) / ne as f64;
                        let b = self.basis_1d_in_element(e, u);
                        pts.push((u * self.domain_side, b, w * h / subcells as f64));
                    }
                }
                pts
            })
            .collect();
        let mut out = vec![0.0; self.n_f()];
        for ey in 0..ne {
            for ex in 0..ne {
                let idx = element_indices(ex, ey, n1);
                let mut local = [0.0; LOCAL];
                for (y, by, wy) in &sub[ey] {
                    for (x, bx, wx) in &sub[ex] {
                        let fv = f(*x, *y) * wx * wy;
                        for b in 0..LOCAL_1D {
                            for a in 0..LOCAL_1D {
                                local[b * LOCAL_1D + a] += fv * bx.val[a] * by.val[b];
                            }
                        }
                    }
                }
                for l in 0..LOCAL {
                    out[idx[l]] += local[l];
                }
            }
        }
        out
    }

    /// Solves the Gram system `M c = b`, optionally over the zero-trace
    /// subspace (masked entries of `b` are ignored and of `c` are zero).
    pub fn solve_mass(&self, b: &[f64], zero_trace: bool) -> Result<Vec<f64>> {
        if zero_trace {
            let mut rhs = b.to_vec();
            for (r, &m) in rhs.iter_mut().zip(&self.dirichlet_mask) {
                if m {
                    *r = 0.0;
                }
            }
            let (x, _, _) = cg_solve(self.mass_matrix_constrained(), &rhs, MASS_SOLVE_TOL, 10_000)?;
            Ok(x)
        } else {
            let (x, _, _) = cg_solve(self.mass_matrix(), b, MASS_SOLVE_TOL, 10_000)?;
            Ok(x)
        }
    }

    /// Uniform evaluation grid with `cells` cells per side and the given
    /// Gauss rule inside each cell: returns 1-D points and weights.
    pub(crate) fn sampling_axis(&self, cells: usize, rule: &QuadratureRule) -> (Vec<f64>, Vec<f64>) {
        let h = self.domain_side / cells as f64;
        let mut xs = Vec::with_capacity(cells * rule.len());
        let mut ws = Vec::with_capacity(cells * rule.len());
        for c in 0..cells {
            for (&p, &w) in rule.points().iter().zip(rule.weights()) {
                xs.push((c as f64 + p) * h);
                ws.push(w * h);
            }
        }
        (xs, ws)
    }
}

/// Global indices of the 9 functions supported on element (ex, ey), local
/// index `b * 3 + a`.
#[inline]
pub(crate) fn element_indices(ex: usize, ey: usize, n1: usize) -> [usize; LOCAL] {
    let mut idx = [0; LOCAL];
    for b in 0..LOCAL_1D {
        for a in 0..LOCAL_1D {
            idx[b * LOCAL_1D + a] = (ey + b) * n1 + ex + a;
        }
    }
    idx
}

#[inline]
pub(crate) fn tensor_basis(
    ebx: &ElementBasis1d,
    eby: &ElementBasis1d,
    qx: usize,
    qy: usize,
) -> ([f64; LOCAL], [f64; LOCAL], [f64; LOCAL]) {
    let (vx, dx) = (&ebx.val[qx], &ebx.der[qx]);
    let (vy, dy) = (&eby.val[qy], &eby.der[qy]);
    let mut n = [0.0; LOCAL];
    let mut gx = [0.0; LOCAL];
    let mut gy = [0.0; LOCAL];
    for b in 0..LOCAL_1D {
        for a in 0..LOCAL_1D {
            let l = b * LOCAL_1D + a;
            n[l] = vx[a] * vy[b];
            gx[l] = dx[a] * vy[b];
            gy[l] = vx[a] * dy[b];
        }
    }
    (n, gx, gy)
}

/// Column window of row `a` in the scalar pattern: all functions whose
/// index differs by at most the degree in each direction.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Window {
    pub ilo: usize,
    pub ihi: usize,
    pub jlo: usize,
    pub jhi: usize,
}

impl Window {
    #[inline]
    pub fn width(&self) -> usize {
        self.ihi - self.ilo + 1
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.width() * (self.jhi - self.jlo + 1)
    }

    /// Offset of column `b` inside the row.
    #[inline]
    pub fn offset(&self, b: usize, n1: usize) -> usize {
        let (i, j) = (b % n1, b / n1);
        debug_assert!(i >= self.ilo && i <= self.ihi && j >= self.jlo && j <= self.jhi);
        (j - self.jlo) * self.width() + (i - self.ilo)
    }
}

#[inline]
pub(crate) fn window(a: usize, n1: usize) -> Window {
    let (i, j) = (a % n1, a / n1);
    Window {
        ilo: i.saturating_sub(DEGREE),
        ihi: (i + DEGREE).min(n1 - 1),
        jlo: j.saturating_sub(DEGREE),
        jhi: (j + DEGREE).min(n1 - 1),
    }
}

/// Cox-de Boor values and first parametric derivatives of the `DEGREE + 1`
/// functions nonzero on knot span `span`.
fn basis_funs_with_derivative(
    span: usize,
    u: f64,
    knots: &[f64],
) -> ([f64; LOCAL_1D], [f64; LOCAL_1D]) {
    let p = DEGREE;
    // ndu[j][r]: upper triangle holds basis values, lower the knot differences.
    let mut ndu = [[0.0; LOCAL_1D]; LOCAL_1D];
    let mut left = [0.0; LOCAL_1D];
    let mut right = [0.0; LOCAL_1D];
    ndu[0][0] = 1.0;
    for j in 1..=p {
        left[j] = u - knots[span + 1 - j];
        right[j] = knots[span + j] - u;
        let mut saved = 0.0;
        for r in 0..j {
            ndu[j][r] = right[r + 1] + left[j - r];
            let temp = ndu[r][j - 1] / ndu[j][r];
            ndu[r][j] = saved + right[r + 1] * temp;
            saved = left[j - r] * temp;
        }
        ndu[j][j] = saved;
    }
    let mut val = [0.0; LOCAL_1D];
    for (j, v) in val.iter_mut().enumerate() {
        *v = ndu[j][p];
    }
    // First derivative from the degree p-1 values:
    // N'_{i,p} = p/(u_{i+p}-u_i) N_{i,p-1} - p/(u_{i+p+1}-u_{i+1}) N_{i+1,p-1}
    let mut der = [0.0; LOCAL_1D];
    let lower: [f64; LOCAL_1D - 1] = [ndu[0][p - 1], ndu[1][p - 1]];
    for (r, d) in der.iter_mut().enumerate() {
        let i = span - p + r; // global index of this function
        let mut acc = 0.0;
        if r >= 1 {
            let denom = knots[i + p] - knots[i];
            if denom > 0.0 {
                acc += p as f64 / denom * lower[r - 1];
            }
        }
        if r < p {
            let denom = knots[i + p + 1] - knots[i + 1];
            if denom > 0.0 {
                acc -= p as f64 / denom * lower[r];
            }
        }
        *d = acc;
    }
    (val, der)
}

/// Coefficient vector of one scalar unknown in a [`SplineSpace`].
#[derive(Debug, Clone)]
pub struct Field {
    space: Arc<SplineSpace>,
    coeffs: Vec<f64>,
}

impl Field {
    pub fn new(space: Arc<SplineSpace>, coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.len() != space.n_f() {
            return Err(Error::Dimension {
                expected: space.n_f(),
                got: coeffs.len(),
            });
        }
        Ok(Field { space, coeffs })
    }

    pub fn zeros(space: Arc<SplineSpace>) -> Self {
        let n = space.n_f();
        Field {
            space,
            coeffs: vec![0.0; n],
        }
    }

    pub fn constant(space: Arc<SplineSpace>, value: f64) -> Self {
        let n = space.n_f();
        Field {
            space,
            coeffs: vec![value; n],
        }
    }

    pub fn space(&self) -> &Arc<SplineSpace> {
        &self.space
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [f64] {
        &mut self.coeffs
    }

    pub fn into_coeffs(self) -> Vec<f64> {
        self.coeffs
    }

    pub fn with_coeffs(&self, coeffs: Vec<f64>) -> Result<Self> {
        Field::new(self.space.clone(), coeffs)
    }

    /// True when every masked (boundary) coefficient is exactly zero.
    pub fn has_zero_trace(&self) -> bool {
        self.coeffs
            .iter()
            .zip(self.space.dirichlet_mask())
            .all(|(&c, &m)| !m || c == 0.0)
    }

    /// Zeroes the boundary control variables.
    pub fn apply_zero_trace(&mut self) {
        let mask = self.space.dirichlet_mask().to_vec();
        for (c, m) in self.coeffs.iter_mut().zip(mask) {
            if m {
                *c = 0.0;
            }
        }
    }

    pub fn evaluate(&self, x: f64, y: f64) -> Result<f64> {
        self.space.check_point(x, y)?;
        let (bx, by) = (self.space.basis_1d(x), self.space.basis_1d(y));
        let n1 = self.space.n1();
        let mut v = 0.0;
        for b in 0..LOCAL_1D {
            let row = (by.first + b) * n1 + bx.first;
            for a in 0..LOCAL_1D {
                v += self.coeffs[row + a] * bx.val[a] * by.val[b];
            }
        }
        Ok(v)
    }

    pub fn evaluate_gradient(&self, x: f64, y: f64) -> Result<[f64; 2]> {
        self.space.check_point(x, y)?;
        let (bx, by) = (self.space.basis_1d(x), self.space.basis_1d(y));
        let n1 = self.space.n1();
        let mut g = [0.0; 2];
        for b in 0..LOCAL_1D {
            let row = (by.first + b) * n1 + bx.first;
            for a in 0..LOCAL_1D {
                let c = self.coeffs[row + a];
                g[0] += c * bx.der[a] * by.val[b];
                g[1] += c * bx.val[a] * by.der[b];
            }
        }
        Ok(g)
    }

    /// Values on the tensor grid `xs × ys`, returned with `x` fastest.
    pub fn evaluate_grid(&self, xs: &[f64], ys: &[f64]) -> Result<Vec<f64>> {
        for &x in xs {
            self.space.check_point(x, 0.0)?;
        }
        for &y in ys {
            self.space.check_point(0.0, y)?;
        }
        let bxs: Vec<Basis1d> = xs.iter().map(|&x| self.space.basis_1d(x)).collect();
        let n1 = self.space.n1();
        let mut out = Vec::with_capacity(xs.len() * ys.len());
        for &y in ys {
            let by = self.space.basis_1d(y);
            // collapse the y-direction first: one row of partial sums per x-index
            let mut partial = vec![0.0; n1];
            for b in 0..LOCAL_1D {
                let row = &self.coeffs[(by.first + b) * n1..(by.first + b + 1) * n1];
                for (p, c) in partial.iter_mut().zip(row) {
                    *p += by.val[b] * c;
                }
            }
            for bx in &bxs {
                let mut v = 0.0;
                for a in 0..LOCAL_1D {
                    v += bx.val[a] * partial[bx.first + a];
                }
                out.push(v);
            }
        }
        Ok(out)
    }

    fn check_same_space(&self, other: &Field) -> Result<()> {
        if self.space.same_as(&other.space) {
            Ok(())
        } else {
            Err(Error::SpaceMismatch)
        }
    }

    /// `∫ u v dx` through the mass matrix.
    pub fn l2_inner(&self, other: &Field) -> Result<f64> {
        self.check_same_space(other)?;
        Ok(l2_inner_coeffs(&self.space, &self.coeffs, &other.coeffs))
    }

    pub fn l2_norm(&self) -> f64 {
        l2_inner_coeffs(&self.space, &self.coeffs, &self.coeffs).max(0.0).sqrt()
    }

    /// `∫ u dx`, exact for the spline.
    pub fn integral(&self) -> f64 {
        let one = vec![1.0; self.coeffs.len()];
        l2_inner_coeffs(&self.space, &self.coeffs, &one)
    }

    pub fn sub(&self, other: &Field) -> Result<Field> {
        self.check_same_space(other)?;
        let c = self.coeffs.iter().zip(&other.coeffs).map(|(a, b)| a - b).collect();
        Ok(Field {
            space: self.space.clone(),
            coeffs: c,
        })
    }

    /// `self + alpha * other`
    pub fn add_scaled(&self, alpha: f64, other: &Field) -> Result<Field> {
        self.check_same_space(other)?;
        let c = self
            .coeffs
            .iter()
            .zip(&other.coeffs)
            .map(|(a, b)| a + alpha * b)
            .collect();
        Ok(Field {
            space: self.space.clone(),
            coeffs: c,
        })
    }

    pub fn map_coeffs(&self, f: impl Fn(f64) -> f64) -> Field {
        Field {
            space: self.space.clone(),
            coeffs: self.coeffs.iter().map(|&c| f(c)).collect(),
        }
    }
}

pub(crate) fn l2_inner_coeffs(space: &SplineSpace, u: &[f64], v: &[f64]) -> f64 {
    let mv = space.mass_matrix().matvec(v);
    crate::linalg::dot(u, &mv)
}

/// Subcells per element used when projecting analytic functions.
pub const DEFAULT_PROJECTION_SUBCELLS: usize = 2;

/// L² projection of an analytic function onto the space (or its zero-trace
/// subspace).
pub fn l2_project(
    f: &dyn Fn(f64, f64) -> f64,
    space: &Arc<SplineSpace>,
    zero_trace: bool,
) -> Result<Field> {
    l2_project_with(f, space, zero_trace, DEFAULT_PROJECTION_SUBCELLS)
}

pub fn l2_project_with(
    f: &dyn Fn(f64, f64) -> f64,
    space: &Arc<SplineSpace>,
    zero_trace: bool,
    subcells: usize,
) -> Result<Field> {
    let b = space.load_vector(f, subcells);
    let c = space.solve_mass(&b, zero_trace)?;
    Field::new(space.clone(), c)
}

/// L² projection of a spline field onto another space on the same domain.
/// Quadrature subcells follow the mesh ratio so nested meshes integrate
/// exactly.
pub fn transfer(field: &Field, target: &Arc<SplineSpace>, zero_trace: bool) -> Result<Field> {
    let src = field.space();
    if (src.domain_side() - target.domain_side()).abs() > 1e-12 * src.domain_side() {
        return Err(Error::SpaceMismatch);
    }
    if src.same_as(target) {
        let mut out = Field::new(target.clone(), field.coeffs().to_vec())?;
        if zero_trace {
            out.apply_zero_trace();
        }
        return Ok(out);
    }
    let ratio = (src.elements_per_side() as f64 / target.elements_per_side() as f64).ceil();
    let subcells = (ratio as usize).max(1);
    let eval = |x: f64, y: f64| field.evaluate(x, y).unwrap_or(0.0);
    l2_project_with(&eval, target, zero_trace, subcells)
}
