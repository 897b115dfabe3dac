//! Compressed-row sparse matrices and the Krylov solvers used by every
//! implicit solve: left-preconditioned GMRES for the nonsymmetric Newton
//! systems and Jacobi-preconditioned CG for mass (Gram) systems.

use crate::error::{Error, Result};

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `y += alpha * x`
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Square CSR matrix. Column indices are sorted within each row and unique.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    /// Builds a matrix from a row-wise column structure with zero values.
    /// Each row's columns must be strictly increasing.
    pub fn from_pattern(n: usize, rows: impl IntoIterator<Item = Vec<usize>>) -> Self {
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col_idx = Vec::new();
        row_ptr.push(0);
        for cols in rows {
            debug_assert!(cols.windows(2).all(|w| w[0] < w[1]));
            debug_assert!(cols.iter().all(|&c| c < n));
            col_idx.extend_from_slice(&cols);
            row_ptr.push(col_idx.len());
        }
        assert_eq!(row_ptr.len(), n + 1, "pattern row count mismatch");
        let values = vec![0.0; col_idx.len()];
        SparseMatrix {
            n,
            row_ptr,
            col_idx,
            values,
        }
    }

    /// Builds from (row, col, value) triplets, summing duplicates.
    pub fn from_triplets(n: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        for &(r, c, v) in triplets {
            assert!(r < n && c < n, "triplet ({r}, {c}) out of range for n = {n}");
            rows[r].push((c, v));
        }
        let mut row_ptr = vec![0];
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        for mut row in rows {
            row.sort_by_key(|e| e.0);
            for (c, v) in row {
                if col_idx.len() > *row_ptr.last().unwrap() && *col_idx.last().unwrap() == c {
                    *values.last_mut().unwrap() += v;
                } else {
                    col_idx.push(c);
                    values.push(v);
                }
            }
            row_ptr.push(col_idx.len());
        }
        SparseMatrix {
            n,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn identity(n: usize) -> Self {
        let triplets: Vec<_> = (0..n).map(|i| (i, i, 1.0)).collect();
        Self::from_triplets(n, &triplets)
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    pub fn col_idx(&self) -> &[usize] {
        &self.col_idx
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        (&self.col_idx[r.clone()], &self.values[r])
    }

    /// Position of entry (i, j) in the value array, if structurally present.
    pub fn position(&self, i: usize, j: usize) -> Option<usize> {
        let start = self.row_ptr[i];
        let cols = &self.col_idx[start..self.row_ptr[i + 1]];
        cols.binary_search(&j).ok().map(|k| start + k)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.position(i, j).map_or(0.0, |p| self.values[p])
    }

    pub fn fill_zero(&mut self) {
        self.values.iter_mut().for_each(|v| *v = 0.0);
    }

    /// `y = A x`
    pub fn matvec_into(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n);
        debug_assert_eq!(y.len(), self.n);
        for (i, yi) in y.iter_mut().enumerate() {
            let (s, e) = (self.row_ptr[i], self.row_ptr[i + 1]);
            let mut acc = 0.0;
            for k in s..e {
                acc += self.values[k] * x[self.col_idx[k]];
            }
            *yi = acc;
        }
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        self.matvec_into(x, &mut y);
        y
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    /// Replaces each masked row by the corresponding identity row.
    /// The diagonal must be structurally present.
    pub fn set_identity_rows(&mut self, mask: &[bool]) {
        for (i, &m) in mask.iter().enumerate() {
            if !m {
                continue;
            }
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                self.values[k] = if self.col_idx[k] == i { 1.0 } else { 0.0 };
            }
        }
    }

    /// Identity rows and identity columns on the mask; used for constrained
    /// symmetric systems so that symmetry survives the constraint.
    pub fn set_identity_rows_cols(&mut self, mask: &[bool]) {
        for i in 0..self.n {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                let j = self.col_idx[k];
                if mask[i] || mask[j] {
                    self.values[k] = if i == j { 1.0 } else { 0.0 };
                }
            }
        }
    }

    pub fn transpose(&self) -> SparseMatrix {
        let mut triplets = Vec::with_capacity(self.nnz());
        for i in 0..self.n {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                triplets.push((j, i, v));
            }
        }
        SparseMatrix::from_triplets(self.n, &triplets)
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preconditioner {
    None,
    Jacobi,
}

/// GMRES configuration. The tolerance is relative and applies to the
/// left-preconditioned residual `‖D⁻¹(b − Ax)‖ ≤ tol ‖D⁻¹b‖`; the outcome
/// reports the unpreconditioned residual as well.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GmresConfig {
    pub tol: f64,
    pub max_iters: usize,
    /// Krylov dimension before restart; `0` means `max_iters` (no restart).
    pub restart: usize,
    pub preconditioner: Preconditioner,
}

impl Default for GmresConfig {
    fn default() -> Self {
        GmresConfig {
            tol: 1e-3,
            max_iters: 500,
            restart: 0,
            preconditioner: Preconditioner::Jacobi,
        }
    }
}

impl GmresConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(Error::Config(format!("gmres tol must be > 0 (got {})", self.tol)));
        }
        if self.max_iters == 0 {
            return Err(Error::Config("gmres max_iters must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct GmresOutcome {
    pub x: Vec<f64>,
    pub iterations: usize,
    /// Relative preconditioned residual of the returned iterate.
    pub residual: f64,
    /// Relative unpreconditioned residual `‖b − Ax‖ / ‖b‖`.
    pub true_residual: f64,
    pub converged: bool,
    /// Relative preconditioned residual estimate after every Arnoldi step.
    pub history: Vec<f64>,
}

/// Solves `A x = b` by restarted GMRES with modified Gram-Schmidt and
/// Givens rotations, starting from `x = 0`.
///
/// On hitting `max_iters` the best iterate is returned with
/// `converged == false`; the caller decides whether that is fatal.
pub fn gmres_solve(a: &SparseMatrix, b: &[f64], cfg: &GmresConfig) -> Result<GmresOutcome> {
    let n = a.dim();
    if b.len() != n {
        return Err(Error::Dimension {
            expected: n,
            got: b.len(),
        });
    }
    if b.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("right-hand side"));
    }
    if !a.is_finite() {
        return Err(Error::NonFinite("system matrix"));
    }
    cfg.validate()?;

    let dinv: Vec<f64> = match cfg.preconditioner {
        Preconditioner::None => vec![1.0; n],
        Preconditioner::Jacobi => {
            let mut d = Vec::with_capacity(n);
            for i in 0..n {
                let (_, vals) = a.row(i);
                let di = a.get(i, i);
                if di == 0.0 {
                    if vals.iter().any(|&v| v != 0.0) {
                        return Err(Error::ZeroDiagonal { row: i });
                    }
                    d.push(1.0);
                } else {
                    d.push(1.0 / di);
                }
            }
            d
        }
    };
    let precondition = |v: &mut [f64]| {
        for (vi, di) in v.iter_mut().zip(&dinv) {
            *vi *= di;
        }
    };

    let mut pb = b.to_vec();
    precondition(&mut pb);
    let pb_norm = norm2(&pb);
    let b_norm = norm2(b);
    let mut x = vec![0.0; n];
    let mut history = Vec::new();
    if pb_norm == 0.0 {
        return Ok(GmresOutcome {
            x,
            iterations: 0,
            residual: 0.0,
            true_residual: 0.0,
            converged: true,
            history,
        });
    }

    let restart = if cfg.restart == 0 {
        cfg.max_iters
    } else {
        cfg.restart
    };
    let target = cfg.tol * pb_norm;
    let mut total = 0usize;
    let mut converged = false;
    let mut r = vec![0.0; n];
    let mut w = vec![0.0; n];

    loop {
        a.matvec_into(&x, &mut r);
        for (ri, bi) in r.iter_mut().zip(b) {
            *ri = bi - *ri;
        }
        precondition(&mut r);
        let beta = norm2(&r);
        if beta <= target {
            converged = true;
            break;
        }
        if total >= cfg.max_iters {
            break;
        }
        let m = restart.min(cfg.max_iters - total).min(n).max(1);
        let mut basis: Vec<Vec<f64>> = Vec::with_capacity(m + 1);
        basis.push(r.iter().map(|v| v / beta).collect());
        // Column k of the Hessenberg matrix holds k + 2 entries.
        let mut h: Vec<Vec<f64>> = Vec::with_capacity(m);
        let mut cs = Vec::with_capacity(m);
        let mut sn = Vec::<f64>::with_capacity(m);
        let mut g = vec![0.0; m + 1];
        g[0] = beta;
        let mut k_used = 0;

        for k in 0..m {
            a.matvec_into(&basis[k], &mut w);
            precondition(&mut w);
            let mut col = vec![0.0; k + 2];
            for (j, vj) in basis.iter().enumerate() {
                let hjk = dot(vj, &w);
                col[j] = hjk;
                axpy(-hjk, vj, &mut w);
            }
            let hnext = norm2(&w);
            col[k + 1] = hnext;
            for j in 0..k {
                let t = cs[j] * col[j] + sn[j] * col[j + 1];
                col[j + 1] = -sn[j] * col[j] + cs[j] * col[j + 1];
                col[j] = t;
            }
            let denom = col[k].hypot(col[k + 1]);
            let (c, s) = if denom == 0.0 {
                (1.0, 0.0)
            } else {
                (col[k] / denom, col[k + 1] / denom)
            };
            col[k] = c * col[k] + s * col[k + 1];
            col[k + 1] = 0.0;
            g[k + 1] = -s * g[k];
            g[k] *= c;
            cs.push(c);
            sn.push(s);
            h.push(col);
            total += 1;
            k_used = k + 1;
            history.push(g[k + 1].abs() / pb_norm);
            if g[k + 1].abs() <= target || hnext <= f64::EPSILON * beta {
                break;
            }
            basis.push(w.iter().map(|v| v / hnext).collect());
        }

        // Back substitution on the triangularised Hessenberg system.
        let mut y = vec![0.0; k_used];
        for i in (0..k_used).rev() {
            let mut acc = g[i];
            for j in (i + 1)..k_used {
                acc -= h[j][i] * y[j];
            }
            y[i] = if h[i][i] != 0.0 { acc / h[i][i] } else { 0.0 };
        }
        for (j, yj) in y.iter().enumerate() {
            axpy(*yj, &basis[j], &mut x);
        }
        if g[k_used].abs() <= target {
            converged = true;
            break;
        }
        if total >= cfg.max_iters {
            break;
        }
    }

    a.matvec_into(&x, &mut r);
    for (ri, bi) in r.iter_mut().zip(b) {
        *ri = bi - *ri;
    }
    let true_residual = if b_norm > 0.0 { norm2(&r) / b_norm } else { 0.0 };
    precondition(&mut r);
    let residual = norm2(&r) / pb_norm;

    Ok(GmresOutcome {
        x,
        iterations: total,
        residual,
        true_residual,
        converged,
        history,
    })
}

/// Jacobi-preconditioned conjugate gradients for SPD systems.
/// Returns the solution, the iteration count and the relative residual.
pub fn cg_solve(
    a: &SparseMatrix,
    b: &[f64],
    tol: f64,
    max_iters: usize,
) -> Result<(Vec<f64>, usize, f64)> {
    let n = a.dim();
    if b.len() != n {
        return Err(Error::Dimension {
            expected: n,
            got: b.len(),
        });
    }
    if b.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("right-hand side"));
    }
    let diag = a.diagonal();
    if let Some(row) = diag.iter().position(|&d| !(d > 0.0)) {
        return Err(Error::ZeroDiagonal { row });
    }
    let b_norm = norm2(b);
    let mut x = vec![0.0; n];
    if b_norm == 0.0 {
        return Ok((x, 0, 0.0));
    }
    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(&diag).map(|(ri, di)| ri / di).collect();
    let mut p = z.clone();
    let mut ap = vec![0.0; n];
    let mut rz = dot(&r, &z);
    for it in 1..=max_iters {
        a.matvec_into(&p, &mut ap);
        let alpha = rz / dot(&p, &ap);
        axpy(alpha, &p, &mut x);
        axpy(-alpha, &ap, &mut r);
        let res = norm2(&r) / b_norm;
        if res <= tol {
            return Ok((x, it, res));
        }
        for ((zi, ri), di) in z.iter_mut().zip(&r).zip(&diag) {
            *zi = ri / di;
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for (pi, zi) in p.iter_mut().zip(&z) {
            *pi = zi + beta * *pi;
        }
    }
    let res = norm2(&r) / b_norm;
    Err(Error::LinearSolver {
        iterations: max_iters,
        residual: res,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn laplacian_1d(n: usize) -> SparseMatrix {
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, 2.0));
            if i > 0 {
                t.push((i, i - 1, -1.0));
            }
            if i + 1 < n {
                t.push((i, i + 1, -1.0));
            }
        }
        SparseMatrix::from_triplets(n, &t)
    }

    fn random_vec(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    #[test]
    fn identity_solves_in_one_iteration() {
        let a = SparseMatrix::identity(20);
        let b = random_vec(20, 1);
        let out = gmres_solve(&a, &b, &GmresConfig::default()).unwrap();
        assert!(out.converged);
        assert_eq!(out.iterations, 1);
        for (xi, bi) in out.x.iter().zip(&b) {
            assert!((xi - bi).abs() < 1e-14);
        }
    }

    #[test]
    fn diagonal_system_matches_analytic_inverse() {
        let n = 30;
        let t: Vec<_> = (0..n).map(|i| (i, i, (i + 1) as f64)).collect();
        let a = SparseMatrix::from_triplets(n, &t);
        let b = random_vec(n, 2);
        let cfg = GmresConfig {
            tol: 1e-12,
            ..Default::default()
        };
        let out = gmres_solve(&a, &b, &cfg).unwrap();
        for i in 0..n {
            assert!((out.x[i] - b[i] / (i + 1) as f64).abs() < 1e-10);
        }
        // unpreconditioned: still exact, more iterations
        let cfg = GmresConfig {
            preconditioner: Preconditioner::None,
            ..cfg
        };
        let out = gmres_solve(&a, &b, &cfg).unwrap();
        for i in 0..n {
            assert!((out.x[i] - b[i] / (i + 1) as f64).abs() < 1e-9);
        }
    }

    #[test]
    fn laplacian_recovers_known_solution() {
        let n = 50;
        let a = laplacian_1d(n);
        let xs = random_vec(n, 3);
        let b = a.matvec(&xs);
        let cfg = GmresConfig {
            tol: 1e-6,
            ..Default::default()
        };
        let out = gmres_solve(&a, &b, &cfg).unwrap();
        assert!(out.converged);
        let err: f64 = out.x.iter().zip(&xs).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        assert!(err / norm2(&xs) < 1e-3, "relative error {}", err / norm2(&xs));
    }

    #[test]
    fn residual_history_is_non_increasing() {
        let n = 60;
        let mut a = laplacian_1d(n);
        // make it nonsymmetric
        for i in 1..n {
            let p = a.position(i, i - 1).unwrap();
            a.values_mut()[p] = -1.5;
        }
        let b = random_vec(n, 4);
        let cfg = GmresConfig {
            tol: 1e-10,
            ..Default::default()
        };
        let out = gmres_solve(&a, &b, &cfg).unwrap();
        assert!(out.converged);
        for w in out.history.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-12), "{:?}", w);
        }
    }

    #[test]
    fn restarted_gmres_converges() {
        let a = laplacian_1d(40);
        let b = random_vec(40, 9);
        let cfg = GmresConfig {
            tol: 1e-8,
            max_iters: 2000,
            restart: 10,
            preconditioner: Preconditioner::Jacobi,
        };
        let out = gmres_solve(&a, &b, &cfg).unwrap();
        assert!(out.converged);
        assert!(out.residual <= 1e-8 * 1.0001);
    }

    #[test]
    fn preconditioning_does_not_change_the_solution() {
        let n = 40;
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, 4.0 + i as f64));
            if i > 0 {
                t.push((i, i - 1, -1.0));
                t.push((i - 1, i, -1.0));
            }
        }
        let a = SparseMatrix::from_triplets(n, &t);
        let b = random_vec(n, 5);
        let base = GmresConfig {
            tol: 1e-13,
            ..Default::default()
        };
        let x1 = gmres_solve(&a, &b, &base).unwrap().x;
        let x2 = gmres_solve(
            &a,
            &b,
            &GmresConfig {
                preconditioner: Preconditioner::None,
                ..base
            },
        )
        .unwrap()
        .x;
        for (p, q) in x1.iter().zip(&x2) {
            assert!((p - q).abs() < 1e-8);
        }
    }

    #[test]
    fn rejects_nan_and_zero_diagonal() {
        let a = SparseMatrix::identity(3);
        assert!(matches!(
            gmres_solve(&a, &[1.0, f64::NAN, 0.0], &GmresConfig::default()),
            Err(Error::NonFinite(_))
        ));
        let a = SparseMatrix::from_triplets(2, &[(0, 1, 1.0), (1, 0, 1.0)]);
        assert!(matches!(
            gmres_solve(&a, &[1.0, 1.0], &GmresConfig::default()),
            Err(Error::ZeroDiagonal { row: 0 })
        ));
    }

    #[test]
    fn not_converged_flag_after_max_iters() {
        let a = laplacian_1d(100);
        let b = random_vec(100, 6);
        let cfg = GmresConfig {
            tol: 1e-14,
            max_iters: 3,
            restart: 0,
            preconditioner: Preconditioner::Jacobi,
        };
        let out = gmres_solve(&a, &b, &cfg).unwrap();
        assert!(!out.converged);
        assert_eq!(out.iterations, 3);
    }

    #[test]
    fn cg_matches_gmres_on_spd() {
        let a = laplacian_1d(30);
        let b = random_vec(30, 7);
        let (x, _, res) = cg_solve(&a, &b, 1e-12, 1000).unwrap();
        assert!(res <= 1e-12);
        let y = gmres_solve(
            &a,
            &b,
            &GmresConfig {
                tol: 1e-13,
                ..Default::default()
            },
        )
        .unwrap()
        .x;
        for (p, q) in x.iter().zip(&y) {
            assert!((p - q).abs() < 1e-8);
        }
    }

    #[test]
    fn triplets_sum_duplicates() {
        let a = SparseMatrix::from_triplets(2, &[(0, 0, 1.0), (0, 0, 2.0), (1, 0, 1.0)]);
        assert_eq!(a.get(0, 0), 3.0);
        assert_eq!(a.nnz(), 2);
        let at = a.transpose();
        assert_eq!(at.get(0, 1), 1.0);
    }
}
