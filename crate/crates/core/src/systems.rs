//! Galerkin residuals and tangents of the forward, linearised and adjoint
//! systems.
//!
//! State vectors are flat, `[u1 | u2 | u3]`, each block holding the `n_f`
//! control variables of one field. The first field carries homogeneous
//! Dirichlet data; its masked rows are replaced by the constraint `U_A = 0`.

use std::sync::{Arc, Mutex};

use crate::error::{Error, Result};
use crate::linalg::SparseMatrix;
use crate::model::ModelParams;
use crate::spline::{element_indices, tensor_basis, window, Field, SplineSpace, LOCAL};

/// Three coefficient fields at one time level: `(φ, σ, p)`, `(Y, Z, P)` or
/// `(q, z, r)` depending on the system.
#[derive(Debug, Clone)]
pub struct StateTriple {
    pub u1: Field,
    pub u2: Field,
    pub u3: Field,
    pub time: f64,
}

impl StateTriple {
    pub fn new(u1: Field, u2: Field, u3: Field, time: f64) -> Result<Self> {
        if !u1.space().same_as(u2.space()) || !u1.space().same_as(u3.space()) {
            return Err(Error::SpaceMismatch);
        }
        Ok(StateTriple { u1, u2, u3, time })
    }

    pub fn zeros(space: Arc<SplineSpace>, time: f64) -> Self {
        StateTriple {
            u1: Field::zeros(space.clone()),
            u2: Field::zeros(space.clone()),
            u3: Field::zeros(space),
            time,
        }
    }

    pub fn from_flat(space: Arc<SplineSpace>, v: &[f64], time: f64) -> Result<Self> {
        let n = space.n_f();
        if v.len() != 3 * n {
            return Err(Error::Dimension {
                expected: 3 * n,
                got: v.len(),
            });
        }
        Ok(StateTriple {
            u1: Field::new(space.clone(), v[..n].to_vec())?,
            u2: Field::new(space.clone(), v[n..2 * n].to_vec())?,
            u3: Field::new(space, v[2 * n..].to_vec())?,
            time,
        })
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(3 * self.u1.coeffs().len());
        v.extend_from_slice(self.u1.coeffs());
        v.extend_from_slice(self.u2.coeffs());
        v.extend_from_slice(self.u3.coeffs());
        v
    }

    pub fn space(&self) -> &Arc<SplineSpace> {
        self.u1.space()
    }
}

/// A stored state history that can be sampled at any time in its range.
pub trait Background: Sync {
    /// Covered interval `(t_min, t_max)`.
    fn time_range(&self) -> (f64, f64);

    /// Flat state at `t`, interpolated linearly between snapshots.
    fn state_at(&self, t: f64) -> Result<Vec<f64>>;

    fn covers(&self, t: f64) -> bool {
        let (a, b) = self.time_range();
        let tol = 1e-9 * (1.0 + a.abs().max(b.abs()));
        t >= a - tol && t <= b + tol
    }
}

/// Which weak-form family to assemble.
#[derive(Clone, Copy)]
pub enum SystemKind<'a> {
    Forward,
    Linearised(&'a dyn Background),
    Adjoint(&'a dyn Background),
}

impl std::fmt::Debug for SystemKind<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SystemKind::Forward => write!(f, "Forward"),
            SystemKind::Linearised(_) => write!(f, "Linearised"),
            SystemKind::Adjoint(_) => write!(f, "Adjoint"),
        }
    }
}

/// A semi-discrete system `R(t, U, U̇) = 0` advanced by the integrator.
pub trait StageSystem {
    /// Length of the flat unknown vector.
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Number of equal blocks used for per-block Newton convergence.
    fn block_count(&self) -> usize;

    /// True when `R` is affine in `(U, U̇)`; the tangent is then built once
    /// per step.
    fn is_linear(&self) -> bool;

    fn residual(&self, t: f64, u: &[f64], udot: &[f64]) -> Result<Vec<f64>>;

    /// `cu·∂R/∂U + cv·∂R/∂U̇`. Constraint rows carry `cu`, or 1 when
    /// `cu = 0`, on the diagonal.
    fn matrix(&self, t: f64, u: &[f64], udot: &[f64], cu: f64, cv: f64) -> Result<SparseMatrix>;

    /// Per-block magnitudes below which a residual block counts as zero.
    fn block_floors(&self, _u: &[f64], _udot: &[f64]) -> Vec<f64> {
        vec![0.0; self.block_count()]
    }
}

/// Relative size of the roundoff floor in [`StageSystem::block_floors`].
const ROUNDOFF_FLOOR: f64 = 1e-12;

/// Per-quadrature-point coupling coefficients `a_fg` of the linearised
/// operator `A·U = ∫ N_A Σ_g a_fg U_g + diffusion`.
#[derive(Debug, Clone, Copy)]
struct Coupling {
    phiphi: f64,
    phisig: f64,
    sigphi: f64,
    sigsig: f64,
    pphi: f64,
}

fn coupling(params: &ModelParams, phi: f64, sigma: f64) -> Coupling {
    Coupling {
        phiphi: params.d2f(phi) - params.tilt_m(sigma) * params.d2h(phi),
        phisig: -params.dm(sigma) * params.dh(phi),
        sigphi: params.gamma_ch() * sigma - params.s_ch(),
        sigsig: params.gamma_h + params.gamma_ch() * phi,
        pphi: -params.alpha_ch(),
    }
}

/// Galerkin discretisation of one of the three systems on a spline space.
pub struct GalerkinSystem<'a> {
    space: Arc<SplineSpace>,
    params: &'a ModelParams,
    kind: SystemKind<'a>,
    /// Linear kinds: operator `A(t)` from the last stage time.
    operator_cache: Mutex<Option<(f64, Arc<SparseMatrix>)>>,
}

impl<'a> GalerkinSystem<'a> {
    pub fn new(space: Arc<SplineSpace>, params: &'a ModelParams, kind: SystemKind<'a>) -> Self {
        GalerkinSystem {
            space,
            params,
            kind,
            operator_cache: Mutex::new(None),
        }
    }

    pub fn space(&self) -> &Arc<SplineSpace> {
        &self.space
    }

    pub fn kind(&self) -> SystemKind<'a> {
        self.kind
    }

    fn n(&self) -> usize {
        self.space.n_f()
    }

    fn check_len(&self, v: &[f64]) -> Result<()> {
        if v.len() != 3 * self.n() {
            return Err(Error::Dimension {
                expected: 3 * self.n(),
                got: v.len(),
            });
        }
        Ok(())
    }

    fn background(&self, bg: &dyn Background, t: f64) -> Result<Vec<f64>> {
        if !bg.covers(t) {
            return Err(Error::MissingBackground(t));
        }
        let w = bg.state_at(t)?;
        self.check_len(&w)?;
        Ok(w)
    }

    /// Sign of the `U̇` term: +1 forward in time, −1 for the adjoint.
    fn time_sign(&self) -> f64 {
        match self.kind {
            SystemKind::Adjoint(_) => -1.0,
            _ => 1.0,
        }
    }

    /// `A(w)` without constraint rows: couplings evaluated at the state `w`
    /// (transposed for the adjoint) plus diffusion.
    fn assemble_operator(&self, w: &[f64], transpose: bool) -> SparseMatrix {
        let space = &*self.space;
        let p = self.params;
        let n = self.n();
        let n1 = space.n1();
        let ne = space.elements_per_side();
        let scalar = space.scalar_pattern();
        let srow = scalar.row_ptr();
        let snnz = scalar.nnz();
        let mut mat = space.block_pattern().clone();
        let vals = mat.values_mut();
        let eb = space.element_basis();
        let nq = space.quadrature().len();
        let (phi, sig) = (&w[..n], &w[n..2 * n]);
        let diff = [p.lambda, p.eta, p.d];

        for ey in 0..ne {
            for ex in 0..ne {
                let idx = element_indices(ex, ey, n1);
                // nn[c][l][k] accumulates ∫ a_c N_l N_k, c over the five couplings
                // plus the pure mass for γ_p; gg accumulates ∫ ∇N_l·∇N_k
                let mut nn = [[[0.0; LOCAL]; LOCAL]; 6];
                let mut gg = [[0.0; LOCAL]; LOCAL];
                for qy in 0..nq {
                    for qx in 0..nq {
                        let wq = eb[ex].weight[qx] * eb[ey].weight[qy];
                        let (nb, gx, gy) = tensor_basis(&eb[ex], &eb[ey], qx, qy);
                        let (mut ph, mut sg) = (0.0, 0.0);
                        for l in 0..LOCAL {
                            ph += phi[idx[l]] * nb[l];
                            sg += sig[idx[l]] * nb[l];
                        }
                        let c = coupling(p, ph, sg);
                        let coef = [c.phiphi, c.phisig, c.sigphi, c.sigsig, c.pphi, p.gamma_p];
                        for l in 0..LOCAL {
                            for k in 0..LOCAL {
                                let m = wq * nb[l] * nb[k];
                                for (acc, cv) in nn.iter_mut().zip(&coef) {
                                    acc[l][k] += cv * m;
                                }
                                gg[l][k] += wq * (gx[l] * gx[k] + gy[l] * gy[k]);
                            }
                        }
                    }
                }
                // (row block, column block, coefficient slot) in the forward layout
                let forward_blocks: [(usize, usize, usize); 6] =
                    [(0, 0, 0), (0, 1, 1), (1, 0, 2), (1, 1, 3), (2, 0, 4), (2, 2, 5)];
                for l in 0..LOCAL {
                    let a = idx[l];
                    let wa = window(a, n1);
                    let len = wa.len();
                    for k in 0..LOCAL {
                        let off = wa.offset(idx[k], n1);
                        for &(f, g, c) in &forward_blocks {
                            let (f, g) = if transpose { (g, f) } else { (f, g) };
                            vals[f * 3 * snnz + 3 * srow[a] + g * len + off] += nn[c][l][k];
                        }
                        for (f, d) in diff.iter().enumerate() {
                            vals[f * 3 * snnz + 3 * srow[a] + f * len + off] += d * gg[l][k];
                        }
                    }
                }
            }
        }
        mat
    }

    /// `cu·A + cv·s·M_blk` with constraint rows set to the identity scaled
    /// by `cu` (or 1 when `cu = 0`).
    fn combine(&self, a: &SparseMatrix, cu: f64, cv: f64) -> SparseMatrix {
        let space = &*self.space;
        let n = self.n();
        let n1 = space.n1();
        let mass = space.mass_matrix();
        let srow = mass.row_ptr();
        let snnz = mass.nnz();
        let mut out = a.clone();
        let cm = cv * self.time_sign();
        {
            let vals = out.values_mut();
            for v in vals.iter_mut() {
                *v *= cu;
            }
            for r in 0..n {
                let len = window(r, n1).len();
                let (_, mvals) = mass.row(r);
                for f in 0..3 {
                    let base = f * 3 * snnz + 3 * srow[r] + f * len;
                    for (k, mv) in mvals.iter().enumerate() {
                        vals[base + k] += cm * mv;
                    }
                }
            }
        }
        let diag = if cu != 0.0 { cu } else { 1.0 };
        let mut mask = vec![false; 3 * n];
        mask[..n].copy_from_slice(space.dirichlet_mask());
        out.set_identity_rows(&mask);
        if diag != 1.0 {
            let row_ptr = out.row_ptr().to_vec();
            let cols = out.col_idx().to_vec();
            let vals = out.values_mut();
            for (i, _) in mask.iter().enumerate().filter(|e| *e.1) {
                for k in row_ptr[i]..row_ptr[i + 1] {
                    if cols[k] == i {
                        vals[k] = diag;
                    }
                }
            }
        }
        out
    }

    /// Operator `A(t)` of a linear kind, cached per stage time.
    fn linear_operator(&self, t: f64) -> Result<Arc<SparseMatrix>> {
        let (bg, transpose) = match self.kind {
            SystemKind::Linearised(bg) => (bg, false),
            SystemKind::Adjoint(bg) => (bg, true),
            SystemKind::Forward => unreachable!("forward system is nonlinear"),
        };
        let mut cache = self.operator_cache.lock().expect("operator cache poisoned");
        if let Some((tc, a)) = cache.as_ref() {
            if *tc == t {
                return Ok(a.clone());
            }
        }
        let w = self.background(bg, t)?;
        let a = Arc::new(self.assemble_operator(&w, transpose));
        *cache = Some((t, a.clone()));
        Ok(a)
    }

    fn forward_residual(&self, u: &[f64], udot: &[f64]) -> Vec<f64> {
        let space = &*self.space;
        let p = self.params;
        let n = self.n();
        let n1 = space.n1();
        let ne = space.elements_per_side();
        let eb = space.element_basis();
        let nq = space.quadrature().len();
        let mut res = vec![0.0; 3 * n];
        let (gch, sch, ach) = (p.gamma_ch(), p.s_ch(), p.alpha_ch());

        for ey in 0..ne {
            for ex in 0..ne {
                let idx = element_indices(ex, ey, n1);
                let mut local = [[0.0; LOCAL]; 3];
                for qy in 0..nq {
                    for qx in 0..nq {
                        let wq = eb[ex].weight[qx] * eb[ey].weight[qy];
                        let (nb, gx, gy) = tensor_basis(&eb[ex], &eb[ey], qx, qy);
                        let mut val = [0.0; 3];
                        let mut dot = [0.0; 3];
                        let mut grad = [[0.0; 2]; 3];
                        for l in 0..LOCAL {
                            for f in 0..3 {
                                let c = u[f * n + idx[l]];
                                val[f] += c * nb[l];
                                dot[f] += udot[f * n + idx[l]] * nb[l];
                                grad[f][0] += c * gx[l];
                                grad[f][1] += c * gy[l];
                            }
                        }
                        let [ph, sg, pp] = val;
                        let src = [
                            dot[0] + p.df(ph) - p.tilt_m(sg) * p.dh(ph),
                            dot[1] + p.gamma_h * sg + gch * sg * ph - p.s_h - sch * ph,
                            dot[2] + p.gamma_p * pp - p.alpha_h - ach * ph,
                        ];
                        let diff = [p.lambda, p.eta, p.d];
                        for f in 0..3 {
                            let (s, dx, dy) = (src[f] * wq, diff[f] * grad[f][0] * wq, diff[f] * grad[f][1] * wq);
                            for l in 0..LOCAL {
                                local[f][l] += s * nb[l] + dx * gx[l] + dy * gy[l];
                            }
                        }
                    }
                }
                for f in 0..3 {
                    for l in 0..LOCAL {
                        res[f * n + idx[l]] += local[f][l];
                    }
                }
            }
        }
        res
    }

    fn apply_constraint_rows(&self, res: &mut [f64], u: &[f64]) {
        for (a, &m) in self.space.dirichlet_mask().iter().enumerate() {
            if m {
                res[a] = u[a];
            }
        }
    }
}

impl StageSystem for GalerkinSystem<'_> {
    fn len(&self) -> usize {
        3 * self.n()
    }

    fn block_count(&self) -> usize {
        3
    }

    fn is_linear(&self) -> bool {
        !matches!(self.kind, SystemKind::Forward)
    }

    fn residual(&self, t: f64, u: &[f64], udot: &[f64]) -> Result<Vec<f64>> {
        self.check_len(u)?;
        self.check_len(udot)?;
        let mut res = match self.kind {
            SystemKind::Forward => self.forward_residual(u, udot),
            _ => {
                let a = self.linear_operator(t)?;
                let mut r = a.matvec(u);
                let mass = self.space.mass_matrix();
                let n = self.n();
                let s = self.time_sign();
                for f in 0..3 {
                    let mu = mass.matvec(&udot[f * n..(f + 1) * n]);
                    for (ri, mi) in r[f * n..(f + 1) * n].iter_mut().zip(mu) {
                        *ri += s * mi;
                    }
                }
                r
            }
        };
        self.apply_constraint_rows(&mut res, u);
        if res.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("residual"));
        }
        Ok(res)
    }

    fn matrix(&self, t: f64, u: &[f64], _udot: &[f64], cu: f64, cv: f64) -> Result<SparseMatrix> {
        self.check_len(u)?;
        let a = match self.kind {
            SystemKind::Forward => Arc::new(self.assemble_operator(u, false)),
            _ => self.linear_operator(t)?,
        };
        let m = self.combine(&a, cu, cv);
        if !m.is_finite() {
            return Err(Error::NonFinite("tangent matrix"));
        }
        Ok(m)
    }

    fn block_floors(&self, u: &[f64], udot: &[f64]) -> Vec<f64> {
        let n = self.n();
        let mass = self.space.mass_matrix();
        (0..3)
            .map(|f| {
                let mu = crate::linalg::norm2(&mass.matvec(&u[f * n..(f + 1) * n]));
                let mv = crate::linalg::norm2(&mass.matvec(&udot[f * n..(f + 1) * n]));
                ROUNDOFF_FLOOR * (mu + mv)
            })
            .collect()
    }
}

/// Residual of `kind` at `(U, U̇)` and time `t`.
pub fn assemble_residual(
    space: &Arc<SplineSpace>,
    params: &ModelParams,
    kind: SystemKind<'_>,
    u: &StateTriple,
    udot: &StateTriple,
    t: f64,
) -> Result<Vec<f64>> {
    let sys = GalerkinSystem::new(space.clone(), params, kind);
    sys.residual(t, &u.to_flat(), &udot.to_flat())
}

/// Tangent `∂R/∂U + shift·∂R/∂U̇` of `kind` at `(U, U̇)` and time `t`.
pub fn assemble_tangent(
    space: &Arc<SplineSpace>,
    params: &ModelParams,
    kind: SystemKind<'_>,
    u: &StateTriple,
    udot: &StateTriple,
    t: f64,
    shift: f64,
) -> Result<SparseMatrix> {
    let sys = GalerkinSystem::new(space.clone(), params, kind);
    sys.matrix(t, &u.to_flat(), &udot.to_flat(), 1.0, shift)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::tests::sample_config;
    use crate::linalg::dot;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Background frozen at one state for all times.
    struct Frozen(Vec<f64>);

    impl Background for Frozen {
        fn time_range(&self) -> (f64, f64) {
            (0.0, 10.0)
        }
        fn state_at(&self, _t: f64) -> Result<Vec<f64>> {
            Ok(self.0.clone())
        }
    }

    fn params() -> ModelParams {
        sample_config().try_into().unwrap()
    }

    fn random_state(space: &SplineSpace, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let n = space.n_f();
        let mut v = Vec::with_capacity(3 * n);
        for range in [0.0..1.0, 0.2..1.2, 0.0..2.0] {
            v.extend((0..n).map(|_| rng.gen_range(range.clone())));
        }
        for (a, &m) in space.dirichlet_mask().iter().enumerate() {
            if m {
                v[a] = 0.0;
            }
        }
        v
    }

    #[test]
    fn steady_healthy_state_has_zero_residual() {
        let p = params();
        let space = SplineSpace::new(6, 1000.0).unwrap();
        let (s, pp) = p.healthy_steady_state();
        let u = StateTriple::new(
            Field::zeros(space.clone()),
            Field::constant(space.clone(), s),
            Field::constant(space.clone(), pp),
            0.0,
        )
        .unwrap();
        let udot = StateTriple::zeros(space.clone(), 0.0);
        let r = assemble_residual(&space, &p, SystemKind::Forward, &u, &udot, 0.0).unwrap();
        assert!(r.iter().all(|v| v.abs() < 1e-10), "max {}", r.iter().fold(0.0f64, |a, b| a.max(b.abs())));
    }

    #[test]
    fn homogeneous_linear_kinds_vanish_at_zero() {
        let p = params();
        let space = SplineSpace::new(4, 1000.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let bg = Frozen(random_state(&space, &mut rng));
        let zero = StateTriple::zeros(space.clone(), 0.0);
        for kind in [SystemKind::Linearised(&bg), SystemKind::Adjoint(&bg)] {
            let r = assemble_residual(&space, &p, kind, &zero, &zero, 0.5).unwrap();
            assert!(r.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn missing_background_is_reported() {
        let p = params();
        let space = SplineSpace::new(3, 1000.0).unwrap();
        let bg = Frozen(vec![0.0; 3 * space.n_f()]);
        let zero = StateTriple::zeros(space.clone(), 0.0);
        let r = assemble_residual(&space, &p, SystemKind::Adjoint(&bg), &zero, &zero, 11.0);
        assert!(matches!(r, Err(Error::MissingBackground(_))));
    }

    #[test]
    fn linearised_residual_is_linear() {
        let p = params();
        let space = SplineSpace::new(4, 1000.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let bg = Frozen(random_state(&space, &mut rng));
        let sys = GalerkinSystem::new(space.clone(), &p, SystemKind::Linearised(&bg));
        let (u, ud) = (random_state(&space, &mut rng), random_state(&space, &mut rng));
        let (w, wd) = (random_state(&space, &mut rng), random_state(&space, &mut rng));
        let (a, b) = (rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
        let comb = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(x, y)| a * x + b * y).collect::<Vec<_>>();
        let lhs = sys.residual(1.0, &comb(&u, &w), &comb(&ud, &wd)).unwrap();
        let ru = sys.residual(1.0, &u, &ud).unwrap();
        let rw = sys.residual(1.0, &w, &wd).unwrap();
        let scale = ru.iter().chain(&rw).fold(0.0f64, |m, v| m.max(v.abs()));
        for i in 0..lhs.len() {
            assert!((lhs[i] - (a * ru[i] + b * rw[i])).abs() < 1e-10 * scale);
        }
    }

    #[test]
    fn adjoint_operator_is_transpose_of_linearised() {
        let p = params();
        let space = SplineSpace::new(4, 1000.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let bg = Frozen(random_state(&space, &mut rng));
        let lin = GalerkinSystem::new(space.clone(), &p, SystemKind::Linearised(&bg));
        let adj = GalerkinSystem::new(space.clone(), &p, SystemKind::Adjoint(&bg));
        let zero = vec![0.0; lin.len()];
        let a = lin.matrix(0.0, &zero, &zero, 1.0, 0.0).unwrap();
        let b = adj.matrix(0.0, &zero, &zero, 1.0, 0.0).unwrap();
        let (x, y) = (random_state(&space, &mut rng), random_state(&space, &mut rng));
        // <A x, y> = <x, B y> on the unconstrained subspace (both vanish on masked rows)
        let lhs = dot(&a.matvec(&x), &y);
        let rhs = dot(&x, &b.matvec(&y));
        assert!((lhs - rhs).abs() < 1e-10 * lhs.abs().max(1.0));
    }

    #[test]
    fn forward_tangent_matches_finite_differences() {
        let p = params();
        let space = SplineSpace::new(8, 1000.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let sys = GalerkinSystem::new(space.clone(), &p, SystemKind::Forward);
        let u = random_state(&space, &mut rng);
        let ud = random_state(&space, &mut rng);
        let du = random_state(&space, &mut rng);
        let shift = 7.5;
        let j = sys.matrix(0.0, &u, &ud, 1.0, shift).unwrap();
        let jd = j.matvec(&du);
        let eps = 1e-6;
        let plus = |s: f64| -> Vec<f64> {
            let up: Vec<f64> = u.iter().zip(&du).map(|(a, b)| a + s * eps * b).collect();
            let udp: Vec<f64> = ud.iter().zip(&du).map(|(a, b)| a + s * shift * eps * b).collect();
            sys.residual(0.0, &up, &udp).unwrap()
        };
        let (rp, rm) = (plus(1.0), plus(-1.0));
        let fd: Vec<f64> = rp.iter().zip(&rm).map(|(a, b)| (a - b) / (2.0 * eps)).collect();
        let err: f64 = jd.iter().zip(&fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let norm: f64 = fd.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(err <= 1e-5 * norm, "relative error {}", err / norm);
    }

    #[test]
    fn phi_block_reduces_to_mass_stiffness_structure_at_zero() {
        // with φ = σ = 0 the φφ block is shift·M + λK + (F''(0) − m(0)h''(0))·M
        let p = params();
        let space = SplineSpace::new(2, 1000.0).unwrap();
        let n = space.n_f();
        let zero = vec![0.0; 3 * n];
        let sys = GalerkinSystem::new(space.clone(), &p, SystemKind::Forward);
        let shift = 3.0;
        let j = sys.matrix(0.0, &zero, &zero, 1.0, shift).unwrap();
        let (m, k) = (space.mass_matrix(), space.stiffness_matrix());
        let react = p.d2f(0.0) - p.tilt_m(0.0) * p.d2h(0.0);
        for a in 0..n {
            for b in 0..n {
                let expected = if space.dirichlet_mask()[a] {
                    if a == b { 1.0 } else { 0.0 }
                } else {
                    (shift + react) * m.get(a, b) + p.lambda * k.get(a, b)
                };
                assert!((j.get(a, b) - expected).abs() < 1e-9 * (1.0 + expected.abs()));
            }
        }
    }

    #[test]
    fn adjoint_r_block_involves_only_r() {
        let p = params();
        let space = SplineSpace::new(4, 1000.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let bg = Frozen(random_state(&space, &mut rng));
        let sys = GalerkinSystem::new(space.clone(), &p, SystemKind::Adjoint(&bg));
        let n = space.n_f();
        let mut u = random_state(&space, &mut rng);
        for v in &mut u[2 * n..] {
            *v = 0.0;
        }
        let zero = vec![0.0; 3 * n];
        let r = sys.residual(0.0, &u, &zero).unwrap();
        assert!(r[2 * n..].iter().all(|&v| v == 0.0));
    }
}
