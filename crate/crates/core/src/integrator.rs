//! Generalized-α time stepping with Newton-Raphson corrections.
//!
//! The Newton unknown is the velocity at the new level. With `V = U̇_{n+1}`:
//!
//! ```text
//! U_{n+1}   = U_n + Δt·U̇_n + γΔt(V − U̇_n)
//! U̇_{n+αm} = U̇_n + αm(V − U̇_n)
//! U_{n+αf}  = U_n + αf(U_{n+1} − U_n)
//! ```
//!
//! and the residual is evaluated at `(t_n + αfΔt, U_{n+αf}, U̇_{n+αm})`.
//! A negative `Δt` runs the same recursion backwards in time.

use std::fs::File;
use std::io::{BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{gmres_solve, norm2, GmresConfig, Preconditioner};
use crate::systems::{Background, StageSystem};

/// Time grid and generalized-α parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TimeConfig {
    /// Step of the forward solver in days; adjoint runs use `−|dt|`.
    pub dt: f64,
    /// Final time `T` in days.
    pub t_end: f64,
    pub rho_inf: f64,
}

impl Default for TimeConfig {
    fn default() -> Self {
        TimeConfig {
            dt: 0.1,
            t_end: 1.0,
            rho_inf: 0.5,
        }
    }
}

/// `(αm, αf, γ)` for a spectral radius at infinity `ρ∞`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Alphas {
    pub alpha_m: f64,
    pub alpha_f: f64,
    pub gamma: f64,
}

impl Alphas {
    pub fn from_rho_inf(rho_inf: f64) -> Self {
        let alpha_m = (3.0 - rho_inf) / (2.0 * (1.0 + rho_inf));
        let alpha_f = 1.0 / (1.0 + rho_inf);
        // γ = 1/2 + αm − αf simplifies to 1/(1 + ρ∞); the closed form is
        // exact in floating point where the sum is not.
        Alphas {
            alpha_m,
            alpha_f,
            gamma: 1.0 / (1.0 + rho_inf),
        }
    }
}

impl TimeConfig {
    pub fn alphas(&self) -> Alphas {
        Alphas::from_rho_inf(self.rho_inf)
    }

    /// Number of steps; `t_end` must be a non-negative integer multiple of `|dt|`.
    pub fn steps(&self) -> Result<usize> {
        let dt = self.dt.abs();
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::Config(format!("time.dt must be nonzero (got {})", self.dt)));
        }
        if !(self.t_end >= 0.0 && self.t_end.is_finite()) {
            return Err(Error::Config(format!("time.t_end must be >= 0 (got {})", self.t_end)));
        }
        let k = (self.t_end / dt).round();
        if (k * dt - self.t_end).abs() > 1e-9 * self.t_end.max(dt) {
            return Err(Error::Config(format!(
                "time.t_end = {} is not an integer multiple of |dt| = {dt}",
                self.t_end
            )));
        }
        Ok(k as usize)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.rho_inf) {
            return Err(Error::Config(format!(
                "time.rho_inf must lie in [0, 1] (got {})",
                self.rho_inf
            )));
        }
        self.steps().map(|_| ())
    }

    /// Time of step `k` on a grid starting at `t0` with signed step `dt`.
    fn time_at(t0: f64, dt: f64, k: usize) -> f64 {
        t0 + k as f64 * dt
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NewtonConfig {
    /// Each residual block must fall to `tol` times its initial norm.
    pub tol: f64,
    pub max_newton: usize,
}

impl Default for NewtonConfig {
    fn default() -> Self {
        NewtonConfig {
            tol: 1e-3,
            max_newton: 10,
        }
    }
}

impl NewtonConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0 && self.tol < 1.0) {
            return Err(Error::Config(format!("newton.tol must lie in (0, 1) (got {})", self.tol)));
        }
        if self.max_newton == 0 {
            return Err(Error::Config("newton.max_newton must be >= 1".into()));
        }
        Ok(())
    }
}

/// Everything the stepper needs besides the system.
#[derive(Debug, Clone, Default)]
pub struct SolverConfig {
    pub time: TimeConfig,
    pub newton: NewtonConfig,
    pub gmres: GmresConfig,
}

/// State and velocity at one time level.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub t: f64,
    pub u: Vec<f64>,
    pub udot: Vec<f64>,
}

/// Receives snapshots in the order they are computed.
pub trait SnapshotSink {
    fn push(&mut self, snap: Snapshot) -> Result<()>;
}

/// In-memory sequence of snapshots with strictly monotone times.
#[derive(Debug, Clone, Default)]
pub struct Trajectory {
    snapshots: Vec<Snapshot>,
}

impl Trajectory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn snapshots(&self) -> &[Snapshot] {
        &self.snapshots
    }

    pub fn len(&self) -> usize {
        self.snapshots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snapshots.is_empty()
    }

    pub fn first(&self) -> Option<&Snapshot> {
        self.snapshots.first()
    }

    pub fn last(&self) -> Option<&Snapshot> {
        self.snapshots.last()
    }

    /// Reverses into increasing time order.
    pub fn into_forward_order(mut self) -> Self {
        if self.snapshots.len() > 1 && self.snapshots[0].t > self.snapshots[1].t {
            self.snapshots.reverse();
        }
        self
    }

    /// Snapshot closest to `t` if one lies within roundoff of it.
    pub fn at(&self, t: f64) -> Option<&Snapshot> {
        let tol = 1e-9 * (1.0 + t.abs());
        self.snapshots.iter().find(|s| (s.t - t).abs() <= tol)
    }
}

impl SnapshotSink for Trajectory {
    fn push(&mut self, snap: Snapshot) -> Result<()> {
        self.snapshots.push(snap);
        Ok(())
    }
}

/// Linear interpolation weights: `(i, j, w)` with `t = (1−w)·t_i + w·t_j`.
fn bracket(times: &[f64], t: f64) -> Result<(usize, usize, f64)> {
    let n = times.len();
    if n == 0 {
        return Err(Error::MissingBackground(t));
    }
    let increasing = n == 1 || times[1] > times[0];
    let (lo, hi) = if increasing {
        (times[0], times[n - 1])
    } else {
        (times[n - 1], times[0])
    };
    let tol = 1e-9 * (1.0 + lo.abs().max(hi.abs()));
    if t < lo - tol || t > hi + tol {
        return Err(Error::MissingBackground(t));
    }
    if n == 1 {
        return Ok((0, 0, 0.0));
    }
    let key = |s: f64| if increasing { s } else { -s };
    let tk = key(t);
    // first index whose time is >= t in the increasing key
    let k = times.partition_point(|&s| key(s) < tk);
    if k == 0 {
        return Ok((0, 0, 0.0));
    }
    if k >= n {
        return Ok((n - 1, n - 1, 0.0));
    }
    let (a, b) = (key(times[k - 1]), key(times[k]));
    let w = ((tk - a) / (b - a)).clamp(0.0, 1.0);
    Ok((k - 1, k, w))
}

fn lerp(a: &[f64], b: &[f64], w: f64) -> Vec<f64> {
    if w == 0.0 {
        return a.to_vec();
    }
    a.iter().zip(b).map(|(x, y)| x + w * (y - x)).collect()
}

impl Background for Trajectory {
    fn time_range(&self) -> (f64, f64) {
        let (a, b) = match (self.snapshots.first(), self.snapshots.last()) {
            (Some(a), Some(b)) => (a.t, b.t),
            _ => return (f64::NAN, f64::NAN),
        };
        (a.min(b), a.max(b))
    }

    fn state_at(&self, t: f64) -> Result<Vec<f64>> {
        let times: Vec<f64> = self.snapshots.iter().map(|s| s.t).collect();
        let (i, j, w) = bracket(&times, t)?;
        Ok(lerp(&self.snapshots[i].u, &self.snapshots[j].u, w))
    }
}

/// Snapshots stored as raw little-endian `f64` records in a file; only the
/// time stamps stay in memory.
pub struct DiskTrajectory {
    path: PathBuf,
    len: usize,
    times: Vec<f64>,
    writer: Option<BufWriter<File>>,
    reader: Mutex<Option<File>>,
}

impl DiskTrajectory {
    /// Creates (truncating) the backing file for states of length `len`.
    pub fn create(path: impl AsRef<Path>, len: usize) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let file = File::create(&path)?;
        Ok(DiskTrajectory {
            path,
            len,
            times: Vec::new(),
            writer: Some(BufWriter::new(file)),
            reader: Mutex::new(None),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    /// Flushes pending writes; required before reading.
    pub fn finish(&mut self) -> Result<()> {
        if let Some(mut w) = self.writer.take() {
            w.flush()?;
        }
        Ok(())
    }

    fn record_bytes(&self) -> u64 {
        (2 * self.len * 8) as u64
    }

    /// Reads snapshot `k` back from disk.
    pub fn snapshot(&self, k: usize) -> Result<Snapshot> {
        if self.writer.is_some() {
            return Err(Error::Format("disk trajectory read before finish()".into()));
        }
        let mut guard = self.reader.lock().expect("trajectory reader poisoned");
        if guard.is_none() {
            *guard = Some(File::open(&self.path)?);
        }
        let file = guard.as_mut().expect("reader opened above");
        file.seek(SeekFrom::Start(k as u64 * self.record_bytes()))?;
        let mut buf = vec![0u8; self.record_bytes() as usize];
        file.read_exact(&mut buf)?;
        let vals: Vec<f64> = buf
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        Ok(Snapshot {
            t: self.times[k],
            u: vals[..self.len].to_vec(),
            udot: vals[self.len..].to_vec(),
        })
    }
}

impl SnapshotSink for DiskTrajectory {
    fn push(&mut self, snap: Snapshot) -> Result<()> {
        if snap.u.len() != self.len || snap.udot.len() != self.len {
            return Err(Error::Dimension {
                expected: self.len,
                got: snap.u.len(),
            });
        }
        let w = self
            .writer
            .as_mut()
            .ok_or_else(|| Error::Format("disk trajectory already finished".into()))?;
        for v in snap.u.iter().chain(&snap.udot) {
            w.write_all(&v.to_le_bytes())?;
        }
        self.times.push(snap.t);
        Ok(())
    }
}

impl Background for DiskTrajectory {
    fn time_range(&self) -> (f64, f64) {
        match (self.times.first(), self.times.last()) {
            (Some(&a), Some(&b)) => (a.min(b), a.max(b)),
            _ => (f64::NAN, f64::NAN),
        }
    }

    fn state_at(&self, t: f64) -> Result<Vec<f64>> {
        let (i, j, w) = bracket(&self.times, t)?;
        let a = self.snapshot(i)?;
        if w == 0.0 {
            return Ok(a.u);
        }
        let b = self.snapshot(j)?;
        Ok(lerp(&a.u, &b.u, w))
    }
}

/// Sink that keeps only the latest snapshot.
#[derive(Debug, Default)]
pub struct LastSnapshot(pub Option<Snapshot>);

impl SnapshotSink for LastSnapshot {
    fn push(&mut self, snap: Snapshot) -> Result<()> {
        self.0 = Some(snap);
        Ok(())
    }
}

const CONSISTENT_VELOCITY_TOL: f64 = 1e-12;

fn block_norms(r: &[f64], blocks: usize) -> Vec<f64> {
    let m = r.len() / blocks;
    (0..blocks).map(|b| norm2(&r[b * m..(b + 1) * m])).collect()
}

fn ratios3(r: &[f64], r0: &[f64]) -> [f64; 3] {
    let mut out = [0.0; 3];
    for (k, o) in out.iter_mut().enumerate() {
        if let (Some(a), Some(b)) = (r.get(k), r0.get(k)) {
            *o = if *b > 0.0 { a / b } else { 0.0 };
        }
    }
    out
}

/// Velocity consistent with `R(t, U, U̇) = 0` for the given state.
pub fn consistent_velocity(
    sys: &dyn StageSystem,
    t: f64,
    u: &[f64],
    gmres: &GmresConfig,
) -> Result<Vec<f64>> {
    let zero = vec![0.0; u.len()];
    let r = sys.residual(t, u, &zero)?;
    if r.iter().all(|&v| v == 0.0) {
        return Ok(zero);
    }
    let mat = sys.matrix(t, u, &zero, 0.0, 1.0)?;
    let rhs: Vec<f64> = r.iter().map(|v| -v).collect();
    let cfg = GmresConfig {
        tol: CONSISTENT_VELOCITY_TOL.min(gmres.tol),
        max_iters: gmres.max_iters.max(1000),
        restart: 0,
        preconditioner: Preconditioner::Jacobi,
    };
    let out = gmres_solve(&mat, &rhs, &cfg)?;
    if !out.converged && out.residual > 1e-8 {
        return Err(Error::LinearSolver {
            iterations: out.iterations,
            residual: out.residual,
        });
    }
    Ok(out.x)
}

/// One generalized-α step from `(t, u, udot)` with signed step `dt`.
pub fn step(
    sys: &dyn StageSystem,
    t: f64,
    u: &[f64],
    udot: &[f64],
    dt: f64,
    alphas: Alphas,
    cfg: &SolverConfig,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let Alphas {
        alpha_m,
        alpha_f,
        gamma,
    } = alphas;
    let n = u.len();
    let t_af = t + alpha_f * dt;
    let blocks = sys.block_count();

    let stage = |v: &[f64]| -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let mut u_next = vec![0.0; n];
        let mut u_af = vec![0.0; n];
        let mut ud_am = vec![0.0; n];
        for i in 0..n {
            u_next[i] = u[i] + dt * udot[i] + gamma * dt * (v[i] - udot[i]);
            u_af[i] = u[i] + alpha_f * (u_next[i] - u[i]);
            ud_am[i] = udot[i] + alpha_m * (v[i] - udot[i]);
        }
        (u_next, u_af, ud_am)
    };

    let cu = alpha_f * gamma * dt;
    let cv = alpha_m;
    let mut v = udot.to_vec();
    let (mut u_next, mut u_af, mut ud_am) = stage(&v);
    let mut r = sys.residual(t_af, &u_af, &ud_am)?;
    let r0 = block_norms(&r, blocks);
    let floors = sys.block_floors(&u_af, &ud_am);
    let converged = |rn: &[f64]| {
        rn.iter()
            .zip(&r0)
            .zip(&floors)
            .all(|((&a, &b), &fl)| b == 0.0 || a <= cfg.newton.tol * b || a <= fl)
    };
    if converged(&r0) {
        return Ok((u_next, v));
    }
    let mut linear_matrix = None;
    let mut rn = r0.clone();
    for _ in 0..cfg.newton.max_newton {
        let owned;
        let mat = if sys.is_linear() {
            if linear_matrix.is_none() {
                linear_matrix = Some(sys.matrix(t_af, &u_af, &ud_am, cu, cv)?);
            }
            linear_matrix.as_ref().expect("assembled above")
        } else {
            owned = sys.matrix(t_af, &u_af, &ud_am, cu, cv)?;
            &owned
        };
        let rhs: Vec<f64> = r.iter().map(|x| -x).collect();
        let sol = gmres_solve(mat, &rhs, &cfg.gmres)?;
        if !sol.converged {
            log::debug!(
                "GMRES reached {} iterations at t = {t_af} (residual {:.3e})",
                sol.iterations,
                sol.residual
            );
        }
        for (vi, di) in v.iter_mut().zip(&sol.x) {
            *vi += di;
        }
        (u_next, u_af, ud_am) = stage(&v);
        r = sys.residual(t_af, &u_af, &ud_am)?;
        rn = block_norms(&r, blocks);
        if converged(&rn) {
            return Ok((u_next, v));
        }
    }
    Err(Error::Newton {
        time: t + dt,
        iterations: cfg.newton.max_newton,
        ratios: ratios3(&rn, &r0),
    })
}

/// Marches from `t0` for `steps` steps of signed size `dt`, feeding every
/// level (including the initial one) to `sink`. Returns the final snapshot.
pub fn solve_into(
    sys: &dyn StageSystem,
    t0: f64,
    u0: Vec<f64>,
    dt: f64,
    steps: usize,
    cfg: &SolverConfig,
    sink: &mut dyn SnapshotSink,
) -> Result<Snapshot> {
    if u0.len() != sys.len() {
        return Err(Error::Dimension {
            expected: sys.len(),
            got: u0.len(),
        });
    }
    let alphas = cfg.time.alphas();
    let udot0 = consistent_velocity(sys, t0, &u0, &cfg.gmres).map_err(|e| e.at_step(t0))?;
    let mut cur = Snapshot {
        t: t0,
        u: u0,
        udot: udot0,
    };
    sink.push(cur.clone())?;
    for k in 0..steps {
        let t = TimeConfig::time_at(t0, dt, k);
        let t_next = TimeConfig::time_at(t0, dt, k + 1);
        let (u, udot) =
            step(sys, t, &cur.u, &cur.udot, dt, alphas, cfg).map_err(|e| e.at_step(t_next))?;
        cur = Snapshot { t: t_next, u, udot };
        sink.push(cur.clone())?;
    }
    Ok(cur)
}

/// Forward-in-time solve on `[0, T]` with the configured step.
pub fn solve_forward(sys: &dyn StageSystem, u0: Vec<f64>, cfg: &SolverConfig) -> Result<Trajectory> {
    let steps = cfg.time.steps()?;
    let mut traj = Trajectory::new();
    solve_into(sys, 0.0, u0, cfg.time.dt.abs(), steps, cfg, &mut traj)?;
    Ok(traj)
}

/// Backward solve from `T` to 0 with step `−|dt|`; the trajectory is
/// returned in increasing time order.
pub fn solve_backward(sys: &dyn StageSystem, u_t: Vec<f64>, cfg: &SolverConfig) -> Result<Trajectory> {
    let steps = cfg.time.steps()?;
    let mut traj = Trajectory::new();
    solve_into(sys, cfg.time.t_end, u_t, -cfg.time.dt.abs(), steps, cfg, &mut traj)?;
    Ok(traj.into_forward_order())
}

/// Final state only, forward (`backward = false`) or backward in time.
pub fn solve_final(
    sys: &dyn StageSystem,
    u_start: Vec<f64>,
    cfg: &SolverConfig,
    backward: bool,
) -> Result<Snapshot> {
    let steps = cfg.time.steps()?;
    let mut last = LastSnapshot::default();
    let (t0, dt) = if backward {
        (cfg.time.t_end, -cfg.time.dt.abs())
    } else {
        (0.0, cfg.time.dt.abs())
    };
    solve_into(sys, t0, u_start, dt, steps, cfg, &mut last)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::SparseMatrix;

    /// Decoupled scalar ODEs `u̇_i + k_i u_i − s_i = 0`.
    struct Decay {
        k: Vec<f64>,
        s: Vec<f64>,
        sign: f64,
    }

    impl StageSystem for Decay {
        fn len(&self) -> usize {
            self.k.len()
        }
        fn block_count(&self) -> usize {
            1
        }
        fn is_linear(&self) -> bool {
            true
        }
        fn residual(&self, _t: f64, u: &[f64], udot: &[f64]) -> Result<Vec<f64>> {
            Ok((0..u.len()).map(|i| self.sign * udot[i] + self.k[i] * u[i] - self.s[i]).collect())
        }
        fn matrix(&self, _t: f64, _u: &[f64], _ud: &[f64], cu: f64, cv: f64) -> Result<SparseMatrix> {
            let trip: Vec<_> = (0..self.k.len()).map(|i| (i, i, cu * self.k[i] + cv * self.sign)).collect();
            Ok(SparseMatrix::from_triplets(self.k.len(), &trip))
        }
    }

    fn cfg(dt: f64, t_end: f64) -> SolverConfig {
        SolverConfig {
            time: TimeConfig {
                dt,
                t_end,
                rho_inf: 0.5,
            },
            newton: NewtonConfig {
                tol: 1e-12,
                max_newton: 10,
            },
            gmres: GmresConfig {
                tol: 1e-14,
                ..GmresConfig::default()
            },
        }
    }

    #[test]
    fn alphas_for_half_rho_inf() {
        let a = Alphas::from_rho_inf(0.5);
        assert_eq!(a.alpha_m, 5.0 / 6.0);
        assert_eq!(a.alpha_f, 2.0 / 3.0);
        assert_eq!(a.gamma, 2.0 / 3.0);
    }

    #[test]
    fn t_end_must_be_multiple_of_dt() {
        assert_eq!(TimeConfig { dt: 0.1, t_end: 15.0, rho_inf: 0.5 }.steps().unwrap(), 150);
        assert!(TimeConfig { dt: 0.1, t_end: 1.05, rho_inf: 0.5 }.steps().is_err());
        assert_eq!(TimeConfig { dt: -0.1, t_end: 1.0, rho_inf: 0.5 }.steps().unwrap(), 10);
    }

    #[test]
    fn scalar_decay_is_second_order() {
        // p' = α − γ p, p(0) = 0: p(t) = α/γ (1 − e^{−γt})
        let (alpha, gam) = (0.3, 2.0);
        let exact = alpha / gam * (1.0 - (-gam * 1.0f64).exp());
        let err = |dt: f64| {
            let sys = Decay {
                k: vec![gam],
                s: vec![alpha],
                sign: 1.0,
            };
            let last = solve_final(&sys, vec![0.0], &cfg(dt, 1.0), false).unwrap();
            (last.u[0] - exact).abs()
        };
        let (e1, e2) = (err(0.1), err(0.05));
        assert!(e1 < 1e-3);
        let ratio = e1 / e2;
        assert!((3.4..=4.6).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn backward_run_reproduces_decay() {
        // −ṙ + γ r = 0 from r(T) = 1 gives r(0) = e^{−γT}
        let gam = 0.7;
        let sys = Decay {
            k: vec![gam],
            s: vec![0.0],
            sign: -1.0,
        };
        let traj = solve_backward(&sys, vec![1.0], &cfg(0.05, 2.0)).unwrap();
        assert_eq!(traj.first().unwrap().t, 0.0);
        assert!((traj.last().unwrap().t - 2.0).abs() < 1e-12);
        let r0 = traj.first().unwrap().u[0];
        assert!((r0 - (-gam * 2.0f64).exp()).abs() < 1e-3);
    }

    #[test]
    fn zero_data_gives_zero_trajectory() {
        let sys = Decay {
            k: vec![1.0, 2.0],
            s: vec![0.0, 0.0],
            sign: 1.0,
        };
        let traj = solve_forward(&sys, vec![0.0, 0.0], &cfg(0.1, 1.0)).unwrap();
        assert_eq!(traj.len(), 11);
        assert!(traj.snapshots().iter().all(|s| s.u.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn interpolation_between_snapshots() {
        let mut traj = Trajectory::new();
        for k in 0..3 {
            traj.push(Snapshot {
                t: k as f64,
                u: vec![k as f64 * 2.0],
                udot: vec![0.0],
            })
            .unwrap();
        }
        assert_eq!(traj.state_at(1.5).unwrap(), vec![3.0]);
        assert_eq!(traj.state_at(2.0).unwrap(), vec![4.0]);
        assert!(traj.state_at(2.5).is_err());
    }

    #[test]
    fn disk_trajectory_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let sys = Decay {
            k: vec![1.0, 0.5],
            s: vec![0.2, 0.1],
            sign: 1.0,
        };
        let c = cfg(0.1, 1.0);
        let mut disk = DiskTrajectory::create(dir.path().join("traj.bin"), 2).unwrap();
        solve_into(&sys, 0.0, vec![1.0, 0.0], 0.1, 10, &c, &mut disk).unwrap();
        disk.finish().unwrap();
        let mem = solve_forward(&sys, vec![1.0, 0.0], &c).unwrap();
        for t in [0.0, 0.35, 1.0] {
            assert_eq!(disk.state_at(t).unwrap(), mem.state_at(t).unwrap());
        }
        assert_eq!(disk.snapshot(10).unwrap(), mem.snapshots()[10]);
    }
}
