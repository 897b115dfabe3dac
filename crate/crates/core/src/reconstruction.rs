//! Identification of the initial tumour phase field from a terminal
//! measurement by Landweber-type gradient iterations.
//!
//! Each iteration runs the forward model from `φ₀ʲ` (with `σ₀`, `p₀` from the
//! initial laws), the adjoint model backwards from the terminal misfit and,
//! for the steepest-descent variant, the linearised model seeded with the
//! adjoint state at `t = 0`. The update `φ₀ʲ⁺¹ = φ₀ʲ − μʲ qʲ(0)` is then
//! truncated to `[0, 1]` coefficient-wise.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrator::{solve_final, solve_forward, SolverConfig, Trajectory};
use crate::metrics::{metrics, MetricsConfig, MetricsReport};
use crate::model::ModelParams;
use crate::spline::{l2_project, Field, SplineSpace};
use crate::synthetic::{initial_state, Ellipse};
use crate::systems::{GalerkinSystem, StateTriple, SystemKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Steepest-descent step `‖q(0)‖²/‖Y(T)‖²`.
    #[default]
    LandweberSd,
    /// Locally adaptive step from successive iterates and gradients.
    AdaptiveGd,
    /// Constant step `fixed_step`.
    FixedLandweber,
}

/// Shape of the initial guess, centred at the measurement's centre of mass.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GuessShape {
    pub a: f64,
    pub b: f64,
    #[serde(default = "default_steepness")]
    pub steepness: f64,
}

fn default_steepness() -> f64 {
    10.0
}

impl Default for GuessShape {
    fn default() -> Self {
        GuessShape {
            a: 100.0,
            b: 100.0,
            steepness: default_steepness(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReconConfig {
    pub method: Method,
    pub eps_sd: f64,
    /// Last iteration index `j*`; the algorithm stops there unconverged.
    pub max_iters: usize,
    /// Weights of the φ, σ and p misfits at `T`.
    pub kappa: [f64; 3],
    /// Step of [`Method::FixedLandweber`].
    pub fixed_step: Option<f64>,
    pub guess: GuessShape,
}

impl Default for ReconConfig {
    fn default() -> Self {
        ReconConfig {
            method: Method::LandweberSd,
            eps_sd: 1e-4,
            max_iters: 500,
            kappa: [1.0, 0.0, 0.0],
            fixed_step: None,
            guess: GuessShape::default(),
        }
    }
}

impl ReconConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps_sd > 0.0) {
            return Err(Error::Config(format!("recon.eps_sd must be positive (got {})", self.eps_sd)));
        }
        if self.kappa.iter().any(|&k| !(k >= 0.0)) || self.kappa.iter().all(|&k| k == 0.0) {
            return Err(Error::Config(
                "recon.kappa must be non-negative and not all zero".into(),
            ));
        }
        if self.method == Method::FixedLandweber && !self.fixed_step.is_some_and(|s| s > 0.0) {
            return Err(Error::Config(
                "recon.fixed_step must be positive for method fixed_landweber".into(),
            ));
        }
        if !(self.guess.a > 0.0 && self.guess.b > 0.0 && self.guess.steepness > 0.0) {
            return Err(Error::Config(
                "recon.guess semi-axes and steepness must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// One row of the iteration history.
#[derive(Debug, Clone, PartialEq)]
pub struct ReconRecord {
    pub j: usize,
    /// Step taken from this iterate; absent on the final row.
    pub mu: Option<f64>,
    /// Ratio `μʲ/μʲ⁻¹` of the adaptive method.
    pub theta: Option<f64>,
    pub objective: f64,
    pub grad_norm: f64,
    pub metrics0: Option<MetricsReport>,
    pub metrics_t: Option<MetricsReport>,
}

/// Terminal data at `T`. Fields other than `phi` are needed only when their
/// misfit weight is positive.
#[derive(Debug, Clone)]
pub struct Measurement {
    pub phi: Field,
    pub sigma: Option<Field>,
    pub p: Option<Field>,
}

impl Measurement {
    pub fn phi_only(phi: Field) -> Self {
        Measurement {
            phi,
            sigma: None,
            p: None,
        }
    }
}

/// Reference fields for per-iteration metrics.
#[derive(Debug, Clone)]
pub struct Truth {
    pub phi0: Field,
    pub phi_t: Field,
}

/// Everything fixed during one reconstruction.
#[derive(Clone)]
pub struct Problem<'a> {
    pub space: Arc<SplineSpace>,
    pub params: &'a ModelParams,
    pub solver: SolverConfig,
    pub measurement: Measurement,
    /// Weights of the φ, σ and p misfits at `T`.
    pub kappa: [f64; 3],
    pub truth: Option<Truth>,
    pub metrics: MetricsConfig,
}

/// Data of one iteration handed to an observer.
pub struct IterationView<'a> {
    pub record: &'a ReconRecord,
    pub phi0: &'a Field,
    pub phi_t: &'a Field,
    /// Adjoint state at `t = 0`; its first field is the gradient.
    pub adjoint0: &'a StateTriple,
    /// Linearised state at `T` (steepest descent only).
    pub linearised_t: Option<&'a StateTriple>,
}

/// Receives every iteration as soon as it is complete.
pub trait Observer {
    fn on_iteration(&mut self, view: &IterationView<'_>) -> Result<()>;
}

impl Observer for () {
    fn on_iteration(&mut self, _view: &IterationView<'_>) -> Result<()> {
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct ReconOutcome {
    pub phi0: Field,
    pub phi_t: Field,
    pub history: Vec<ReconRecord>,
    pub converged: bool,
}

/// Inputs of the two-part stopping rule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergenceCheck {
    /// `‖q₀⁰‖²`, `‖q₀ʲ‖²` and `J₀`, `Jʲ`.
    pub grad_sq_first: f64,
    pub grad_sq: f64,
    pub objective_first: f64,
    pub objective: f64,
    /// `(‖q₀ʲ − q₀ʲ⁻¹‖², ‖q₀ʲ⁻¹‖²)` once a previous iterate exists.
    pub grad_step: Option<(f64, f64)>,
    /// `Jʲ⁻¹` once a previous iterate exists.
    pub objective_prev: Option<f64>,
}

/// True when both the gradient and the objective criterion hold, each as
/// the OR of its absolute and its difference form.
pub fn check_convergence(c: &ConvergenceCheck, eps: f64) -> bool {
    let gradient = c.grad_sq <= eps * c.grad_sq_first
        || c.grad_step.is_some_and(|(diff, prev)| diff <= eps * prev);
    let objective = c.objective <= eps * c.objective_first
        || c.objective_prev
            .is_some_and(|prev| (c.objective - prev).abs() <= eps * prev);
    gradient && objective
}

/// Coefficients clamped to `[0, 1]`.
pub fn truncate_phi0(field: &Field) -> Field {
    field.map_coeffs(|c| c.clamp(0.0, 1.0))
}

/// Centre of mass `(∫xφ, ∫yφ)/∫φ`.
pub fn centre_of_mass(phi: &Field) -> Result<(f64, f64)> {
    let space = phi.space();
    let x = l2_project(&|x, _| x, space, false)?;
    let y = l2_project(&|_, y| y, space, false)?;
    let mass = phi.integral();
    if !(mass > 0.0) {
        return Err(Error::DegenerateMeasurement(mass));
    }
    Ok((phi.l2_inner(&x)? / mass, phi.l2_inner(&y)? / mass))
}

/// Elliptical guess with the given semi-axes at the centre of mass of
/// `phi_meas`, projected onto its space.
pub fn initial_guess(phi_meas: &Field, shape: &GuessShape) -> Result<Field> {
    let (x_c, y_c) = centre_of_mass(phi_meas)?;
    let e = Ellipse {
        x_c,
        y_c,
        a: shape.a,
        b: shape.b,
        steepness: shape.steepness,
    };
    e.project(phi_meas.space())
}

fn phi_part(space: &Arc<SplineSpace>, u: &[f64]) -> Result<Field> {
    Field::new(space.clone(), u[..space.n_f()].to_vec())
}

impl Problem<'_> {
    fn check_space(&self, f: &Field) -> Result<()> {
        if self.space.same_as(f.space()) {
            Ok(())
        } else {
            Err(Error::SpaceMismatch)
        }
    }

    /// Forward trajectory from a full initial state.
    pub fn forward(&self, u0: &StateTriple) -> Result<Trajectory> {
        let sys = GalerkinSystem::new(self.space.clone(), self.params, SystemKind::Forward);
        solve_forward(&sys, u0.to_flat(), &self.solver)
    }

    /// Forward trajectory from `φ₀` through the initial laws.
    pub fn forward_from_phi0(&self, phi0: &Field) -> Result<Trajectory> {
        self.check_space(phi0)?;
        self.forward(&initial_state(self.params, phi0))
    }

    /// Weighted terminal misfit `(κ₁(φ−φ_m), κ₂(σ−σ_m), κ₃(p−p_m))` and the
    /// objective `½Σκ_i‖·‖²`.
    pub fn terminal_misfit(&self, u_t: &[f64]) -> Result<(StateTriple, f64)> {
        let n = self.space.n_f();
        let t = self.solver.time.t_end;
        let mut out = StateTriple::zeros(self.space.clone(), t);
        let mut objective = 0.0;
        let meas = [Some(&self.measurement.phi), self.measurement.sigma.as_ref(), self.measurement.p.as_ref()];
        let names = ["phi", "sigma", "p"];
        for (f, target) in [&mut out.u1, &mut out.u2, &mut out.u3].into_iter().enumerate() {
            let kappa = self.kappa[f];
            if kappa == 0.0 {
                continue;
            }
            let m = meas[f].ok_or_else(|| {
                Error::Config(format!("kappa for {} is positive but no measurement was given", names[f]))
            })?;
            self.check_space(m)?;
            let diff: Vec<f64> = u_t[f * n..(f + 1) * n]
                .iter()
                .zip(m.coeffs())
                .map(|(a, b)| a - b)
                .collect();
            let d = Field::new(self.space.clone(), diff)?;
            objective += 0.5 * kappa * d.l2_norm().powi(2);
            *target = d.map_coeffs(|c| kappa * c);
        }
        out.u1.apply_zero_trace();
        Ok((out, objective))
    }

    /// Adjoint state at `t = 0` for terminal data `terminal` on `background`.
    pub fn adjoint_at_zero(&self, background: &Trajectory, terminal: &StateTriple) -> Result<StateTriple> {
        let sys = GalerkinSystem::new(self.space.clone(), self.params, SystemKind::Adjoint(background));
        let last = solve_final(&sys, terminal.to_flat(), &self.solver, true)?;
        StateTriple::from_flat(self.space.clone(), &last.u, last.t)
    }

    /// Linearised state at `T` seeded with `seed` at `t = 0`.
    pub fn linearised_at_end(&self, background: &Trajectory, seed: &StateTriple) -> Result<StateTriple> {
        let sys = GalerkinSystem::new(self.space.clone(), self.params, SystemKind::Linearised(background));
        let last = solve_final(&sys, seed.to_flat(), &self.solver, false)?;
        StateTriple::from_flat(self.space.clone(), &last.u, last.t)
    }

    /// Objective value at `φ₀`.
    pub fn objective(&self, phi0: &Field) -> Result<f64> {
        let traj = self.forward_from_phi0(phi0)?;
        let last = traj.last().expect("trajectory holds the initial state");
        Ok(self.terminal_misfit(&last.u)?.1)
    }

    /// Objective, adjoint state at 0 and forward trajectory at `φ₀`.
    pub fn gradient(&self, phi0: &Field) -> Result<(f64, StateTriple, Trajectory)> {
        let traj = self.forward_from_phi0(phi0)?;
        let last = traj.last().expect("trajectory holds the initial state");
        let (terminal, j) = self.terminal_misfit(&last.u)?;
        let q0 = self.adjoint_at_zero(&traj, &terminal)?;
        Ok((j, q0, traj))
    }

    fn metrics_pair(&self, phi0: &Field, phi_t: &Field) -> Result<(Option<MetricsReport>, Option<MetricsReport>)> {
        match &self.truth {
            None => Ok((None, None)),
            Some(t) => Ok((
                Some(metrics(&t.phi0, phi0, &self.metrics)?),
                Some(metrics(&t.phi_t, phi_t, &self.metrics)?),
            )),
        }
    }
}

/// Adaptive step rule: `min{√(1+θ)·μ_prev, ‖Δφ₀‖/(2‖Δq₀‖)}`, with a zero
/// gradient change selecting the first branch and `θ = ∞` the second.
/// Returns `(μ, θ_new)`.
pub fn adaptive_step(mu_prev: f64, theta_prev: f64, dphi_norm: f64, dq_norm: f64) -> (f64, f64) {
    let first = (1.0 + theta_prev).sqrt() * mu_prev;
    let second = if dq_norm > 0.0 {
        dphi_norm / (2.0 * dq_norm)
    } else {
        f64::INFINITY
    };
    let mut mu = first.min(second);
    if !mu.is_finite() {
        mu = mu_prev;
    }
    (mu, mu / mu_prev)
}

/// Initial adaptive step `0.2/q_M` with `q_M = max(max q, |min q|)`.
pub fn initial_adaptive_step(q0: &Field) -> Option<f64> {
    let hi = q0.coeffs().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lo = q0.coeffs().iter().cloned().fold(f64::INFINITY, f64::min);
    let q_m = hi.max(lo.abs());
    (q_m > 0.0).then(|| 0.2 / q_m)
}

/// Runs the configured method from `guess`.
pub fn reconstruct(
    problem: &Problem<'_>,
    guess: &Field,
    cfg: &ReconConfig,
    observer: &mut dyn Observer,
) -> Result<ReconOutcome> {
    cfg.validate()?;
    problem.check_space(guess)?;
    problem.check_space(&problem.measurement.phi)?;
    let problem = Problem {
        kappa: cfg.kappa,
        ..problem.clone()
    };
    run(&problem, guess, cfg, observer)
}

/// Steepest-descent Landweber iteration.
pub fn landweber_sd(
    problem: &Problem<'_>,
    guess: &Field,
    cfg: &ReconConfig,
    observer: &mut dyn Observer,
) -> Result<ReconOutcome> {
    let cfg = ReconConfig {
        method: Method::LandweberSd,
        ..cfg.clone()
    };
    reconstruct(problem, guess, &cfg, observer)
}

/// Adaptive gradient descent.
pub fn adaptive_gd(
    problem: &Problem<'_>,
    guess: &Field,
    cfg: &ReconConfig,
    observer: &mut dyn Observer,
) -> Result<ReconOutcome> {
    let cfg = ReconConfig {
        method: Method::AdaptiveGd,
        ..cfg.clone()
    };
    reconstruct(problem, guess, &cfg, observer)
}

struct Previous {
    phi0: Field,
    q0: Field,
    grad_sq: f64,
    objective: f64,
    mu: f64,
    theta: f64,
}

fn run(
    problem: &Problem<'_>,
    guess: &Field,
    cfg: &ReconConfig,
    observer: &mut dyn Observer,
) -> Result<ReconOutcome> {
    let mut phi0 = truncate_phi0(guess);
    phi0.apply_zero_trace();
    let mut history = Vec::new();
    let mut first: Option<(f64, f64)> = None;
    let mut prev: Option<Previous> = None;

    for j in 0..=cfg.max_iters {
        let step = (|| -> Result<_> {
            let (objective, adj0, traj) = problem.gradient(&phi0)?;
            let last = traj.last().expect("trajectory holds the initial state");
            let phi_t = phi_part(&problem.space, &last.u)?;
            Ok((objective, adj0, traj, phi_t))
        })();
        let (objective, adj0, traj, phi_t) = step.map_err(|e| e.at_iteration(j))?;
        let q0 = adj0.u1.clone();
        let grad_sq = q0.l2_norm().powi(2);
        let (grad_sq_first, objective_first) = *first.get_or_insert((grad_sq, objective));

        let check = ConvergenceCheck {
            grad_sq_first,
            grad_sq,
            objective_first,
            objective,
            grad_step: match &prev {
                Some(p) => Some((q0.sub(&p.q0)?.l2_norm().powi(2), p.grad_sq)),
                None => None,
            },
            objective_prev: prev.as_ref().map(|p| p.objective),
        };
        let mut converged = check_convergence(&check, cfg.eps_sd);
        let (metrics0, metrics_t) = problem.metrics_pair(&phi0, &phi_t).map_err(|e| e.at_iteration(j))?;
        let mut record = ReconRecord {
            j,
            mu: None,
            theta: None,
            objective,
            grad_norm: grad_sq.sqrt(),
            metrics0,
            metrics_t,
        };

        let mut lin_t = None;
        let mut step_size = None;
        if !converged && j < cfg.max_iters {
            match cfg.method {
                Method::LandweberSd => {
                    let y = problem
                        .linearised_at_end(&traj, &adj0)
                        .map_err(|e| e.at_iteration(j))?;
                    let y_sq = y.u1.l2_norm().powi(2);
                    if !(y_sq > 0.0) {
                        return Err(Error::StepSingular(j));
                    }
                    step_size = Some(grad_sq / y_sq);
                    lin_t = Some(y);
                }
                Method::AdaptiveGd => match &prev {
                    None => match initial_adaptive_step(&q0) {
                        Some(mu) => {
                            step_size = Some(mu);
                            record.theta = Some(f64::INFINITY);
                        }
                        None => converged = true,
                    },
                    Some(p) => {
                        let dphi = phi0.sub(&p.phi0)?.l2_norm();
                        let dq = q0.sub(&p.q0)?.l2_norm();
                        let (mu, theta) = adaptive_step(p.mu, p.theta, dphi, dq);
                        step_size = Some(mu);
                        record.theta = Some(theta);
                    }
                },
                Method::FixedLandweber => step_size = cfg.fixed_step,
            }
        }
        record.mu = step_size;
        observer.on_iteration(&IterationView {
            record: &record,
            phi0: &phi0,
            phi_t: &phi_t,
            adjoint0: &adj0,
            linearised_t: lin_t.as_ref(),
        })?;
        log::info!(
            "iteration {j}: J = {objective:.6e}, |q0| = {:.6e}, mu = {}",
            record.grad_norm,
            step_size.map_or("-".to_string(), |m| format!("{m:.6e}"))
        );
        history.push(record);

        let Some(mu) = step_size else {
            return Ok(ReconOutcome {
                phi0,
                phi_t,
                history,
                converged,
            });
        };
        let theta = history.last().and_then(|r| r.theta).unwrap_or(f64::INFINITY);
        let next = truncate_phi0(&phi0.add_scaled(-mu, &q0)?);
        prev = Some(Previous {
            phi0: std::mem::replace(&mut phi0, next),
            q0,
            grad_sq,
            objective,
            mu,
            theta,
        });
    }
    unreachable!("the loop returns at j = max_iters")
}

/// `log₁₀ e` against `j` least-squares slope and the implied contraction
/// `c = 1 − 10^slope`.
pub fn decay_rate(errors: &[f64]) -> Option<(f64, f64)> {
    let pts: Vec<(f64, f64)> = errors
        .iter()
        .enumerate()
        .filter(|(_, &e)| e > 0.0)
        .map(|(j, &e)| (j as f64, e.log10()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let slope = sxy / sxx;
    Some((slope, 1.0 - 10f64.powf(slope)))
}
