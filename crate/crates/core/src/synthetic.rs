//! Synthetic ground truth on a refined mesh and the measurement noise model.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrator::{solve_forward, SolverConfig, Trajectory};
use crate::model::ModelParams;
use crate::spline::{l2_project, Field, SplineSpace};
use crate::systems::{GalerkinSystem, StateTriple, SystemKind};

/// Smoothed elliptical indicator `½ − ½·tanh(k(ρ − 1))` with
/// `ρ² = ((x−x_c)/a)² + ((y−y_c)/b)²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Ellipse {
    pub x_c: f64,
    pub y_c: f64,
    pub a: f64,
    pub b: f64,
    #[serde(default = "default_steepness")]
    pub steepness: f64,
}

fn default_steepness() -> f64 {
    10.0
}

impl Ellipse {
    pub fn centred(domain_side: f64, a: f64, b: f64) -> Self {
        Ellipse {
            x_c: 0.5 * domain_side,
            y_c: 0.5 * domain_side,
            a,
            b,
            steepness: default_steepness(),
        }
    }

    pub fn value(&self, x: f64, y: f64) -> f64 {
        let rho = (((x - self.x_c) / self.a).powi(2) + ((y - self.y_c) / self.b).powi(2)).sqrt();
        0.5 - 0.5 * (self.steepness * (rho - 1.0)).tanh()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.a > 0.0 && self.b > 0.0 && self.steepness > 0.0) {
            return Err(Error::Config(
                "ellipse semi-axes and steepness must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Projection onto the zero-trace subspace of `space`.
    pub fn project(&self, space: &Arc<SplineSpace>) -> Result<Field> {
        l2_project(&|x, y| self.value(x, y), space, true)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroundTruthSpec {
    /// Elements per side of the truth mesh; an integer multiple of the
    /// working mesh.
    pub fine_elements_per_side: usize,
    /// Semi-axes in μm; the centre defaults to the domain centre.
    #[serde(default = "default_a")]
    pub a: f64,
    #[serde(default = "default_b")]
    pub b: f64,
    #[serde(default)]
    pub x_c: Option<f64>,
    #[serde(default)]
    pub y_c: Option<f64>,
    #[serde(default = "default_steepness")]
    pub steepness: f64,
}

fn default_a() -> f64 {
    150.0
}

fn default_b() -> f64 {
    200.0
}

impl GroundTruthSpec {
    pub fn ellipse(&self, domain_side: f64) -> Ellipse {
        Ellipse {
            x_c: self.x_c.unwrap_or(0.5 * domain_side),
            y_c: self.y_c.unwrap_or(0.5 * domain_side),
            a: self.a,
            b: self.b,
            steepness: self.steepness,
        }
    }
}

/// Reference simulation on the truth mesh.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub space: Arc<SplineSpace>,
    pub phi0: Field,
    pub trajectory: Trajectory,
    /// `φ(T)`, the clean measurement.
    pub phi_meas: Field,
}

impl GroundTruth {
    /// `φ` of the reference run at a stored time.
    pub fn phi_at(&self, t: f64) -> Option<Field> {
        let snap = self.trajectory.at(t)?;
        let n = self.space.n_f();
        Field::new(self.space.clone(), snap.u[..n].to_vec()).ok()
    }
}

/// Initial state `(φ₀, σ₀, p₀)` built from `φ₀` through the initial laws.
pub fn initial_state(params: &ModelParams, phi0: &Field) -> StateTriple {
    let (sigma0, p0) = params.initial_laws(phi0);
    StateTriple {
        u1: phi0.clone(),
        u2: sigma0,
        u3: p0,
        time: 0.0,
    }
}

/// Projects the ellipse onto `space`, applies the initial laws and runs the
/// forward model to `T`.
pub fn make_ground_truth(
    ellipse: &Ellipse,
    space: &Arc<SplineSpace>,
    params: &ModelParams,
    solver: &SolverConfig,
) -> Result<GroundTruth> {
    ellipse.validate()?;
    let phi0 = ellipse.project(space)?;
    let sys = GalerkinSystem::new(space.clone(), params, SystemKind::Forward);
    let trajectory = solve_forward(&sys, initial_state(params, &phi0).to_flat(), solver)?;
    let n = space.n_f();
    let last = trajectory.last().expect("trajectory holds the initial state");
    let phi_meas = Field::new(space.clone(), last.u[..n].to_vec())?;
    Ok(GroundTruth {
        space: space.clone(),
        phi0,
        trajectory,
        phi_meas,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseKind {
    /// `φ_A ← φ_A·(1 + level·ξ_A)`.
    #[default]
    Multiplicative,
    /// `φ_A ← φ_A + level·max(φ)·ξ_A`.
    Additive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseConfig {
    pub level: f64,
    pub kind: NoiseKind,
    /// Only coefficients strictly above this value are perturbed.
    pub threshold: f64,
    /// Upper bound of the post-noise clamp; the lower bound is 0.
    pub clamp_max: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            level: 0.1,
            kind: NoiseKind::Multiplicative,
            threshold: 0.001,
            clamp_max: 1.05,
        }
    }
}

impl NoiseConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.level >= 0.0 && self.level.is_finite()) {
            return Err(Error::Config(format!("noise.level must be >= 0 (got {})", self.level)));
        }
        if !(self.clamp_max > 0.0) {
            return Err(Error::Config("noise.clamp_max must be positive".into()));
        }
        Ok(())
    }
}

/// Seeded Gaussian noise on the control variables above the threshold.
/// Coefficients at or below it are returned bit-identical.
pub fn add_noise(phi: &Field, cfg: &NoiseConfig, seed: u64) -> Result<Field> {
    cfg.validate()?;
    if cfg.level == 0.0 {
        return Ok(phi.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let max = phi.coeffs().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let coeffs = phi
        .coeffs()
        .iter()
        .map(|&c| {
            if c <= cfg.threshold {
                return c;
            }
            let xi: f64 = StandardNormal.sample(&mut rng);
            let noisy = match cfg.kind {
                NoiseKind::Multiplicative => c * (1.0 + cfg.level * xi),
                NoiseKind::Additive => c + cfg.level * max * xi,
            };
            noisy.clamp(0.0, cfg.clamp_max)
        })
        .collect();
    phi.with_coeffs(coeffs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::integrator::{NewtonConfig, TimeConfig};
    use crate::model::tests::sample_config;

    #[test]
    fn circular_ellipse_is_radially_symmetric() {
        let s = SplineSpace::new(32, 1000.0).unwrap();
        let e = Ellipse::centred(1000.0, 150.0, 150.0);
        let phi = e.project(&s).unwrap();
        for d in [50.0, 150.0, 230.0] {
            let l = phi.evaluate(500.0 - d, 500.0).unwrap();
            let r = phi.evaluate(500.0 + d, 500.0).unwrap();
            assert!((l - r).abs() < 1e-10);
        }
    }

    #[test]
    fn projected_ellipse_stays_near_unit_range() {
        let s = SplineSpace::new(512, 3000.0).unwrap();
        let phi = Ellipse::centred(3000.0, 150.0, 200.0).project(&s).unwrap();
        let (lo, hi) = phi
            .coeffs()
            .iter()
            .fold((f64::MAX, f64::MIN), |(a, b), &c| (a.min(c), b.max(c)));
        assert!(lo > -0.05 && hi < 1.05, "range ({lo}, {hi})");
        assert!(hi > 0.99 && hi < 1.01);
        assert!(phi.evaluate(1500.0, 1500.0).unwrap() > 0.99);
        let mask = s.dirichlet_mask();
        assert!(phi.coeffs().iter().zip(mask).all(|(c, m)| !m || *c == 0.0));
    }

    #[test]
    fn zero_horizon_measures_the_initial_field() {
        let params: ModelParams = sample_config().try_into().unwrap();
        let s = SplineSpace::new(8, 1000.0).unwrap();
        let solver = SolverConfig {
            time: TimeConfig {
                dt: 0.1,
                t_end: 0.0,
                rho_inf: 0.5,
            },
            newton: NewtonConfig::default(),
            gmres: Default::default(),
        };
        let gt = make_ground_truth(&Ellipse::centred(1000.0, 150.0, 200.0), &s, &params, &solver).unwrap();
        assert_eq!(gt.phi_meas.coeffs(), gt.phi0.coeffs());
    }

    #[test]
    fn noise_respects_threshold_and_seed() {
        let s = SplineSpace::new(32, 1000.0).unwrap();
        let phi = Ellipse::centred(1000.0, 150.0, 200.0).project(&s).unwrap();
        let cfg = NoiseConfig::default();
        let a = add_noise(&phi, &cfg, 7).unwrap();
        assert_eq!(a.coeffs(), add_noise(&phi, &cfg, 7).unwrap().coeffs());
        assert_ne!(a.coeffs(), add_noise(&phi, &cfg, 8).unwrap().coeffs());
        for (&clean, &noisy) in phi.coeffs().iter().zip(a.coeffs()) {
            if clean <= cfg.threshold {
                assert_eq!(clean.to_bits(), noisy.to_bits());
            } else {
                assert!((0.0..=cfg.clamp_max).contains(&noisy));
            }
        }
    }

    #[test]
    fn multiplicative_noise_has_requested_spread() {
        // mid-range values keep the clamp inactive
        let s = SplineSpace::new(100, 1000.0).unwrap();
        let mut phi = Field::constant(s, 0.5);
        phi.apply_zero_trace();
        let noisy = add_noise(&phi, &NoiseConfig::default(), 3).unwrap();
        let rel: Vec<f64> = phi
            .coeffs()
            .iter()
            .zip(noisy.coeffs())
            .filter(|(c, _)| **c > 0.001)
            .map(|(c, n)| n / c - 1.0)
            .collect();
        assert!(rel.len() >= 10_000);
        let mean = rel.iter().sum::<f64>() / rel.len() as f64;
        let std = (rel.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / rel.len() as f64).sqrt();
        assert!((std - 0.1).abs() < 0.01, "std {std}");
    }

    #[test]
    fn zero_level_is_identity() {
        let s = SplineSpace::new(8, 1000.0).unwrap();
        let phi = Ellipse::centred(1000.0, 150.0, 200.0).project(&s).unwrap();
        let cfg = NoiseConfig {
            level: 0.0,
            ..NoiseConfig::default()
        };
        assert_eq!(add_noise(&phi, &cfg, 1).unwrap().coeffs(), phi.coeffs());
    }
}
