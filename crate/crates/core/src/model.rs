//! Model parameters, constitutive functions and the initial-state laws for
//! nutrient and tissue PSA.

use std::f64::consts::{FRAC_1_PI, PI};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spline::Field;

/// Prefactor of the arctangent in the tilting function.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TiltLaw {
    /// `(ρ − A)/π`: asymptotes are exactly `m_ref·ρ` and `m_ref·A`.
    #[default]
    Pi,
    /// `(ρ − A)/2`: the variant stated among the model assumptions.
    Half,
}

/// Parameters as read from a configuration section. `lambda` is derived
/// from `M` and `ell`; when given explicitly it must agree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    pub eta: f64,
    #[serde(rename = "D")]
    pub d: f64,
    #[serde(rename = "M")]
    pub m: f64,
    pub ell: f64,
    pub gamma_h: f64,
    pub gamma_c: f64,
    #[serde(rename = "S_h")]
    pub s_h: f64,
    #[serde(rename = "S_c")]
    pub s_c: f64,
    pub gamma_p: f64,
    pub alpha_h: f64,
    pub alpha_c: f64,
    pub m_ref: f64,
    pub rho: f64,
    #[serde(rename = "A")]
    pub a: f64,
    pub sigma_l: f64,
    pub sigma_r: f64,
    pub c0_sigma: f64,
    pub c1_sigma: f64,
    pub c0_p: f64,
    pub c1_p: f64,
    #[serde(default)]
    pub tilt_law: TiltLaw,
}

/// Validated model parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub lambda: f64,
    pub eta: f64,
    pub d: f64,
    pub m: f64,
    pub ell: f64,
    pub gamma_h: f64,
    pub gamma_c: f64,
    pub s_h: f64,
    pub s_c: f64,
    pub gamma_p: f64,
    pub alpha_h: f64,
    pub alpha_c: f64,
    pub m_ref: f64,
    pub rho: f64,
    pub a: f64,
    pub sigma_l: f64,
    pub sigma_r: f64,
    pub c0_sigma: f64,
    pub c1_sigma: f64,
    pub c0_p: f64,
    pub c1_p: f64,
    pub tilt_law: TiltLaw,
}

impl TryFrom<ModelConfig> for ModelParams {
    type Error = Error;

    fn try_from(c: ModelConfig) -> Result<Self> {
        let positive = [
            ("eta", c.eta),
            ("D", c.d),
            ("M", c.m),
            ("ell", c.ell),
            ("gamma_h", c.gamma_h),
            ("gamma_c", c.gamma_c),
            ("S_h", c.s_h),
            ("S_c", c.s_c),
            ("gamma_p", c.gamma_p),
            ("alpha_h", c.alpha_h),
            ("alpha_c", c.alpha_c),
            ("m_ref", c.m_ref),
            ("rho", c.rho),
            ("A", c.a),
            ("sigma_l", c.sigma_l),
            ("sigma_r", c.sigma_r),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("model.{name} must be positive (got {v})")));
            }
        }
        for (name, v) in [
            ("c0_sigma", c.c0_sigma),
            ("c1_sigma", c.c1_sigma),
            ("c0_p", c.c0_p),
            ("c1_p", c.c1_p),
        ] {
            if !v.is_finite() {
                return Err(Error::Config(format!("model.{name} must be finite")));
            }
        }
        let lambda = c.m * c.ell * c.ell;
        if let Some(given) = c.lambda {
            if (given - lambda).abs() > 1e-9 * lambda {
                return Err(Error::Config(format!(
                    "model.lambda = {given} disagrees with M*ell^2 = {lambda}"
                )));
            }
        }
        Ok(ModelParams {
            lambda,
            eta: c.eta,
            d: c.d,
            m: c.m,
            ell: c.ell,
            gamma_h: c.gamma_h,
            gamma_c: c.gamma_c,
            s_h: c.s_h,
            s_c: c.s_c,
            gamma_p: c.gamma_p,
            alpha_h: c.alpha_h,
            alpha_c: c.alpha_c,
            m_ref: c.m_ref,
            rho: c.rho,
            a: c.a,
            sigma_l: c.sigma_l,
            sigma_r: c.sigma_r,
            c0_sigma: c.c0_sigma,
            c1_sigma: c.c1_sigma,
            c0_p: c.c0_p,
            c1_p: c.c1_p,
            tilt_law: c.tilt_law,
        })
    }
}

impl ModelParams {
    pub fn gamma_ch(&self) -> f64 {
        self.gamma_c - self.gamma_h
    }

    pub fn s_ch(&self) -> f64 {
        self.s_c - self.s_h
    }

    pub fn alpha_ch(&self) -> f64 {
        self.alpha_c - self.alpha_h
    }

    /// Double-well potential `F(φ) = Mφ²(1−φ)²`.
    pub fn potential_f(&self, phi: f64) -> f64 {
        self.m * phi * phi * (1.0 - phi) * (1.0 - phi)
    }

    pub fn df(&self, phi: f64) -> f64 {
        2.0 * self.m * phi * (1.0 - phi) * (1.0 - 2.0 * phi)
    }

    pub fn d2f(&self, phi: f64) -> f64 {
        self.m * (2.0 - 12.0 * phi + 12.0 * phi * phi)
    }

    /// Interpolation function `h(φ) = Mφ²(3−2φ)`.
    pub fn interp_h(&self, phi: f64) -> f64 {
        self.m * phi * phi * (3.0 - 2.0 * phi)
    }

    pub fn dh(&self, phi: f64) -> f64 {
        6.0 * self.m * phi * (1.0 - phi)
    }

    pub fn d2h(&self, phi: f64) -> f64 {
        6.0 * self.m * (1.0 - 2.0 * phi)
    }

    fn tilt_factor(&self) -> f64 {
        match self.tilt_law {
            TiltLaw::Pi => FRAC_1_PI,
            TiltLaw::Half => 0.5,
        }
    }

    /// Nutrient-dependent tilting function `m(σ)`.
    pub fn tilt_m(&self, sigma: f64) -> f64 {
        let s = (sigma - self.sigma_l) / self.sigma_r;
        self.m_ref
            * (0.5 * (self.rho + self.a) + (self.rho - self.a) * self.tilt_factor() * s.atan())
    }

    pub fn dm(&self, sigma: f64) -> f64 {
        let s = (sigma - self.sigma_l) / self.sigma_r;
        self.m_ref * (self.rho - self.a) * self.tilt_factor() / (self.sigma_r * (1.0 + s * s))
    }

    /// Bounds of `m` over the real line (attained only for the π law).
    pub fn tilt_range(&self) -> (f64, f64) {
        let half_span = 0.5 * PI * self.tilt_factor() * (self.rho - self.a).abs();
        let mid = 0.5 * (self.rho + self.a);
        (self.m_ref * (mid - half_span), self.m_ref * (mid + half_span))
    }

    /// Initial nutrient and PSA fields, affine in `φ₀` coefficient-wise.
    pub fn initial_laws(&self, phi0: &Field) -> (Field, Field) {
        let sigma0 = phi0.map_coeffs(|c| self.c0_sigma + self.c1_sigma * c);
        let p0 = phi0.map_coeffs(|c| self.c0_p + self.c1_p * c);
        (sigma0, p0)
    }

    /// Healthy-tissue steady state `(σ, p) = (S_h/γ_h, α_h/γ_p)`.
    pub fn healthy_steady_state(&self) -> (f64, f64) {
        (self.s_h / self.gamma_h, self.alpha_h / self.gamma_p)
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::spline::SplineSpace;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn sample_config() -> ModelConfig {
        ModelConfig {
            lambda: None,
            eta: 2000.0,
            d: 500.0,
            m: 2.0,
            ell: 20.0,
            gamma_h: 1.0,
            gamma_c: 1.5,
            s_h: 1.0,
            s_c: 0.9,
            gamma_p: 0.5,
            alpha_h: 0.2,
            alpha_c: 2.0,
            m_ref: 0.1,
            rho: 2.0,
            a: 0.5,
            sigma_l: 0.5,
            sigma_r: 0.2,
            c0_sigma: 1.0,
            c1_sigma: -0.4,
            c0_p: 0.4,
            c1_p: 3.6,
            tilt_law: TiltLaw::Pi,
        }
    }

    fn params() -> ModelParams {
        sample_config().try_into().unwrap()
    }

    fn central(f: impl Fn(f64) -> f64, x: f64) -> f64 {
        let h = 1e-5;
        (f(x + h) - f(x - h)) / (2.0 * h)
    }

    #[test]
    fn lambda_is_derived_and_checked() {
        let p = params();
        assert_eq!(p.lambda, 800.0);
        let mut c = sample_config();
        c.lambda = Some(801.0);
        assert!(ModelParams::try_from(c).is_err());
        let mut c = sample_config();
        c.gamma_p = 0.0;
        let err = ModelParams::try_from(c).unwrap_err().to_string();
        assert!(err.contains("gamma_p"));
    }

    #[test]
    fn double_well_values() {
        let p = params();
        for phi in [0.0, 0.5, 1.0] {
            assert_eq!(p.df(phi), 0.0);
        }
        assert!((p.potential_f(0.5) - p.m / 16.0).abs() < 1e-15);
        let fd = central(|x| p.df(x), 0.3);
        assert!((p.d2f(0.3) - fd).abs() < 1e-6 * fd.abs());
    }

    #[test]
    fn interpolation_values() {
        let p = params();
        assert_eq!(p.dh(0.0), 0.0);
        assert_eq!(p.dh(1.0), 0.0);
        assert_eq!(p.interp_h(1.0), p.m);
        assert_eq!(p.interp_h(0.0), 0.0);
        assert_eq!(p.d2h(0.5), 0.0);
    }

    #[test]
    fn tilt_limits() {
        let p = params();
        assert_eq!(p.tilt_m(p.sigma_l), p.m_ref * (p.rho + p.a) / 2.0);
        let far = 1e6 * p.sigma_r;
        let hi = p.tilt_m(p.sigma_l + far);
        let lo = p.tilt_m(p.sigma_l - far);
        assert!((hi - p.m_ref * p.rho).abs() < 1e-5 * p.m_ref * p.rho);
        assert!((lo - p.m_ref * p.a).abs() < 1e-5 * p.m_ref * p.a);
        let s = p.sigma_l + p.sigma_r;
        let fd = central(|x| p.tilt_m(x), s);
        assert!((p.dm(s) - fd).abs() < 1e-6 * fd.abs());
        assert_eq!(p.tilt_range(), (p.m_ref * p.a, p.m_ref * p.rho));
    }

    #[test]
    fn half_law_is_selectable() {
        let mut c = sample_config();
        c.tilt_law = TiltLaw::Half;
        let p: ModelParams = c.try_into().unwrap();
        let s = p.sigma_l + p.sigma_r;
        let expected = p.m_ref * ((p.rho + p.a) / 2.0 + (p.rho - p.a) / 2.0 * 1f64.atan());
        assert!((p.tilt_m(s) - expected).abs() < 1e-15);
        let fd = central(|x| p.tilt_m(x), s);
        assert!((p.dm(s) - fd).abs() < 1e-6 * fd.abs());
    }

    #[test]
    fn initial_laws_are_affine() {
        let p = params();
        let space = SplineSpace::new(4, 1000.0).unwrap();
        let (s0, p0) = p.initial_laws(&Field::zeros(space.clone()));
        assert!(s0.coeffs().iter().all(|&c| c == p.c0_sigma));
        assert!(p0.coeffs().iter().all(|&c| c == p.c0_p));
        let (s1, _) = p.initial_laws(&Field::constant(space.clone(), 1.0));
        assert!(s1.coeffs().iter().all(|&c| c == p.c0_sigma + p.c1_sigma));

        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let phi = Field::new(space.clone(), (0..space.n_f()).map(|_| rng.gen_range(0.0..1.0)).collect())
            .unwrap();
        let (s, _) = p.initial_laws(&phi);
        for _ in 0..20 {
            let (x, y) = (rng.gen_range(0.0..1000.0), rng.gen_range(0.0..1000.0));
            let expected = p.c0_sigma + p.c1_sigma * phi.evaluate(x, y).unwrap();
            assert!((s.evaluate(x, y).unwrap() - expected).abs() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn derivatives_match_finite_differences(phi in -0.5f64..1.5, sigma in -2.0f64..3.0) {
            let p = params();
            let tol = |v: f64| 1e-6 * (1.0 + v.abs());
            prop_assert!((p.df(phi) - central(|x| p.potential_f(x), phi)).abs() < tol(p.df(phi)));
            prop_assert!((p.d2f(phi) - central(|x| p.df(x), phi)).abs() < tol(p.d2f(phi)));
            prop_assert!((p.dh(phi) - central(|x| p.interp_h(x), phi)).abs() < tol(p.dh(phi)));
            prop_assert!((p.d2h(phi) - central(|x| p.dh(x), phi)).abs() < tol(p.d2h(phi)));
            prop_assert!((p.dm(sigma) - central(|x| p.tilt_m(x), sigma)).abs() < tol(p.dm(sigma)));
        }

        #[test]
        fn tilt_is_monotone_and_bounded(sigma in -100.0f64..100.0) {
            let p = params();
            let (lo, hi) = p.tilt_range();
            let m = p.tilt_m(sigma);
            prop_assert!(p.dm(sigma) > 0.0);
            prop_assert!(m >= lo && m <= hi);
        }
    }
}
