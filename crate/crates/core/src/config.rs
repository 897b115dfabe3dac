//! Run configuration: one TOML document of flat sections, possibly layered
//! from several files where later files override individual keys.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::integrator::{NewtonConfig, SolverConfig, TimeConfig};
use crate::linalg::GmresConfig;
use crate::metrics::MetricsConfig;
use crate::model::{ModelConfig, ModelParams};
use crate::reconstruction::ReconConfig;
use crate::synthetic::{GroundTruthSpec, NoiseConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshConfig {
    /// Elements per side of the working mesh.
    pub elements_per_side: usize,
    /// Side of the square domain in μm.
    pub domain_side: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    /// Field dumps every `dump_stride` days of a trajectory or iterations of
    /// a reconstruction; 0 disables them.
    pub dump_stride: usize,
    /// Also write structured-points dumps next to field dumps.
    pub vtk: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    pub model: ModelConfig,
    pub mesh: MeshConfig,
    #[serde(default)]
    pub time: TimeConfig,
    #[serde(default)]
    pub newton: NewtonConfig,
    #[serde(default)]
    pub gmres: GmresConfig,
    #[serde(default)]
    pub recon: ReconConfig,
    pub ground_truth: GroundTruthSpec,
    /// Measurement noise; absent means a clean measurement.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<NoiseConfig>,
    #[serde(default)]
    pub metrics: MetricsConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        Self::from_table(table)
    }

    /// Reads and layers `paths` in order.
    pub fn load<P: AsRef<Path>>(paths: &[P]) -> Result<Self> {
        if paths.is_empty() {
            return Err(Error::Config("no configuration file given".into()));
        }
        let mut merged = toml::Table::new();
        for p in paths {
            let p = p.as_ref();
            let text = std::fs::read_to_string(p)
                .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
            let table: toml::Table = text
                .parse()
                .map_err(|e: toml::de::Error| Error::Config(format!("{}: {e}", p.display())))?;
            merge(&mut merged, table);
        }
        Self::from_table(merged)
    }

    fn from_table(table: toml::Table) -> Result<Self> {
        let cfg: RunConfig = table
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string().trim().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Cross-field validation.
    pub fn validate(&self) -> Result<()> {
        self.params()?;
        if self.mesh.elements_per_side == 0 {
            return Err(Error::Config("mesh.elements_per_side must be >= 1".into()));
        }
        if !(self.mesh.domain_side > 0.0 && self.mesh.domain_side.is_finite()) {
            return Err(Error::Config("mesh.domain_side must be positive".into()));
        }
        let (fine, work) = (self.ground_truth.fine_elements_per_side, self.mesh.elements_per_side);
        if fine == 0 || fine % work != 0 {
            return Err(Error::Config(format!(
                "ground_truth.fine_elements_per_side ({fine}) must be a positive multiple of \
                 mesh.elements_per_side ({work})"
            )));
        }
        self.time.validate()?;
        self.newton.validate()?;
        if !(self.gmres.tol > 0.0) || self.gmres.max_iters == 0 {
            return Err(Error::Config("gmres.tol and gmres.max_iters must be positive".into()));
        }
        self.recon.validate()?;
        if self.recon.kappa[1] > 0.0 || self.recon.kappa[2] > 0.0 {
            return Err(Error::Config(
                "recon.kappa: only the phi misfit is measured; sigma and p weights must be 0".into(),
            ));
        }
        self.ground_truth.ellipse(self.mesh.domain_side).validate()?;
        if let Some(n) = &self.noise {
            n.validate()?;
        }
        self.metrics.validate()?;
        Ok(())
    }

    pub fn params(&self) -> Result<ModelParams> {
        self.model.clone().try_into()
    }

    pub fn solver(&self) -> SolverConfig {
        SolverConfig {
            time: self.time.clone(),
            newton: self.newton.clone(),
            gmres: self.gmres,
        }
    }

    /// Canonical serialisation of the effective configuration.
    pub fn canonical(&self) -> String {
        toml::to_string(self).expect("configuration serialises")
    }

    /// SHA-256 of [`RunConfig::canonical`], hex encoded.
    pub fn hash(&self) -> String {
        Sha256::digest(self.canonical().as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

/// Key-wise overlay of `top` onto `base`, one level of sections deep.
fn merge(base: &mut toml::Table, top: toml::Table) {
    for (k, v) in top {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(t)) => b.extend(t),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
seed = 7

[model]
eta = 2000.0
D = 500.0
M = 0.05
ell = 26.0
gamma_h = 1.0
gamma_c = 1.5
S_h = 1.0
S_c = 0.9
gamma_p = 0.5
alpha_h = 0.2
alpha_c = 2.0
m_ref = 0.1
rho = 2.0
A = 0.5
sigma_l = 0.5
sigma_r = 0.2
c0_sigma = 1.0
c1_sigma = -0.4
c0_p = 0.4
c1_p = 3.6

[mesh]
elements_per_side = 8
domain_side = 1000.0

[time]
dt = 0.5
t_end = 2.0

[ground_truth]
fine_elements_per_side = 16
steepness = 4.0
"#;

    #[test]
    fn minimal_config_parses_with_defaults() {
        let c = RunConfig::from_toml_str(MINIMAL).unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.recon.max_iters, 500);
        assert!(c.noise.is_none());
        assert_eq!(c.solver().time.steps().unwrap(), 4);
    }

    #[test]
    fn missing_key_is_named() {
        let text = MINIMAL.replace("c1_sigma = -0.4\n", "");
        let err = RunConfig::from_toml_str(&text).unwrap_err().to_string();
        assert!(err.contains("c1_sigma"), "{err}");
    }

    #[test]
    fn cross_validation_rejects_bad_combinations() {
        for (from, to) in [
            ("fine_elements_per_side = 16", "fine_elements_per_side = 12"),
            ("t_end = 2.0", "t_end = 2.25"),
            ("M = 0.05", "M = -1.0"),
            ("[time]", "[recon]\nkappa = [1.0, 1.0, 0.0]\n[time]"),
            ("[mesh]", "[mesh]\nbogus = 1"),
        ] {
            let text = MINIMAL.replace(from, to);
            assert!(matches!(RunConfig::from_toml_str(&text), Err(Error::Config(_))), "{to}");
        }
    }

    #[test]
    fn layering_overrides_single_keys() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.toml");
        let b = dir.path().join("b.toml");
        std::fs::write(&a, MINIMAL).unwrap();
        std::fs::write(&b, "[time]\nt_end = 4.0\n[noise]\nlevel = 0.1\n").unwrap();
        let c = RunConfig::load(&[&a, &b]).unwrap();
        assert_eq!(c.time.t_end, 4.0);
        assert_eq!(c.time.dt, 0.5);
        assert_eq!(c.noise.unwrap().level, 0.1);
    }

    #[test]
    fn hash_tracks_effective_values() {
        let a = RunConfig::from_toml_str(MINIMAL).unwrap();
        let reordered = MINIMAL.replace("seed = 7\n", "") + "\n";
        let b = RunConfig::from_toml_str(&format!("seed = 7\n{reordered}")).unwrap();
        assert_eq!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
        let c = RunConfig::from_toml_str(&MINIMAL.replace("seed = 7", "seed = 8")).unwrap();
        assert_ne!(a.hash(), c.hash());
        assert_eq!(RunConfig::from_toml_str(&a.canonical()).unwrap(), a);
    }

    #[test]
    fn shipped_configs_are_valid() {
        for text in [
            include_str!("../../../configs/desk.toml"),
            include_str!("../../../configs/paper_scale.toml"),
            include_str!("../../../configs/desk_long.toml"),
        ] {
            RunConfig::from_toml_str(text).unwrap();
        }
    }
}
