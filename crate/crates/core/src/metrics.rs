//! Tumour assessment metrics between a reference and a reconstructed phase
//! field.
//!
//! Region integrals use indicator quadrature on a uniform grid of cells with
//! a Gauss rule in each cell; the tumour region is `{φ > 0.5}`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spline::{Field, QuadratureRule};

pub const ISO_LEVEL: f64 = 0.5;

/// Region over which the concordance moments are taken.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CccRegion {
    #[default]
    Union,
    Intersection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsConfig {
    /// Sampling cells per side; 0 selects `4 × max(elements_per_side)`.
    pub cells_per_side: usize,
    /// Gauss points per direction inside each cell.
    pub points_per_cell: usize,
    pub ccc_region: CccRegion,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        MetricsConfig {
            cells_per_side: 0,
            points_per_cell: 3,
            ccc_region: CccRegion::Union,
        }
    }
}

impl MetricsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.points_per_cell == 0 {
            return Err(Error::Config("metrics.points_per_cell must be >= 1".into()));
        }
        Ok(())
    }

    fn cells_for(&self, fields: &[&Field]) -> usize {
        if self.cells_per_side > 0 {
            return self.cells_per_side;
        }
        4 * fields
            .iter()
            .map(|f| f.space().elements_per_side())
            .max()
            .unwrap_or(1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// `(V_ref − V_rec)/V_ref`.
    pub e_v: f64,
    pub dsc: f64,
    /// `‖φ_ref − φ_rec‖ / ‖φ_ref‖` over the whole domain.
    pub e_l2: f64,
    pub ccc: f64,
    pub v_ref: f64,
    pub v_rec: f64,
}

impl MetricsReport {
    /// Values for identical inputs.
    pub fn perfect(volume: f64) -> Self {
        MetricsReport {
            e_v: 0.0,
            dsc: 1.0,
            e_l2: 0.0,
            ccc: 1.0,
            v_ref: volume,
            v_rec: volume,
        }
    }
}

/// Field values on the sampling grid with the matching tensor weights.
struct Samples {
    values: Vec<f64>,
    wx: Vec<f64>,
}

impl Samples {
    fn weight(&self, k: usize) -> f64 {
        let m = self.wx.len();
        self.wx[k % m] * self.wx[k / m]
    }
}

fn sample(field: &Field, cells: usize, points: usize) -> Result<Samples> {
    let rule = QuadratureRule::gauss(points);
    let (xs, wx) = field.space().sampling_axis(cells, &rule);
    let values = field.evaluate_grid(&xs, &xs)?;
    Ok(Samples { values, wx })
}

/// Area of `{φ > 0.5}`; zero for an empty region.
pub fn tumour_volume(phi: &Field, cfg: &MetricsConfig) -> Result<f64> {
    cfg.validate()?;
    let s = sample(phi, cfg.cells_for(&[phi]), cfg.points_per_cell)?;
    Ok(s
        .values
        .iter()
        .enumerate()
        .filter(|(_, &v)| v > ISO_LEVEL)
        .map(|(k, _)| s.weight(k))
        .sum())
}

/// Volume error, Dice coefficient, relative L² error and concordance.
pub fn metrics(reference: &Field, rec: &Field, cfg: &MetricsConfig) -> Result<MetricsReport> {
    cfg.validate()?;
    let (lr, lc) = (reference.space().domain_side(), rec.space().domain_side());
    if (lr - lc).abs() > 1e-12 * lr {
        return Err(Error::SpaceMismatch);
    }
    let cells = cfg.cells_for(&[reference, rec]);
    let a = sample(reference, cells, cfg.points_per_cell)?;
    let b = sample(rec, cells, cfg.points_per_cell)?;

    let (mut v_ref, mut v_rec, mut v_int) = (0.0, 0.0, 0.0);
    let (mut diff2, mut ref2) = (0.0, 0.0);
    for k in 0..a.values.len() {
        let w = a.weight(k);
        let (x, y) = (a.values[k], b.values[k]);
        let (ir, ic) = (x > ISO_LEVEL, y > ISO_LEVEL);
        if ir {
            v_ref += w;
        }
        if ic {
            v_rec += w;
        }
        if ir && ic {
            v_int += w;
        }
        diff2 += w * (x - y) * (x - y);
        ref2 += w * x * x;
    }
    if v_ref == 0.0 {
        return Err(Error::ZeroReferenceVolume);
    }
    let e_v = (v_ref - v_rec) / v_ref;
    let dsc = 2.0 * v_int / (v_rec + v_ref);
    let e_l2 = if ref2 > 0.0 { (diff2 / ref2).sqrt() } else { 0.0 };
    let ccc = concordance(&a, &b, cfg.ccc_region);
    Ok(MetricsReport {
        e_v,
        dsc,
        e_l2,
        ccc,
        v_ref,
        v_rec,
    })
}

/// Weighted concordance over the chosen region. An empty region gives 0;
/// two constant fields with equal means give 1.
fn concordance(a: &Samples, b: &Samples, region: CccRegion) -> f64 {
    let inside = |k: usize| {
        let (ir, ic) = (a.values[k] > ISO_LEVEL, b.values[k] > ISO_LEVEL);
        match region {
            CccRegion::Union => ir || ic,
            CccRegion::Intersection => ir && ic,
        }
    };
    let (mut w_sum, mut ma, mut mb) = (0.0, 0.0, 0.0);
    for k in (0..a.values.len()).filter(|&k| inside(k)) {
        let w = a.weight(k);
        w_sum += w;
        ma += w * a.values[k];
        mb += w * b.values[k];
    }
    if w_sum == 0.0 {
        return 0.0;
    }
    ma /= w_sum;
    mb /= w_sum;
    let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
    for k in (0..a.values.len()).filter(|&k| inside(k)) {
        let w = a.weight(k);
        let (da, db) = (a.values[k] - ma, b.values[k] - mb);
        va += w * da * da;
        vb += w * db * db;
        cov += w * da * db;
    }
    va /= w_sum;
    vb /= w_sum;
    cov /= w_sum;
    let denom = va + vb + (ma - mb) * (ma - mb);
    if denom == 0.0 {
        1.0
    } else {
        2.0 * cov / denom
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spline::{l2_project, SplineSpace};
    use std::f64::consts::PI;
    use std::sync::Arc;

    fn disc(space: &Arc<SplineSpace>, xc: f64, yc: f64, r: f64) -> Field {
        let f = move |x: f64, y: f64| {
            let d = ((x - xc).powi(2) + (y - yc).powi(2)).sqrt() / r;
            0.5 - 0.5 * (10.0 * (d - 1.0)).tanh()
        };
        l2_project(&f, space, true).unwrap()
    }

    #[test]
    fn whole_and_empty_domain_volumes() {
        let s = SplineSpace::new(8, 3000.0).unwrap();
        let cfg = MetricsConfig::default();
        let one = Field::constant(s.clone(), 1.0);
        assert!((tumour_volume(&one, &cfg).unwrap() - 9.0e6).abs() < 1e-6 * 9.0e6);
        assert_eq!(tumour_volume(&Field::zeros(s), &cfg).unwrap(), 0.0);
    }

    #[test]
    fn disc_area_matches_closed_form() {
        let s = SplineSpace::new(128, 3000.0).unwrap();
        let d = disc(&s, 1500.0, 1500.0, 300.0);
        let v = tumour_volume(&d, &MetricsConfig::default()).unwrap();
        let exact = PI * 300.0 * 300.0;
        assert!((v - exact).abs() < 0.02 * exact, "{v} vs {exact}");
    }

    #[test]
    fn identical_inputs_are_perfect() {
        let s = SplineSpace::new(16, 1000.0).unwrap();
        let d = disc(&s, 500.0, 500.0, 150.0);
        let m = metrics(&d, &d, &MetricsConfig::default()).unwrap();
        assert_eq!((m.e_v, m.dsc, m.e_l2), (0.0, 1.0, 0.0));
        assert!((m.ccc - 1.0).abs() < 1e-12);
    }

    #[test]
    fn disjoint_equal_discs() {
        let s = SplineSpace::new(32, 1000.0).unwrap();
        let a = disc(&s, 250.0, 500.0, 100.0);
        let b = disc(&s, 750.0, 500.0, 100.0);
        let m = metrics(&a, &b, &MetricsConfig::default()).unwrap();
        assert_eq!(m.dsc, 0.0);
        assert!(m.e_v.abs() < 1e-3);
    }

    #[test]
    fn zero_reference_volume_is_an_error() {
        let s = SplineSpace::new(4, 1000.0).unwrap();
        let z = Field::zeros(s.clone());
        assert!(matches!(
            metrics(&z, &Field::constant(s, 1.0), &MetricsConfig::default()),
            Err(Error::ZeroReferenceVolume)
        ));
    }

    #[test]
    fn constant_fields_have_unit_concordance() {
        let s = SplineSpace::new(4, 1000.0).unwrap();
        let c = Field::constant(s, 0.8);
        let m = metrics(&c, &c.clone(), &MetricsConfig::default()).unwrap();
        assert_eq!(m.ccc, 1.0);
    }

    #[test]
    fn dice_is_symmetric_and_l2_is_not() {
        let s = SplineSpace::new(32, 1000.0).unwrap();
        let a = disc(&s, 500.0, 500.0, 150.0);
        let b = disc(&s, 560.0, 480.0, 220.0);
        let cfg = MetricsConfig::default();
        let (ab, ba) = (metrics(&a, &b, &cfg).unwrap(), metrics(&b, &a, &cfg).unwrap());
        assert!((ab.dsc - ba.dsc).abs() < 1e-12);
        assert!((ab.e_l2 - ba.e_l2).abs() > 1e-3);
    }
}
