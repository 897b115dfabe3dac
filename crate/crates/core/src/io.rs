//! Text formats for fields, iteration histories and visualisation dumps.
//!
//! Field files start with `PFFIELD v1 <elements_per_side> <degree> <L_d>`,
//! optionally followed by `config=<hash>`, then one coefficient per line in
//! row-major basis order with 17 significant digits. Readers ignore header
//! tokens after the fourth.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::metrics::MetricsReport;
use crate::reconstruction::ReconRecord;
use crate::spline::{Field, SplineSpace, DEGREE};

pub const FIELD_MAGIC: &str = "PFFIELD";
pub const FIELD_VERSION: &str = "v1";

pub const HISTORY_HEADER: [&str; 13] = [
    "j", "mu", "theta", "J", "grad_norm", "eV0", "dsc0", "eL2_0", "ccc0", "eVT", "dscT", "eL2_T", "cccT",
];

/// Writes `field`; `hash` is appended to the header as `config=<hash>`.
pub fn write_field(path: impl AsRef<Path>, field: &Field, hash: Option<&str>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_field_to(&mut w, field, hash)?;
    w.flush()?;
    Ok(())
}

pub fn write_field_to(w: &mut impl Write, field: &Field, hash: Option<&str>) -> Result<()> {
    let s = field.space();
    write!(
        w,
        "{FIELD_MAGIC} {FIELD_VERSION} {} {} {:?}",
        s.elements_per_side(),
        s.degree(),
        s.domain_side()
    )?;
    if let Some(h) = hash {
        write!(w, " config={h}")?;
    }
    writeln!(w)?;
    for c in field.coeffs() {
        writeln!(w, "{c:.16e}")?;
    }
    Ok(())
}

pub fn read_field(path: impl AsRef<Path>) -> Result<Field> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    read_field_from(BufReader::new(file))
}

pub fn read_field_from(r: impl BufRead) -> Result<Field> {
    let mut lines = r.lines();
    let header = lines.next().ok_or_else(|| Error::Format("empty file".into()))??;
    let tokens: Vec<&str> = header.split_whitespace().collect();
    if tokens.len() < 5 || tokens[0] != FIELD_MAGIC || tokens[1] != FIELD_VERSION {
        return Err(Error::Format(format!("bad header {header:?}")));
    }
    let ne: usize = parse_token(tokens[2], "elements_per_side")?;
    let degree: usize = parse_token(tokens[3], "degree")?;
    let side: f64 = parse_token(tokens[4], "domain side")?;
    if degree != DEGREE {
        return Err(Error::Format(format!("unsupported degree {degree}")));
    }
    let space = SplineSpace::new(ne, side).map_err(|e| Error::Format(e.to_string()))?;
    let mut coeffs = Vec::with_capacity(space.n_f());
    for (k, line) in lines.enumerate() {
        let line = line?;
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        let v: f64 = t
            .parse()
            .map_err(|_| Error::Format(format!("line {}: {t:?} is not a number", k + 2)))?;
        if !v.is_finite() {
            return Err(Error::Format(format!("line {}: non-finite coefficient", k + 2)));
        }
        coeffs.push(v);
    }
    if coeffs.len() != space.n_f() {
        return Err(Error::Format(format!(
            "expected {} coefficients, found {}",
            space.n_f(),
            coeffs.len()
        )));
    }
    Field::new(space, coeffs)
}

fn parse_token<T: std::str::FromStr>(t: &str, what: &str) -> Result<T> {
    t.parse()
        .map_err(|_| Error::Format(format!("{what} {t:?} is not valid")))
}

/// The `config=` token of a field file header, if present.
pub fn field_config_hash(path: impl AsRef<Path>) -> Result<Option<String>> {
    let mut header = String::new();
    BufReader::new(File::open(path)?).read_line(&mut header)?;
    Ok(header
        .split_whitespace()
        .find_map(|t| t.strip_prefix("config=").map(str::to_string)))
}

/// Legacy ASCII structured-points dump of `fields` sampled on a uniform
/// `(4·ne + 1)²` grid. All fields must share one space.
pub fn write_vtk(path: impl AsRef<Path>, fields: &[(&str, &Field)], hash: Option<&str>) -> Result<()> {
    let Some((_, first)) = fields.first() else {
        return Err(Error::Format("no fields to dump".into()));
    };
    let space: &Arc<SplineSpace> = first.space();
    if fields.iter().any(|(_, f)| !f.space().same_as(space)) {
        return Err(Error::SpaceMismatch);
    }
    let n = 4 * space.elements_per_side() + 1;
    let spacing = space.domain_side() / (n - 1) as f64;
    let xs: Vec<f64> = (0..n).map(|i| (i as f64 * spacing).min(space.domain_side())).collect();

    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "# vtk DataFile Version 3.0")?;
    writeln!(w, "pfrecon config={}", hash.unwrap_or("none"))?;
    writeln!(w, "ASCII")?;
    writeln!(w, "DATASET STRUCTURED_POINTS")?;
    writeln!(w, "DIMENSIONS {n} {n} 1")?;
    writeln!(w, "ORIGIN 0 0 0")?;
    writeln!(w, "SPACING {spacing:?} {spacing:?} 1")?;
    writeln!(w, "POINT_DATA {}", n * n)?;
    for (name, field) in fields {
        let values = field.evaluate_grid(&xs, &xs)?;
        writeln!(w, "SCALARS {name} double 1")?;
        writeln!(w, "LOOKUP_TABLE default")?;
        for v in values {
            writeln!(w, "{v:.10e}")?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Iteration history CSV; every row is flushed as soon as it is written.
pub struct HistoryWriter {
    out: BufWriter<File>,
    path: PathBuf,
}

impl HistoryWriter {
    pub fn create(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let mut out = BufWriter::new(File::create(&path)?);
        writeln!(out, "{}", HISTORY_HEADER.join(","))?;
        out.flush()?;
        Ok(HistoryWriter { out, path })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn push(&mut self, r: &ReconRecord) -> Result<()> {
        writeln!(self.out, "{}", history_row(r))?;
        self.out.flush()?;
        Ok(())
    }
}

/// One CSV row; absent values are empty cells.
pub fn history_row(r: &ReconRecord) -> String {
    let num = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:.16e}"));
    let m = |m: Option<MetricsReport>| match m {
        Some(m) => [m.e_v, m.dsc, m.e_l2, m.ccc].map(|v| num(Some(v))),
        None => Default::default(),
    };
    let mut cells = vec![
        r.j.to_string(),
        num(r.mu),
        num(r.theta),
        num(Some(r.objective)),
        num(Some(r.grad_norm)),
    ];
    cells.extend(m(r.metrics0));
    cells.extend(m(r.metrics_t));
    cells.join(",")
}

/// Metrics as a two-line CSV.
pub fn write_metrics_csv(path: impl AsRef<Path>, m: &MetricsReport) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "eV,dsc,eL2,ccc,V_ref,V_rec")?;
    writeln!(
        w,
        "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
        m.e_v, m.dsc, m.e_l2, m.ccc, m.v_ref, m.v_rec
    )?;
    w.flush()?;
    Ok(())
}

/// `run_manifest.txt` in `dir`: the config hash, then `key = value` lines.
pub fn write_manifest(dir: impl AsRef<Path>, hash: &str, entries: &[(&str, String)]) -> Result<()> {
    let mut w = BufWriter::new(File::create(dir.as_ref().join("run_manifest.txt"))?);
    writeln!(w, "config = {hash}")?;
    for (k, v) in entries {
        writeln!(w, "{k} = {v}")?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spline::l2_project;
    use std::io::Cursor;

    fn sample() -> Field {
        let s = SplineSpace::new(6, 1000.0).unwrap();
        l2_project(&|x, y| (x / 313.0).sin() * (y / 97.0).cos() + 1.0 / 3.0, &s, false).unwrap()
    }

    #[test]
    fn field_round_trip_is_bit_exact() {
        let f = sample();
        let mut buf = Vec::new();
        write_field_to(&mut buf, &f, Some("abc")).unwrap();
        let back = read_field_from(Cursor::new(&buf)).unwrap();
        assert!(back.space().same_as(f.space()));
        for (a, b) in f.coeffs().iter().zip(back.coeffs()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("PFFIELD v1 6 2 1000.0 config=abc\n"));
    }

    #[test]
    fn extra_header_tokens_are_ignored() {
        let text = "PFFIELD v1 2 2 10 foo=bar baz\n".to_string() + &"0.5\n".repeat(16);
        let f = read_field_from(Cursor::new(text)).unwrap();
        assert_eq!(f.coeffs(), &[0.5; 16]);
    }

    #[test]
    fn malformed_files_are_rejected() {
        for text in [
            "",
            "PFFIELD v2 1 2 10\n",
            "PFFIELD v1 1 3 10\n",
            "PFFIELD v1 1 2\n",
            "PFFIELD v1 1 2 10\n0\n0\n0\n0\n0\n0\n0\n0\n0\n",
            "PFFIELD v1 2 2 10\n0.5\n",
            &("PFFIELD v1 2 2 10\nx\n".to_string() + &"0\n".repeat(15)),
            &("PFFIELD v1 2 2 10\nNaN\n".to_string() + &"0\n".repeat(15)),
        ] {
            assert!(matches!(read_field_from(Cursor::new(text)), Err(Error::Format(_))), "{text:?}");
        }
    }

    #[test]
    fn history_rows_leave_missing_values_empty() {
        let r = ReconRecord {
            j: 3,
            mu: None,
            theta: None,
            objective: 0.5,
            grad_norm: 2.0,
            metrics0: None,
            metrics_t: None,
        };
        let row = history_row(&r);
        assert_eq!(row.split(',').count(), HISTORY_HEADER.len());
        assert!(row.starts_with("3,,,5.0000000000000000e-1,2.0000000000000000e0"));
    }

    #[test]
    fn vtk_dump_has_expected_grid() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.vtk");
        let f = sample();
        write_vtk(&p, &[("phi", &f)], Some("h")).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.contains("DIMENSIONS 25 25 1"));
        assert!(text.contains("pfrecon config=h"));
        let values = text.lines().skip_while(|l| !l.starts_with("LOOKUP_TABLE")).skip(1).count();
        assert_eq!(values, 25 * 25);
    }
}
