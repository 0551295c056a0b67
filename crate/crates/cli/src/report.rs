//! Run records: per-experiment reports, the manifest, and report diffs.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use torus_diffusion::{Error, Result};

use crate::config::Resolved;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub experiment: String,
    pub inputs_hash: String,
    /// Finite numeric results only; anything else goes to `notes`.
    pub metrics: BTreeMap<String, f64>,
    pub notes: BTreeMap<String, String>,
    pub verdicts: BTreeMap<String, bool>,
    pub wall_time_seconds: f64,
}

impl ExperimentReport {
    pub fn new(experiment: &str, inputs_hash: &str) -> Self {
        Self {
            experiment: experiment.into(),
            inputs_hash: inputs_hash.into(),
            metrics: BTreeMap::new(),
            notes: BTreeMap::new(),
            verdicts: BTreeMap::new(),
            wall_time_seconds: 0.0,
        }
    }

    pub fn metric(&mut self, key: &str, value: f64) {
        if value.is_finite() {
            self.metrics.insert(key.into(), value);
        } else {
            self.notes.insert(key.into(), value.to_string());
        }
    }

    pub fn note(&mut self, key: &str, value: impl ToString) {
        self.notes.insert(key.into(), value.to_string());
    }

    pub fn verdict(&mut self, key: &str, pass: bool) {
        self.verdicts.insert(key.into(), pass);
    }

    pub fn passed(&self) -> bool {
        self.verdicts.values().all(|v| *v)
    }

    /// Columns `kind,key,value`, sorted within each kind.
    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "kind,key,value")?;
        for (k, v) in &self.metrics {
            writeln!(w, "metric,{k},{v:.16e}")?;
        }
        for (k, v) in &self.verdicts {
            writeln!(w, "verdict,{k},{}", if *v { "pass" } else { "fail" })?;
        }
        for (k, v) in &self.notes {
            writeln!(w, "note,{k},\"{}\"", v.replace('"', "\"\""))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DefaultRow {
    pub key: String,
    pub default: String,
    pub meaning: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub tool_version: String,
    pub inputs_hash: String,
    pub seed: u64,
    pub config: Resolved,
    pub defaults: Vec<DefaultRow>,
    pub reports: Vec<ExperimentReport>,
    pub passed: bool,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text)
            .map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display())))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text =
            serde_json::to_string_pretty(self).map_err(|e| Error::InvalidInput(e.to_string()))?;
        std::fs::write(path, text + "\n")?;
        Ok(())
    }
}

/// SHA-256 of the resolved configuration with the output directory blanked,
/// so the same problem hashes the same wherever it is written.
pub fn inputs_hash(config: &Resolved) -> String {
    let mut c = config.clone();
    c.out.clear();
    let bytes = serde_json::to_vec(&c).expect("resolved config serializes");
    hex::encode(Sha256::digest(&bytes))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FieldDiff {
    pub field: String,
    pub left: String,
    pub right: String,
    /// `|left − right|` for numeric fields.
    pub difference: Option<f64>,
    pub tolerance: f64,
}

/// Per-field absolute tolerances; fields without one must match exactly.
#[derive(Debug, Clone, Default)]
pub struct ToleranceSpec {
    pub default: f64,
    pub fields: BTreeMap<String, f64>,
}

impl ToleranceSpec {
    fn for_field(&self, field: &str) -> f64 {
        self.fields.get(field).copied().unwrap_or(self.default)
    }
}

/// Flattened `experiment.kind.key` view of the comparable report fields.
/// Wall time is left out.
fn flatten(reports: &[ExperimentReport]) -> BTreeMap<String, Field> {
    let mut out = BTreeMap::new();
    for r in reports {
        let e = &r.experiment;
        out.insert(
            format!("{e}.inputs_hash"),
            Field::Text(r.inputs_hash.clone()),
        );
        for (k, v) in &r.metrics {
            out.insert(format!("{e}.{k}"), Field::Number(*v));
        }
        for (k, v) in &r.verdicts {
            out.insert(format!("{e}.verdict.{k}"), Field::Text(v.to_string()));
        }
        for (k, v) in &r.notes {
            out.insert(format!("{e}.note.{k}"), Field::Text(v.clone()));
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
enum Field {
    Number(f64),
    Text(String),
}

impl Field {
    fn render(&self) -> String {
        match self {
            Field::Number(v) => format!("{v:.16e}"),
            Field::Text(s) => s.clone(),
        }
    }
}

/// Field-by-field diff; an empty result means the reports agree.
pub fn compare(
    left: &[ExperimentReport],
    right: &[ExperimentReport],
    tol: &ToleranceSpec,
) -> Vec<FieldDiff> {
    let a = flatten(left);
    let b = flatten(right);
    let mut keys: Vec<&String> = a.keys().chain(b.keys()).collect();
    keys.sort();
    keys.dedup();
    let missing = "<missing>".to_string();
    keys.into_iter()
        .filter_map(|k| {
            let tolerance = tol.for_field(k);
            let (l, r) = (a.get(k), b.get(k));
            let (same, difference) = match (l, r) {
                (Some(Field::Number(x)), Some(Field::Number(y))) => {
                    let d = (x - y).abs();
                    (d <= tolerance, Some(d))
                }
                (Some(x), Some(y)) => (x == y, None),
                _ => (false, None),
            };
            (!same).then(|| FieldDiff {
                field: k.clone(),
                left: l.map_or(missing.clone(), Field::render),
                right: r.map_or(missing.clone(), Field::render),
                difference,
                tolerance,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report(value: f64) -> ExperimentReport {
        let mut r = ExperimentReport::new("sde", "abc");
        r.metric("monte_carlo", value);
        r.metric("exact", 0.5);
        r.verdict("within", true);
        r.wall_time_seconds = value;
        r
    }

    #[test]
    fn identical_reports_have_no_diff() {
        let r = vec![report(0.3)];
        assert!(compare(&r, &r, &ToleranceSpec::default()).is_empty());
    }

    #[test]
    fn per_field_tolerances_apply() {
        let (a, b) = (vec![report(0.30)], vec![report(0.31)]);
        let strict = compare(&a, &b, &ToleranceSpec::default());
        assert_eq!(strict.len(), 1);
        assert_eq!(strict[0].field, "sde.monte_carlo");
        let mut tol = ToleranceSpec::default();
        tol.fields.insert("sde.monte_carlo".into(), 0.02);
        assert!(compare(&a, &b, &tol).is_empty());
    }

    #[test]
    fn missing_fields_are_differences() {
        let a = vec![report(0.3)];
        let mut b = a.clone();
        b[0].metrics.remove("exact");
        let d = compare(
            &a,
            &b,
            &ToleranceSpec {
                default: 1.0,
                ..Default::default()
            },
        );
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].right, "<missing>");
    }

    #[test]
    fn non_finite_metrics_become_notes() {
        let mut r = ExperimentReport::new("x", "h");
        r.metric("inf", f64::INFINITY);
        assert!(r.metrics.is_empty());
        assert_eq!(r.notes["inf"], "inf");
    }
}
