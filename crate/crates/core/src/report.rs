//! Result records shared by the verification checks, and the CSV dialect used
//! for every exported table (comma separated, header row, LF line endings).

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub fn csv_writer<W: Write>(out: W) -> csv::Writer<W> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out)
}

/// A plot-ready numeric table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new<S: Into<String>>(columns: impl IntoIterator<Item = S>) -> Self {
        Self {
            columns: columns.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv_writer(out);
        w.write_record(&self.columns)?;
        for row in &self.rows {
            w.write_record(row.iter().map(|v| v.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// One verification check: what was measured, against what, and whether it
/// passed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub params: serde_json::Value,
    pub statistic: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_value: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub err: Option<f64>,
    /// Threshold or reference value the statistic was compared with.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<f64>,
    pub pass: bool,
    pub runtime_s: f64,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub detail: String,
}

impl CheckResult {
    pub fn new(name: impl Into<String>, params: serde_json::Value, statistic: f64, pass: bool) -> Self {
        Self {
            name: name.into(),
            params,
            statistic,
            p_value: None,
            err: None,
            reference: None,
            pass,
            runtime_s: 0.0,
            detail: String::new(),
        }
    }

    pub fn with_p_value(mut self, p: f64) -> Self {
        self.p_value = Some(p);
        self
    }

    pub fn with_err(mut self, e: f64) -> Self {
        self.err = Some(e);
        self
    }

    pub fn with_reference(mut self, r: f64) -> Self {
        self.reference = Some(r);
        self
    }

    pub fn with_detail(mut self, d: impl Into<String>) -> Self {
        self.detail = d.into();
        self
    }

    pub fn with_runtime(mut self, s: f64) -> Self {
        self.runtime_s = s;
        self
    }

    /// `PASS name: detail` / `FAIL name: detail`.
    pub fn summary_line(&self) -> String {
        let status = if self.pass { "PASS" } else { "FAIL" };
        let mut line = format!("{status} {} statistic={:.6}", self.name, self.statistic);
        if let Some(p) = self.p_value {
            line.push_str(&format!(" p={p:.4}"));
        }
        if let Some(e) = self.err {
            line.push_str(&format!(" err={e:.3e}"));
        }
        if let Some(r) = self.reference {
            line.push_str(&format!(" ref={r:.6}"));
        }
        if !self.detail.is_empty() {
            line.push_str(" | ");
            line.push_str(&self.detail);
        }
        line
    }
}

/// Checks plus named tables produced by one verification operation.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CheckBundle {
    pub checks: Vec<CheckResult>,
    pub tables: BTreeMap<String, Table>,
}

impl CheckBundle {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn merge(&mut self, other: CheckBundle) {
        self.checks.extend(other.checks);
        self.tables.extend(other.tables);
    }

    pub fn table(&self, name: &str) -> Result<&Table> {
        self.tables.get(name).ok_or_else(|| {
            let available: Vec<_> = self.tables.keys().cloned().collect();
            Error::NotFound(format!("table {name:?}; available: {}", available.join(", ")))
        })
    }
}

/// Binomial proportion with an Agresti-Coull standard error (positive even
/// when no or all trials succeed).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Proportion {
    pub successes: u64,
    pub trials: u64,
}

impl Proportion {
    pub fn new(successes: u64, trials: u64) -> Self {
        assert!(successes <= trials, "successes exceed trials");
        Self { successes, trials }
    }

    pub fn estimate(&self) -> f64 {
        if self.trials == 0 {
            0.0
        } else {
            self.successes as f64 / self.trials as f64
        }
    }

    pub fn stderr(&self) -> f64 {
        let n = self.trials as f64 + 4.0;
        let p = (self.successes as f64 + 2.0) / n;
        (p * (1.0 - p) / n).sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn proportion_errors_are_positive() {
        assert!(Proportion::new(0, 100).stderr() > 0.0);
        assert!(Proportion::new(100, 100).stderr() > 0.0);
        let p = Proportion::new(50, 100);
        assert_eq!(p.estimate(), 0.5);
        assert!((p.stderr() - 0.049).abs() < 1e-3);
    }

    #[test]
    fn table_csv() {
        let mut t = Table::new(["u", "ecdf"]);
        t.push(vec![0.5, 0.25]);
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "u,ecdf\n0.5,0.25\n");
    }

    #[test]
    fn missing_table_lists_available() {
        let mut b = CheckBundle::default();
        b.tables.insert("ecdf_meander".into(), Table::new(["u"]));
        let e = b.table("nope").unwrap_err().to_string();
        assert!(e.contains("ecdf_meander"));
    }
}
