//! Report schema shared by the experiment commands.
//!
//! JSON reports have the shape
//! `{command, config_digest, timestamp?, checks: [{name, claim, value,
//! expected, tolerance, pass}], pass}`; a check passes when
//! `|value - expected| <= tolerance`. CSV tables have one row per
//! `(n, quantity, estimate, stderr, exact_value_if_any)`.

use serde::{Deserialize, Serialize};

use crate::stats::{McEstimate, TwoSidedVerdict};

/// One verified quantity.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckRecord {
    pub name: String,
    /// The mathematical statement this check exercises.
    pub claim: String,
    pub value: f64,
    pub expected: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl CheckRecord {
    pub fn new(
        name: impl Into<String>,
        claim: impl Into<String>,
        value: f64,
        expected: f64,
        tolerance: f64,
    ) -> Self {
        Self {
            name: name.into(),
            claim: claim.into(),
            value,
            expected,
            tolerance,
            pass: (value - expected).abs() <= tolerance,
        }
    }

    /// A check on a deviation that should be zero.
    pub fn deviation(
        name: impl Into<String>,
        claim: impl Into<String>,
        deviation: f64,
        tolerance: f64,
    ) -> Self {
        Self::new(name, claim, deviation, 0.0, tolerance)
    }

    /// An estimate checked against a target within `z * stderr`.
    pub fn estimate_vs(
        name: impl Into<String>,
        claim: impl Into<String>,
        estimate: &McEstimate,
        expected: f64,
        z: f64,
    ) -> Self {
        Self::new(name, claim, estimate.mean, expected, z * estimate.stderr)
    }

    /// A two-sided Monte Carlo comparison, recorded as
    /// `|a - b| <= 3 combined stderr`.
    pub fn two_sided(
        name: impl Into<String>,
        claim: impl Into<String>,
        a: &McEstimate,
        b_mean: f64,
        verdict: &TwoSidedVerdict,
    ) -> Self {
        Self {
            name: name.into(),
            claim: claim.into(),
            value: a.mean,
            expected: b_mean,
            tolerance: crate::stats::Z_AGREEMENT * verdict.combined_stderr,
            pass: verdict.pass,
        }
    }

    /// A failed run recorded as a check, carrying the diagnostic in `claim`.
    pub fn aborted(name: impl Into<String>, diagnostic: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            claim: diagnostic.into(),
            value: 1.0,
            expected: 0.0,
            tolerance: 0.0,
            pass: false,
        }
    }
}

/// A full command report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Report {
    pub command: String,
    pub config_digest: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<String>,
    pub checks: Vec<CheckRecord>,
    pub pass: bool,
}

impl Report {
    pub fn new(command: impl Into<String>, config_digest: impl Into<String>) -> Self {
        Self {
            command: command.into(),
            config_digest: config_digest.into(),
            timestamp: None,
            checks: Vec::new(),
            pass: true,
        }
    }

    pub fn push(&mut self, check: CheckRecord) {
        self.pass &= check.pass;
        self.checks.push(check);
    }

    pub fn find(&self, name: &str) -> Option<&CheckRecord> {
        self.checks.iter().find(|c| c.name == name)
    }

    /// Pretty JSON with a trailing newline; field order is fixed by the
    /// struct, so identical reports are byte-identical.
    pub fn to_json_string(&self) -> serde_json::Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }
}

/// One CSV table row.
#[derive(Debug, Clone, Serialize)]
pub struct TableRow {
    pub n: Option<u32>,
    pub quantity: String,
    pub estimate: f64,
    pub stderr: Option<f64>,
    pub exact: Option<f64>,
}

impl TableRow {
    pub fn new(
        n: impl Into<Option<u32>>,
        quantity: impl Into<String>,
        estimate: f64,
        stderr: impl Into<Option<f64>>,
        exact: impl Into<Option<f64>>,
    ) -> Self {
        Self {
            n: n.into(),
            quantity: quantity.into(),
            estimate,
            stderr: stderr.into(),
            exact: exact.into(),
        }
    }
}

/// Renders rows as `n,quantity,estimate,stderr,exact` with empty cells for
/// absent values.
pub fn rows_to_csv(rows: &[TableRow]) -> String {
    let mut out = String::from("n,quantity,estimate,stderr,exact\n");
    for row in rows {
        let n = row.n.map_or(String::new(), |v| v.to_string());
        let se = row.stderr.map_or(String::new(), |v| v.to_string());
        let exact = row.exact.map_or(String::new(), |v| v.to_string());
        out.push_str(&format!("{n},{},{},{se},{exact}\n", row.quantity, row.estimate));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn report_pass_tracks_checks() {
        let mut report = Report::new("verify-discrete", "digest");
        report.push(CheckRecord::new("a", "x = y", 1.0, 1.0, 0.0));
        assert!(report.pass);
        report.push(CheckRecord::new("b", "x = y", 1.0, 2.0, 0.5));
        assert!(!report.pass);
        assert!(report.find("a").unwrap().pass);
    }

    #[test]
    fn json_schema_fields() {
        let mut report = Report::new("verify-discrete", "d");
        report.push(CheckRecord::new("q_inv_z[1]", "Q[1/Z_1] = p", 0.6, 0.6, 1e-12));
        let json: serde_json::Value =
            serde_json::from_str(&report.to_json_string().unwrap()).unwrap();
        for field in ["command", "config_digest", "checks", "pass"] {
            assert!(json.get(field).is_some());
        }
        assert!(json.get("timestamp").is_none(), "absent timestamp is omitted");
        let check = &json["checks"][0];
        for field in ["name", "claim", "value", "expected", "tolerance", "pass"] {
            assert!(check.get(field).is_some());
        }
    }

    #[test]
    fn csv_rendering() {
        let rows = vec![
            TableRow::new(1, "q_inv_z_exact", 0.6, None, 0.6),
            TableRow::new(None, "survival", 0.5, 0.01, None),
        ];
        let csv = rows_to_csv(&rows);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "n,quantity,estimate,stderr,exact");
        assert_eq!(lines[1], "1,q_inv_z_exact,0.6,,0.6");
        assert_eq!(lines[2], ",survival,0.5,0.01,");
    }
}
