//! Flattens report.json tables into plot-ready CSV files; no plotting here.

use crate::error::{CrossDiffError, Result};
use serde_json::Value;
use std::fs;
use std::path::{Path, PathBuf};

/// Reads `<dir>/report.json` and writes flat CSVs under `<dir>/plotdata/`.
/// Returns the paths written. Errors with MissingReport when no report exists.
pub fn emit_plotdata(dir: &Path) -> Result<Vec<PathBuf>> {
    let report_path = dir.join("report.json");
    if !report_path.exists() {
        return Err(CrossDiffError::MissingReport(report_path.display().to_string()));
    }
    let report: Value = serde_json::from_slice(&fs::read(&report_path)?)
        .map_err(|e| CrossDiffError::ParseError(e.to_string()))?;
    let tables = report
        .get("tables")
        .and_then(|t| t.as_object())
        .ok_or_else(|| CrossDiffError::MissingReport("report has no tables".into()))?;
    let out_dir = dir.join("plotdata");
    fs::create_dir_all(&out_dir)?;
    let mut written = Vec::new();
    for (key, value) in tables {
        let csv = if key.contains("ledger") {
            ledger_csv(value)
        } else if key.starts_with("cauchy") {
            rows_csv(value, "n,lambda,dist_to_last")
        } else if key == "heat_errors" {
            rows_csv(value, "n,h,l2_error")
        } else if key == "pme_errors" {
            rows_csv(value, "n,mass_drift,l1_error")
        } else if key == "cross_by_depth" {
            series_csv(value, "depth,distance")
        } else if key.starts_with("vmo_profile") {
            rows_csv(value, "radius,oscillation")
        } else {
            None
        };
        if let Some(csv) = csv {
            let path = out_dir.join(format!("{key}.csv"));
            fs::write(&path, csv)?;
            written.push(path);
        }
    }
    Ok(written)
}

/// Ledger object {times, e1..e5} -> "t,E1,E2,E3,E4,E5" rows.
fn ledger_csv(value: &Value) -> Option<String> {
    let times = value.get("times")?.as_array()?;
    let series: Vec<&Vec<Value>> = ["e1", "e2", "e3", "e4", "e5"]
        .iter()
        .map(|k| value.get(*k).and_then(|v| v.as_array()))
        .collect::<Option<Vec<_>>>()?;
    let mut out = String::from("t,E1,E2,E3,E4,E5\n");
    for (j, t) in times.iter().enumerate() {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            t,
            series[0].get(j)?,
            series[1].get(j)?,
            series[2].get(j)?,
            series[3].get(j)?,
            series[4].get(j)?
        ));
    }
    Some(out)
}

/// Array-of-arrays -> CSV with the given header.
fn rows_csv(value: &Value, header: &str) -> Option<String> {
    let rows = value.as_array()?;
    let mut out = String::from(header);
    out.push('\n');
    for row in rows {
        let cells = row.as_array()?;
        let line: Vec<String> = cells.iter().map(|c| c.to_string()).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    Some(out)
}

/// Flat numeric array -> (index, value) rows.
fn series_csv(value: &Value, header: &str) -> Option<String> {
    let vals = value.as_array()?;
    let mut out = String::from(header);
    out.push('\n');
    for (i, v) in vals.iter().enumerate() {
        out.push_str(&format!("{i},{v}\n"));
    }
    Some(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn missing_report_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            emit_plotdata(dir.path()),
            Err(CrossDiffError::MissingReport(_))
        ));
    }

    #[test]
    fn ledger_and_cauchy_tables_flatten() {
        let dir = tempfile::tempdir().unwrap();
        let report = serde_json::json!({
            "preset": "x",
            "tables": {
                "heat_ledger": {
                    "times": [0.0, 0.1],
                    "e1": [1.0, 0.5],
                    "e2": [2.0, 1.0],
                    "e3": [0.0, 0.1],
                    "e4": [0.0, 0.0],
                    "e5": [3.0, 2.0],
                },
                "cauchy": [[0, 1.0, 0.5], [1, 0.5, 0.25]],
            }
        });
        fs::write(dir.path().join("report.json"), report.to_string()).unwrap();
        let written = emit_plotdata(dir.path()).unwrap();
        assert_eq!(written.len(), 2);
        let ledger = fs::read_to_string(dir.path().join("plotdata/heat_ledger.csv")).unwrap();
        assert!(ledger.starts_with("t,E1,E2,E3,E4,E5\n"));
        assert!(ledger.contains("0.1,0.5,1.0,0.1,0.0,2.0"), "{ledger}");
        let cauchy = fs::read_to_string(dir.path().join("plotdata/cauchy.csv")).unwrap();
        assert!(cauchy.starts_with("n,lambda,dist_to_last\n"));
    }
}
