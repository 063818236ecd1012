use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;

use crate::error::{CliError, Result};
use crate::experiments::{Outcome, Table};

/// JSON summary of one experiment, described by docs/summary.schema.json.
#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub name: String,
    pub kind: String,
    pub seed: u64,
    pub pass: bool,
    pub fitted_values: BTreeMap<String, f64>,
    pub expected_values: BTreeMap<String, f64>,
    pub error: Option<String>,
    pub table: Option<String>,
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.display().to_string(), source }
}

fn write_table(path: &Path, table: &Table) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(&table.header)?;
    for row in &table.rows {
        w.write_record(row.iter().map(|v| v.to_string()))?;
    }
    w.flush().map_err(io(path))
}

/// Writes `<name>.csv`, `<name>.json` and `<name>.log` under `dir`.
pub fn write(dir: &Path, name: &str, kind: &str, seed: u64, result: &Result<Outcome>) -> Result<Summary> {
    std::fs::create_dir_all(dir).map_err(io(dir))?;
    let csv_path = dir.join(format!("{name}.csv"));
    let mut log = vec![format!("experiment {name} ({kind}), seed {seed}")];
    let summary = match result {
        Ok(o) => {
            write_table(&csv_path, &o.table)?;
            log.extend(o.log.iter().cloned());
            Summary {
                name: name.into(),
                kind: kind.into(),
                seed,
                pass: o.pass,
                fitted_values: o.fitted.clone(),
                expected_values: o.expected.clone(),
                error: None,
                table: Some(format!("{name}.csv")),
            }
        }
        Err(e) => {
            log.push(format!("error: {e}"));
            Summary { name: name.into(), kind: kind.into(), seed, pass: false, fitted_values: BTreeMap::new(), expected_values: BTreeMap::new(), error: Some(e.to_string()), table: None }
        }
    };
    log.push(if summary.pass { "PASS".into() } else { "FAIL".into() });
    let json_path = dir.join(format!("{name}.json"));
    let text = serde_json::to_string_pretty(&summary).map_err(|source| CliError::Json { path: json_path.display().to_string(), source })?;
    std::fs::write(&json_path, text + "\n").map_err(io(&json_path))?;
    let log_path = dir.join(format!("{name}.log"));
    std::fs::write(&log_path, log.join("\n") + "\n").map_err(io(&log_path))?;
    Ok(summary)
}
