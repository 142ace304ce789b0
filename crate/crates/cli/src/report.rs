//! Aggregates the CSVs of a run directory.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use fallguard::{Error, Result};

use crate::manifest::RunManifest;

/// Per-controller columns of the summary, as (output name, suite column).
const SUITE_COLUMNS: [(&str, &str); 8] = [
    ("n_valid", "n_valid"),
    ("f_contact_max", "f_contact_max_mean"),
    ("f_joint_max", "f_joint_max_mean"),
    ("tau_max", "tau_max_mean"),
    ("impulse_j", "impulse_j_mean"),
    ("impulse_100ms", "impulse_100ms_mean"),
    ("illegal_contact_rate", "illegal_contact_rate"),
    ("n_limit_max", "n_limit_max_mean"),
];

/// Metrics also reported as a reduction against the damping baseline.
const RELATIVE: [&str; 5] = ["f_contact_max", "f_joint_max", "tau_max", "impulse_j", "illegal_contact_rate"];

const PREDICTOR_COLUMNS: [&str; 6] = ["config_id", "t2_offset_s", "masked", "far", "lt_mean_s", "miss_rate"];

fn csv_files(dir: &Path, out: &mut Vec<PathBuf>) -> std::io::Result<()> {
    let mut entries: Vec<_> = std::fs::read_dir(dir)?.collect::<std::io::Result<Vec<_>>>()?;
    entries.sort_by_key(|e| e.path());
    for e in entries {
        let p = e.path();
        if p.is_dir() {
            csv_files(&p, out)?;
        } else if p.extension().is_some_and(|x| x == "csv") {
            out.push(p);
        }
    }
    Ok(())
}

struct Table {
    header: Vec<String>,
    rows: Vec<HashMap<String, String>>,
}

fn read_table(path: &Path) -> Result<Table> {
    let err = |e: csv::Error| Error::Data(format!("{}: {e}", path.display()));
    let mut r = csv::Reader::from_path(path).map_err(err)?;
    let header: Vec<String> = r.headers().map_err(err)?.iter().map(String::from).collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(err)?;
        rows.push(header.iter().cloned().zip(rec.iter().map(String::from)).collect());
    }
    Ok(Table { header, rows })
}

fn num(row: &HashMap<String, String>, key: &str) -> Option<f64> {
    row.get(key)?.parse().ok()
}

/// Writes `out` with one row per controller of every suite CSV under `dir`
/// and, when ablation CSVs are present, `<out stem>_predictor.csv`.
pub fn report(dir: &Path, out: &Path, manifest: &mut RunManifest) -> Result<()> {
    let mut files = Vec::new();
    csv_files(dir, &mut files).map_err(|e| Error::Data(format!("{}: {e}", dir.display())))?;
    let out_pred = out.with_file_name(format!(
        "{}_predictor.csv",
        out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
    ));
    let mut suite_rows = Vec::new();
    let mut pred_rows = Vec::new();
    for f in files.iter().filter(|f| **f != out && **f != out_pred) {
        let t = read_table(f)?;
        let source = f.strip_prefix(dir).unwrap_or(f).display().to_string();
        if t.header.iter().any(|h| h == "f_contact_max_mean") {
            manifest.input(f)?;
            let damping = t.rows.iter().find(|r| r.get("controller").is_some_and(|c| c == "damping"));
            for r in &t.rows {
                let mut v = vec![source.clone(), r.get("controller").cloned().unwrap_or_default()];
                for (_, col) in SUITE_COLUMNS {
                    v.push(r.get(col).cloned().unwrap_or_default());
                }
                for m in RELATIVE {
                    let col = SUITE_COLUMNS.iter().find(|c| c.0 == m).expect("listed").1;
                    let rel = match (num(r, col), damping.and_then(|d| num(d, col))) {
                        (Some(x), Some(y)) if y > 0.0 => format!("{:.3}", 100.0 * (y - x) / y),
                        _ => String::new(),
                    };
                    v.push(rel);
                }
                suite_rows.push(v);
            }
        } else if t.header.first().is_some_and(|h| h == "config_id") {
            manifest.input(f)?;
            for r in &t.rows {
                let mut v = vec![source.clone()];
                v.extend(PREDICTOR_COLUMNS.iter().map(|c| r.get(*c).cloned().unwrap_or_default()));
                pred_rows.push(v);
            }
        }
    }
    if suite_rows.is_empty() && pred_rows.is_empty() {
        return Err(Error::Data(format!("{}: no evaluation or predictor CSVs", dir.display())));
    }
    let write = |path: &Path, header: Vec<String>, rows: &[Vec<String>]| -> Result<()> {
        let err = |e: csv::Error| Error::Data(format!("{}: {e}", path.display()));
        let mut w = csv::Writer::from_path(path).map_err(err)?;
        w.write_record(&header).map_err(err)?;
        for r in rows {
            w.write_record(r).map_err(err)?;
        }
        w.flush()?;
        Ok(())
    };
    let mut header = vec!["source".to_string(), "controller".to_string()];
    header.extend(SUITE_COLUMNS.iter().map(|c| c.0.to_string()));
    header.extend(RELATIVE.iter().map(|m| format!("{m}_vs_damping_pct")));
    write(out, header, &suite_rows)?;
    manifest.output(out)?;
    if !pred_rows.is_empty() {
        let mut header = vec!["source".to_string()];
        header.extend(PREDICTOR_COLUMNS.iter().map(|c| c.to_string()));
        write(&out_pred, header, &pred_rows)?;
        manifest.output(&out_pred)?;
    }
    Ok(())
}
