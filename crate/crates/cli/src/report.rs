//! Aggregation of run summaries into tables and plot data.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use mibench_core::harness::{estimate_ratio, read_summary_json, SummaryDocument, SCHEMA_VERSION};

use crate::CliError;

#[derive(Debug, Clone, PartialEq)]
pub struct ReportOutput {
    pub table: String,
    pub mse_csv: PathBuf,
    pub ratio_csv: PathBuf,
    pub missing: Vec<PathBuf>,
}

fn collect_inputs(inputs: &[PathBuf]) -> (Vec<PathBuf>, Vec<PathBuf>) {
    let mut files = Vec::new();
    let mut missing = Vec::new();
    for p in inputs {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = fs::read_dir(p)
                .into_iter()
                .flatten()
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.to_string_lossy().ends_with(".summary.json"))
                .collect();
            found.sort();
            files.extend(found);
        } else if p.is_file() {
            files.push(p.clone());
        } else {
            missing.push(p.clone());
        }
    }
    (files, missing)
}

/// Reads summaries from `inputs` and writes `mse_table.csv` and
/// `ratio_plot.csv` to `out_dir`. Unreadable inputs are listed and skipped.
pub fn cmd_report(inputs: &[PathBuf], out_dir: &Path) -> Result<ReportOutput, CliError> {
    let (files, mut missing) = collect_inputs(inputs);
    let mut docs: Vec<SummaryDocument> = Vec::new();
    for f in files {
        match read_summary_json(&f) {
            Ok(d) => docs.push(d),
            Err(e) => {
                eprintln!("skipping {}: {e}", f.display());
                missing.push(f);
            }
        }
    }
    for m in &missing {
        eprintln!("missing or unreadable: {}", m.display());
    }
    if docs.is_empty() {
        return Err(CliError::Config("report: no readable summaries in the input set".into()));
    }
    if let Some(d) = docs.iter().find(|d| d.schema_version != SCHEMA_VERSION) {
        return Err(CliError::Config(format!(
            "report: summary {} has schema version {}, expected {SCHEMA_VERSION}",
            d.config_hash, d.schema_version
        )));
    }

    // (dataset, true MI in bits rounded for grouping) -> cells.
    struct Cell<'a> {
        doc: &'a SummaryDocument,
        true_bits: f64,
        mse: f64,
        ratio: Option<f64>,
    }
    let mut groups: BTreeMap<(String, i64), Vec<Cell>> = BTreeMap::new();
    for doc in &docs {
        for s in &doc.slices {
            let key = (doc.dataset.clone(), (s.bits.true_mi * 1e6).round() as i64);
            groups.entry(key).or_default().push(Cell {
                doc,
                true_bits: s.bits.true_mi,
                mse: s.bits.mse,
                ratio: estimate_ratio(s),
            });
        }
    }

    let mut mse_csv = String::from("dataset,true_mi_bits,estimator,critic,config_hash,mse_bits2,best\n");
    let mut ratio_csv = String::from("dataset,estimator,critic,config_hash,true_mi_bits,ratio\n");
    let mut table = format!("{:<10} {:>8} {:<10} {:<10} {:>12}\n", "dataset", "true", "estimator", "critic", "mse(bits^2)");
    for ((dataset, _), cells) in &groups {
        let best = cells.iter().map(|c| c.mse).fold(f64::INFINITY, f64::min);
        for c in cells {
            let mark = if c.mse == best { "*" } else { "" };
            let d = c.doc;
            let _ = writeln!(
                mse_csv,
                "{dataset},{},{},{},{},{},{mark}",
                c.true_bits, d.estimator, d.critic, d.config_hash, c.mse
            );
            let _ = writeln!(
                table,
                "{:<10} {:>8.3} {:<10} {:<10} {:>11.4}{}",
                dataset,
                c.true_bits,
                d.estimator,
                d.critic,
                c.mse,
                if mark.is_empty() { " " } else { "*" }
            );
            if let Some(r) = c.ratio {
                let _ = writeln!(
                    ratio_csv,
                    "{dataset},{},{},{},{},{r}",
                    d.estimator, d.critic, d.config_hash, c.true_bits
                );
            }
        }
    }

    fs::create_dir_all(out_dir).map_err(|e| CliError::io(out_dir, e))?;
    let mse_path = out_dir.join("mse_table.csv");
    let ratio_path = out_dir.join("ratio_plot.csv");
    fs::write(&mse_path, mse_csv).map_err(|e| CliError::io(&mse_path, e))?;
    fs::write(&ratio_path, ratio_csv).map_err(|e| CliError::io(&ratio_path, e))?;
    Ok(ReportOutput {
        table,
        mse_csv: mse_path,
        ratio_csv: ratio_path,
        missing,
    })
}
