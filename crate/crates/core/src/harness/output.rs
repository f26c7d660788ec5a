//! CSV and JSON artifacts for a run.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{MetricRecord, RunConfig, SummarySlice};
use crate::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;
pub const CSV_HEADER: &str = "step,true_mi_bits,estimate_bits,loss";

/// Writes one line per record, preceded by a `#` provenance comment.
pub fn write_records_csv<W: Write>(
    mut out: W,
    records: &[MetricRecord],
    config_hash: &str,
    seed: u64,
) -> std::io::Result<()> {
    writeln!(out, "# mibench config_hash={config_hash} seed={seed} schema={SCHEMA_VERSION}")?;
    writeln!(out, "{CSV_HEADER}")?;
    for r in records {
        writeln!(
            out,
            "{},{},{},{}",
            r.step,
            crate::nats_to_bits(r.true_mi_nats),
            crate::nats_to_bits(r.estimate_nats),
            r.loss
        )?;
    }
    out.flush()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryDocument {
    pub schema_version: u32,
    pub config_hash: String,
    pub seed: u64,
    pub estimator: String,
    pub critic: String,
    pub dataset: String,
    pub slices: Vec<SummarySlice>,
}

impl SummaryDocument {
    pub fn new(config: &RunConfig, slices: Vec<SummarySlice>) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            config_hash: config.config_hash(),
            seed: config.seed,
            estimator: config.estimator.to_string(),
            critic: config.critic.kind.name().to_string(),
            dataset: config.dataset.family().to_string(),
            slices,
        }
    }
}

pub fn write_summary_json(path: impl AsRef<Path>, doc: &SummaryDocument) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(doc).expect("summary serializes");
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn read_summary_json(path: impl AsRef<Path>) -> Result<SummaryDocument> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        offset: 0,
        message: e.to_string(),
    })
}
