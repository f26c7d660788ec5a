use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{true_mi, DatasetSpec};
use crate::{Error, Result};

pub const GENERATOR_VERSION: &str = concat!("mibench-core ", env!("CARGO_PKG_VERSION"));

/// Sidecar JSON describing a generated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub generator_version: String,
    pub seed: u64,
    pub spec: DatasetSpec,
    /// `d_s`, absent for Gaussians.
    pub sources: Option<usize>,
    pub beta: Option<f64>,
    pub true_mi_bits: f64,
    pub true_mi_nats: f64,
    pub rows: usize,
    #[serde(default)]
    pub files: Vec<String>,
    #[serde(default)]
    pub source_bank: Option<String>,
}

impl DatasetManifest {
    pub fn new(spec: &DatasetSpec, seed: u64, rows: usize) -> Result<Self> {
        let nats = true_mi(spec)?;
        Ok(Self {
            generator_version: GENERATOR_VERSION.to_string(),
            seed,
            spec: spec.clone(),
            sources: spec.information_sources(),
            beta: spec.crossover(),
            true_mi_bits: crate::nats_to_bits(nats),
            true_mi_nats: nats,
            rows,
            files: Vec::new(),
            source_bank: None,
        })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            offset: 0,
            message: e.to_string(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::ImageSpec;

    #[test]
    fn image_manifest_reports_four_bits() {
        let spec = DatasetSpec::Image(ImageSpec::default());
        let m = DatasetManifest::new(&spec, 7, 100).unwrap();
        assert!((m.true_mi_bits - 4.0).abs() < 1e-12);
        assert_eq!(m.sources, Some(4));
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("manifest.json");
        m.write(&p).unwrap();
        assert_eq!(DatasetManifest::read(&p).unwrap(), m);
    }
}
