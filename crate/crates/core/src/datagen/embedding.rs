//! Synthetic class-separable embeddings and the binary embedding file format.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{apply_bsc, ClassBits, PairBatch, BANK_LIMIT};
use crate::nn::Matrix;
use crate::rng;
use crate::{Error, Result};

pub const EMBEDDING_MAGIC: &[u8; 8] = b"MIBEMB01";

fn default_segment_dim() -> usize {
    768
}
fn default_sigma() -> f64 {
    0.25
}
fn default_margin() -> f64 {
    4.0
}

/// `sources` concatenated segments of `segment_dim` values. Segment `b` of a
/// row is `mu[b][c] + N(0, sigma^2 I)` for class bit `c`, with
/// `mu[b][1] = -mu[b][0]` and `|mu[b][0] - mu[b][1]| = margin`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbeddingSpec {
    pub sources: usize,
    #[serde(default = "default_segment_dim")]
    pub segment_dim: usize,
    #[serde(default = "default_sigma")]
    pub noise_sigma: f64,
    #[serde(default = "default_margin")]
    pub margin: f64,
    #[serde(default)]
    pub beta: f64,
}

impl EmbeddingSpec {
    pub fn new(sources: usize) -> Self {
        Self {
            sources,
            segment_dim: default_segment_dim(),
            noise_sigma: default_sigma(),
            margin: default_margin(),
            beta: 0.0,
        }
    }

    pub fn flat_dim(&self) -> usize {
        self.sources * self.segment_dim
    }

    pub fn validate(&self) -> Result<()> {
        if self.sources == 0 {
            return Err(Error::config("dataset.sources", "must be at least 1"));
        }
        if self.segment_dim == 0 {
            return Err(Error::config("dataset.segment_dim", "must be at least 1"));
        }
        if !(self.noise_sigma >= 0.0) || !self.noise_sigma.is_finite() {
            return Err(Error::config("dataset.noise_sigma", "must be finite and non-negative"));
        }
        if !(self.margin > 0.0) || !self.margin.is_finite() {
            return Err(Error::config("dataset.margin", "must be finite and positive"));
        }
        if self.noise_sigma > 0.0 && self.margin / self.noise_sigma < 8.0 {
            return Err(Error::config(
                "dataset.margin",
                format!(
                    "margin {} is below 8 sigma ({}); classes would not be reliably separable",
                    self.margin,
                    8.0 * self.noise_sigma
                ),
            ));
        }
        if !(0.0..=0.5).contains(&self.beta) {
            return Err(Error::config("dataset.beta", "beta must lie in [0, 0.5]"));
        }
        Ok(())
    }
}

impl Default for EmbeddingSpec {
    fn default() -> Self {
        Self::new(10)
    }
}

/// Class means plus a virtual bank of [`BANK_LIMIT`] base samples per
/// (source, class). Base sample `i` is regenerated on demand from its own
/// keyed stream, so the bank costs no memory.
#[derive(Debug, Clone)]
pub struct EmbeddingSampler {
    spec: EmbeddingSpec,
    bank_seed: u64,
    means: Vec<Vec<f64>>,
}

impl EmbeddingSampler {
    pub fn new(spec: &EmbeddingSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut r = rng::stream(seed, rng::purpose::CLASS_MEANS);
        let radius = spec.margin / 2.0;
        let means = (0..spec.sources)
            .map(|_| {
                let mut v: Vec<f64> = (0..spec.segment_dim).map(|_| r.sample(StandardNormal)).collect();
                let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
                v.iter_mut().for_each(|a| *a *= radius / norm);
                v
            })
            .collect();
        Ok(Self {
            spec: *spec,
            bank_seed: seed,
            means,
        })
    }

    pub fn spec(&self) -> &EmbeddingSpec {
        &self.spec
    }

    pub fn set_beta(&mut self, beta: f64) -> Result<()> {
        if !(0.0..=0.5).contains(&beta) {
            return Err(Error::Domain(format!("beta must lie in [0, 0.5], got {beta}")));
        }
        self.spec.beta = beta;
        Ok(())
    }

    /// Mean of class `bit` for source `source`.
    pub fn class_mean(&self, source: usize, bit: bool) -> Vec<f64> {
        let sign = if bit { -1.0 } else { 1.0 };
        self.means[source].iter().map(|m| sign * m).collect()
    }

    fn write_segment(&self, out: &mut [f64], source: usize, bit: bool, index: usize) {
        let sign = if bit { -1.0 } else { 1.0 };
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(self.bank_seed ^ 0x9e37_79b9_7f4a_7c15);
        r.set_stream(((source as u64 * 2 + bit as u64) << 32) | index as u64);
        let sigma = self.spec.noise_sigma;
        for (o, m) in out.iter_mut().zip(&self.means[source]) {
            let eps: f64 = r.sample(StandardNormal);
            *o = sign * m + sigma * eps;
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, k: usize, rng: &mut R) -> Result<PairBatch> {
        let ds = self.spec.sources;
        let seg = self.spec.segment_dim;
        let bits_x: Vec<bool> = (0..k * ds).map(|_| rng.random::<bool>()).collect();
        let bits_y = apply_bsc(&bits_x, self.spec.beta, rng)?;
        let flat = self.spec.flat_dim();
        let mut x = vec![0.0; k * flat];
        let mut y = vec![0.0; k * flat];
        for row in 0..k {
            for b in 0..ds {
                let at = row * ds + b;
                let ix = rng.random_range(0..BANK_LIMIT);
                let iy = if bits_x[at] == bits_y[at] {
                    let j = rng.random_range(0..BANK_LIMIT - 1);
                    if j >= ix { j + 1 } else { j }
                } else {
                    rng.random_range(0..BANK_LIMIT)
                };
                let span = row * flat + b * seg..row * flat + (b + 1) * seg;
                self.write_segment(&mut x[span.clone()], b, bits_x[at], ix);
                self.write_segment(&mut y[span], b, bits_y[at], iy);
            }
        }
        Ok(PairBatch {
            x: Matrix::from_vec(k, flat, x)?,
            y: Matrix::from_vec(k, flat, y)?,
            class_bits_x: ClassBits::new(k, ds, bits_x)?,
            class_bits_y: ClassBits::new(k, ds, bits_y)?,
        })
    }
}

/// One-shot sampling; the class means are derived from `rng`.
pub fn sample_embedding_pair<R: Rng + ?Sized>(spec: &EmbeddingSpec, k: usize, rng: &mut R) -> Result<PairBatch> {
    let seed = rng.random::<u64>();
    EmbeddingSampler::new(spec, seed)?.sample(k, rng)
}

/// Writes `MIBEMB01`, `u32` rows, `u32` cols (little-endian), then the values
/// as little-endian `f32`.
pub fn write_embedding_file(path: impl AsRef<Path>, data: &Matrix) -> Result<()> {
    let path = path.as_ref();
    let dim = |v: usize| u32::try_from(v).map_err(|_| Error::Domain(format!("dimension {v} exceeds u32")));
    let mut buf = Vec::with_capacity(16 + 4 * data.data().len());
    buf.extend_from_slice(EMBEDDING_MAGIC);
    buf.extend_from_slice(&dim(data.rows())?.to_le_bytes());
    buf.extend_from_slice(&dim(data.cols())?.to_le_bytes());
    for &v in data.data() {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn read_embedding_file(path: impl AsRef<Path>) -> Result<Matrix> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let fail = |offset: usize, message: String| Error::Format {
        path: path.to_path_buf(),
        offset: offset as u64,
        message,
    };
    if bytes.len() < 16 {
        return Err(fail(bytes.len(), "truncated header".into()));
    }
    if &bytes[..8] != EMBEDDING_MAGIC {
        return Err(fail(0, "bad magic, expected MIBEMB01".into()));
    }
    let word = |o: usize| u32::from_le_bytes([bytes[o], bytes[o + 1], bytes[o + 2], bytes[o + 3]]) as usize;
    let (rows, cols) = (word(8), word(12));
    let count = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| fail(8, format!("dimensions {rows}x{cols} overflow")))?;
    let payload = &bytes[16..];
    if payload.len() != count {
        return Err(fail(
            16 + payload.len().min(count),
            format!("expected {count} payload bytes, found {}", payload.len()),
        ));
    }
    let values: Vec<f64> = payload
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
        .collect();
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(fail(16 + 4 * i, "non-finite value".into()));
    }
    Matrix::from_vec(rows, cols, values)
}
