//! Paired-sample generators with analytically known mutual information.
//!
//! Three families are provided:
//!
//! - [`GaussianSpec`]: component-wise correlated Gaussians,
//!   `I = -(d/2) ln(1 - rho^2)`.
//! - [`ImageSpec`]: digit images composed on a `g x g` grid and/or across
//!   colour channels. Each tile carries one uniform class bit, so
//!   `H(C) = g^2 * channels` bits. The bits seen by `y` pass through a binary
//!   symmetric channel, giving `I = H(C) * (1 - H2(beta))`.
//! - [`EmbeddingSpec`]: concatenated class-conditional Gaussian segments, one
//!   per class bit, with the same channel.
//!
//! The image and embedding constructions only license `I(X;Y) = H(C)` when a
//! decoder recovers the class bits without error; [`verify_decodability`]
//! checks that precondition on a sample.

mod bsc;
mod decode;
mod embedding;
mod gaussian;
mod idx;
mod image;
mod manifest;

use serde::{Deserialize, Serialize};

pub use bsc::{apply_bsc, binary_entropy, bsc_beta_for_mi, bsc_mi_oracle};
pub use decode::{verify_decodability, DecodeReport};
pub use embedding::{
    read_embedding_file, sample_embedding_pair, write_embedding_file, EmbeddingSampler,
    EmbeddingSpec, EMBEDDING_MAGIC,
};
pub use gaussian::{gaussian_rho_for_mi, sample_gaussian_pair, GaussianSpec};
pub use idx::{load_idx, parse_idx, write_idx_images, write_idx_labels, IdxData, IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC};
pub use image::{
    add_nuisance, compose_image_pair, resize_bilinear, Background, Image, ImageComposer, ImageSpec,
    SourceBank,
};
pub use manifest::{DatasetManifest, GENERATOR_VERSION};

use crate::nn::Matrix;
use crate::{Error, Result};

/// Upper bound on the number of base samples a bank holds. Training pairs are
/// resampled from these with replacement.
pub const BANK_LIMIT: usize = 50_000;

/// Row-major `rows x sources` bit table.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassBits {
    rows: usize,
    sources: usize,
    bits: Vec<bool>,
}

impl ClassBits {
    pub fn new(rows: usize, sources: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != rows * sources {
            return Err(Error::Shape(format!(
                "{} bits do not fill {rows}x{sources}",
                bits.len()
            )));
        }
        Ok(Self { rows, sources, bits })
    }

    pub fn empty(rows: usize) -> Self {
        Self {
            rows,
            sources: 0,
            bits: Vec::new(),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn sources(&self) -> usize {
        self.sources
    }

    pub fn row(&self, i: usize) -> &[bool] {
        &self.bits[i * self.sources..(i + 1) * self.sources]
    }

    pub fn get(&self, i: usize, b: usize) -> bool {
        self.bits[i * self.sources + b]
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.bits
    }
}

/// `K` paired observations plus the class bits that generated them. The bits
/// are audit metadata and are never fed to a critic.
#[derive(Debug, Clone, PartialEq)]
pub struct PairBatch {
    pub x: Matrix,
    pub y: Matrix,
    pub class_bits_x: ClassBits,
    pub class_bits_y: ClassBits,
}

impl PairBatch {
    pub fn len(&self) -> usize {
        self.x.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.rows() == 0
    }
}

/// Full dataset recipe; the true MI is a closed-form function of it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum DatasetSpec {
    Gaussian(GaussianSpec),
    Image(ImageSpec),
    Embedding(EmbeddingSpec),
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            DatasetSpec::Gaussian(s) => s.validate(),
            DatasetSpec::Image(s) => s.validate(),
            DatasetSpec::Embedding(s) => s.validate(),
        }
    }

    pub fn family(&self) -> &'static str {
        match self {
            DatasetSpec::Gaussian(_) => "gaussian",
            DatasetSpec::Image(_) => "image",
            DatasetSpec::Embedding(_) => "embedding",
        }
    }

    /// Number of independent class bits, or `None` for Gaussians.
    pub fn information_sources(&self) -> Option<usize> {
        match self {
            DatasetSpec::Gaussian(_) => None,
            DatasetSpec::Image(s) => Some(s.sources()),
            DatasetSpec::Embedding(s) => Some(s.sources),
        }
    }

    pub fn crossover(&self) -> Option<f64> {
        match self {
            DatasetSpec::Gaussian(_) => None,
            DatasetSpec::Image(s) => Some(s.beta),
            DatasetSpec::Embedding(s) => Some(s.beta),
        }
    }

    pub fn x_dim(&self) -> usize {
        match self {
            DatasetSpec::Gaussian(s) => s.dim,
            DatasetSpec::Image(s) => s.flat_dim(),
            DatasetSpec::Embedding(s) => s.flat_dim(),
        }
    }

    pub fn y_dim(&self) -> usize {
        self.x_dim()
    }

    /// The same recipe retuned to carry `bits` of true MI: `rho` for
    /// Gaussians, the channel crossover `beta` otherwise.
    pub fn at_mi_level(&self, bits: f64) -> Result<DatasetSpec> {
        let nats = crate::bits_to_nats(bits);
        let mut out = self.clone();
        match &mut out {
            DatasetSpec::Gaussian(s) => {
                let rho = gaussian_rho_for_mi(s.dim, nats)?;
                if rho >= 1.0 {
                    return Err(Error::Domain(format!(
                        "{bits} bits is beyond f64 resolution for a {}-dimensional Gaussian",
                        s.dim
                    )));
                }
                s.rho = rho;
            }
            DatasetSpec::Image(s) => s.beta = bsc_beta_for_mi(s.sources(), bits)?,
            DatasetSpec::Embedding(s) => s.beta = bsc_beta_for_mi(s.sources, bits)?,
        }
        Ok(out)
    }
}

/// True MI in nats.
pub fn true_mi(spec: &DatasetSpec) -> Result<f64> {
    spec.validate()?;
    Ok(match spec {
        DatasetSpec::Gaussian(s) => s.true_mi_nats(),
        DatasetSpec::Image(s) => channel_mi_nats(s.sources(), s.beta)?,
        DatasetSpec::Embedding(s) => channel_mi_nats(s.sources, s.beta)?,
    })
}

/// `d_s * (1 - H2(beta))` bits, in nats.
fn channel_mi_nats(sources: usize, beta: f64) -> Result<f64> {
    Ok(crate::bits_to_nats(sources as f64 * (1.0 - binary_entropy(beta)?)))
}

/// Widens a batch by appending copies of its leading
/// `target_dim - cols` coordinates; no information is added or lost.
pub fn pad_redundant(batch: &Matrix, target_dim: usize) -> Result<Matrix> {
    let d = batch.cols();
    if target_dim < d {
        return Err(Error::Domain(format!(
            "cannot pad {d} columns down to {target_dim}"
        )));
    }
    if d == 0 && target_dim > 0 {
        return Err(Error::Domain("cannot pad an empty feature vector".into()));
    }
    let mut data = Vec::with_capacity(batch.rows() * target_dim);
    for i in 0..batch.rows() {
        let row = batch.row(i);
        data.extend_from_slice(row);
        // Wraps around when more than one full copy is needed.
        data.extend((d..target_dim).map(|c| row[c % d]));
    }
    Matrix::from_vec(batch.rows(), target_dim, data)
}
