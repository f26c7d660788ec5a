//! Linear decodability gate for class bits.

use serde::{Deserialize, Serialize};

use super::{ClassBits, PairBatch};
use crate::nn::{adam_step, AdamConfig, AdamState, Matrix};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeReport {
    /// Held-out accuracy averaged over class bits.
    pub accuracy: f64,
    pub per_bit: Vec<f64>,
    pub train_rows: usize,
    pub test_rows: usize,
}

impl DecodeReport {
    pub fn min_accuracy(&self) -> f64 {
        self.per_bit.iter().copied().fold(1.0, f64::min)
    }
}

/// Trains one logistic-regression unit per class bit on `batch.x` (first 80%
/// of rows) and reports accuracy on the remaining rows.
pub fn verify_decodability(batch: &PairBatch, max_iters: usize) -> Result<DecodeReport> {
    decode_bits(&batch.x, &batch.class_bits_x, max_iters)
}

/// [`verify_decodability`] against arbitrary labels.
pub fn decode_bits(x: &Matrix, labels: &ClassBits, max_iters: usize) -> Result<DecodeReport> {
    let (n, d) = x.shape();
    let s = labels.sources();
    if labels.rows() != n {
        return Err(Error::Shape(format!("{} label rows for {n} samples", labels.rows())));
    }
    if s == 0 {
        return Err(Error::Domain("no class bits to decode".into()));
    }
    let n_train = n * 4 / 5;
    if n_train == 0 || n_train == n {
        return Err(Error::Domain(format!("{n} rows are too few for a train/test split")));
    }
    let train = Matrix::from_vec(n_train, d, x.data()[..n_train * d].to_vec())?;
    let test = Matrix::from_vec(n - n_train, d, x.data()[n_train * d..].to_vec())?;

    // params: d x s weights (row-major) followed by s biases.
    let mut params = vec![0.0; d * s + s];
    let mut state = AdamState::new(
        &params,
        AdamConfig {
            lr: 0.05,
            ..AdamConfig::default()
        },
    );
    let target = |i: usize, b: usize| if labels.get(i, b) { 1.0 } else { 0.0 };
    let logits = |m: &Matrix, p: &[f64]| -> Result<Matrix> {
        let w = Matrix::from_vec(d, s, p[..d * s].to_vec())?;
        let mut z = m.matmul(&w)?;
        for i in 0..z.rows() {
            for (v, b) in z.row_mut(i).iter_mut().zip(&p[d * s..]) {
                *v += b;
            }
        }
        Ok(z)
    };

    for _ in 0..max_iters {
        let z = logits(&train, &params)?;
        let mut resid = Matrix::zeros(n_train, s);
        for i in 0..n_train {
            for b in 0..s {
                let p = 1.0 / (1.0 + (-z.get(i, b)).exp());
                resid.set(i, b, (p - target(i, b)) / n_train as f64);
            }
        }
        let gw = train.t_matmul(&resid)?;
        let mut grad = gw.into_vec();
        grad.extend((0..s).map(|b| (0..n_train).map(|i| resid.get(i, b)).sum::<f64>()));
        adam_step(&mut params, &grad, &mut state)?;
    }

    let z = logits(&test, &params)?;
    let per_bit: Vec<f64> = (0..s)
        .map(|b| {
            let hits = (0..test.rows())
                .filter(|&i| (z.get(i, b) > 0.0) == labels.get(n_train + i, b))
                .count();
            hits as f64 / test.rows() as f64
        })
        .collect();
    Ok(DecodeReport {
        accuracy: per_bit.iter().sum::<f64>() / s as f64,
        per_bit,
        train_rows: n_train,
        test_rows: n - n_train,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{compose_image_pair, sample_embedding_pair, EmbeddingSpec, ImageSpec, SourceBank};
    use crate::rng::seeded;
    use rand::seq::SliceRandom;

    #[test]
    fn clean_digits_decode_perfectly() {
        let bank = SourceBank::synthetic_digits(200, 0);
        let spec = ImageSpec {
            grid: 2,
            side: 16,
            ..ImageSpec::default()
        };
        let batch = compose_image_pair(&spec, &bank, 500, &mut seeded(1)).unwrap();
        let r = verify_decodability(&batch, 100).unwrap();
        assert_eq!(r.accuracy, 1.0, "{r:?}");
        assert_eq!(r.test_rows, 100);
    }

    #[test]
    fn embeddings_decode_perfectly() {
        let spec = EmbeddingSpec {
            sources: 3,
            segment_dim: 64,
            ..EmbeddingSpec::default()
        };
        let batch = sample_embedding_pair(&spec, 500, &mut seeded(2)).unwrap();
        assert_eq!(verify_decodability(&batch, 100).unwrap().accuracy, 1.0);
    }

    #[test]
    fn shuffled_labels_are_chance() {
        let bank = SourceBank::synthetic_digits(200, 0);
        let spec = ImageSpec {
            grid: 1,
            side: 14,
            ..ImageSpec::default()
        };
        let batch = compose_image_pair(&spec, &bank, 2000, &mut seeded(3)).unwrap();
        let mut bits = batch.class_bits_x.as_slice().to_vec();
        bits.shuffle(&mut seeded(4));
        let labels = ClassBits::new(2000, 1, bits).unwrap();
        let r = decode_bits(&batch.x, &labels, 50).unwrap();
        assert!((r.accuracy - 0.5).abs() < 0.08, "{r:?}");
    }

    #[test]
    fn rejects_degenerate_input() {
        let x = Matrix::zeros(1, 3);
        assert!(decode_bits(&x, &ClassBits::new(1, 1, vec![true]).unwrap(), 5).is_err());
        assert!(decode_bits(&x, &ClassBits::empty(1), 5).is_err());
    }
}
