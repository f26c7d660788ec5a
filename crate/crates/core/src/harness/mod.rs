//! Stepwise training protocol: one critic is trained through a schedule of
//! true-MI levels and its estimate is recorded at every evaluation step.

mod output;
mod summary;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use output::{
    read_summary_json, write_records_csv, write_summary_json, SummaryDocument, CSV_HEADER,
    SCHEMA_VERSION,
};
pub use summary::{estimate_ratio, summarize, SliceStats, SummarySlice, WindowPolicy};

use crate::critics::{init_critic, score_backward, score_matrix, CriticConfig, CriticParams};
use crate::datagen::{
    sample_gaussian_pair, true_mi, DatasetSpec, EmbeddingSampler, GaussianSpec, ImageComposer,
    PairBatch, SourceBank,
};
use crate::estimators::{estimate, optimization_loss, EmaState, EstimatorKind, DEFAULT_EMA_DECAY};
use crate::nn::{adam_step, AdamConfig, AdamState, Parameters};
use crate::rng::{self, purpose};
use crate::{Error, Result};

/// One block of the stepwise schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleLevel {
    pub mi_bits: f64,
    pub steps: usize,
}

/// Levels {2, 4, 6, 8, 10} bits, 4000 steps each.
pub fn default_schedule() -> Vec<ScheduleLevel> {
    [2.0, 4.0, 6.0, 8.0, 10.0]
        .into_iter()
        .map(|mi_bits| ScheduleLevel { mi_bits, steps: 4000 })
        .collect()
}

fn default_batch() -> usize {
    64
}
fn default_lr() -> f64 {
    5e-4
}
fn default_stride() -> usize {
    1
}
fn default_decay() -> f64 {
    DEFAULT_EMA_DECAY
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetSpec,
    pub critic: CriticConfig,
    pub estimator: EstimatorKind,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_schedule")]
    pub schedule: Vec<ScheduleLevel>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_stride")]
    pub eval_stride: usize,
    /// Unrecorded training steps at the first level before the schedule.
    #[serde(default)]
    pub warmup_steps: usize,
    /// Start every level from a freshly initialized critic and optimizer.
    #[serde(default)]
    pub reinit_per_level: bool,
    #[serde(default = "default_decay")]
    pub ema_decay: f64,
}

impl RunConfig {
    pub fn new(dataset: DatasetSpec, critic: CriticConfig, estimator: EstimatorKind) -> Self {
        Self {
            dataset,
            critic,
            estimator,
            batch_size: default_batch(),
            lr: default_lr(),
            schedule: default_schedule(),
            seed: 0,
            eval_stride: default_stride(),
            warmup_steps: 0,
            reinit_per_level: false,
            ema_decay: default_decay(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.dataset.validate()?;
        self.critic.validate()?;
        self.estimator.validate()?;
        if self.batch_size < 2 {
            return Err(Error::config("batch_size", "must be at least 2"));
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::config("lr", "must be finite and positive"));
        }
        if self.eval_stride == 0 {
            return Err(Error::config("eval_stride", "must be at least 1"));
        }
        if !(self.ema_decay > 0.0 && self.ema_decay < 1.0) {
            return Err(Error::config("ema_decay", "must lie in (0, 1)"));
        }
        if self.schedule.is_empty() {
            return Err(Error::config("schedule", "needs at least one level"));
        }
        for (i, level) in self.schedule.iter().enumerate() {
            self.dataset.at_mi_level(level.mi_bits).map_err(|e| {
                Error::config(format!("schedule[{i}].mi_bits"), e.to_string())
            })?;
        }
        Ok(())
    }

    /// Total number of training steps, warm-up included.
    pub fn total_steps(&self) -> usize {
        self.warmup_steps + self.schedule.iter().map(|l| l.steps).sum::<usize>()
    }

    /// First 16 hex digits of the SHA-256 of the config's JSON form.
    pub fn config_hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&json)[..8]
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    /// Global training step, warm-up included.
    pub step: usize,
    /// Index into the schedule.
    pub level: usize,
    pub true_mi_nats: f64,
    pub estimate_nats: f64,
    pub loss: f64,
}

enum Sampler {
    Gaussian(GaussianSpec),
    Image(Box<ImageComposer>),
    Embedding(EmbeddingSampler),
}

impl Sampler {
    fn new(config: &RunConfig, bank: Option<&SourceBank>) -> Result<Self> {
        Ok(match &config.dataset {
            DatasetSpec::Gaussian(s) => Sampler::Gaussian(*s),
            DatasetSpec::Image(s) => {
                let bank = bank.ok_or_else(|| {
                    Error::config("dataset", "image datasets need a source bank")
                })?;
                Sampler::Image(Box::new(ImageComposer::new(s, bank)?))
            }
            DatasetSpec::Embedding(s) => {
                let seed = rng::stream(config.seed, purpose::BANK).random::<u64>();
                Sampler::Embedding(EmbeddingSampler::new(s, seed)?)
            }
        })
    }

    fn retune(&mut self, level: &DatasetSpec) -> Result<()> {
        match (self, level) {
            (Sampler::Gaussian(s), DatasetSpec::Gaussian(l)) => *s = *l,
            (Sampler::Image(c), DatasetSpec::Image(l)) => c.set_beta(l.beta)?,
            (Sampler::Embedding(e), DatasetSpec::Embedding(l)) => e.set_beta(l.beta)?,
            _ => unreachable!("level spec comes from the same family"),
        }
        Ok(())
    }

    fn sample<R: Rng + ?Sized>(&self, k: usize, rng: &mut R) -> Result<PairBatch> {
        match self {
            Sampler::Gaussian(s) => sample_gaussian_pair(s, k, rng),
            Sampler::Image(c) => c.sample(k, rng),
            Sampler::Embedding(e) => e.sample(k, rng),
        }
    }
}

struct Trainer<'a> {
    config: &'a RunConfig,
    params: CriticParams,
    adam: AdamState,
    ema: Option<EmaState>,
    init_rng: rng::Rng,
}

impl<'a> Trainer<'a> {
    fn new(config: &'a RunConfig) -> Result<Self> {
        let mut init_rng = rng::stream(config.seed, purpose::CRITIC_INIT);
        let d = (config.dataset.x_dim(), config.dataset.y_dim());
        let params = init_critic(&config.critic, d.0, d.1, &mut init_rng)?;
        let mut t = Self {
            config,
            adam: AdamState::new(&params, AdamConfig::default()),
            params,
            ema: None,
            init_rng,
        };
        t.reset_optimizer()?;
        Ok(t)
    }

    fn reset_optimizer(&mut self) -> Result<()> {
        let adam = AdamConfig {
            lr: self.config.lr,
            ..AdamConfig::default()
        };
        self.adam = AdamState::new(&self.params, adam);
        self.ema = if self.config.estimator.needs_ema() {
            Some(EmaState::new(self.config.ema_decay)?)
        } else {
            None
        };
        Ok(())
    }

    fn reinit(&mut self) -> Result<()> {
        let d = (self.config.dataset.x_dim(), self.config.dataset.y_dim());
        self.params = init_critic(&self.config.critic, d.0, d.1, &mut self.init_rng)?;
        self.reset_optimizer()
    }

    /// One ascent step on the objective. Returns `(estimate, objective)`,
    /// both evaluated before the update.
    fn step(&mut self, batch: &PairBatch) -> Result<(f64, f64)> {
        let critic = &self.config.critic;
        let (scores, cache) = score_matrix(critic, &self.params, &batch.x, &batch.y)?;
        let est = estimate(self.config.estimator, &scores)?;
        let out = optimization_loss(self.config.estimator, &scores, self.ema.as_mut())?;
        let mut grads = score_backward(critic, &self.params, &cache, &out.grad)?;
        // adam_step descends; flip the sign to ascend the bound.
        for t in grads.tensors_mut() {
            t.iter_mut().for_each(|g| *g = -*g);
        }
        adam_step(&mut self.params, &grads, &mut self.adam)?;
        if self.params.tensors().iter().any(|t| t.iter().any(|v| !v.is_finite())) {
            return Err(Error::Numeric("critic parameters became non-finite".into()));
        }
        Ok((est, out.loss))
    }
}

/// Runs the schedule and passes every record to `sink` as it is produced.
/// Image datasets draw from `bank`; other families ignore it.
pub fn run_benchmark_with(
    config: &RunConfig,
    bank: Option<&SourceBank>,
    mut sink: impl FnMut(&MetricRecord),
) -> Result<()> {
    config.validate()?;
    let mut sampler = Sampler::new(config, bank)?;
    let mut trainer = Trainer::new(config)?;
    let mut data_rng = rng::stream(config.seed, purpose::DATA);
    let k = config.batch_size;
    let mut step = 0usize;
    let abort = |step: usize| move |e: Error| Error::RunAborted { step, source: Box::new(e) };

    let first = config.dataset.at_mi_level(config.schedule[0].mi_bits)?;
    sampler.retune(&first)?;
    for _ in 0..config.warmup_steps {
        let batch = sampler.sample(k, &mut data_rng).map_err(abort(step))?;
        trainer.step(&batch).map_err(abort(step))?;
        step += 1;
    }

    for (li, level) in config.schedule.iter().enumerate() {
        let spec = config.dataset.at_mi_level(level.mi_bits)?;
        let truth = true_mi(&spec)?;
        sampler.retune(&spec)?;
        if config.reinit_per_level && li > 0 {
            trainer.reinit()?;
        }
        for local in 0..level.steps {
            let batch = sampler.sample(k, &mut data_rng).map_err(abort(step))?;
            let (est, loss) = trainer.step(&batch).map_err(abort(step))?;
            if (local + 1) % config.eval_stride == 0 {
                sink(&MetricRecord {
                    step,
                    level: li,
                    true_mi_nats: truth,
                    estimate_nats: est,
                    loss,
                });
            }
            step += 1;
        }
        log::debug!("level {li} ({} bits) done at step {step}", level.mi_bits);
    }
    Ok(())
}

/// Collecting form of [`run_benchmark_with`].
pub fn run_benchmark(config: &RunConfig, bank: Option<&SourceBank>) -> Result<Vec<MetricRecord>> {
    let mut out = Vec::with_capacity(config.total_steps() / config.eval_stride.max(1));
    run_benchmark_with(config, bank, |r| out.push(*r))?;
    Ok(out)
}
