//! Variational MI bounds evaluated on a [`ScoreMatrix`].
//!
//! Notation: `s_ii` are joint scores (diagonal), `s_ij` with `i != j` are
//! marginal scores. `E_joint[g]` averages `g` over the `K` diagonal entries,
//! `E_marg[g]` over the `K(K-1)` off-diagonal entries. All values are nats.
//!
//! | kind      | training objective                              | reported estimate                 |
//! |-----------|-------------------------------------------------|-----------------------------------|
//! | DV        | `E_joint[s] - log E_marg[e^s]`                  | same                              |
//! | NWJ       | `E_joint[s] - e^-1 E_marg[e^s]`                 | same                              |
//! | InfoNCE   | `mean_i [s_ii - log mean_j e^{s_ij}]`           | same                              |
//! | JS        | `E_joint[-sp(-s)] - E_marg[sp(s)]`              | NWJ                               |
//! | MINE      | `E_joint[s] - E_marg[e^s] / ema`                | DV                                |
//! | SMILE(t)  | JS objective                                    | `E_joint[s] - log E_marg[clip(e^s, e^-t, e^t)]` |
//!
//! `sp` is softplus. The InfoNCE denominator runs over the full row, diagonal
//! included; the marginal expectations of the other bounds exclude it.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::critics::ScoreMatrix;
use crate::nn::Matrix;
use crate::{Error, Result};

pub const DEFAULT_EMA_DECAY: f64 = 0.99;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EstimatorKind {
    Dv,
    Nwj,
    InfoNce,
    Js,
    Mine,
    /// Clip threshold `tau > 0`; `f64::INFINITY` disables clipping.
    Smile(f64),
}

impl EstimatorKind {
    /// The estimators benchmarked by default, SMILE at `tau` in {1, 5, inf}.
    pub fn standard_set() -> Vec<EstimatorKind> {
        vec![
            EstimatorKind::Nwj,
            EstimatorKind::Js,
            EstimatorKind::Mine,
            EstimatorKind::Dv,
            EstimatorKind::InfoNce,
            EstimatorKind::Smile(1.0),
            EstimatorKind::Smile(5.0),
            EstimatorKind::Smile(f64::INFINITY),
        ]
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            EstimatorKind::Smile(tau) if tau.is_nan() || tau <= 0.0 => Err(Error::config(
                "estimator",
                format!("SMILE tau must be positive, got {tau}"),
            )),
            _ => Ok(()),
        }
    }

    pub fn needs_ema(&self) -> bool {
        matches!(self, EstimatorKind::Mine)
    }
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EstimatorKind::Dv => f.write_str("dv"),
            EstimatorKind::Nwj => f.write_str("nwj"),
            EstimatorKind::InfoNce => f.write_str("infonce"),
            EstimatorKind::Js => f.write_str("js"),
            EstimatorKind::Mine => f.write_str("mine"),
            EstimatorKind::Smile(tau) if tau.is_infinite() => f.write_str("smile-inf"),
            EstimatorKind::Smile(tau) => write!(f, "smile-{tau}"),
        }
    }
}

impl FromStr for EstimatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        let kind = match lower.as_str() {
            "dv" => EstimatorKind::Dv,
            "nwj" => EstimatorKind::Nwj,
            "infonce" => EstimatorKind::InfoNce,
            "js" => EstimatorKind::Js,
            "mine" => EstimatorKind::Mine,
            other => {
                let tau = other
                    .strip_prefix("smile-")
                    .ok_or_else(|| Error::config("estimator", format!("unknown estimator `{s}`")))?;
                let tau = match tau {
                    "inf" | "infinity" => f64::INFINITY,
                    t => t.parse::<f64>().map_err(|_| {
                        Error::config("estimator", format!("bad SMILE threshold in `{s}`"))
                    })?,
                };
                EstimatorKind::Smile(tau)
            }
        };
        kind.validate()?;
        Ok(kind)
    }
}

impl Serialize for EstimatorKind {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for EstimatorKind {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Running average of `E_marg[e^s]` used by the MINE objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmaState {
    pub value: f64,
    pub decay: f64,
    pub initialized: bool,
}

impl EmaState {
    pub fn new(decay: f64) -> Result<Self> {
        if !(decay > 0.0 && decay < 1.0) {
            return Err(Error::config("ema_decay", format!("must lie in (0, 1), got {decay}")));
        }
        Ok(Self {
            value: 0.0,
            decay,
            initialized: false,
        })
    }

    /// Folds in a new observation; the first one seeds the average.
    pub fn update(&mut self, observation: f64) -> f64 {
        if self.initialized {
            self.value = self.decay * self.value + (1.0 - self.decay) * observation;
        } else {
            self.value = observation;
            self.initialized = true;
        }
        self.value
    }
}

impl Default for EmaState {
    fn default() -> Self {
        Self::new(DEFAULT_EMA_DECAY).expect("valid default")
    }
}

/// Diagonal / off-diagonal averages of a transformed score matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchExpectations {
    pub e_joint: f64,
    pub e_marg: f64,
}

impl BatchExpectations {
    pub fn of(scores: &ScoreMatrix, g: impl Fn(f64) -> f64) -> Self {
        let k = scores.k();
        let (mut joint, mut marg) = (0.0, 0.0);
        for i in 0..k {
            for j in 0..k {
                let v = g(scores.get(i, j));
                if i == j {
                    joint += v;
                } else {
                    marg += v;
                }
            }
        }
        Self {
            e_joint: joint / k as f64,
            e_marg: marg / (k * (k - 1)) as f64,
        }
    }
}

fn mean_diag(s: &ScoreMatrix) -> f64 {
    (0..s.k()).map(|i| s.get(i, i)).sum::<f64>() / s.k() as f64
}

/// `log E_marg[e^{clamp(s, -tau, tau)}]` by max-shifted log-sum-exp.
fn log_mean_exp_marg(s: &ScoreMatrix, tau: f64) -> f64 {
    let k = s.k();
    let clamp = |v: f64| v.clamp(-tau, tau);
    let mut max = f64::NEG_INFINITY;
    for i in 0..k {
        for j in 0..k {
            if i != j {
                max = max.max(clamp(s.get(i, j)));
            }
        }
    }
    let mut acc = 0.0;
    for i in 0..k {
        for j in 0..k {
            if i != j {
                acc += (clamp(s.get(i, j)) - max).exp();
            }
        }
    }
    max + acc.ln() - ((k * (k - 1)) as f64).ln()
}

/// Row-wise `log mean_j e^{s_ij}` over the full row.
fn row_log_mean_exp(s: &ScoreMatrix, i: usize) -> f64 {
    let k = s.k();
    let max = (0..k).map(|j| s.get(i, j)).fold(f64::NEG_INFINITY, f64::max);
    let acc: f64 = (0..k).map(|j| (s.get(i, j) - max).exp()).sum();
    max + acc.ln() - (k as f64).ln()
}

fn dv(s: &ScoreMatrix) -> f64 {
    mean_diag(s) - log_mean_exp_marg(s, f64::INFINITY)
}

fn nwj(s: &ScoreMatrix) -> f64 {
    mean_diag(s) - BatchExpectations::of(s, |v| (v - 1.0).exp()).e_marg
}

fn infonce(s: &ScoreMatrix) -> f64 {
    let k = s.k();
    (0..k).map(|i| s.get(i, i) - row_log_mean_exp(s, i)).sum::<f64>() / k as f64
}

fn smile(s: &ScoreMatrix, tau: f64) -> f64 {
    mean_diag(s) - log_mean_exp_marg(s, tau)
}

#[inline]
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn finite(v: f64, what: &str) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Numeric(format!("{what} evaluated to {v}")))
    }
}

/// MI estimate in nats. MINE reports the DV value and JS the NWJ value.
pub fn estimate(kind: EstimatorKind, scores: &ScoreMatrix) -> Result<f64> {
    kind.validate()?;
    let v = match kind {
        EstimatorKind::Dv | EstimatorKind::Mine => dv(scores),
        EstimatorKind::Nwj | EstimatorKind::Js => nwj(scores),
        EstimatorKind::InfoNce => infonce(scores),
        EstimatorKind::Smile(tau) => smile(scores, tau),
    };
    finite(v, &format!("{kind} estimate"))
}

/// Training objective (to be maximized) and its gradient w.r.t. every score.
#[derive(Debug, Clone)]
pub struct LossOutput {
    pub loss: f64,
    pub grad: Matrix,
}

/// Evaluates the training objective. MINE updates `ema` with the current
/// `E_marg[e^s]` first and then treats it as a constant.
pub fn optimization_loss(
    kind: EstimatorKind,
    scores: &ScoreMatrix,
    ema: Option<&mut EmaState>,
) -> Result<LossOutput> {
    kind.validate()?;
    let k = scores.k();
    let n_joint = k as f64;
    let n_marg = (k * (k - 1)) as f64;
    let mut grad = Matrix::zeros(k, k);

    let loss = match kind {
        EstimatorKind::Dv => {
            let lme = log_mean_exp_marg(scores, f64::INFINITY);
            // Off-diagonal softmax weights: e^{s_ij} / sum_off e^s.
            let norm = lme + n_marg.ln();
            for i in 0..k {
                for j in 0..k {
                    let g = if i == j {
                        1.0 / n_joint
                    } else {
                        -(scores.get(i, j) - norm).exp()
                    };
                    grad.set(i, j, g);
                }
            }
            mean_diag(scores) - lme
        }
        EstimatorKind::Nwj => {
            let mut marg = 0.0;
            for i in 0..k {
                for j in 0..k {
                    let g = if i == j {
                        1.0 / n_joint
                    } else {
                        let e = (scores.get(i, j) - 1.0).exp();
                        marg += e;
                        -e / n_marg
                    };
                    grad.set(i, j, g);
                }
            }
            mean_diag(scores) - marg / n_marg
        }
        EstimatorKind::InfoNce => {
            let mut total = 0.0;
            for i in 0..k {
                let lme = row_log_mean_exp(scores, i);
                let log_sum = lme + n_joint.ln();
                total += scores.get(i, i) - lme;
                for j in 0..k {
                    let p = (scores.get(i, j) - log_sum).exp();
                    let delta = if i == j { 1.0 } else { 0.0 };
                    grad.set(i, j, (delta - p) / n_joint);
                }
            }
            total / n_joint
        }
        EstimatorKind::Js | EstimatorKind::Smile(_) => {
            let (mut joint, mut marg) = (0.0, 0.0);
            for i in 0..k {
                for j in 0..k {
                    let s = scores.get(i, j);
                    let g = if i == j {
                        joint -= softplus(-s);
                        sigmoid(-s) / n_joint
                    } else {
                        marg += softplus(s);
                        -sigmoid(s) / n_marg
                    };
                    grad.set(i, j, g);
                }
            }
            joint / n_joint - marg / n_marg
        }
        EstimatorKind::Mine => {
            let ema = ema.ok_or_else(|| {
                Error::config("estimator", "MINE needs an exponential moving average state")
            })?;
            let e_marg = BatchExpectations::of(scores, f64::exp).e_marg;
            finite(e_marg, "MINE marginal partition")?;
            let denom = ema.update(e_marg);
            finite(denom, "MINE moving average")?;
            for i in 0..k {
                for j in 0..k {
                    let g = if i == j {
                        1.0 / n_joint
                    } else {
                        -scores.get(i, j).exp() / (n_marg * denom)
                    };
                    grad.set(i, j, g);
                }
            }
            mean_diag(scores) - e_marg / denom
        }
    };
    finite(loss, &format!("{kind} objective"))?;
    if !grad.is_finite() {
        return Err(Error::Numeric(format!("{kind} objective gradient is not finite")));
    }
    Ok(LossOutput { loss, grad })
}
