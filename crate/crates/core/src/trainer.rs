//! Episodic training of a linear embedding and the metric scale ζ with
//! central finite-difference gradients.
//!
//! Each step samples a fresh batch of episodes and freezes it: the loss at
//! the current parameters, all `2·P` perturbed losses and every trial update
//! are evaluated on the same batch, so the objective within a step is a
//! deterministic function of the parameters.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifier::{classify_episode_with, ClassifierConfig};
use crate::data::{episode_rng, sample_episode, Dataset, Episode, OneShotPolicy};
use crate::error::{Error, Result, ResultExt};
use crate::kernel::KernelSpec;
use crate::linalg::Matrix;
use crate::spectral::{FilterSpec, LambdaPolicy};

/// Largest parameter count (`d_out·d_in + 1`) accepted for finite differences.
pub const MAX_PARAMETERS: usize = 512;
pub const MAX_HALVINGS: usize = 10;
pub const LEARNING_RATE_FLOOR: f64 = 1e-6;

/// Trainable map applied to raw features before classification.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearEmbedding {
    pub weights: Matrix,
}

impl LinearEmbedding {
    pub fn new(weights: Matrix) -> Result<Self> {
        if weights.rows() == 0 || weights.rows() > weights.cols() {
            return Err(Error::config(format!(
                "embedding must map d_in → d_out with 1 ≤ d_out ≤ d_in, got {}x{}",
                weights.rows(),
                weights.cols()
            )));
        }
        if weights.as_slice().iter().any(|v| !v.is_finite()) {
            return Err(Error::config("embedding weights must be finite"));
        }
        Ok(LinearEmbedding { weights })
    }

    pub fn identity(dim: usize) -> Self {
        LinearEmbedding {
            weights: Matrix::identity(dim),
        }
    }

    pub fn d_in(&self) -> usize {
        self.weights.cols()
    }

    pub fn d_out(&self) -> usize {
        self.weights.rows()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.weights.matvec(x).expect("input dimension checked by caller")
    }

    pub fn embed_episode(&self, episode: &Episode) -> Episode {
        episode.map_features(|v| self.apply(v))
    }

    /// Maps every sample of a dataset; labels and order are preserved.
    pub fn embed_dataset(&self, dataset: &Dataset) -> Result<Dataset> {
        if dataset.dim() != self.d_in() {
            return Err(Error::DimensionMismatch {
                expected: self.d_in(),
                found: dataset.dim(),
            });
        }
        Dataset::new(
            dataset
                .items()
                .iter()
                .map(|it| crate::data::LabeledVector {
                    label: it.label.clone(),
                    features: self.apply(&it.features),
                })
                .collect(),
        )
    }

    /// Writes `zeta,<value>` followed by one CSV row per output dimension.
    pub fn write_csv(&self, zeta: f64, path: impl AsRef<Path>) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(out, "zeta,{zeta}")?;
        for i in 0..self.d_out() {
            let row: Vec<String> = self.weights.row(i).iter().map(|v| v.to_string()).collect();
            writeln!(out, "{}", row.join(","))?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<(Self, f64)> {
        let text = std::fs::read_to_string(path)?;
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, first) = lines.next().ok_or_else(|| Error::data("weights file is empty"))?;
        let zeta = first
            .strip_prefix("zeta,")
            .and_then(|v| v.trim().parse::<f64>().ok())
            .ok_or_else(|| Error::Parse {
                line: 1,
                column: 1,
                message: "first line must be zeta,<value>".into(),
            })?;
        let rows = lines
            .map(|(i, l)| {
                l.split(',')
                    .enumerate()
                    .map(|(j, v)| {
                        v.trim().parse::<f64>().map_err(|_| Error::Parse {
                            line: i + 1,
                            column: j + 1,
                            message: format!("'{v}' is not a number"),
                        })
                    })
                    .collect::<Result<Vec<f64>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok((LinearEmbedding::new(Matrix::from_rows(&rows)?)?, zeta))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_episodes: usize,
    pub learning_rate: f64,
    pub fd_step: f64,
    pub train_zeta: bool,
    pub train_weights: bool,
    pub way: usize,
    pub shot: usize,
    pub query_per_class: usize,
    pub kernel: KernelSpec,
    pub filter: FilterSpec,
    pub one_shot_policy: OneShotPolicy,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 50,
            batch_episodes: 8,
            learning_rate: 0.1,
            fd_step: 1e-5,
            train_zeta: true,
            train_weights: true,
            way: 2,
            shot: 2,
            query_per_class: 5,
            kernel: KernelSpec::Identity,
            filter: FilterSpec::tikhonov(LambdaPolicy::RelativeToMaxEigenvalue(0.1)),
            one_shot_policy: OneShotPolicy::None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_episodes < 1 {
            return Err(Error::config("batch_episodes must be at least 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning rate must be positive"));
        }
        if !(self.fd_step > 0.0 && self.fd_step.is_finite()) {
            return Err(Error::config("fd_step must be positive"));
        }
        self.kernel.validate()?;
        self.filter.validate()
    }

    fn classifier(&self, zeta: f64) -> ClassifierConfig {
        ClassifierConfig::new(self.kernel, self.filter, zeta)
    }
}

/// Samples `batch_episodes` raw-feature episodes from `rng`.
pub fn sample_batch(dataset: &Dataset, cfg: &TrainConfig, rng: &mut impl rand::Rng) -> Result<Vec<Episode>> {
    (0..cfg.batch_episodes)
        .map(|_| {
            let mut ep = sample_episode(dataset, cfg.way, cfg.shot, cfg.query_per_class, rng)?;
            ep.augment(&cfg.one_shot_policy, rng)?;
            Ok(ep)
        })
        .collect()
}

/// Mean episode loss over a fixed batch, features mapped through `embedding`.
pub fn frozen_batch_loss(embedding: &LinearEmbedding, zeta: f64, batch: &[Episode], cfg: &TrainConfig) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::config("empty batch"));
    }
    let classifier = cfg.classifier(zeta);
    let mut total = 0.0;
    for ep in batch {
        if ep.dim() != embedding.d_in() {
            return Err(Error::DimensionMismatch {
                expected: embedding.d_in(),
                found: ep.dim(),
            });
        }
        total += classify_episode_with(&embedding.embed_episode(ep), &classifier)?.loss;
    }
    Ok(total / batch.len() as f64)
}

/// Loss on `batch_episodes` freshly sampled episodes.
pub fn batch_loss(
    embedding: &LinearEmbedding,
    zeta: f64,
    dataset: &Dataset,
    cfg: &TrainConfig,
    rng: &mut impl rand::Rng,
) -> Result<f64> {
    cfg.validate()?;
    let batch = sample_batch(dataset, cfg, rng)?;
    frozen_batch_loss(embedding, zeta, &batch, cfg)
}

/// Flattened parameters: row-major weights followed by ζ.
#[derive(Debug, Clone, PartialEq)]
struct Params {
    values: Vec<f64>,
    d_out: usize,
    d_in: usize,
}

impl Params {
    fn pack(embedding: &LinearEmbedding, zeta: f64) -> Self {
        let mut values = embedding.weights.as_slice().to_vec();
        values.push(zeta);
        Params {
            values,
            d_out: embedding.d_out(),
            d_in: embedding.d_in(),
        }
    }

    fn unpack(&self) -> (LinearEmbedding, f64) {
        let n = self.d_out * self.d_in;
        let weights = Matrix::from_fn(self.d_out, self.d_in, |i, j| self.values[i * self.d_in + j]);
        (LinearEmbedding { weights }, self.values[n])
    }

    fn trainable(&self, cfg: &TrainConfig) -> Vec<usize> {
        let n = self.d_out * self.d_in;
        let mut idx: Vec<usize> = if cfg.train_weights {
            (0..n).collect()
        } else {
            Vec::new()
        };
        if cfg.train_zeta {
            idx.push(n);
        }
        idx
    }
}

fn params_loss(p: &Params, batch: &[Episode], cfg: &TrainConfig) -> Result<f64> {
    let (embedding, zeta) = p.unpack();
    frozen_batch_loss(&embedding, zeta, batch, cfg)
}

/// Central-difference gradient with respect to the weights (row-major) and
/// ζ (last entry). Entries masked out by the config are 0.
pub fn fd_gradient(
    embedding: &LinearEmbedding,
    zeta: f64,
    batch: &[Episode],
    cfg: &TrainConfig,
    fd_step: f64,
) -> Result<Vec<f64>> {
    let base = Params::pack(embedding, zeta);
    let trainable = base.trainable(cfg);
    let partials = trainable
        .par_iter()
        .map(|&k| {
            let mut plus = base.clone();
            plus.values[k] += fd_step;
            let mut minus = base.clone();
            minus.values[k] -= fd_step;
            Ok((params_loss(&plus, batch, cfg)? - params_loss(&minus, batch, cfg)?) / (2.0 * fd_step))
        })
        .collect::<Result<Vec<f64>>>()?;
    let mut grad = vec![0.0; base.values.len()];
    for (&k, g) in trainable.iter().zip(partials) {
        grad[k] = g;
    }
    Ok(grad)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub embedding: LinearEmbedding,
    pub zeta: f64,
    /// Frozen-batch loss before each step's update.
    pub loss_history: Vec<f64>,
    /// Frozen-batch loss after each step's update (equal to the pre-step
    /// loss when every trial step was rejected).
    pub post_step_losses: Vec<f64>,
}

/// Gradient descent with per-step backtracking: a trial step that raises
/// the frozen-batch loss, makes it non-finite or drives ζ nonpositive is
/// retried with half the learning rate, up to [`MAX_HALVINGS`] times.
pub fn train(dataset: &Dataset, cfg: &TrainConfig, init: LinearEmbedding, zeta0: f64) -> Result<TrainOutcome> {
    cfg.validate()?;
    let init = LinearEmbedding::new(init.weights)?;
    if !(zeta0 > 0.0 && zeta0.is_finite()) {
        return Err(Error::config(format!("initial ζ must be positive, got {zeta0}")));
    }
    if init.d_in() != dataset.dim() {
        return Err(Error::DimensionMismatch {
            expected: init.d_in(),
            found: dataset.dim(),
        });
    }
    let count = init.d_out() * init.d_in() + 1;
    if count > MAX_PARAMETERS {
        return Err(Error::config(format!(
            "{count} parameters exceed the finite-difference limit of {MAX_PARAMETERS}"
        )));
    }

    let mut params = Params::pack(&init, zeta0);
    let mut loss_history = Vec::with_capacity(cfg.steps);
    let mut post_step_losses = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let step_result = (|| -> Result<()> {
            let mut rng = episode_rng(cfg.seed, step as u64);
            let batch = sample_batch(dataset, cfg, &mut rng)?;
            let current = params_loss(&params, &batch, cfg)?;
            if !current.is_finite() {
                return Err(Error::numerical(format!("loss is {current}")));
            }
            let (embedding, zeta) = params.unpack();
            let grad = fd_gradient(&embedding, zeta, &batch, cfg, cfg.fd_step)?;
            if grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::numerical("finite-difference gradient is not finite"));
            }

            let zeta_index = params.values.len() - 1;
            let mut lr = cfg.learning_rate;
            let mut accepted = None;
            let mut any_finite = false;
            for _ in 0..=MAX_HALVINGS {
                let mut trial = params.clone();
                trial.values.iter_mut().zip(&grad).for_each(|(p, g)| *p -= lr * g);
                if trial.values[zeta_index] > 0.0 {
                    if let Ok(loss) = params_loss(&trial, &batch, cfg) {
                        if loss.is_finite() {
                            any_finite = true;
                            if loss <= current {
                                accepted = Some((trial, loss));
                                break;
                            }
                        }
                    }
                }
                lr *= 0.5;
                if lr < LEARNING_RATE_FLOOR {
                    break;
                }
            }
            loss_history.push(current);
            match accepted {
                Some((trial, loss)) => {
                    params = trial;
                    post_step_losses.push(loss);
                }
                None if any_finite || grad.iter().all(|&g| g == 0.0) => post_step_losses.push(current),
                None => {
                    return Err(Error::numerical(
                        "every trial step produced a non-finite loss or nonpositive ζ",
                    ))
                }
            }
            Ok(())
        })();
        step_result.context(|| format!("training step {step}"))?;
    }
    let (embedding, zeta) = params.unpack();
    Ok(TrainOutcome {
        embedding,
        zeta,
        loss_history,
        post_step_losses,
    })
}
