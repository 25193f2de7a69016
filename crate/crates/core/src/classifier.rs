//! Shrinkage coefficients, RKHS distances, class probabilities and the
//! episode loss, plus end-to-end classification of one episode.

use serde::{Deserialize, Serialize};

use crate::centering::{
    center_cross, center_cross_weighted, center_support, centered_query_norm, clamp_squared_norm, weighted_query_norm,
};
use crate::data::Episode;
use crate::error::{Error, Result, ResultExt};
use crate::kernel::{gram_query, gram_support, KernelSpec};
use crate::linalg::{dot, Matrix};
use crate::spectral::{eig_sym, g_matrix_on_range, resolve_lambda, EigenSystem, FilterKind, FilterSpec};

pub mod oracle;

/// Expansion of the removed component over the centered support features.
#[derive(Debug, Clone, PartialEq)]
pub struct ShrinkageCoefficients {
    pub alpha: Vec<f64>,
}

/// `α = g · b`.
pub fn alpha(g: &Matrix, b: &[f64]) -> Result<ShrinkageCoefficients> {
    if !g.is_square() || g.rows() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: g.rows(),
            found: b.len(),
        });
    }
    Ok(ShrinkageCoefficients { alpha: g.matvec(b)? })
}

/// Squared norm of the shrunk relative prototype: `αᵀK̃α + q̃ − 2αᵀb`.
pub fn distance_sq(alpha: &ShrinkageCoefficients, ktilde_ss: &Matrix, b: &[f64], q_tilde: f64) -> Result<f64> {
    let a = &alpha.alpha;
    if ktilde_ss.rows() != a.len() || b.len() != a.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            found: if b.len() != a.len() { b.len() } else { ktilde_ss.rows() },
        });
    }
    if q_tilde.is_nan() || q_tilde < 0.0 {
        return Err(Error::numerical(format!("q̃ must be nonnegative, got {q_tilde}")));
    }
    let d2 = ktilde_ss.quad_form(a)? + q_tilde - 2.0 * dot(a, b);
    clamp_squared_norm(d2, "squared distance")
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassScores {
    pub dist_sq: Vec<f64>,
    pub probs: Vec<f64>,
    pub zeta: f64,
}

impl ClassScores {
    pub fn predicted(&self) -> usize {
        argmin(&self.dist_sq)
    }
}

/// Index of the smallest value; the first one on ties.
pub fn argmin(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v < values[best] {
            best = i;
        }
    }
    best
}

fn check_logits(dist_sq: &[f64], zeta: f64) -> Result<()> {
    if dist_sq.len() < 2 {
        return Err(Error::config(format!("need at least 2 classes, got {}", dist_sq.len())));
    }
    if !(zeta > 0.0 && zeta.is_finite()) {
        return Err(Error::config(format!(
            "metric scale ζ must be positive and finite, got {zeta}"
        )));
    }
    if let Some(bad) = dist_sq.iter().find(|d| !d.is_finite()) {
        return Err(Error::numerical(format!("non-finite distance {bad}")));
    }
    Ok(())
}

/// `log softmax(−ζ d²)`, computed with max subtraction.
pub fn log_probabilities(dist_sq: &[f64], zeta: f64) -> Result<Vec<f64>> {
    check_logits(dist_sq, zeta)?;
    let logits: Vec<f64> = dist_sq.iter().map(|d| -zeta * d).collect();
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    Ok(logits.iter().map(|l| l - lse).collect())
}

/// `softmax(−ζ d²)`.
pub fn probabilities(dist_sq: &[f64], zeta: f64) -> Result<Vec<f64>> {
    check_logits(dist_sq, zeta)?;
    let logits: Vec<f64> = dist_sq.iter().map(|d| -zeta * d).collect();
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exp.iter().sum();
    Ok(exp.into_iter().map(|e| e / total).collect())
}

/// Mean negative log-likelihood of the true labels.
pub fn episode_loss<P: AsRef<[f64]>>(probs: &[P], labels: &[usize]) -> Result<f64> {
    if probs.is_empty() {
        return Err(Error::data("episode loss needs at least one query"));
    }
    if probs.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: probs.len(),
            found: labels.len(),
        });
    }
    let mut total = 0.0;
    for (l, (p, &y)) in probs.iter().zip(labels).enumerate() {
        let p = p.as_ref();
        let py = *p
            .get(y)
            .ok_or_else(|| Error::data(format!("label {y} of query {l} is out of range")))?;
        if py <= 0.0 {
            return Err(Error::numerical(format!(
                "query {l} has zero probability for its true class"
            )));
        }
        total -= py.ln();
    }
    Ok(total / probs.len() as f64)
}

/// Everything needed to classify an episode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassifierConfig {
    pub kernel: KernelSpec,
    pub filter: FilterSpec,
    pub zeta: f64,
    /// When a 1-shot class was augmented, build the prototype from the
    /// original support vector only; the synthetic one still shapes the
    /// spectrum.
    #[serde(default)]
    pub exclude_augmented_from_mean: bool,
}

impl ClassifierConfig {
    pub fn new(kernel: KernelSpec, filter: FilterSpec, zeta: f64) -> Self {
        ClassifierConfig {
            kernel,
            filter,
            zeta,
            exclude_augmented_from_mean: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.kernel.validate()?;
        self.filter.validate()?;
        if !(self.zeta > 0.0 && self.zeta.is_finite()) {
            return Err(Error::config(format!(
                "ζ must be positive and finite, got {}",
                self.zeta
            )));
        }
        Ok(())
    }
}

/// Per-class quantities shared by every query of an episode.
#[derive(Debug, Clone)]
pub struct ClassModel {
    pub k_ss: Matrix,
    pub ktilde_ss: Matrix,
    /// `None` for the zero filter, which never needs the spectrum.
    pub eigen: Option<EigenSystem>,
    pub lambda: f64,
    pub g: Matrix,
    weights: Option<Vec<f64>>,
}

impl ClassModel {
    pub fn fit<S: AsRef<[f64]>>(
        support: &[S],
        kernel: &KernelSpec,
        filter: &FilterSpec,
        prototype_weights: Option<Vec<f64>>,
    ) -> Result<Self> {
        let k_ss = gram_support(kernel, support)?;
        let ktilde_ss = center_support(&k_ss)?;
        let n = k_ss.rows();
        let (eigen, lambda, g) = match filter.kind {
            FilterKind::Zero => (None, 0.0, Matrix::zeros(n, n)),
            kind => {
                let eigen = eig_sym(&ktilde_ss)?;
                let lambda = resolve_lambda(&filter.lambda_policy, &eigen)?;
                // A flat spectrum gives g = 0 whatever λ resolves to.
                let g = g_matrix_on_range(&eigen, kind, lambda)?;
                (Some(eigen), lambda, g)
            }
        };
        Ok(ClassModel {
            k_ss,
            ktilde_ss,
            eigen,
            lambda,
            g,
            weights: prototype_weights,
        })
    }

    /// Squared RKHS distance from `query` to this class.
    pub fn distance<S: AsRef<[f64]>>(&self, support: &[S], kernel: &KernelSpec, query: &[f64]) -> Result<f64> {
        let (kappa, k_qq) = gram_query(kernel, support, query)?;
        let (b, q_tilde) = match &self.weights {
            None => (
                center_cross(&self.k_ss, &kappa)?,
                centered_query_norm(&self.k_ss, &kappa, k_qq)?,
            ),
            Some(w) => (
                center_cross_weighted(&self.k_ss, &kappa, w)?,
                weighted_query_norm(&self.k_ss, &kappa, k_qq, w)?,
            ),
        };
        let a = alpha(&self.g, &b)?;
        distance_sq(&a, &self.ktilde_ss, &b, q_tilde)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpisodeResult {
    pub scores: Vec<ClassScores>,
    pub predictions: Vec<usize>,
    pub loss: f64,
    pub accuracy: f64,
}

pub fn classify_episode(
    episode: &Episode,
    kernel: &KernelSpec,
    filter: &FilterSpec,
    zeta: f64,
) -> Result<EpisodeResult> {
    classify_episode_with(episode, &ClassifierConfig::new(*kernel, *filter, zeta))
}

pub fn classify_episode_with(episode: &Episode, cfg: &ClassifierConfig) -> Result<EpisodeResult> {
    cfg.validate()?;
    if episode.way() < 2 {
        return Err(Error::data("an episode needs at least 2 classes"));
    }
    if episode.queries.is_empty() {
        return Err(Error::data("episode has no queries"));
    }
    let models = episode
        .support
        .iter()
        .enumerate()
        .map(|(c, support)| {
            let weights = (cfg.exclude_augmented_from_mean && support.len() > episode.original_shot).then(|| {
                let k = episode.original_shot as f64;
                (0..support.len())
                    .map(|i| if i < episode.original_shot { 1.0 / k } else { 0.0 })
                    .collect()
            });
            ClassModel::fit(support, &cfg.kernel, &cfg.filter, weights).context(|| format!("class {c}"))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut scores = Vec::with_capacity(episode.queries.len());
    let mut predictions = Vec::with_capacity(episode.queries.len());
    let mut total_loss = 0.0;
    let mut correct = 0usize;
    for (l, (query, &label)) in episode.queries.iter().zip(&episode.query_labels).enumerate() {
        let dist_sq = models
            .iter()
            .zip(&episode.support)
            .enumerate()
            .map(|(c, (m, support))| {
                m.distance(support, &cfg.kernel, query)
                    .context(|| format!("class {c}, query {l}"))
            })
            .collect::<Result<Vec<f64>>>()?;
        let log_p = log_probabilities(&dist_sq, cfg.zeta).context(|| format!("query {l}"))?;
        let probs = probabilities(&dist_sq, cfg.zeta)?;
        total_loss -= log_p[label];
        let s = ClassScores {
            dist_sq,
            probs,
            zeta: cfg.zeta,
        };
        let pred = s.predicted();
        if pred == label {
            correct += 1;
        }
        predictions.push(pred);
        scores.push(s);
    }
    let m = episode.queries.len() as f64;
    Ok(EpisodeResult {
        scores,
        predictions,
        loss: total_loss / m,
        accuracy: correct as f64 / m,
    })
}
