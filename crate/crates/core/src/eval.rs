//! Episodic evaluation: accuracy with 95% confidence intervals, paired
//! method comparisons and λ sweeps.

use std::collections::HashSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifier::{classify_episode_with, ClassifierConfig, EpisodeResult};
use crate::data::{episode_rng, sample_episode, Dataset, Episode, OneShotPolicy};
use crate::error::{Error, Result, ResultExt};
use crate::kernel::KernelSpec;
use crate::spectral::{FilterKind, FilterSpec, LambdaPolicy};

/// λ grid used by [`lambda_sweep`] when none is given.
pub const DEFAULT_LAMBDA_GRID: [f64; 5] = [0.01, 0.1, 1.0, 10.0, 100.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub way: usize,
    pub shot: usize,
    pub query_per_class: usize,
    pub episode_count: usize,
    pub kernel: KernelSpec,
    pub filter: FilterSpec,
    pub zeta: f64,
    #[serde(default)]
    pub one_shot_policy: OneShotPolicy,
    #[serde(default)]
    pub exclude_augmented_from_mean: bool,
    pub master_seed: u64,
    /// Worker threads; 0 uses the global pool. Never affects results.
    #[serde(default)]
    pub workers: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            way: 5,
            shot: 5,
            query_per_class: 15,
            episode_count: 1000,
            kernel: KernelSpec::Identity,
            filter: FilterSpec::tikhonov(LambdaPolicy::RelativeToMaxEigenvalue(0.1)),
            zeta: 1.0,
            one_shot_policy: OneShotPolicy::None,
            exclude_augmented_from_mean: false,
            master_seed: 0,
            workers: 0,
        }
    }
}

impl EvalConfig {
    pub fn classifier(&self) -> ClassifierConfig {
        ClassifierConfig {
            kernel: self.kernel,
            filter: self.filter,
            zeta: self.zeta,
            exclude_augmented_from_mean: self.exclude_augmented_from_mean,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.episode_count < 1 {
            return Err(Error::config("episode_count must be at least 1"));
        }
        if self.way < 2 {
            return Err(Error::config("way must be at least 2"));
        }
        if self.shot < 1 || self.query_per_class < 1 {
            return Err(Error::config("shot and query_per_class must be at least 1"));
        }
        self.classifier().validate()
    }
}

/// Regenerates episode `index` of the stream defined by `cfg`.
pub fn episode_at(dataset: &Dataset, cfg: &EvalConfig, index: usize) -> Result<Episode> {
    let mut rng = episode_rng(cfg.master_seed, index as u64);
    let mut episode = sample_episode(dataset, cfg.way, cfg.shot, cfg.query_per_class, &mut rng)?;
    episode.augment(&cfg.one_shot_policy, &mut rng)?;
    Ok(episode)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub name: String,
    pub accuracy_mean: f64,
    pub ci95_halfwidth: f64,
    pub mean_loss: f64,
    pub per_episode_accuracies: Vec<f64>,
    pub config: EvalConfig,
}

/// Flat machine-readable form of a report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRecord {
    pub name: String,
    pub way: usize,
    pub shot: usize,
    pub episodes: usize,
    pub kernel: String,
    pub filter: String,
    pub lambda_policy: String,
    pub accuracy_mean: f64,
    pub ci95: f64,
    pub mean_loss: f64,
    pub seed: u64,
}

pub fn kernel_label(kernel: &KernelSpec) -> String {
    match kernel {
        KernelSpec::Identity => "identity".into(),
        KernelSpec::Rbf { bandwidth_sq } => format!("rbf(sigma2={bandwidth_sq})"),
    }
}

pub fn lambda_label(filter: &FilterSpec) -> String {
    match filter.kind {
        FilterKind::Zero => "none".into(),
        _ => filter.lambda_policy.to_string(),
    }
}

impl EvalReport {
    pub fn record(&self) -> ReportRecord {
        let c = &self.config;
        ReportRecord {
            name: self.name.clone(),
            way: c.way,
            shot: c.shot,
            episodes: c.episode_count,
            kernel: kernel_label(&c.kernel),
            filter: c.filter.kind.to_string(),
            lambda_policy: lambda_label(&c.filter),
            accuracy_mean: self.accuracy_mean,
            ci95: self.ci95_halfwidth,
            mean_loss: self.mean_loss,
            seed: c.master_seed,
        }
    }
}

/// `(mean, 1.96·s/√N)` with `s` the sample standard deviation; a single
/// sample has `s = 0`.
pub fn mean_and_ci95(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, 1.96 * var.sqrt() / (n as f64).sqrt())
}

fn run_episodes(dataset: &Dataset, cfg: &EvalConfig) -> Result<Vec<EpisodeResult>> {
    let classifier = cfg.classifier();
    let one = |i: usize| -> Result<EpisodeResult> {
        let episode = episode_at(dataset, cfg, i)?;
        classify_episode_with(&episode, &classifier)
    };
    let one = |i: usize| one(i).context(|| format!("episode {i}"));
    match cfg.workers {
        1 => (0..cfg.episode_count).map(one).collect(),
        0 => (0..cfg.episode_count).into_par_iter().map(one).collect(),
        n => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::config(format!("cannot start {n} workers: {e}")))?
            .install(|| (0..cfg.episode_count).into_par_iter().map(one).collect()),
    }
}

pub fn evaluate(dataset: &Dataset, cfg: &EvalConfig) -> Result<EvalReport> {
    evaluate_named(dataset, cfg, &default_name(cfg))
}

fn default_name(cfg: &EvalConfig) -> String {
    format!("{}+{}", kernel_label(&cfg.kernel), cfg.filter.kind)
}

fn evaluate_named(dataset: &Dataset, cfg: &EvalConfig, name: &str) -> Result<EvalReport> {
    cfg.validate()?;
    if dataset.dim() == 0 {
        return Err(Error::data("dataset has no features"));
    }
    let results = run_episodes(dataset, cfg)?;
    let accuracies: Vec<f64> = results.iter().map(|r| r.accuracy).collect();
    let (accuracy_mean, ci95_halfwidth) = mean_and_ci95(&accuracies);
    let mean_loss = results.iter().map(|r| r.loss).sum::<f64>() / results.len() as f64;
    Ok(EvalReport {
        name: name.to_owned(),
        accuracy_mean,
        ci95_halfwidth,
        mean_loss,
        per_episode_accuracies: accuracies,
        config: EvalConfig {
            workers: 0,
            ..cfg.clone()
        },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Method {
    pub name: String,
    pub kernel: KernelSpec,
    pub filter: FilterSpec,
}

impl Method {
    pub fn new(name: impl Into<String>, kernel: KernelSpec, filter: FilterSpec) -> Self {
        Method {
            name: name.into(),
            kernel,
            filter,
        }
    }
}

/// Evaluates every method on the same episode stream (`base.master_seed`).
pub fn compare_methods(dataset: &Dataset, base: &EvalConfig, methods: &[Method]) -> Result<Vec<EvalReport>> {
    if methods.is_empty() {
        return Err(Error::config("method list is empty"));
    }
    let mut seen = HashSet::new();
    for m in methods {
        if !seen.insert(m.name.as_str()) {
            return Err(Error::config(format!("duplicate method name '{}'", m.name)));
        }
    }
    methods
        .iter()
        .map(|m| {
            let cfg = EvalConfig {
                kernel: m.kernel,
                filter: m.filter,
                ..base.clone()
            };
            evaluate_named(dataset, &cfg, &m.name).context(|| format!("method '{}'", m.name))
        })
        .collect()
}

/// One report per λ (absolute policy) on a shared episode stream. The
/// filter kind comes from `base`, with Tikhonov standing in for the zero
/// filter.
pub fn lambda_sweep(dataset: &Dataset, base: &EvalConfig, lambda_values: &[f64]) -> Result<Vec<EvalReport>> {
    if lambda_values.is_empty() {
        return Err(Error::config("λ grid is empty"));
    }
    let kind = match base.filter.kind {
        FilterKind::Zero => FilterKind::Tikhonov,
        k => k,
    };
    let methods = lambda_values
        .iter()
        .map(|&lambda| {
            let policy = LambdaPolicy::Absolute(lambda);
            policy.validate()?;
            Ok(Method::new(
                format!("lambda={lambda}"),
                base.kernel,
                FilterSpec {
                    kind,
                    lambda_policy: policy,
                },
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    compare_methods(dataset, base, &methods)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_generate, SynthConfig};

    fn small_cfg() -> EvalConfig {
        EvalConfig {
            way: 5,
            shot: 5,
            query_per_class: 5,
            episode_count: 40,
            master_seed: 3,
            ..EvalConfig::default()
        }
    }

    #[test]
    fn ci_conventions() {
        assert_eq!(mean_and_ci95(&[0.7]), (0.7, 0.0));
        let (m, ci) = mean_and_ci95(&[0.0, 1.0]);
        assert_eq!(m, 0.5);
        // s = √0.5, N = 2.
        assert!((ci - 1.96 * 0.5f64.sqrt() / 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn separable_data_is_perfect() {
        let ds = synth_generate(&SynthConfig::separable()).unwrap();
        let report = evaluate(&ds, &small_cfg()).unwrap();
        assert_eq!(report.accuracy_mean, 1.0);
        assert_eq!(report.ci95_halfwidth, 0.0);
    }

    #[test]
    fn single_episode_has_zero_ci() {
        let ds = synth_generate(&SynthConfig::reference()).unwrap();
        let cfg = EvalConfig {
            episode_count: 1,
            ..small_cfg()
        };
        let r = evaluate(&ds, &cfg).unwrap();
        assert_eq!(r.ci95_halfwidth, 0.0);
        assert_eq!(r.per_episode_accuracies.len(), 1);
    }

    #[test]
    fn too_many_ways_is_an_error() {
        let ds = synth_generate(&SynthConfig::small4()).unwrap();
        let cfg = EvalConfig { way: 11, ..small_cfg() };
        let err = evaluate(&ds, &cfg).unwrap_err();
        assert_eq!(err.kind(), crate::ErrorKind::Data);
        assert!(err.to_string().starts_with("episode 0"), "{err}");
    }

    #[test]
    fn compare_validates_method_list() {
        let ds = synth_generate(&SynthConfig::small4()).unwrap();
        assert!(compare_methods(&ds, &small_cfg(), &[]).is_err());
        let m = Method::new("a", KernelSpec::Identity, FilterSpec::zero());
        assert!(compare_methods(&ds, &small_cfg(), &[m.clone(), m]).is_err());
    }

    #[test]
    fn compare_and_sweep_shapes() {
        let ds = synth_generate(&SynthConfig::reference()).unwrap();
        let methods = [
            Method::new("protonet", KernelSpec::Identity, FilterSpec::zero()),
            Method::new(
                "dsfn",
                KernelSpec::Identity,
                FilterSpec::tikhonov(LambdaPolicy::RelativeToMaxEigenvalue(0.1)),
            ),
        ];
        let rows = compare_methods(&ds, &small_cfg(), &methods).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].name, "protonet");
        assert_eq!(rows[1].record().lambda_policy, "rho=0.1");

        let sweep = lambda_sweep(&ds, &small_cfg(), &DEFAULT_LAMBDA_GRID).unwrap();
        assert_eq!(sweep.len(), 5);
        assert_eq!(sweep[2].name, "lambda=1");
        assert_eq!(sweep, lambda_sweep(&ds, &small_cfg(), &DEFAULT_LAMBDA_GRID).unwrap());
        assert!(lambda_sweep(&ds, &small_cfg(), &[]).is_err());
        assert!(lambda_sweep(&ds, &small_cfg(), &[-1.0]).is_err());
    }

    #[test]
    fn record_keys() {
        let ds = synth_generate(&SynthConfig::small4()).unwrap();
        let cfg = EvalConfig {
            way: 2,
            shot: 2,
            query_per_class: 2,
            episode_count: 3,
            kernel: KernelSpec::rbf(4.0).unwrap(),
            ..EvalConfig::default()
        };
        let rec = evaluate(&ds, &cfg).unwrap().record();
        let json = serde_json::to_value(&rec).unwrap();
        let mut keys: Vec<&str> = json.as_object().unwrap().keys().map(String::as_str).collect();
        keys.sort_unstable();
        assert_eq!(
            keys,
            [
                "accuracy_mean",
                "ci95",
                "episodes",
                "filter",
                "kernel",
                "lambda_policy",
                "mean_loss",
                "name",
                "seed",
                "shot",
                "way"
            ]
        );
        assert_eq!(rec.kernel, "rbf(sigma2=4)");
        assert_eq!(rec.filter, "tikhonov");
    }
}
