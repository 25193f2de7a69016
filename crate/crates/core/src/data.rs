//! Labeled embedding datasets, episode sampling and 1-shot augmentation.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::Read;
use std::path::Path;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledVector {
    pub label: String,
    pub features: Vec<f64>,
}

/// An immutable collection of labeled embeddings sharing one dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    dim: usize,
    items: Vec<LabeledVector>,
    classes: Vec<String>,
    members: Vec<Vec<usize>>,
}

impl Dataset {
    pub fn new(items: Vec<LabeledVector>) -> Result<Self> {
        let first = items.first().ok_or_else(|| Error::data("dataset is empty"))?;
        let dim = first.features.len();
        if dim == 0 {
            return Err(Error::data("feature dimension must be at least 1"));
        }
        let mut by_class: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (i, item) in items.iter().enumerate() {
            if item.features.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: item.features.len(),
                });
            }
            if let Some(bad) = item.features.iter().find(|v| !v.is_finite()) {
                return Err(Error::data(format!("sample {i} has non-finite feature {bad}")));
            }
            by_class.entry(item.label.as_str()).or_default().push(i);
        }
        let (classes, members): (Vec<String>, Vec<Vec<usize>>) =
            by_class.into_iter().map(|(label, idx)| (label.to_owned(), idx)).unzip();
        Ok(Dataset {
            dim,
            items,
            classes,
            members,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn items(&self) -> &[LabeledVector] {
        &self.items
    }

    /// Class labels in sorted order.
    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    /// Dataset indices of each class, parallel to [`Dataset::classes`].
    pub fn members(&self) -> &[Vec<usize>] {
        &self.members
    }

    pub fn features(&self, index: usize) -> &[f64] {
        &self.items[index].features
    }

    /// Mean absolute feature value over the whole dataset.
    pub fn mean_abs_feature(&self) -> f64 {
        let total: f64 = self
            .items
            .iter()
            .flat_map(|it| it.features.iter())
            .map(|v| v.abs())
            .sum();
        total / (self.items.len() * self.dim) as f64
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        use std::io::Write;
        let mut out = std::io::BufWriter::new(File::create(path)?);
        write!(out, "label")?;
        for j in 0..self.dim {
            write!(out, ",f{}", j + 1)?;
        }
        writeln!(out)?;
        for item in &self.items {
            write!(out, "{}", item.label)?;
            for v in &item.features {
                write!(out, ",{v}")?;
            }
            writeln!(out)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Loads `label,v1,…,vd` rows. An optional first row whose first field is
/// `label` is treated as a header.
pub fn load_csv(path: impl AsRef<Path>) -> Result<Dataset> {
    let mut text = String::new();
    File::open(path.as_ref())?.read_to_string(&mut text)?;
    parse_csv(&text)
}

pub fn parse_csv(text: &str) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .quoting(false)
        .from_reader(text.as_bytes());

    let mut items = Vec::new();
    let mut dim = None;
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::data(format!("malformed CSV: {e}")))?;
        let line = record.position().map_or(row as u64 + 1, |p| p.line()) as usize;
        if row == 0 && record.get(0).map(str::trim) == Some("label") {
            continue;
        }
        if record.len() == 1 && record[0].trim().is_empty() {
            continue;
        }
        let label = record[0].trim();
        if label.is_empty() {
            return Err(Error::Parse {
                line,
                column: 1,
                message: "empty label".into(),
            });
        }
        let features = record
            .iter()
            .skip(1)
            .enumerate()
            .map(|(j, field)| {
                let value: f64 = field.trim().parse().map_err(|_| Error::Parse {
                    line,
                    column: j + 2,
                    message: format!("'{field}' is not a number"),
                })?;
                if value.is_finite() {
                    Ok(value)
                } else {
                    Err(Error::Parse {
                        line,
                        column: j + 2,
                        message: format!("'{field}' is not finite"),
                    })
                }
            })
            .collect::<Result<Vec<f64>>>()?;
        match dim {
            None if features.is_empty() => {
                return Err(Error::Parse {
                    line,
                    column: 2,
                    message: "row has no feature columns".into(),
                })
            }
            None => dim = Some(features.len()),
            Some(d) if d != features.len() => {
                return Err(Error::Parse {
                    line,
                    column: features.len() + 1,
                    message: format!("expected {d} features, found {}", features.len()),
                })
            }
            Some(_) => {}
        }
        items.push(LabeledVector {
            label: label.to_owned(),
            features,
        });
    }
    if items.is_empty() {
        return Err(Error::data("CSV contains no data rows"));
    }
    Dataset::new(items)
}

/// Parameters of the synthetic anisotropic-Gaussian class family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub class_count: usize,
    pub dim: usize,
    pub per_class_count: usize,
    pub mean_scale: f64,
    /// Per-axis standard deviations, shared by all classes.
    pub anisotropy: Vec<f64>,
    pub rotation_seed: u64,
    pub sample_seed: u64,
}

impl SynthConfig {
    /// 20 classes in 16 dimensions with two dominant noise axes.
    pub fn reference() -> Self {
        let mut anisotropy = vec![1.0; 16];
        anisotropy[0] = 4.0;
        anisotropy[1] = 4.0;
        SynthConfig {
            class_count: 20,
            dim: 16,
            per_class_count: 200,
            mean_scale: 3.0,
            anisotropy,
            rotation_seed: 7,
            sample_seed: 11,
        }
    }

    /// Small 4-dimensional task used for finite-difference training.
    pub fn small4() -> Self {
        SynthConfig {
            class_count: 10,
            dim: 4,
            per_class_count: 60,
            mean_scale: 2.0,
            anisotropy: vec![3.0, 1.0, 0.5, 0.5],
            rotation_seed: 7,
            sample_seed: 11,
        }
    }

    /// Class means far apart relative to the noise.
    pub fn separable() -> Self {
        SynthConfig {
            class_count: 10,
            dim: 8,
            per_class_count: 40,
            mean_scale: 100.0,
            anisotropy: vec![1.0; 8],
            rotation_seed: 7,
            sample_seed: 11,
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "reference" => Some(Self::reference()),
            "small4" => Some(Self::small4()),
            "separable" => Some(Self::separable()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.class_count < 1 || self.dim < 1 {
            return Err(Error::config("class_count and dim must be at least 1"));
        }
        if self.per_class_count < 2 {
            return Err(Error::config("per_class_count must be at least 2"));
        }
        if self.anisotropy.len() != self.dim {
            return Err(Error::config(format!(
                "anisotropy has {} entries but dim is {}",
                self.anisotropy.len(),
                self.dim
            )));
        }
        if self.anisotropy.iter().any(|&a| !(a > 0.0 && a.is_finite())) {
            return Err(Error::config("anisotropy entries must be positive and finite"));
        }
        if !(self.mean_scale >= 0.0 && self.mean_scale.is_finite()) {
            return Err(Error::config("mean_scale must be finite and nonnegative"));
        }
        Ok(())
    }
}

fn random_rotation(dim: usize, rng: &mut impl Rng) -> Matrix {
    // Modified Gram-Schmidt on a Gaussian matrix, column by column.
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(dim);
    while cols.len() < dim {
        let mut v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        for c in &cols {
            let p: f64 = v.iter().zip(c).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(c).for_each(|(a, b)| *a -= p * b);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-8 {
            v.iter_mut().for_each(|x| *x /= norm);
            cols.push(v);
        }
    }
    Matrix::from_fn(dim, dim, |i, j| cols[j][i])
}

/// Samples `mean_c + R · diag(anisotropy) · z`, with `R` a random rotation
/// shared by every class and means on a sphere of radius `mean_scale`.
pub fn synth_generate(cfg: &SynthConfig) -> Result<Dataset> {
    cfg.validate()?;
    let d = cfg.dim;
    let mut structure_rng = ChaCha8Rng::seed_from_u64(cfg.rotation_seed);
    let rotation = random_rotation(d, &mut structure_rng);
    let means: Vec<Vec<f64>> = (0..cfg.class_count)
        .map(|_| loop {
            let v: Vec<f64> = (0..d).map(|_| structure_rng.sample(StandardNormal)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-12 {
                break v.into_iter().map(|x| cfg.mean_scale * x / norm).collect();
            }
        })
        .collect();

    let mut sample_rng = ChaCha8Rng::seed_from_u64(cfg.sample_seed);
    let width = (cfg.class_count.max(2) - 1).to_string().len();
    let mut items = Vec::with_capacity(cfg.class_count * cfg.per_class_count);
    for (c, mean) in means.iter().enumerate() {
        let label = format!("c{c:0width$}");
        for _ in 0..cfg.per_class_count {
            let z: Vec<f64> = cfg
                .anisotropy
                .iter()
                .map(|a| a * sample_rng.sample::<f64, _>(StandardNormal))
                .collect();
            let rotated = rotation.matvec(&z).expect("square rotation");
            items.push(LabeledVector {
                label: label.clone(),
                features: mean.iter().zip(&rotated).map(|(m, r)| m + r).collect(),
            });
        }
    }
    Dataset::new(items)
}

/// RNG stream for one episode, derived from the master seed by stream
/// index so any episode can be regenerated independently of the others.
pub fn episode_rng(master_seed: u64, episode_index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(episode_index);
    rng
}

/// One C-way n-shot task.
///
/// Queries are stored class-major; `query_labels[i]` is the dense episode
/// class index of query `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    /// Dataset label of each dense class index.
    pub classes: Vec<String>,
    pub support: Vec<Vec<Vec<f64>>>,
    /// Dataset indices of the sampled (non-synthetic) support vectors.
    pub support_indices: Vec<Vec<usize>>,
    /// Number of leading support entries per class that came from the
    /// dataset; any entries beyond are augmentation output.
    pub original_shot: usize,
    pub queries: Vec<Vec<f64>>,
    pub query_labels: Vec<usize>,
    pub query_indices: Vec<usize>,
    pub query_per_class: usize,
}

impl Episode {
    /// Builds an episode from explicit vectors; dataset indices are synthetic.
    pub fn from_parts(support: Vec<Vec<Vec<f64>>>, queries: Vec<Vec<f64>>, query_labels: Vec<usize>) -> Result<Self> {
        let way = support.len();
        if way < 2 {
            return Err(Error::data(format!("an episode needs at least 2 classes, got {way}")));
        }
        let shot = support[0].len();
        if shot == 0 || support.iter().any(|s| s.len() != shot) {
            return Err(Error::data(
                "every class must have the same nonzero number of support vectors",
            ));
        }
        if queries.len() != query_labels.len() {
            return Err(Error::DimensionMismatch {
                expected: queries.len(),
                found: query_labels.len(),
            });
        }
        if let Some(&bad) = query_labels.iter().find(|&&l| l >= way) {
            return Err(Error::data(format!(
                "query label {bad} is not one of the {way} episode classes"
            )));
        }
        let dim = support[0][0].len();
        for v in support.iter().flatten().chain(queries.iter()) {
            if v.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: v.len(),
                });
            }
        }
        let mut next = 0;
        let support_indices = support
            .iter()
            .map(|s| {
                let idx = (next..next + s.len()).collect();
                next += s.len();
                idx
            })
            .collect();
        let query_indices = (next..next + queries.len()).collect();
        let query_per_class = queries.len().checked_div(way).unwrap_or(0);
        Ok(Episode {
            classes: (0..way).map(|c| c.to_string()).collect(),
            support,
            support_indices,
            original_shot: shot,
            queries,
            query_labels,
            query_indices,
            query_per_class,
        })
    }

    pub fn way(&self) -> usize {
        self.support.len()
    }

    /// Support vectors per class, after augmentation.
    pub fn shot(&self) -> usize {
        self.support.first().map_or(0, Vec::len)
    }

    pub fn dim(&self) -> usize {
        self.support.first().and_then(|s| s.first()).map_or(0, Vec::len)
    }

    pub fn is_augmented(&self) -> bool {
        self.shot() > self.original_shot
    }

    /// Applies `f` to every support and query vector.
    pub fn map_features(&self, mut f: impl FnMut(&[f64]) -> Vec<f64>) -> Episode {
        Episode {
            support: self
                .support
                .iter()
                .map(|class| class.iter().map(|v| f(v)).collect())
                .collect(),
            queries: self.queries.iter().map(|v| f(v)).collect(),
            ..self.clone()
        }
    }

    /// Applies the 1-shot augmentation policy to every class. No-op unless
    /// the episode is 1-shot.
    pub fn augment(&mut self, policy: &OneShotPolicy, rng: &mut impl Rng) -> Result<()> {
        if self.original_shot != 1 || self.is_augmented() {
            return Ok(());
        }
        for class in &mut self.support {
            *class = augment_one_shot(class, policy, rng)?;
        }
        Ok(())
    }
}

/// Samples `way` classes without replacement, then `shot + query_per_class`
/// distinct members of each, split into support and query.
///
/// Only classes with enough members are eligible.
pub fn sample_episode(
    dataset: &Dataset,
    way: usize,
    shot: usize,
    query_per_class: usize,
    rng: &mut impl Rng,
) -> Result<Episode> {
    if way < 2 {
        return Err(Error::config(format!("way must be at least 2, got {way}")));
    }
    if shot < 1 || query_per_class < 1 {
        return Err(Error::config("shot and query_per_class must be at least 1"));
    }
    let need = shot + query_per_class;
    let eligible: Vec<usize> = (0..dataset.classes.len())
        .filter(|&c| dataset.members[c].len() >= need)
        .collect();
    if eligible.len() < way {
        return Err(Error::data(format!(
            "episode needs {way} classes with at least {need} samples each, but only {} of {} classes qualify (short by {})",
            eligible.len(),
            dataset.classes.len(),
            way - eligible.len()
        )));
    }

    let picked = index::sample(rng, eligible.len(), way);
    let mut episode = Episode {
        classes: Vec::with_capacity(way),
        support: Vec::with_capacity(way),
        support_indices: Vec::with_capacity(way),
        original_shot: shot,
        queries: Vec::with_capacity(way * query_per_class),
        query_labels: Vec::with_capacity(way * query_per_class),
        query_indices: Vec::with_capacity(way * query_per_class),
        query_per_class,
    };
    let mut queries_by_class = Vec::with_capacity(way);
    for (dense, pick) in picked.iter().enumerate() {
        let class = eligible[pick];
        let members = &dataset.members[class];
        let chosen: Vec<usize> = index::sample(rng, members.len(), need)
            .iter()
            .map(|i| members[i])
            .collect();
        let (support, query) = chosen.split_at(shot);
        episode.classes.push(dataset.classes[class].clone());
        episode
            .support
            .push(support.iter().map(|&i| dataset.features(i).to_vec()).collect());
        episode.support_indices.push(support.to_vec());
        queries_by_class.push((dense, query.to_vec()));
    }
    for (dense, query) in queries_by_class {
        for i in query {
            episode.queries.push(dataset.features(i).to_vec());
            episode.query_labels.push(dense);
            episode.query_indices.push(i);
        }
    }
    Ok(episode)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OneShotPolicy {
    #[default]
    None,
    /// Adds a Gaussian-perturbed copy of the support vector. `None` sigma
    /// means 0.05 × the vector's mean absolute feature value.
    Jitter { sigma: Option<f64> },
}

impl std::fmt::Display for OneShotPolicy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            OneShotPolicy::None => f.write_str("none"),
            OneShotPolicy::Jitter { sigma: None } => f.write_str("jitter"),
            OneShotPolicy::Jitter { sigma: Some(s) } => write!(f, "jitter:{s}"),
        }
    }
}

impl std::str::FromStr for OneShotPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.split_once(':') {
            None if s == "none" => Ok(OneShotPolicy::None),
            None if s == "jitter" => Ok(OneShotPolicy::Jitter { sigma: None }),
            Some(("jitter", v)) => {
                let sigma: f64 = v
                    .parse()
                    .map_err(|_| Error::config(format!("invalid jitter sigma '{v}'")))?;
                if !(sigma >= 0.0 && sigma.is_finite()) {
                    return Err(Error::config("jitter sigma must be finite and nonnegative"));
                }
                Ok(OneShotPolicy::Jitter { sigma: Some(sigma) })
            }
            _ => Err(Error::config(format!(
                "unknown one-shot policy '{s}' (expected none, jitter or jitter:<sigma>)"
            ))),
        }
    }
}

/// Expands a single support vector into two under the `Jitter` policy.
pub fn augment_one_shot(
    support_class: &[Vec<f64>],
    policy: &OneShotPolicy,
    rng: &mut impl Rng,
) -> Result<Vec<Vec<f64>>> {
    if support_class.len() != 1 {
        return Err(Error::config(format!(
            "one-shot augmentation applies to exactly 1 support vector, got {}",
            support_class.len()
        )));
    }
    let original = &support_class[0];
    match *policy {
        OneShotPolicy::None => Ok(support_class.to_vec()),
        OneShotPolicy::Jitter { sigma } => {
            let sigma = sigma
                .unwrap_or_else(|| 0.05 * original.iter().map(|v| v.abs()).sum::<f64>() / original.len().max(1) as f64);
            let jittered = original
                .iter()
                .map(|v| {
                    let z: f64 = StandardNormal.sample(rng);
                    v + sigma * z
                })
                .collect();
            Ok(vec![original.clone(), jittered])
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_simple_rows() {
        let ds = parse_csv("a,1,2\nb,3,4\n").unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.dim(), 2);
        assert_eq!(ds.classes(), ["a", "b"]);
        assert_eq!(ds.features(1), [3.0, 4.0]);
    }

    #[test]
    fn parse_reports_line_and_column() {
        let err = parse_csv("a,1,x\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, column: 3, .. }), "got {err:?}");
        let err = parse_csv("label,f1,f2\na,1,2\nb,1\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "got {err:?}");
        let err = parse_csv("a,1,2\nb,1,2,3\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, column: 4, .. }), "got {err:?}");
        assert!(matches!(parse_csv("a,1,nan\n"), Err(Error::Parse { column: 3, .. })));
    }

    #[test]
    fn parse_header_and_empty() {
        let ds = parse_csv("label,f1,f2\na,1,2\n").unwrap();
        assert_eq!(ds.len(), 1);
        assert!(parse_csv("").is_err());
        assert!(parse_csv("label,f1\n").is_err());
        assert!(parse_csv("a\n").is_err());
    }

    #[test]
    fn quoted_label_with_comma_is_rejected() {
        assert!(parse_csv("\"a,b\",1,2\nc,1,2\n").is_err());
    }

    #[test]
    fn csv_round_trip() {
        let ds = synth_generate(&SynthConfig::small4()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ds.csv");
        ds.write_csv(&path).unwrap();
        assert_eq!(load_csv(&path).unwrap(), ds);
    }

    #[test]
    fn synth_counts_and_determinism() {
        let cfg = SynthConfig {
            class_count: 3,
            dim: 2,
            per_class_count: 2,
            mean_scale: 1.0,
            anisotropy: vec![1.0, 1.0],
            rotation_seed: 1,
            sample_seed: 2,
        };
        let a = synth_generate(&cfg).unwrap();
        assert_eq!(a.len(), 6);
        assert_eq!(a, synth_generate(&cfg).unwrap());
        let mut other = cfg.clone();
        other.sample_seed = 3;
        assert_ne!(a, synth_generate(&other).unwrap());
    }

    #[test]
    fn synth_config_validation() {
        let mut cfg = SynthConfig::reference();
        cfg.per_class_count = 1;
        assert!(synth_generate(&cfg).is_err());
        let mut cfg = SynthConfig::reference();
        cfg.anisotropy[3] = 0.0;
        assert!(synth_generate(&cfg).is_err());
        let mut cfg = SynthConfig::reference();
        cfg.anisotropy.pop();
        assert!(synth_generate(&cfg).is_err());
    }

    fn covariance_eigen_spread(ds: &Dataset, class: usize) -> f64 {
        let members = &ds.members()[class];
        let d = ds.dim();
        let n = members.len() as f64;
        let mean: Vec<f64> = (0..d)
            .map(|k| members.iter().map(|&i| ds.features(i)[k]).sum::<f64>() / n)
            .collect();
        let cov = Matrix::from_fn(d, d, |a, b| {
            members
                .iter()
                .map(|&i| (ds.features(i)[a] - mean[a]) * (ds.features(i)[b] - mean[b]))
                .sum::<f64>()
                / (n - 1.0)
        });
        let ev = crate::linalg::jacobi_eigen(&cov).unwrap().eigenvalues;
        let max = ev.iter().copied().fold(f64::MIN, f64::max);
        let min = ev.iter().copied().fold(f64::MAX, f64::min);
        max / min
    }

    #[test]
    fn isotropic_limit() {
        let cfg = |count| SynthConfig {
            class_count: 2,
            dim: 3,
            per_class_count: count,
            mean_scale: 5.0,
            anisotropy: vec![2.0; 3],
            rotation_seed: 3,
            sample_seed: 4,
        };
        let small = covariance_eigen_spread(&synth_generate(&cfg(50)).unwrap(), 0);
        let large = covariance_eigen_spread(&synth_generate(&cfg(20_000)).unwrap(), 0);
        assert!(large < small);
        assert!(large < 1.1, "spread {large}");

        let aniso = synth_generate(&SynthConfig::reference()).unwrap();
        assert!(covariance_eigen_spread(&aniso, 0) > 8.0);
    }

    #[test]
    fn episode_counts() {
        let ds = synth_generate(&SynthConfig::reference()).unwrap();
        let ep = sample_episode(&ds, 5, 5, 10, &mut episode_rng(0, 0)).unwrap();
        assert_eq!(ep.way(), 5);
        assert_eq!(ep.support.iter().map(Vec::len).sum::<usize>(), 25);
        assert_eq!(ep.queries.len(), 50);
        assert_eq!(ep.query_labels.iter().filter(|&&l| l == 3).count(), 10);
    }

    #[test]
    fn exhaustive_split() {
        let ds = parse_csv("a,0\na,1\nb,2\nb,3\n").unwrap();
        let ep = sample_episode(&ds, 2, 1, 1, &mut episode_rng(5, 0)).unwrap();
        let mut all: Vec<usize> = ep.support_indices.concat();
        all.extend(&ep.query_indices);
        all.sort_unstable();
        assert_eq!(all, vec![0, 1, 2, 3]);
    }

    #[test]
    fn sampling_errors_name_deficit() {
        let ds = parse_csv("a,0\na,1\nb,2\n").unwrap();
        let err = sample_episode(&ds, 2, 1, 1, &mut episode_rng(0, 0)).unwrap_err();
        assert!(err.to_string().contains("only 1 of 2"), "{err}");
        let err = sample_episode(&ds, 3, 1, 0, &mut episode_rng(0, 0)).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn episodes_are_deterministic_and_disjoint() {
        let ds = synth_generate(&SynthConfig::reference()).unwrap();
        for i in 0..50 {
            let a = sample_episode(&ds, 5, 5, 15, &mut episode_rng(42, i)).unwrap();
            let b = sample_episode(&ds, 5, 5, 15, &mut episode_rng(42, i)).unwrap();
            assert_eq!(a, b);
            let support: std::collections::HashSet<usize> = a.support_indices.concat().into_iter().collect();
            assert!(a.query_indices.iter().all(|q| !support.contains(q)));
            for (q, &label) in a.query_indices.iter().zip(&a.query_labels) {
                assert_eq!(ds.items()[*q].label, a.classes[label]);
            }
        }
    }

    #[test]
    fn class_sampling_is_uniform() {
        let items = (0..10)
            .flat_map(|c| {
                (0..3).map(move |i| LabeledVector {
                    label: format!("k{c}"),
                    features: vec![i as f64],
                })
            })
            .collect();
        let ds = Dataset::new(items).unwrap();
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        let episodes = 10_000;
        for i in 0..episodes {
            let ep = sample_episode(&ds, 5, 1, 1, &mut episode_rng(9, i)).unwrap();
            for c in ep.classes {
                *counts.entry(c).or_default() += 1;
            }
        }
        for (class, count) in counts {
            let frac = count as f64 / episodes as f64;
            assert!((frac - 0.5).abs() <= 0.02, "{class}: {frac}");
        }
    }

    #[test]
    fn augmentation_policies() {
        let v = vec![vec![1.0, -2.0, 3.0]];
        let mut rng = episode_rng(1, 1);
        assert_eq!(augment_one_shot(&v, &OneShotPolicy::None, &mut rng).unwrap(), v);

        let dup = augment_one_shot(&v, &OneShotPolicy::Jitter { sigma: Some(0.0) }, &mut rng).unwrap();
        assert_eq!(dup, vec![v[0].clone(), v[0].clone()]);

        let jitter = OneShotPolicy::Jitter { sigma: Some(0.1) };
        let a = augment_one_shot(&v, &jitter, &mut episode_rng(3, 0)).unwrap();
        let b = augment_one_shot(&v, &jitter, &mut episode_rng(3, 0)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 2);
        assert_ne!(a[1], v[0]);

        let two = vec![vec![0.0], vec![1.0]];
        assert!(augment_one_shot(&two, &jitter, &mut rng).is_err());
    }

    #[test]
    fn one_shot_policy_parsing() {
        assert_eq!("none".parse::<OneShotPolicy>().unwrap(), OneShotPolicy::None);
        assert_eq!(
            "jitter".parse::<OneShotPolicy>().unwrap(),
            OneShotPolicy::Jitter { sigma: None }
        );
        assert_eq!(
            "jitter:0.2".parse::<OneShotPolicy>().unwrap(),
            OneShotPolicy::Jitter { sigma: Some(0.2) }
        );
        assert!("jitter:-1".parse::<OneShotPolicy>().is_err());
        assert!("flip".parse::<OneShotPolicy>().is_err());
    }

    #[test]
    fn episode_augment_only_for_one_shot() {
        let ds = synth_generate(&SynthConfig::reference()).unwrap();
        let policy = OneShotPolicy::Jitter { sigma: None };
        let mut rng = episode_rng(0, 0);
        let mut ep = sample_episode(&ds, 3, 1, 2, &mut rng).unwrap();
        ep.augment(&policy, &mut rng).unwrap();
        assert_eq!(ep.shot(), 2);
        assert!(ep.is_augmented());
        let mut ep5 = sample_episode(&ds, 3, 5, 2, &mut rng).unwrap();
        let before = ep5.clone();
        ep5.augment(&policy, &mut rng).unwrap();
        assert_eq!(ep5, before);
    }
}
