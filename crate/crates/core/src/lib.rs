//! Kernel relative-prototype spectral filtering for episodic few-shot
//! classification over embedding vectors.
//!
//! A query is compared with each class through its relative prototype
//! `φ(q) − μ_c` in the kernel feature space. Components of that vector along
//! the principal directions of the class's centered support set are shrunk
//! by a spectral filter `h(γ, λ)` before its squared norm is used as the
//! class distance:
//!
//! * [`spectral::FilterKind::Zero`] disables shrinkage (prototype distance);
//! * [`spectral::FilterKind::Tikhonov`] uses `h = 1/(γ + λ)`;
//! * [`spectral::FilterKind::TruncatedSvd`] projects out every direction with
//!   `γ ≥ λ` (subspace distance).
//!
//! Everything is computed from kernel evaluations only; see
//! [`classifier::classify_episode`] for the end-to-end path and
//! [`classifier::oracle`] for the independent reference routes.

pub mod centering;
pub mod classifier;
pub mod data;
pub mod error;
pub mod eval;
pub mod kernel;
pub mod linalg;
pub mod spectral;
pub mod trainer;

pub use classifier::{classify_episode, classify_episode_with, ClassScores, ClassifierConfig, EpisodeResult};
pub use data::{load_csv, sample_episode, synth_generate, Dataset, Episode, LabeledVector, OneShotPolicy, SynthConfig};
pub use error::{Error, ErrorKind, Result};
pub use eval::{compare_methods, evaluate, lambda_sweep, EvalConfig, EvalReport, Method};
pub use kernel::KernelSpec;
pub use spectral::{FilterKind, FilterSpec, LambdaPolicy};
pub use trainer::{train, LinearEmbedding, TrainConfig, TrainOutcome};
