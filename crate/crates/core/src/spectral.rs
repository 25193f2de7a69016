//! Eigendecomposition of the centered support Gram matrix and the spectral
//! filter family applied to it.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{jacobi_eigen, Matrix};

/// Eigenvalues below this are stored as exactly zero.
pub const EIGEN_CLAMP: f64 = 1e-12;
/// Negative eigenvalues within this (scaled by `max(1, |γ|_max)`) are
/// treated as rounding noise; anything further below zero is an error.
pub const NEGATIVE_EIGEN_TOLERANCE: f64 = 1e-9;
pub const SYMMETRY_TOLERANCE: f64 = 1e-8;

/// Spectrum of a centered Gram matrix, sorted by decreasing eigenvalue.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenSystem {
    pub gammas: Vec<f64>,
    /// Columns are orthonormal eigenvectors, in the order of `gammas`.
    pub vecs: Matrix,
}

impl EigenSystem {
    pub fn dim(&self) -> usize {
        self.gammas.len()
    }

    pub fn max_eigenvalue(&self) -> f64 {
        self.gammas.first().copied().unwrap_or(0.0)
    }

    pub fn rank(&self) -> usize {
        self.gammas.iter().filter(|&&g| g > 0.0).count()
    }

    pub fn vector(&self, i: usize) -> Vec<f64> {
        self.vecs.col(i)
    }

    /// `V · diag(values) · Vᵀ`.
    pub fn assemble(&self, values: &[f64]) -> Matrix {
        let n = self.dim();
        let mut out = Matrix::zeros(n, n);
        for (k, &h) in values.iter().enumerate() {
            if h == 0.0 {
                continue;
            }
            for i in 0..n {
                let vik = self.vecs[(i, k)] * h;
                for j in 0..n {
                    out[(i, j)] += vik * self.vecs[(j, k)];
                }
            }
        }
        out.symmetrized()
    }
}

/// Symmetric eigendecomposition with eigenvalues sorted descending and
/// clamped to be nonnegative.
///
/// Each eigenvector is signed so its largest-magnitude entry (first one on
/// ties) is positive.
pub fn eig_sym(ktilde_ss: &Matrix) -> Result<EigenSystem> {
    if !ktilde_ss.is_square() {
        return Err(Error::DimensionMismatch {
            expected: ktilde_ss.rows(),
            found: ktilde_ss.cols(),
        });
    }
    let scale = ktilde_ss.max_abs().max(1.0);
    let asym = ktilde_ss.asymmetry();
    if asym > SYMMETRY_TOLERANCE * scale {
        return Err(Error::numerical(format!(
            "matrix is not symmetric (max |A_ij − A_ji| = {asym:e})"
        )));
    }
    let raw = jacobi_eigen(&ktilde_ss.symmetrized())?;
    let n = raw.eigenvalues.len();

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| raw.eigenvalues[b].total_cmp(&raw.eigenvalues[a]));

    let top = raw.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
    let mut gammas = Vec::with_capacity(n);
    let mut vecs = Matrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        let g = raw.eigenvalues[src];
        if g < -NEGATIVE_EIGEN_TOLERANCE * top {
            return Err(Error::numerical(format!(
                "centered Gram matrix has eigenvalue {g:e}; it is not positive semidefinite"
            )));
        }
        gammas.push(if g < EIGEN_CLAMP { 0.0 } else { g });

        let mut pivot = 0;
        for i in 1..n {
            if raw.eigenvectors[(i, src)].abs() > raw.eigenvectors[(pivot, src)].abs() {
                pivot = i;
            }
        }
        let sign = if raw.eigenvectors[(pivot, src)] < 0.0 {
            -1.0
        } else {
            1.0
        };
        for i in 0..n {
            vecs[(i, dst)] = sign * raw.eigenvectors[(i, src)];
        }
    }
    Ok(EigenSystem { gammas, vecs })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FilterKind {
    /// No shrinkage; reduces to the plain prototype distance.
    Zero,
    /// `h(γ, λ) = 1 / (γ + λ)`.
    Tikhonov,
    /// `h(γ, λ) = 1/γ` if `γ ≥ λ`, else 0.
    #[serde(rename = "tsvd")]
    TruncatedSvd,
}

impl fmt::Display for FilterKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FilterKind::Zero => "zero",
            FilterKind::Tikhonov => "tikhonov",
            FilterKind::TruncatedSvd => "tsvd",
        })
    }
}

impl std::str::FromStr for FilterKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "zero" => Ok(FilterKind::Zero),
            "tikhonov" => Ok(FilterKind::Tikhonov),
            "tsvd" | "truncated-svd" | "truncatedsvd" => Ok(FilterKind::TruncatedSvd),
            other => Err(Error::config(format!(
                "unknown filter '{other}' (expected zero, tikhonov or tsvd)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaPolicy {
    Absolute(f64),
    /// λ = ρ · γ₁, with γ₁ the largest eigenvalue of the class.
    RelativeToMaxEigenvalue(f64),
}

impl LambdaPolicy {
    pub fn validate(&self) -> Result<()> {
        let (name, v) = match *self {
            LambdaPolicy::Absolute(v) => ("λ", v),
            LambdaPolicy::RelativeToMaxEigenvalue(v) => ("ρ", v),
        };
        if v.is_finite() && v >= 0.0 {
            Ok(())
        } else {
            Err(Error::config(format!("{name} must be finite and nonnegative, got {v}")))
        }
    }
}

impl fmt::Display for LambdaPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LambdaPolicy::Absolute(v) => write!(f, "lambda={v}"),
            LambdaPolicy::RelativeToMaxEigenvalue(v) => write!(f, "rho={v}"),
        }
    }
}

impl std::str::FromStr for LambdaPolicy {
    type Err = Error;

    /// Accepts `lambda=<v>` or `rho=<v>`.
    fn from_str(s: &str) -> Result<Self> {
        let (key, value) = s
            .split_once('=')
            .ok_or_else(|| Error::config(format!("expected lambda=<v> or rho=<v>, got '{s}'")))?;
        let v: f64 = value
            .trim()
            .parse()
            .map_err(|_| Error::config(format!("invalid number '{value}' in '{s}'")))?;
        let policy = match key.trim() {
            "lambda" => LambdaPolicy::Absolute(v),
            "rho" => LambdaPolicy::RelativeToMaxEigenvalue(v),
            other => return Err(Error::config(format!("unknown λ policy '{other}'"))),
        };
        policy.validate()?;
        Ok(policy)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterSpec {
    pub kind: FilterKind,
    pub lambda_policy: LambdaPolicy,
}

impl FilterSpec {
    pub fn zero() -> Self {
        FilterSpec {
            kind: FilterKind::Zero,
            lambda_policy: LambdaPolicy::Absolute(0.0),
        }
    }

    pub fn tikhonov(policy: LambdaPolicy) -> Self {
        FilterSpec {
            kind: FilterKind::Tikhonov,
            lambda_policy: policy,
        }
    }

    pub fn truncated_svd(policy: LambdaPolicy) -> Self {
        FilterSpec {
            kind: FilterKind::TruncatedSvd,
            lambda_policy: policy,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind == FilterKind::Zero {
            return Ok(());
        }
        self.lambda_policy.validate()?;
        if self.kind == FilterKind::TruncatedSvd {
            let v = match self.lambda_policy {
                LambdaPolicy::Absolute(v) | LambdaPolicy::RelativeToMaxEigenvalue(v) => v,
            };
            if v == 0.0 {
                return Err(Error::config("truncated SVD requires λ > 0"));
            }
        }
        Ok(())
    }
}

/// The filter function `h(γ, λ)`.
pub fn filter_h(kind: FilterKind, gamma: f64, lambda: f64) -> Result<f64> {
    if gamma < 0.0 || gamma.is_nan() {
        return Err(Error::numerical(format!("eigenvalue must be nonnegative, got {gamma}")));
    }
    match kind {
        FilterKind::Zero => Ok(0.0),
        FilterKind::Tikhonov => {
            if lambda < 0.0 || lambda.is_nan() {
                return Err(Error::config(format!("λ must be nonnegative, got {lambda}")));
            }
            let denom = gamma + lambda;
            if denom == 0.0 {
                return Err(Error::numerical("Tikhonov filter is undefined at γ = λ = 0"));
            }
            Ok(1.0 / denom)
        }
        FilterKind::TruncatedSvd => {
            if lambda.is_nan() || lambda <= 0.0 {
                return Err(Error::config(format!("truncated SVD requires λ > 0, got {lambda}")));
            }
            Ok(if gamma >= lambda { 1.0 / gamma } else { 0.0 })
        }
    }
}

pub fn resolve_lambda(policy: &LambdaPolicy, eigensys: &EigenSystem) -> Result<f64> {
    policy.validate()?;
    Ok(match *policy {
        LambdaPolicy::Absolute(v) => v,
        LambdaPolicy::RelativeToMaxEigenvalue(rho) => rho * eigensys.max_eigenvalue(),
    })
}

/// `g(K̃, λ) = V · diag(h(γ_1, λ), …, h(γ_n, λ)) · Vᵀ`.
pub fn g_matrix(eigensys: &EigenSystem, kind: FilterKind, lambda: f64) -> Result<Matrix> {
    let h = eigensys
        .gammas
        .iter()
        .map(|&g| filter_h(kind, g, lambda))
        .collect::<Result<Vec<_>>>()?;
    Ok(eigensys.assemble(&h))
}

/// [`g_matrix`] restricted to the range of K̃: directions with a clamped
/// zero eigenvalue get `h = 0`.
///
/// The centered cross vector `b` is orthogonal to the null space of K̃, so
/// those directions never change the distance in exact arithmetic. In
/// floating point they would multiply roundoff in `b` by `h(0, λ) = 1/λ`.
pub fn g_matrix_on_range(eigensys: &EigenSystem, kind: FilterKind, lambda: f64) -> Result<Matrix> {
    let h = eigensys
        .gammas
        .iter()
        .map(|&g| if g == 0.0 { Ok(0.0) } else { filter_h(kind, g, lambda) })
        .collect::<Result<Vec<_>>>()?;
    Ok(eigensys.assemble(&h))
}
