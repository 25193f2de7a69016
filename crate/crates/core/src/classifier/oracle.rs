//! Independent reference routes for the kernel distance.
//!
//! * [`explicit_oracle_distance`] works on explicit features (identity
//!   kernel): it builds the covariance `C = Σ r_i r_iᵀ`, eigendecomposes it
//!   and shrinks the relative prototype along each eigenvector directly.
//! * [`literal_matrix_oracle`] works for any kernel, materializing the
//!   replicated n×n cross and query blocks and evaluating every matrix
//!   product in full.
//! * [`protonet_distance`] and [`dsn_distance`] are the two classical
//!   special cases of the filter family.

use crate::error::{Error, Result};
use crate::kernel::KernelSpec;
use crate::linalg::{dot, squared_distance, Matrix};
use crate::spectral::{eig_sym, filter_h, FilterKind};

/// Eigenvalues of `C` at or below this fraction of the largest are treated
/// as zero on the explicit route.
const EXPLICIT_RANK_TOLERANCE: f64 = 1e-10;

fn check_explicit<S: AsRef<[f64]>>(support: &[S], query: &[f64]) -> Result<usize> {
    let first = support.first().ok_or_else(|| Error::data("support set is empty"))?;
    let d = first.as_ref().len();
    for v in support.iter().map(AsRef::as_ref).chain(std::iter::once(query)) {
        if v.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: v.len(),
            });
        }
    }
    Ok(d)
}

fn explicit_mean<S: AsRef<[f64]>>(support: &[S], d: usize) -> Vec<f64> {
    let n = support.len() as f64;
    (0..d)
        .map(|k| support.iter().map(|s| s.as_ref()[k]).sum::<f64>() / n)
        .collect()
}

/// `(γ, w)` with `w` a unit eigenvector.
pub type EigenPair = (f64, Vec<f64>);

/// Nonzero eigenpairs `(γ_i, w_i)` of the unnormalized support covariance,
/// largest first, together with the class mean.
pub fn covariance_spectrum<S: AsRef<[f64]>>(support: &[S]) -> Result<(Vec<f64>, Vec<EigenPair>)> {
    let d = check_explicit(support, support.first().map(AsRef::as_ref).unwrap_or(&[]))?;
    let mu = explicit_mean(support, d);
    let residuals: Vec<Vec<f64>> = support
        .iter()
        .map(|s| s.as_ref().iter().zip(&mu).map(|(a, m)| a - m).collect())
        .collect();
    let cov = Matrix::from_fn(d, d, |a, b| residuals.iter().map(|r| r[a] * r[b]).sum());
    let eig = eig_sym(&cov)?;
    let top = eig.max_eigenvalue();
    // The n centered residuals span at most n − 1 dimensions.
    let max_rank = support.len().saturating_sub(1);
    let pairs = eig
        .gammas
        .iter()
        .enumerate()
        .take(max_rank)
        .filter(|(_, &g)| g > EXPLICIT_RANK_TOLERANCE * top && g > 0.0)
        .map(|(i, &g)| (g, eig.vector(i)))
        .collect();
    Ok((mu, pairs))
}

/// `‖μ_lc − Σ_i h(γ_i, λ) γ_i ⟨μ_lc, w_i⟩ w_i‖²` on explicit features,
/// where `μ_lc = q − mean(support)`.
pub fn explicit_oracle_distance<S: AsRef<[f64]>>(
    support_features: &[S],
    query_feature: &[f64],
    filter: FilterKind,
    lambda: f64,
) -> Result<f64> {
    check_explicit(support_features, query_feature)?;
    let (mu, pairs) = covariance_spectrum(support_features)?;
    let mut shrunk: Vec<f64> = query_feature.iter().zip(&mu).map(|(q, m)| q - m).collect();
    let relative = shrunk.clone();
    for (gamma, w) in &pairs {
        let factor = filter_h(filter, *gamma, lambda)? * gamma;
        let coord = dot(&relative, w);
        shrunk.iter_mut().zip(w).for_each(|(s, wk)| *s -= factor * coord * wk);
    }
    Ok(dot(&shrunk, &shrunk))
}

/// `‖q − mean(support)‖²`.
pub fn protonet_distance<S: AsRef<[f64]>>(support_features: &[S], query_feature: &[f64]) -> Result<f64> {
    let d = check_explicit(support_features, query_feature)?;
    Ok(squared_distance(query_feature, &explicit_mean(support_features, d)))
}

/// Rank of the centered support set on the explicit route.
pub fn centered_rank<S: AsRef<[f64]>>(support_features: &[S]) -> Result<usize> {
    Ok(covariance_spectrum(support_features)?.1.len())
}

/// `‖(I − P Pᵀ)(q − μ)‖²` with `P` the top `subspace_dim` eigenvectors of
/// the support covariance.
pub fn dsn_distance<S: AsRef<[f64]>>(
    support_features: &[S],
    query_feature: &[f64],
    subspace_dim: usize,
) -> Result<f64> {
    check_explicit(support_features, query_feature)?;
    let (mu, pairs) = covariance_spectrum(support_features)?;
    if subspace_dim > pairs.len() {
        return Err(Error::config(format!(
            "subspace dimension {subspace_dim} exceeds the centered support rank {}",
            pairs.len()
        )));
    }
    let relative: Vec<f64> = query_feature.iter().zip(&mu).map(|(q, m)| q - m).collect();
    let mut residual = relative.clone();
    for (_, w) in pairs.iter().take(subspace_dim) {
        let coord = dot(&relative, w);
        residual.iter_mut().zip(w).for_each(|(r, wk)| *r -= coord * wk);
    }
    Ok(dot(&residual, &residual))
}

/// Distance evaluated with the replicated n×n matrices and full products:
///
/// ```text
/// K̃_ss = K_ss − Î K_ss − K_ss Î + Î K_ss Î
/// K̃_qs = K_qs − Î K_qs − K_ss + Î K_ss
/// K̃_qq = K_qq + K_ss − K_qs − K_qsᵀ
/// α    = V diag(h) Vᵀ K̃_qs 1ₙ
/// d²   = αᵀ K̃_ss α + 1ₙᵀ K̃_qq 1ₙ − 2 αᵀ K̃_qs 1ₙ
/// ```
///
/// with `Î` the constant 1/n matrix and `1ₙ` the constant 1/n vector.
pub fn literal_matrix_oracle<S: AsRef<[f64]>>(
    support: &[S],
    query: &[f64],
    kernel: &KernelSpec,
    filter: FilterKind,
    lambda: f64,
) -> Result<f64> {
    check_explicit(support, query)?;
    let n = support.len();
    let inv = 1.0 / n as f64;
    let s = |i: usize| support[i].as_ref();

    let k_ss = Matrix::from_fn(n, n, |i, j| kernel.eval(s(i), s(j)).unwrap_or(f64::NAN));
    let k_qs = Matrix::from_fn(n, n, |i, _| kernel.eval(s(i), query).unwrap_or(f64::NAN));
    let k_qq = Matrix::filled(n, n, kernel.eval(query, query)?);
    let ihat = Matrix::filled(n, n, inv);
    let ones = Matrix::column(&vec![inv; n]);

    let ktilde_ss = k_ss
        .sub(&ihat.matmul(&k_ss)?)?
        .sub(&k_ss.matmul(&ihat)?)?
        .add(&ihat.matmul(&k_ss)?.matmul(&ihat)?)?;
    let ktilde_qs = k_qs.sub(&ihat.matmul(&k_qs)?)?.sub(&k_ss)?.add(&ihat.matmul(&k_ss)?)?;
    let ktilde_qq = k_qq.add(&k_ss)?.sub(&k_qs)?.sub(&k_qs.transpose())?;

    let eig = eig_sym(&ktilde_ss.symmetrized())?;
    let h: Vec<f64> = if eig.max_eigenvalue() == 0.0 {
        vec![0.0; n]
    } else {
        eig.gammas
            .iter()
            .map(|&g| filter_h(filter, g, lambda))
            .collect::<Result<_>>()?
    };
    let g = eig.vecs.matmul(&Matrix::diag(&h))?.matmul(&eig.vecs.transpose())?;

    let cross = ktilde_qs.matmul(&ones)?;
    let alpha = g.matmul(&cross)?;
    let alpha_t = alpha.transpose();
    let quad = alpha_t.matmul(&ktilde_ss)?.matmul(&alpha)?[(0, 0)];
    let query_term = ones.transpose().matmul(&ktilde_qq)?.matmul(&ones)?[(0, 0)];
    let mixed = alpha_t.matmul(&cross)?[(0, 0)];
    let d2 = quad + query_term - 2.0 * mixed;
    if d2 < -1e-9 || d2.is_nan() {
        return Err(Error::numerical(format!("literal distance is {d2:e}")));
    }
    Ok(d2.max(0.0))
}
