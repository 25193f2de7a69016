//! Kernel functions and raw Gram-matrix construction.
//!
//! The feature map behind each kernel is never materialized; every
//! downstream quantity is assembled from the inner products produced here.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, squared_distance, Matrix};

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum KernelSpec {
    /// `k(x, y) = ⟨x, y⟩`.
    #[default]
    Identity,
    /// `k(x, y) = exp(−‖x − y‖² / (2σ²))`, with `bandwidth_sq = σ²`.
    Rbf { bandwidth_sq: f64 },
}

impl KernelSpec {
    pub fn rbf(bandwidth_sq: f64) -> Result<Self> {
        let spec = KernelSpec::Rbf { bandwidth_sq };
        spec.validate()?;
        Ok(spec)
    }

    /// RBF kernel with σ² set to the embedding dimension.
    pub fn rbf_for_dim(dim: usize) -> Self {
        KernelSpec::Rbf {
            bandwidth_sq: dim as f64,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            KernelSpec::Identity => Ok(()),
            KernelSpec::Rbf { bandwidth_sq } if bandwidth_sq > 0.0 && bandwidth_sq.is_finite() => Ok(()),
            KernelSpec::Rbf { bandwidth_sq } => Err(Error::config(format!(
                "RBF bandwidth σ² must be positive and finite, got {bandwidth_sq}"
            ))),
        }
    }

    /// Evaluates the kernel. Symmetric by construction: both kernels only
    /// touch their arguments through commutative reductions.
    pub fn eval(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        if x.len() != y.len() {
            return Err(Error::DimensionMismatch {
                expected: x.len(),
                found: y.len(),
            });
        }
        if x.is_empty() {
            return Err(Error::data("kernel arguments must have dimension ≥ 1"));
        }
        self.validate()?;
        Ok(self.eval_unchecked(x, y))
    }

    #[inline]
    pub(crate) fn eval_unchecked(&self, x: &[f64], y: &[f64]) -> f64 {
        match *self {
            KernelSpec::Identity => dot(x, y),
            KernelSpec::Rbf { bandwidth_sq } => (-squared_distance(x, y) / (2.0 * bandwidth_sq)).exp(),
        }
    }
}

pub fn kernel_eval(spec: &KernelSpec, x: &[f64], y: &[f64]) -> Result<f64> {
    spec.eval(x, y)
}

fn finite(v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::numerical(format!("kernel value is {v}")))
    }
}

fn check_support<S: AsRef<[f64]>>(support: &[S]) -> Result<usize> {
    let first = support.first().ok_or_else(|| Error::data("support set is empty"))?;
    let dim = first.as_ref().len();
    if dim == 0 {
        return Err(Error::data("support vectors must have dimension ≥ 1"));
    }
    for s in support {
        if s.as_ref().len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: s.as_ref().len(),
            });
        }
    }
    Ok(dim)
}

/// `K_ss` with entry `(i, j) = k(s_i, s_j)`. Only the upper triangle is
/// evaluated; the lower one is mirrored, so the result is exactly symmetric.
pub fn gram_support<S: AsRef<[f64]>>(spec: &KernelSpec, support: &[S]) -> Result<Matrix> {
    spec.validate()?;
    check_support(support)?;
    let n = support.len();
    let mut k = Matrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = finite(spec.eval_unchecked(support[i].as_ref(), support[j].as_ref()))?;
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    Ok(k)
}

/// Returns `(κ, k_qq)` with `κ_i = k(s_i, q)` and `k_qq = k(q, q)`.
pub fn gram_query<S: AsRef<[f64]>>(spec: &KernelSpec, support: &[S], query: &[f64]) -> Result<(Vec<f64>, f64)> {
    spec.validate()?;
    let dim = check_support(support)?;
    if query.len() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            found: query.len(),
        });
    }
    let kappa = support
        .iter()
        .map(|s| finite(spec.eval_unchecked(s.as_ref(), query)))
        .collect::<Result<_>>()?;
    Ok((kappa, finite(spec.eval_unchecked(query, query))?))
}

/// Raw kernel quantities for one (class, query) pair.
///
/// The cross and query-query blocks are kept in compact form: a length-n
/// vector and a scalar, standing for n×n matrices with replicated columns
/// and constant entries respectively.
#[derive(Debug, Clone, PartialEq)]
pub struct GramBundle {
    pub k_ss: Matrix,
    pub kappa_qs: Vec<f64>,
    pub k_qq: f64,
}

impl GramBundle {
    pub fn new<S: AsRef<[f64]>>(spec: &KernelSpec, support: &[S], query: &[f64]) -> Result<Self> {
        let k_ss = gram_support(spec, support)?;
        let (kappa_qs, k_qq) = gram_query(spec, support, query)?;
        Ok(GramBundle { k_ss, kappa_qs, k_qq })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn eval_examples() {
        assert_eq!(KernelSpec::Identity.eval(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 5.0);
        let rbf = KernelSpec::rbf(2.0).unwrap();
        assert_eq!(rbf.eval(&[0.0, 0.0], &[0.0, 0.0]).unwrap(), 1.0);
        assert_abs_diff_eq!(
            rbf.eval(&[0.0, 0.0], &[2.0, 0.0]).unwrap(),
            (-1.0f64).exp(),
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(rbf.eval(&[0.0, 0.0], &[2.0, 0.0]).unwrap(), 0.367879, epsilon = 1e-6);
    }

    #[test]
    fn eval_errors() {
        let err = KernelSpec::Identity.eval(&[1.0, 2.0], &[1.0]).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { expected: 2, found: 1 }));
        assert!(err.to_string().contains('2') && err.to_string().contains('1'));
        assert!(matches!(KernelSpec::rbf(0.0), Err(Error::Config(_))));
        assert!(matches!(KernelSpec::rbf(-1.0), Err(Error::Config(_))));
        let bad = KernelSpec::Rbf { bandwidth_sq: -2.0 };
        assert!(matches!(bad.eval(&[0.0], &[0.0]), Err(Error::Config(_))));
    }

    #[test]
    fn gram_support_examples() {
        let k = gram_support(&KernelSpec::Identity, &[[0.0, 0.0], [2.0, 0.0]]).unwrap();
        assert_eq!(k, Matrix::from_rows(&[[0.0, 0.0], [0.0, 4.0]]).unwrap());
        let k = gram_support(&KernelSpec::rbf(0.3).unwrap(), &[[5.0, -1.0]]).unwrap();
        assert_eq!(k, Matrix::from_rows(&[[1.0]]).unwrap());
        let k = gram_support(&KernelSpec::Identity, &[[1.0, 0.0], [0.0, 1.0]]).unwrap();
        assert_eq!(k, Matrix::identity(2));
    }

    #[test]
    fn gram_support_errors() {
        let empty: [[f64; 2]; 0] = [];
        assert!(matches!(
            gram_support(&KernelSpec::Identity, &empty),
            Err(Error::Data(_))
        ));
        let ragged = vec![vec![1.0, 2.0], vec![1.0]];
        assert!(matches!(
            gram_support(&KernelSpec::Identity, &ragged),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn gram_query_examples() {
        let support = [[0.0, 0.0], [2.0, 0.0]];
        let (kappa, kqq) = gram_query(&KernelSpec::Identity, &support, &[2.0, 1.0]).unwrap();
        assert_eq!(kappa, vec![0.0, 4.0]);
        assert_eq!(kqq, 5.0);

        let support = [[0.3, -1.2, 4.0], [1.0, 1.0, 1.0]];
        let rbf = KernelSpec::rbf_for_dim(3);
        let (kappa, kqq) = gram_query(&rbf, &support, &support[0]).unwrap();
        assert_eq!(kappa[0], 1.0);
        assert_eq!(kqq, 1.0);

        let (kappa, kqq) = gram_query(&KernelSpec::Identity, &[[1.0, 1.0]], &[-1.0, -1.0]).unwrap();
        assert_eq!(kappa, vec![-2.0]);
        assert_eq!(kqq, 2.0);

        assert!(matches!(
            gram_query(&KernelSpec::Identity, &[[1.0, 1.0]], &[1.0]),
            Err(Error::DimensionMismatch { expected: 2, found: 1 })
        ));
    }

    fn vec_pair(max_dim: usize) -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (1..=max_dim).prop_flat_map(|d| {
            (
                prop::collection::vec(-10.0..10.0f64, d),
                prop::collection::vec(-10.0..10.0f64, d),
            )
        })
    }

    fn support_set() -> impl Strategy<Value = Vec<Vec<f64>>> {
        (1..=10usize, 1..=16usize)
            .prop_flat_map(|(n, d)| prop::collection::vec(prop::collection::vec(-3.0..3.0f64, d), n))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn kernels_are_exactly_symmetric((x, y) in vec_pair(16), s2 in 0.1..50.0f64) {
            for spec in [KernelSpec::Identity, KernelSpec::Rbf { bandwidth_sq: s2 }] {
                prop_assert_eq!(spec.eval(&x, &y).unwrap(), spec.eval(&y, &x).unwrap());
            }
            let r = KernelSpec::Rbf { bandwidth_sq: s2 }.eval(&x, &y).unwrap();
            prop_assert!(r > 0.0 || squared_distance(&x, &y) / (2.0 * s2) > 700.0);
            prop_assert!(r <= 1.0);
            prop_assert_eq!(KernelSpec::Rbf { bandwidth_sq: s2 }.eval(&x, &x).unwrap(), 1.0);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn gram_is_psd(support in support_set(), s2 in 0.5..20.0f64) {
            for spec in [KernelSpec::Identity, KernelSpec::Rbf { bandwidth_sq: s2 }] {
                let k = gram_support(&spec, &support).unwrap();
                prop_assert_eq!(k.asymmetry(), 0.0);
                let ev = crate::linalg::jacobi_eigen(&k).unwrap().eigenvalues;
                let min = ev.iter().copied().fold(f64::INFINITY, f64::min);
                prop_assert!(min >= -1e-9, "min eigenvalue {}", min);
            }
        }

        #[test]
        fn identity_gram_matches_inner_products(support in support_set()) {
            let k = gram_support(&KernelSpec::Identity, &support).unwrap();
            let n = support.len();
            for i in 0..n {
                for j in 0..n {
                    let explicit: f64 = support[i].iter().zip(&support[j]).map(|(a, b)| a * b).sum();
                    prop_assert!((k[(i, j)] - explicit).abs() <= 1e-12);
                }
            }
        }
    }
}
