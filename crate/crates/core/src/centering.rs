//! Per-class centering of kernel quantities.
//!
//! With `μ_c` the class mean in feature space and `r_i = φ(s_i) − μ_c`:
//!
//! ```text
//! K̃_ss[i][j] = ⟨r_i, r_j⟩
//! b_i        = ⟨φ(q) − μ_c, r_i⟩
//! q̃          = ‖φ(q) − μ_c‖²
//! ```

use crate::error::{Error, Result};
use crate::kernel::GramBundle;
use crate::linalg::{mean, Matrix};

/// Tolerance below zero within which a squared norm is clamped to 0.
pub const NEGATIVE_CLAMP: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct CenteredGram {
    pub ktilde_ss: Matrix,
    pub b: Vec<f64>,
    pub q_tilde: f64,
}

impl CenteredGram {
    pub fn from_bundle(bundle: &GramBundle) -> Result<Self> {
        Ok(CenteredGram {
            ktilde_ss: center_support(&bundle.k_ss)?,
            b: center_cross(&bundle.k_ss, &bundle.kappa_qs)?,
            q_tilde: centered_query_norm(&bundle.k_ss, &bundle.kappa_qs, bundle.k_qq)?,
        })
    }
}

fn check_square(k_ss: &Matrix) -> Result<usize> {
    if !k_ss.is_square() {
        return Err(Error::data(format!(
            "support Gram matrix must be square, got {}x{}",
            k_ss.rows(),
            k_ss.cols()
        )));
    }
    if k_ss.rows() == 0 {
        return Err(Error::data("support Gram matrix is empty"));
    }
    Ok(k_ss.rows())
}

fn row_means(k: &Matrix) -> Vec<f64> {
    (0..k.rows()).map(|i| mean(k.row(i))).collect()
}

/// Double-centers `K_ss`: `H K_ss H` with `H = I − 11ᵀ/n`, re-symmetrized.
pub fn center_support(k_ss: &Matrix) -> Result<Matrix> {
    let n = check_square(k_ss)?;
    let rows = row_means(k_ss);
    let cols: Vec<f64> = (0..n).map(|j| mean(&k_ss.col(j))).collect();
    let grand = mean(&rows);
    let centered = Matrix::from_fn(n, n, |i, j| k_ss[(i, j)] - rows[i] - cols[j] + grand);
    Ok(centered.symmetrized())
}

/// `b_i = κ_i − mean(κ) − rowmean_i(K_ss) + grandmean(K_ss)`.
pub fn center_cross(k_ss: &Matrix, kappa_qs: &[f64]) -> Result<Vec<f64>> {
    let n = check_square(k_ss)?;
    if kappa_qs.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: kappa_qs.len(),
        });
    }
    let rows = row_means(k_ss);
    let grand = mean(&rows);
    let kappa_mean = mean(kappa_qs);
    Ok(kappa_qs
        .iter()
        .zip(&rows)
        .map(|(k, r)| k - kappa_mean - r + grand)
        .collect())
}

/// `q̃ = k_qq + grandmean(K_ss) − 2·mean(κ)`, clamped at zero within
/// [`NEGATIVE_CLAMP`].
pub fn centered_query_norm(k_ss: &Matrix, kappa_qs: &[f64], k_qq: f64) -> Result<f64> {
    let n = check_square(k_ss)?;
    if kappa_qs.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: kappa_qs.len(),
        });
    }
    let grand = mean(&row_means(k_ss));
    clamp_squared_norm(k_qq + grand - 2.0 * mean(kappa_qs), "centered query norm")
}

/// Cross vector for a prototype `Σ w_j φ(s_j)` that need not be the
/// uniform mean: `b = H κ − H K_ss w`, with `H` the centering operator.
/// Reduces to [`center_cross`] when `w` is uniform.
pub(crate) fn center_cross_weighted(k_ss: &Matrix, kappa_qs: &[f64], weights: &[f64]) -> Result<Vec<f64>> {
    let n = check_square(k_ss)?;
    if kappa_qs.len() != n || weights.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: if kappa_qs.len() != n {
                kappa_qs.len()
            } else {
                weights.len()
            },
        });
    }
    let kw = k_ss.matvec(weights)?;
    let kappa_mean = mean(kappa_qs);
    let kw_mean = mean(&kw);
    Ok(kappa_qs
        .iter()
        .zip(&kw)
        .map(|(k, p)| (k - kappa_mean) - (p - kw_mean))
        .collect())
}

/// `‖φ(q) − Σ w_j φ(s_j)‖² = k_qq − 2 wᵀκ + wᵀ K_ss w`.
pub(crate) fn weighted_query_norm(k_ss: &Matrix, kappa_qs: &[f64], k_qq: f64, weights: &[f64]) -> Result<f64> {
    let cross: f64 = weights.iter().zip(kappa_qs).map(|(w, k)| w * k).sum();
    clamp_squared_norm(k_qq - 2.0 * cross + k_ss.quad_form(weights)?, "prototype query norm")
}

pub(crate) fn clamp_squared_norm(value: f64, what: &str) -> Result<f64> {
    if value >= 0.0 {
        Ok(value)
    } else if value > -NEGATIVE_CLAMP {
        Ok(0.0)
    } else if value.is_nan() {
        Err(Error::numerical(format!("{what} is NaN")))
    } else {
        Err(Error::numerical(format!(
            "{what} is {value:e}, below the clamp tolerance; kernel is not PSD or inputs are corrupted"
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{gram_query, gram_support, KernelSpec};
    use crate::linalg::dot;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn center_support_examples() {
        let c = center_support(&Matrix::from_rows(&[[7.5]]).unwrap()).unwrap();
        assert_eq!(c, Matrix::from_rows(&[[0.0]]).unwrap());

        let c = center_support(&Matrix::from_rows(&[[2.0, 1.0], [1.0, 2.0]]).unwrap()).unwrap();
        assert_eq!(c, Matrix::from_rows(&[[0.5, -0.5], [-0.5, 0.5]]).unwrap());

        assert!(center_support(&Matrix::zeros(2, 3)).is_err());
    }

    #[test]
    fn center_support_rows_sum_to_zero() {
        let a = Matrix::from_fn(5, 3, |i, j| ((i * 7 + j * 3) % 5) as f64 - 1.7 * j as f64);
        let k = a.matmul(&a.transpose()).unwrap();
        let c = center_support(&k).unwrap();
        for i in 0..5 {
            assert!(c.row(i).iter().sum::<f64>().abs() < 1e-9);
            assert!(c.col(i).iter().sum::<f64>().abs() < 1e-9);
        }
    }

    #[test]
    fn center_cross_examples() {
        let b = center_cross(&Matrix::from_rows(&[[3.0]]).unwrap(), &[1.5]).unwrap();
        assert_eq!(b, vec![0.0]);

        let k_ss = Matrix::from_rows(&[[0.0, 0.0], [0.0, 4.0]]).unwrap();
        let b = center_cross(&k_ss, &[0.0, 4.0]).unwrap();
        assert_eq!(b, vec![-1.0, 1.0]);

        let k_ss = Matrix::from_rows(&[[1.0, 2.0, 0.5], [2.0, 5.0, 1.0], [0.5, 1.0, 3.0]]).unwrap();
        let kappa: Vec<f64> = (0..3).map(|i| mean(k_ss.row(i)) + 0.75).collect();
        for v in center_cross(&k_ss, &kappa).unwrap() {
            assert_abs_diff_eq!(v, 0.0, epsilon = 1e-15);
        }

        assert!(matches!(
            center_cross(&k_ss, &[1.0]),
            Err(Error::DimensionMismatch { expected: 3, found: 1 })
        ));
    }

    #[test]
    fn centered_query_norm_examples() {
        let id = KernelSpec::Identity;
        let norm = |support: &[[f64; 2]], q: &[f64]| {
            let k = gram_support(&id, support).unwrap();
            let (kappa, kqq) = gram_query(&id, support, q).unwrap();
            centered_query_norm(&k, &kappa, kqq).unwrap()
        };
        assert_eq!(norm(&[[0.0, 0.0]], &[1.0, 0.0]), 1.0);
        assert_eq!(norm(&[[0.4, -2.0]], &[0.4, -2.0]), 0.0);
        assert_eq!(norm(&[[0.0, 0.0], [2.0, 0.0]], &[2.0, 1.0]), 2.0);
    }

    #[test]
    fn q_tilde_clamp_and_error() {
        let k = Matrix::from_rows(&[[1.0]]).unwrap();
        assert_eq!(centered_query_norm(&k, &[1.0], 1.0 - 1e-12).unwrap(), 0.0);
        let err = centered_query_norm(&k, &[1.0], 0.5).unwrap_err();
        assert!(matches!(err, Error::Numerical(_)));
    }

    fn instance() -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<f64>)> {
        (1..=8usize, 1..=16usize).prop_flat_map(|(n, d)| {
            (
                prop::collection::vec(prop::collection::vec(-3.0..3.0f64, d), n),
                prop::collection::vec(-3.0..3.0f64, d),
            )
        })
    }

    fn explicit_mean(support: &[Vec<f64>]) -> Vec<f64> {
        let d = support[0].len();
        (0..d)
            .map(|k| support.iter().map(|s| s[k]).sum::<f64>() / support.len() as f64)
            .collect()
    }

    fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
        a.iter().zip(b).map(|(x, y)| x - y).collect()
    }

    /// Paper-literal route: replicated n×n blocks and the 1/n vector.
    fn literal(k_ss: &Matrix, kappa: &[f64], kqq: f64) -> (Matrix, Vec<f64>, f64) {
        let n = kappa.len();
        let ihat = Matrix::filled(n, n, 1.0 / n as f64);
        let i_n = Matrix::column(&vec![1.0 / n as f64; n]);
        let k_qs = Matrix::from_fn(n, n, |i, _| kappa[i]);
        let k_qq = Matrix::filled(n, n, kqq);
        let ktilde = k_ss
            .sub(&ihat.matmul(k_ss).unwrap())
            .unwrap()
            .sub(&k_ss.matmul(&ihat).unwrap())
            .unwrap()
            .add(&ihat.matmul(k_ss).unwrap().matmul(&ihat).unwrap())
            .unwrap();
        let kqs_tilde = k_qs
            .sub(&ihat.matmul(&k_qs).unwrap())
            .unwrap()
            .sub(k_ss)
            .unwrap()
            .add(&ihat.matmul(k_ss).unwrap())
            .unwrap();
        let b = kqs_tilde.matmul(&i_n).unwrap().col(0);
        let kqq_tilde = k_qq
            .add(k_ss)
            .unwrap()
            .sub(&k_qs)
            .unwrap()
            .sub(&k_qs.transpose())
            .unwrap();
        let q = i_n.transpose().matmul(&kqq_tilde).unwrap().matmul(&i_n).unwrap()[(0, 0)];
        (ktilde, b, q)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(300))]

        #[test]
        fn identity_kernel_matches_explicit_features((support, q) in instance()) {
            let id = KernelSpec::Identity;
            let k = gram_support(&id, &support).unwrap();
            let (kappa, kqq) = gram_query(&id, &support, &q).unwrap();
            let cg = CenteredGram::from_bundle(&GramBundle { k_ss: k, kappa_qs: kappa, k_qq: kqq }).unwrap();

            let mu = explicit_mean(&support);
            let r: Vec<Vec<f64>> = support.iter().map(|s| sub(s, &mu)).collect();
            let rel = sub(&q, &mu);
            for i in 0..support.len() {
                for j in 0..support.len() {
                    prop_assert!((cg.ktilde_ss[(i, j)] - dot(&r[i], &r[j])).abs() <= 1e-10);
                }
                prop_assert!((cg.b[i] - dot(&rel, &r[i])).abs() <= 1e-10);
            }
            prop_assert!((cg.q_tilde - dot(&rel, &rel)).abs() <= 1e-10);
        }

        #[test]
        fn literal_form_agrees((support, q) in instance(), s2 in 0.5..20.0f64) {
            for spec in [KernelSpec::Identity, KernelSpec::Rbf { bandwidth_sq: s2 }] {
                let k = gram_support(&spec, &support).unwrap();
                let (kappa, kqq) = gram_query(&spec, &support, &q).unwrap();
                let (lk, lb, lq) = literal(&k, &kappa, kqq);
                prop_assert!(center_support(&k).unwrap().max_abs_diff(&lk) <= 1e-12 * (1.0 + k.max_abs()));
                for (x, y) in center_cross(&k, &kappa).unwrap().iter().zip(&lb) {
                    prop_assert!((x - y).abs() <= 1e-12 * (1.0 + k.max_abs()));
                }
                let cq = centered_query_norm(&k, &kappa, kqq).unwrap();
                prop_assert!((cq - lq.max(0.0)).abs() <= 1e-12 * (1.0 + k.max_abs()));
            }
        }

        #[test]
        fn invariants_hold((support, q) in instance(), s2 in 0.5..20.0f64) {
            let spec = KernelSpec::Rbf { bandwidth_sq: s2 };
            let bundle = GramBundle::new(&spec, &support, &q).unwrap();
            let cg = CenteredGram::from_bundle(&bundle).unwrap();
            let n = support.len();
            prop_assert_eq!(cg.ktilde_ss.asymmetry(), 0.0);
            for i in 0..n {
                prop_assert!(cg.ktilde_ss.row(i).iter().sum::<f64>().abs() <= 1e-9);
            }
            prop_assert!(cg.q_tilde >= 0.0);
        }

        #[test]
        fn permutation_equivariance((support, q) in instance(), seed in any::<u64>()) {
            let n = support.len();
            let mut perm: Vec<usize> = (0..n).collect();
            let mut s = seed;
            for i in (1..n).rev() {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                perm.swap(i, (s >> 33) as usize % (i + 1));
            }
            let permuted: Vec<Vec<f64>> = perm.iter().map(|&i| support[i].clone()).collect();
            let spec = KernelSpec::Identity;
            let a = CenteredGram::from_bundle(&GramBundle::new(&spec, &support, &q).unwrap()).unwrap();
            let b = CenteredGram::from_bundle(&GramBundle::new(&spec, &permuted, &q).unwrap()).unwrap();
            for i in 0..n {
                for j in 0..n {
                    prop_assert!((b.ktilde_ss[(i, j)] - a.ktilde_ss[(perm[i], perm[j])]).abs() <= 1e-10);
                }
                prop_assert!((b.b[i] - a.b[perm[i]]).abs() <= 1e-10);
            }
            prop_assert!((a.q_tilde - b.q_tilde).abs() <= 1e-10);
        }
    }
}
