//! Fault probability of a sampled relay committee.
//!
//! With `n_total` relays of which `f_malicious` are malicious and an
//! aggregation sample of size `t_sample`, the number of malicious nodes in
//! the sample is hypergeometric. [`fault_probability`] returns the upper
//! tail P[X >= k] computed in exact rational arithmetic.

use num_bigint::BigUint;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FaultModelError {
    #[error("malicious count {f} exceeds committee size {n}")]
    TooManyMalicious { n: u64, f: u64 },
    #[error("sample size {t} outside [1, {n}]")]
    BadSample { n: u64, t: u64 },
    #[error("threshold k={k} outside [0, t={t}]")]
    BadThreshold { t: u64, k: u64 },
}

/// Committee fault model: N relays, F malicious, sample size T.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FaultModel {
    pub n_total: u64,
    pub f_malicious: u64,
    pub t_sample: u64,
}

impl FaultModel {
    pub fn new(n_total: u64, f_malicious: u64, t_sample: u64) -> Result<Self, FaultModelError> {
        if f_malicious > n_total {
            return Err(FaultModelError::TooManyMalicious {
                n: n_total,
                f: f_malicious,
            });
        }
        if t_sample < 1 || t_sample > n_total {
            return Err(FaultModelError::BadSample {
                n: n_total,
                t: t_sample,
            });
        }
        Ok(Self {
            n_total,
            f_malicious,
            t_sample,
        })
    }
}

/// `n choose k` as an exact big integer; zero when k > n.
pub fn binomial(n: u64, k: u64) -> BigUint {
    if k > n {
        return BigUint::zero();
    }
    let k = k.min(n - k);
    let mut num = BigUint::one();
    let mut den = BigUint::one();
    for i in 0..k {
        num *= BigUint::from(n - i);
        den *= BigUint::from(i + 1);
    }
    num / den
}

/// Exact hypergeometric upper tail:
/// `sum_{x=k}^{min(F,T)} C(F,x) C(N-F,T-x) / C(N,T)`.
pub fn fault_probability_exact(
    model: &FaultModel,
    k: u64,
) -> Result<BigRational, FaultModelError> {
    let FaultModel {
        n_total: n,
        f_malicious: f,
        t_sample: t,
    } = *model;
    if k > t {
        return Err(FaultModelError::BadThreshold { t, k });
    }
    let mut favorable = BigUint::zero();
    for x in k..=f.min(t) {
        // C(N-F, T-x) is zero when the sample cannot hold T-x honest nodes.
        favorable += binomial(f, x) * binomial(n - f, t - x);
    }
    Ok(BigRational::new(
        favorable.into(),
        binomial(n, t).into(),
    ))
}

/// Float view of [`fault_probability_exact`].
pub fn fault_probability(model: &FaultModel, k: u64) -> Result<f64, FaultModelError> {
    Ok(fault_probability_exact(model, k)?.to_f64().unwrap())
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Independent oracle: enumerate every T-subset of N nodes and count the
    /// ones containing at least k of the first F (malicious) nodes.
    fn enumeration_oracle(n: u64, f: u64, t: u64, k: u64) -> BigRational {
        fn subsets(n: u64, t: u64) -> Vec<Vec<u64>> {
            let mut out = Vec::new();
            let mut cur = Vec::new();
            fn rec(start: u64, n: u64, left: u64, cur: &mut Vec<u64>, out: &mut Vec<Vec<u64>>) {
                if left == 0 {
                    out.push(cur.clone());
                    return;
                }
                for i in start..n {
                    if n - i < left {
                        break;
                    }
                    cur.push(i);
                    rec(i + 1, n, left - 1, cur, out);
                    cur.pop();
                }
            }
            rec(0, n, t, &mut cur, &mut out);
            out
        }
        let all = subsets(n, t);
        let total = all.len() as u64;
        let bad = all
            .iter()
            .filter(|s| s.iter().filter(|&&i| i < f).count() as u64 >= k)
            .count() as u64;
        BigRational::new(bad.into(), total.into())
    }

    #[test]
    fn no_malicious_nodes_means_zero() {
        let model = FaultModel::new(4, 0, 3).unwrap();
        assert_eq!(fault_probability(&model, 1).unwrap(), 0.0);
    }

    #[test]
    fn four_nodes_one_malicious() {
        // All C(4,3)=4 samples enumerated; 3 contain the malicious node.
        assert_eq!(
            enumeration_oracle(4, 1, 3, 1),
            BigRational::new(3.into(), 4.into())
        );
        let model = FaultModel::new(4, 1, 3).unwrap();
        assert_eq!(fault_probability(&model, 1).unwrap(), 0.75);
    }

    #[test]
    fn seven_nodes_two_malicious() {
        // Exhaustive enumeration of C(7,5)=21 samples gives 10/21.
        assert_eq!(
            enumeration_oracle(7, 2, 5, 2),
            BigRational::new(10.into(), 21.into())
        );
        let model = FaultModel::new(7, 2, 5).unwrap();
        let p = fault_probability(&model, 2).unwrap();
        assert!((p - 10.0 / 21.0).abs() < 1e-15);
    }

    #[test]
    fn analytic_matches_enumeration_on_small_grid() {
        for n in 1..=8u64 {
            for f in 0..=n {
                for t in 1..=n {
                    for k in 0..=t {
                        let model = FaultModel::new(n, f, t).unwrap();
                        assert_eq!(
                            fault_probability_exact(&model, k).unwrap(),
                            enumeration_oracle(n, f, t, k),
                            "mismatch at N={n} F={f} T={t} k={k}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn invalid_models_rejected() {
        assert!(FaultModel::new(4, 5, 3).is_err());
        assert!(FaultModel::new(4, 1, 0).is_err());
        assert!(FaultModel::new(4, 1, 5).is_err());
        let model = FaultModel::new(4, 1, 3).unwrap();
        assert!(fault_probability(&model, 4).is_err());
    }

    #[test]
    fn k_zero_is_certainty() {
        let model = FaultModel::new(9, 3, 4).unwrap();
        assert_eq!(
            fault_probability_exact(&model, 0).unwrap(),
            BigRational::new(1.into(), 1.into())
        );
    }
}
