//! Dense vector helpers: plain, weighted and infinity norms, projection,
//! and EMA smoothing. Vectors are plain `f64` slices.

use crate::error::{Error, Result};

/// Positive diagonal weights for a matrix-weighted norm `sqrt(sum a_i v_i^2)`.
///
/// For Adam this is `sqrt(v_hat) + eps`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagWeights(Vec<f64>);

impl DiagWeights {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::invalid("diagonal weights must be nonempty"));
        }
        if let Some(bad) = weights.iter().find(|w| !(w.is_finite() && **w > 0.0)) {
            return Err(Error::invalid(format!(
                "diagonal weights must be finite and positive, found {bad}"
            )));
        }
        Ok(Self(weights))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Elementwise reciprocal, the weights of the dual norm.
    pub fn reciprocal(&self) -> Self {
        Self(self.0.iter().map(|w| 1.0 / w).collect())
    }
}

fn nonempty(v: &[f64], what: &str) -> Result<()> {
    if v.is_empty() {
        Err(Error::invalid(format!("{what}: empty vector")))
    } else {
        Ok(())
    }
}

fn same_len(a: &[f64], b: &[f64], what: &str) -> Result<()> {
    if a.len() != b.len() {
        Err(Error::invalid(format!(
            "{what}: length mismatch {} vs {}",
            a.len(),
            b.len()
        )))
    } else {
        Ok(())
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn squared_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

pub fn l2_norm(v: &[f64]) -> Result<f64> {
    nonempty(v, "l2_norm")?;
    Ok(squared_norm(v).sqrt())
}

pub fn weighted_norm(v: &[f64], a: &DiagWeights) -> Result<f64> {
    nonempty(v, "weighted_norm")?;
    same_len(v, a.as_slice(), "weighted_norm")?;
    Ok(v.iter()
        .zip(a.as_slice())
        .map(|(x, w)| w * x * x)
        .sum::<f64>()
        .sqrt())
}

pub fn inf_norm(v: &[f64]) -> Result<f64> {
    nonempty(v, "inf_norm")?;
    Ok(v.iter().fold(0.0_f64, |m, x| m.max(x.abs())))
}

pub fn l1_norm(v: &[f64]) -> Result<f64> {
    nonempty(v, "l1_norm")?;
    Ok(v.iter().map(|x| x.abs()).sum())
}

/// Removes the component of `v` along `x`. The result is not renormalized.
///
/// Two Gram-Schmidt passes are made so the residual inner product stays at
/// rounding level even when `v` is nearly parallel to `x`.
pub fn project_orthogonal(v: &[f64], x: &[f64]) -> Result<Vec<f64>> {
    nonempty(v, "project_orthogonal")?;
    same_len(v, x, "project_orthogonal")?;
    let xx = squared_norm(x);
    if xx == 0.0 || !xx.is_finite() {
        return Err(Error::DegenerateDirection(
            "cannot project against a zero or nonfinite vector".into(),
        ));
    }
    let mut out = v.to_vec();
    for _ in 0..2 {
        let coef = dot(&out, x) / xx;
        if coef == 0.0 {
            break;
        }
        out.iter_mut().zip(x).for_each(|(o, xi)| *o -= coef * xi);
    }
    Ok(out)
}

pub fn ema_update(prev: f64, value: f64, decay: f64) -> Result<f64> {
    if !(decay > 0.0 && decay < 1.0) {
        return Err(Error::invalid(format!(
            "ema decay must lie in (0, 1), got {decay}"
        )));
    }
    Ok(decay * prev + (1.0 - decay) * value)
}

pub fn all_finite(v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn l2_examples() {
        assert_eq!(l2_norm(&[3.0, 4.0]).unwrap(), 5.0);
        assert_eq!(l2_norm(&[0.0, 0.0, 0.0]).unwrap(), 0.0);
        assert_eq!(l2_norm(&[1.0, 1.0, 1.0, 1.0]).unwrap(), 2.0);
        assert!(matches!(l2_norm(&[]), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn weighted_examples() {
        let ones = DiagWeights::new(vec![1.0, 1.0]).unwrap();
        assert_relative_eq!(weighted_norm(&[1.0, 1.0], &ones).unwrap(), 2f64.sqrt());
        let a = DiagWeights::new(vec![4.0, 1.0]).unwrap();
        assert_relative_eq!(weighted_norm(&[2.0, 1.0], &a).unwrap(), 17f64.sqrt());
        // A = diag(|g|): the dual norm of g is sqrt(||g||_1)
        let a_inv = DiagWeights::new(vec![0.25, 1.0]).unwrap();
        assert_relative_eq!(weighted_norm(&[4.0, 1.0], &a_inv).unwrap(), 5f64.sqrt());
    }

    #[test]
    fn weighted_errors() {
        let a = DiagWeights::new(vec![1.0, 1.0]).unwrap();
        assert!(weighted_norm(&[1.0], &a).is_err());
        assert!(DiagWeights::new(vec![1.0, 0.0]).is_err());
        assert!(DiagWeights::new(vec![-1.0]).is_err());
        assert!(DiagWeights::new(vec![]).is_err());
    }

    #[test]
    fn inf_examples() {
        assert_eq!(inf_norm(&[-3.0, 2.0]).unwrap(), 3.0);
        assert_eq!(inf_norm(&[0.0]).unwrap(), 0.0);
        assert_eq!(inf_norm(&[1.0, -1.0, 1.0]).unwrap(), 1.0);
        assert!(inf_norm(&[]).is_err());
    }

    #[test]
    fn projection_examples() {
        assert_eq!(
            project_orthogonal(&[1.0, 0.0], &[0.0, 1.0]).unwrap(),
            vec![1.0, 0.0]
        );
        assert_eq!(
            project_orthogonal(&[1.0, 1.0], &[1.0, 0.0]).unwrap(),
            vec![0.0, 1.0]
        );
        assert_eq!(
            project_orthogonal(&[2.0, 3.0], &[2.0, 3.0]).unwrap(),
            vec![0.0, 0.0]
        );
        assert!(matches!(
            project_orthogonal(&[1.0, 1.0], &[0.0, 0.0]),
            Err(Error::DegenerateDirection(_))
        ));
        assert!(project_orthogonal(&[1.0], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn ema_examples() {
        assert_relative_eq!(ema_update(0.0, 1.0, 0.9).unwrap(), 0.1, epsilon = 1e-15);
        assert_eq!(ema_update(0.7, 0.7, 0.3).unwrap(), 0.7);
        assert_eq!(ema_update(1.0, 0.0, 0.5).unwrap(), 0.5);
        assert!(ema_update(0.0, 1.0, 1.0).is_err());
        assert!(ema_update(0.0, 1.0, 0.0).is_err());
    }

    fn vec_pair() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (1usize..64).prop_flat_map(|n| {
            (
                prop::collection::vec(-100.0f64..100.0, n),
                prop::collection::vec(-100.0f64..100.0, n),
            )
        })
    }

    proptest! {
        #[test]
        fn projection_is_orthogonal((v, x) in vec_pair()) {
            let nx = l2_norm(&x).unwrap();
            prop_assume!(nx > 1e-3);
            let r = project_orthogonal(&v, &x).unwrap();
            let nv = l2_norm(&v).unwrap();
            prop_assert!(dot(&r, &x).abs() / (nx * nv + 1e-300) < 1e-12);
        }

        #[test]
        fn unit_weights_reduce_to_l2(v in prop::collection::vec(-1e3f64..1e3, 1..64)) {
            let ones = DiagWeights::new(vec![1.0; v.len()]).unwrap();
            let w = weighted_norm(&v, &ones).unwrap();
            let l = l2_norm(&v).unwrap();
            prop_assert!((w - l).abs() <= 4.0 * f64::EPSILON * l.max(1e-300));
        }

        #[test]
        fn dual_norm_of_abs_weights_is_l1(g in prop::collection::vec(prop_oneof![-10.0f64..-1e-3, 1e-3f64..10.0], 1..64)) {
            let a = DiagWeights::new(g.iter().map(|x| x.abs()).collect()).unwrap();
            let w = weighted_norm(&g, &a.reciprocal()).unwrap();
            let l1 = l1_norm(&g).unwrap();
            prop_assert!((w * w - l1).abs() <= 1e-12 * l1);
        }

        #[test]
        fn ema_is_a_contraction(p1 in -1e3f64..1e3, p2 in -1e3f64..1e3, v in -1e3f64..1e3, d in 0.01f64..0.99) {
            let a = ema_update(p1, v, d).unwrap();
            let b = ema_update(p2, v, d).unwrap();
            prop_assert!(((a - b).abs() - d * (p1 - p2).abs()).abs() <= 1e-9);
        }
    }
}
