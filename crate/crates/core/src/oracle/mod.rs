//! Gradient sources.
//!
//! [`SyntheticOracle`] produces gradients with exactly the structure a
//! scale-invariant layer has: orthogonal to the weights, with norm
//! `sigma / ||x||`. [`TinyMlp`] is a small network with RMS-normalized layers
//! whose analytic gradients are checked against central differences.

mod mlp;
mod synthetic;

pub use mlp::{
    finite_diff_gradient, mlp_gradient, mlp_loss, Activation, Batch, DenseLayer, TinyMlp,
};
pub use synthetic::SyntheticOracle;

use crate::error::{Error, Result};
use crate::linalg::{dot, l2_norm};

/// `|<g, x>| / (||g|| ||x||)`, zero for orthogonal vectors.
pub fn orthogonality_score(g: &[f64], x: &[f64]) -> Result<f64> {
    if g.len() != x.len() {
        return Err(Error::invalid("orthogonality_score: length mismatch"));
    }
    let ng = l2_norm(g)?;
    let nx = l2_norm(x)?;
    if ng == 0.0 || nx == 0.0 {
        return Err(Error::invalid("orthogonality_score: zero vector"));
    }
    Ok((dot(g, x).abs() / (ng * nx)).min(1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn orthogonality_examples() {
        assert_eq!(orthogonality_score(&[0.0, 1.0], &[1.0, 0.0]).unwrap(), 0.0);
        assert!((orthogonality_score(&[1.0, 1.0], &[1.0, 1.0]).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(orthogonality_score(&[1.0, 1.0], &[1.0, -1.0]).unwrap(), 0.0);
        assert!(orthogonality_score(&[0.0, 0.0], &[1.0, 0.0]).is_err());
    }
}
