use crate::error::{Error, Result};
use crate::linalg::{l2_norm, project_orthogonal};
use crate::rng::GaussianStream;

const MAX_ATTEMPTS: usize = 8;

/// Gradients of an idealized normalized layer: a random direction orthogonal
/// to `x`, rescaled to norm `sigma / ||x||`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticOracle {
    pub sigma: f64,
    pub dim: usize,
}

impl SyntheticOracle {
    pub fn new(sigma: f64, dim: usize) -> Result<Self> {
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(Error::invalid(format!("sigma must be > 0, got {sigma}")));
        }
        if dim < 2 {
            return Err(Error::invalid("synthetic oracle needs dim >= 2"));
        }
        Ok(Self { sigma, dim })
    }

    pub fn gradient(&self, x: &[f64], rng: &mut GaussianStream) -> Result<Vec<f64>> {
        if x.len() != self.dim {
            return Err(Error::invalid(format!(
                "weights have length {}, oracle expects {}",
                x.len(),
                self.dim
            )));
        }
        let nx = l2_norm(x)?;
        if nx == 0.0 {
            return Err(Error::DegenerateDirection(
                "weight vector collapsed to zero".into(),
            ));
        }
        let target = self.sigma / nx;
        for _ in 0..MAX_ATTEMPTS {
            let u = rng.normal_vec(self.dim, 1.0);
            let nu = l2_norm(&u)?;
            let mut g = project_orthogonal(&u, x)?;
            let ng = l2_norm(&g)?;
            if ng <= 1e-8 * nu {
                continue;
            }
            let scale = target / ng;
            g.iter_mut().for_each(|v| *v *= scale);
            return Ok(g);
        }
        Err(Error::DegenerateDirection(format!(
            "no usable orthogonal direction after {MAX_ATTEMPTS} draws"
        )))
    }
}
