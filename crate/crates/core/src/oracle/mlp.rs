use crate::error::{Error, Result};
use crate::linalg::all_finite;
use crate::rng::GaussianStream;

/// Squared guard inside the RMS: `rms = sqrt(mean(z^2) + NORM_GUARD^2)`.
pub const NORM_GUARD: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Relu => v.max(0.0),
            Activation::Identity => v,
        }
    }

    fn derivative(self, v: f64) -> f64 {
        match self {
            Activation::Relu => {
                if v > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

/// Row-major `out_dim x in_dim` weight matrix, optionally followed by RMS
/// normalization of its output.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub weights: Vec<f64>,
    pub in_dim: usize,
    pub out_dim: usize,
    pub normalized: bool,
}

/// `linear -> [rms-norm] -> activation` blocks; the last block has no
/// activation. Loss is mean squared error.
#[derive(Debug, Clone, PartialEq)]
pub struct TinyMlp {
    pub layers: Vec<DenseLayer>,
    pub activation: Activation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    /// Row-major `n x in_dim`.
    pub inputs: Vec<f64>,
    /// Row-major `n x out_dim`.
    pub targets: Vec<f64>,
    pub n: usize,
}

impl Batch {
    /// Standard-normal inputs and targets.
    pub fn random(n: usize, in_dim: usize, out_dim: usize, rng: &mut GaussianStream) -> Self {
        Self {
            inputs: rng.normal_vec(n * in_dim, 1.0),
            targets: rng.normal_vec(n * out_dim, 1.0),
            n,
        }
    }
}

impl TinyMlp {
    /// `widths = [in, h1, ..., out]`; `normalized[l]` flags block `l`.
    /// Weights are drawn from `N(0, 1 / in_dim)`.
    pub fn new(
        widths: &[usize],
        normalized: &[bool],
        activation: Activation,
        rng: &mut GaussianStream,
    ) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::invalid("need at least input and output widths"));
        }
        if normalized.len() != widths.len() - 1 {
            return Err(Error::invalid("one normalization flag per layer"));
        }
        if widths.contains(&0) {
            return Err(Error::invalid("layer widths must be positive"));
        }
        let layers = widths
            .windows(2)
            .zip(normalized)
            .map(|(w, &normalized)| {
                let (in_dim, out_dim) = (w[0], w[1]);
                DenseLayer {
                    weights: rng.normal_vec(in_dim * out_dim, 1.0 / (in_dim as f64).sqrt()),
                    in_dim,
                    out_dim,
                    normalized,
                }
            })
            .collect();
        let net = Self { layers, activation };
        net.check_shapes()?;
        Ok(net)
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim
    }

    fn check_shapes(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::invalid("network has no layers"));
        }
        for (i, l) in self.layers.iter().enumerate() {
            if l.weights.len() != l.in_dim * l.out_dim {
                return Err(Error::invalid(format!("layer {i}: weight length mismatch")));
            }
            if i > 0 && self.layers[i - 1].out_dim != l.in_dim {
                return Err(Error::invalid(format!("layer {i}: input width mismatch")));
            }
        }
        Ok(())
    }

    fn check_batch(&self, batch: &Batch) -> Result<()> {
        self.check_shapes()?;
        if batch.n == 0 {
            return Err(Error::invalid("empty batch"));
        }
        if batch.inputs.len() != batch.n * self.in_dim() {
            return Err(Error::invalid(
                "batch inputs do not match network input width",
            ));
        }
        if batch.targets.len() != batch.n * self.out_dim() {
            return Err(Error::invalid(
                "batch targets do not match network output width",
            ));
        }
        Ok(())
    }
}

/// Forward values of one block for one sample.
struct BlockCache {
    input: Vec<f64>,
    /// Pre-normalization output `W a`.
    z: Vec<f64>,
    /// After normalization (equal to `z` when not normalized).
    y: Vec<f64>,
    rms: f64,
}

fn forward_sample(net: &TinyMlp, input: &[f64]) -> (Vec<BlockCache>, Vec<f64>) {
    let last = net.layers.len() - 1;
    let mut caches = Vec::with_capacity(net.layers.len());
    let mut a = input.to_vec();
    for (l, layer) in net.layers.iter().enumerate() {
        let z: Vec<f64> = layer
            .weights
            .chunks_exact(layer.in_dim)
            .map(|row| row.iter().zip(&a).map(|(w, x)| w * x).sum())
            .collect();
        let (y, rms) = if layer.normalized {
            let ms = z.iter().map(|v| v * v).sum::<f64>() / z.len() as f64;
            let rms = (ms + NORM_GUARD * NORM_GUARD).sqrt();
            (z.iter().map(|v| v / rms).collect(), rms)
        } else {
            (z.clone(), 1.0)
        };
        let next = if l == last {
            y.clone()
        } else {
            y.iter().map(|v| net.activation.apply(*v)).collect()
        };
        caches.push(BlockCache {
            input: std::mem::replace(&mut a, next),
            z,
            y,
            rms,
        });
    }
    (caches, a)
}

fn sample_slices<'a>(batch: &'a Batch, net: &TinyMlp, i: usize) -> (&'a [f64], &'a [f64]) {
    let (di, dout) = (net.in_dim(), net.out_dim());
    (
        &batch.inputs[i * di..(i + 1) * di],
        &batch.targets[i * dout..(i + 1) * dout],
    )
}

pub fn mlp_loss(net: &TinyMlp, batch: &Batch) -> Result<f64> {
    net.check_batch(batch)?;
    let denom = (batch.n * net.out_dim()) as f64;
    let mut total = 0.0;
    for i in 0..batch.n {
        let (input, target) = sample_slices(batch, net, i);
        let (_, out) = forward_sample(net, input);
        total += out
            .iter()
            .zip(target)
            .map(|(o, t)| (o - t).powi(2))
            .sum::<f64>();
    }
    Ok(total / denom)
}

/// Loss and reverse-mode gradient with respect to every layer's weights.
pub fn mlp_gradient(net: &TinyMlp, batch: &Batch) -> Result<(f64, Vec<Vec<f64>>)> {
    net.check_batch(batch)?;
    let denom = (batch.n * net.out_dim()) as f64;
    let last = net.layers.len() - 1;
    let mut grads: Vec<Vec<f64>> = net
        .layers
        .iter()
        .map(|l| vec![0.0; l.weights.len()])
        .collect();
    let mut total = 0.0;

    for i in 0..batch.n {
        let (input, target) = sample_slices(batch, net, i);
        let (caches, out) = forward_sample(net, input);
        total += out
            .iter()
            .zip(target)
            .map(|(o, t)| (o - t).powi(2))
            .sum::<f64>();

        // d loss / d output
        let mut delta: Vec<f64> = out
            .iter()
            .zip(target)
            .map(|(o, t)| 2.0 * (o - t) / denom)
            .collect();

        for l in (0..net.layers.len()).rev() {
            let layer = &net.layers[l];
            let cache = &caches[l];
            if l != last {
                delta
                    .iter_mut()
                    .zip(&cache.y)
                    .for_each(|(d, y)| *d *= net.activation.derivative(*y));
            }
            // through y = z / rms(z)
            let dz: Vec<f64> = if layer.normalized {
                let k = cache.z.len() as f64;
                let r = cache.rms;
                let proj =
                    delta.iter().zip(&cache.z).map(|(d, z)| d * z).sum::<f64>() / (k * r * r);
                delta
                    .iter()
                    .zip(&cache.z)
                    .map(|(d, z)| (d - z * proj) / r)
                    .collect()
            } else {
                delta.clone()
            };
            let g = &mut grads[l];
            for (o, dzo) in dz.iter().enumerate() {
                let row = &mut g[o * layer.in_dim..(o + 1) * layer.in_dim];
                row.iter_mut()
                    .zip(&cache.input)
                    .for_each(|(gw, a)| *gw += dzo * a);
            }
            if l > 0 {
                let mut prev = vec![0.0; layer.in_dim];
                for (o, dzo) in dz.iter().enumerate() {
                    let row = &layer.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
                    prev.iter_mut().zip(row).for_each(|(p, w)| *p += dzo * w);
                }
                delta = prev;
            }
        }
    }

    let loss = total / denom;
    if !loss.is_finite() || grads.iter().any(|g| !all_finite(g)) {
        return Err(Error::PoisonedState(
            "nonfinite value in mlp backward pass".into(),
        ));
    }
    Ok((loss, grads))
}

/// Central differences `(f(w + h e_i) - f(w - h e_i)) / 2h` over every weight.
pub fn finite_diff_gradient(net: &TinyMlp, batch: &Batch, h: f64) -> Result<Vec<Vec<f64>>> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::invalid(format!("step h must be > 0, got {h}")));
    }
    net.check_batch(batch)?;
    let mut work = net.clone();
    let mut out = Vec::with_capacity(net.layers.len());
    for l in 0..net.layers.len() {
        let mut g = Vec::with_capacity(net.layers[l].weights.len());
        for i in 0..net.layers[l].weights.len() {
            let w = net.layers[l].weights[i];
            work.layers[l].weights[i] = w + h;
            let plus = mlp_loss(&work, batch)?;
            work.layers[l].weights[i] = w - h;
            let minus = mlp_loss(&work, batch)?;
            work.layers[l].weights[i] = w;
            g.push((plus - minus) / (2.0 * h));
        }
        out.push(g);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{dot, l2_norm};
    use crate::oracle::orthogonality_score;

    fn setup(seed: u64) -> (TinyMlp, Batch) {
        let mut rng = GaussianStream::new(seed);
        let net = TinyMlp::new(
            &[6, 8, 5, 3],
            &[true, true, false],
            Activation::Relu,
            &mut rng,
        )
        .unwrap();
        let batch = Batch::random(16, 6, 3, &mut rng);
        (net, batch)
    }

    fn max_rel_error(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
        a.iter()
            .flatten()
            .zip(b.iter().flatten())
            .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1e-8))
            .fold(0.0, f64::max)
    }

    #[test]
    fn perfect_fit_has_zero_loss() {
        let (net, mut batch) = setup(1);
        let mut targets = Vec::new();
        for i in 0..batch.n {
            let input = &batch.inputs[i * 6..(i + 1) * 6];
            targets.extend(forward_sample(&net, input).1);
        }
        batch.targets = targets;
        assert_eq!(mlp_loss(&net, &batch).unwrap(), 0.0);
    }

    #[test]
    fn zero_weights_and_targets_give_zero_loss() {
        let mut rng = GaussianStream::new(2);
        let mut net =
            TinyMlp::new(&[4, 4, 2], &[true, true], Activation::Identity, &mut rng).unwrap();
        net.layers
            .iter_mut()
            .for_each(|l| l.weights.iter_mut().for_each(|w| *w = 0.0));
        let mut batch = Batch::random(5, 4, 2, &mut rng);
        batch.targets.iter_mut().for_each(|t| *t = 0.0);
        assert_eq!(mlp_loss(&net, &batch).unwrap(), 0.0);
        let (_, g) = mlp_gradient(&net, &batch).unwrap();
        assert!(g.iter().flatten().all(|v| v.is_finite()));
    }

    #[test]
    fn frozen_loss_regression() {
        let (net, batch) = setup(2024);
        let loss = mlp_loss(&net, &batch).unwrap();
        assert_eq!(loss.to_bits(), FROZEN_LOSS.to_bits(), "loss = {loss:?}");
    }

    const FROZEN_LOSS: f64 = 1.2168311114412804;

    #[test]
    fn dimension_mismatch_is_rejected() {
        let (net, mut batch) = setup(3);
        batch.inputs.pop();
        assert!(matches!(
            mlp_loss(&net, &batch),
            Err(Error::InvalidInput(_))
        ));
        let mut rng = GaussianStream::new(0);
        assert!(TinyMlp::new(&[3], &[], Activation::Relu, &mut rng).is_err());
        assert!(TinyMlp::new(&[3, 2], &[true, false], Activation::Relu, &mut rng).is_err());
    }

    #[test]
    fn analytic_matches_finite_differences() {
        for seed in 0..5 {
            let (net, batch) = setup(100 + seed);
            let (_, analytic) = mlp_gradient(&net, &batch).unwrap();
            let numeric = finite_diff_gradient(&net, &batch, 1e-5).unwrap();
            let err = max_rel_error(&analytic, &numeric);
            assert!(err < 1e-5, "seed {seed}: max relative error {err}");
        }
    }

    #[test]
    fn normalized_gradients_are_orthogonal() {
        let (net, batch) = setup(9);
        let (_, g) = mlp_gradient(&net, &batch).unwrap();
        for (layer, grad) in net.layers.iter().zip(&g) {
            if layer.normalized {
                assert!(orthogonality_score(grad, &layer.weights).unwrap() < 1e-6);
            }
        }
    }

    #[test]
    fn scaling_a_normalized_layer() {
        let (net, batch) = setup(10);
        let (loss, g) = mlp_gradient(&net, &batch).unwrap();
        for c in [0.5, 2.0, 10.0] {
            let mut scaled = net.clone();
            scaled.layers[0].weights.iter_mut().for_each(|w| *w *= c);
            let (loss_c, g_c) = mlp_gradient(&scaled, &batch).unwrap();
            assert!((loss_c - loss).abs() <= 1e-10 * loss);
            let ratio = l2_norm(&g_c[0]).unwrap() / l2_norm(&g[0]).unwrap();
            assert!((ratio - 1.0 / c).abs() <= 1e-10 / c, "c {c}: {ratio}");
        }
    }

    #[test]
    fn quadratic_net_matches_to_rounding() {
        // one linear layer, identity, no normalization: the loss is quadratic
        let mut rng = GaussianStream::new(4);
        let net = TinyMlp::new(&[3, 2], &[false], Activation::Identity, &mut rng).unwrap();
        let batch = Batch::random(7, 3, 2, &mut rng);
        let (_, a) = mlp_gradient(&net, &batch).unwrap();
        let f = finite_diff_gradient(&net, &batch, 1e-3).unwrap();
        let abs = a
            .iter()
            .flatten()
            .zip(f.iter().flatten())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        assert!(abs < 1e-10, "abs error {abs}");
    }

    #[test]
    fn halving_h_quarters_the_error() {
        let (net, batch) = setup(77);
        let (_, a) = mlp_gradient(&net, &batch).unwrap();
        let err = |h: f64| {
            let f = finite_diff_gradient(&net, &batch, h).unwrap();
            a.iter()
                .flatten()
                .zip(f.iter().flatten())
                .map(|(x, y)| (x - y).abs())
                .sum::<f64>()
        };
        let ratio = err(2e-2) / err(1e-2);
        assert!((2.0..=8.0).contains(&ratio), "error ratio {ratio}");
    }

    #[test]
    fn stationary_point_has_zero_gradient() {
        // targets equal outputs: every residual is zero
        let (net, mut batch) = setup(5);
        let mut targets = Vec::new();
        for i in 0..batch.n {
            targets.extend(forward_sample(&net, &batch.inputs[i * 6..(i + 1) * 6]).1);
        }
        batch.targets = targets;
        let f = finite_diff_gradient(&net, &batch, 1e-5).unwrap();
        assert!(f.iter().flatten().all(|v| v.abs() < 1e-8));
        let (_, a) = mlp_gradient(&net, &batch).unwrap();
        assert!(a.iter().flatten().all(|v| *v == 0.0));
    }

    #[test]
    fn same_seed_same_everything() {
        let (n1, b1) = setup(31);
        let (n2, b2) = setup(31);
        assert_eq!(n1, n2);
        assert_eq!(b1, b2);
        assert_eq!(
            mlp_gradient(&n1, &b1).unwrap(),
            mlp_gradient(&n2, &b2).unwrap()
        );
        let (_, g) = mlp_gradient(&n1, &b1).unwrap();
        assert!(dot(&g[0], &n1.layers[0].weights).abs() < 1e-8);
    }
}
