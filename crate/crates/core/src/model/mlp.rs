use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Initialization scheme for network weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NetInit {
    /// Weights uniform in ±sqrt(6 / (fan_in + fan_out)), biases zero.
    #[default]
    GlorotUniform,
    /// All zeros. Hidden units then receive zero gradients forever, so the
    /// network can only learn its output bias.
    Zeros,
}

/// Fully connected network with tanh hidden layers and a linear output layer.
///
/// Parameters are stored layer by layer, each as the row-major weight matrix
/// (`n_out × n_in`) followed by the bias vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub layer_sizes: Vec<usize>,
    /// The raw input is divided by this before the first layer.
    #[serde(default = "unit_scale")]
    pub input_scale: f64,
}

fn unit_scale() -> f64 {
    1.0
}

impl Default for MlpSpec {
    fn default() -> Self {
        Self {
            layer_sizes: vec![1, 6, 6, 1],
            input_scale: 1.0,
        }
    }
}

impl MlpSpec {
    pub fn with_input_scale(mut self, scale: f64) -> Self {
        self.input_scale = scale;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_sizes.len() < 2 || self.layer_sizes.contains(&0) {
            return Err(Error::Config(format!(
                "network needs at least input and output layers of positive width, got {:?}",
                self.layer_sizes
            )));
        }
        if !(self.input_scale.is_finite() && self.input_scale != 0.0) {
            return Err(Error::Config("network input scale must be finite and non-zero".into()));
        }
        Ok(())
    }

    pub fn n_inputs(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn n_outputs(&self) -> usize {
        *self.layer_sizes.last().expect("validated spec")
    }

    pub fn n_params(&self) -> usize {
        self.layer_sizes
            .windows(2)
            .map(|w| w[0] * w[1] + w[1])
            .sum()
    }

    pub fn init(&self, seed: u64, scheme: NetInit) -> Vec<f64> {
        let mut theta = vec![0.0; self.n_params()];
        if scheme == NetInit::Zeros {
            return theta;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut offset = 0;
        for w in self.layer_sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let limit = glorot_limit(fan_in, fan_out);
            for v in &mut theta[offset..offset + fan_in * fan_out] {
                *v = rng.random_range(-limit..=limit);
            }
            offset += fan_in * fan_out + fan_out;
        }
        theta
    }

    fn check(&self, theta: &[f64], input: &[f64]) -> Result<()> {
        Error::check_len("network parameters", self.n_params(), theta.len())?;
        Error::check_len("network input", self.n_inputs(), input.len())
    }

    fn offsets(&self) -> usize {
        self.layer_sizes.iter().sum()
    }

    /// Feed-forward pass writing every layer's post-activation values into
    /// `acts`, laid out layer after layer (the scaled input first).
    fn activations_into(&self, theta: &[f64], input: &[f64], acts: &mut [f64]) {
        let n_layers = self.layer_sizes.len();
        for (a, x) in acts.iter_mut().zip(input) {
            *a = x / self.input_scale;
        }
        let mut offset = 0;
        let mut start = 0;
        for (l, w) in self.layer_sizes.windows(2).enumerate() {
            let (n_in, n_out) = (w[0], w[1]);
            let weights = &theta[offset..offset + n_in * n_out];
            let bias = &theta[offset + n_in * n_out..offset + n_in * n_out + n_out];
            let (done, rest) = acts.split_at_mut(start + n_in);
            let prev = &done[start..];
            let hidden = l + 2 < n_layers;
            for (o, out) in rest[..n_out].iter_mut().enumerate() {
                let row = &weights[o * n_in..(o + 1) * n_in];
                let mut z = bias[o];
                for (a, b) in row.iter().zip(prev) {
                    z += a * b;
                }
                *out = if hidden { tanh(z) } else { z };
            }
            offset += n_in * n_out + n_out;
            start += n_in;
        }
    }

    pub fn forward(&self, theta: &[f64], input: &[f64]) -> Result<Vec<f64>> {
        self.check(theta, input)?;
        let mut acts = vec![0.0; self.offsets()];
        self.activations_into(theta, input, &mut acts);
        Ok(acts[acts.len() - self.n_outputs()..].to_vec())
    }

    /// Scalar-in, scalar-out evaluation.
    pub fn forward_scalar(&self, theta: &[f64], input: f64) -> Result<f64> {
        self.check(theta, &[input])?;
        let total = self.offsets();
        if total <= STACK_ACTS {
            let mut acts = [0.0; STACK_ACTS];
            self.activations_into(theta, &[input], &mut acts[..total]);
            Ok(acts[total - 1])
        } else {
            Ok(self.forward(theta, &[input])?[0])
        }
    }

    /// Vector-Jacobian product. Accumulates `upstreamᵀ ∂out/∂θ` into
    /// `grad_theta` and returns the output together with `upstreamᵀ ∂out/∂input`.
    pub fn vjp(
        &self,
        theta: &[f64],
        input: &[f64],
        upstream: &[f64],
        grad_theta: &mut [f64],
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check(theta, input)?;
        Error::check_len("network cotangent", self.n_outputs(), upstream.len())?;
        Error::check_len("network gradient", self.n_params(), grad_theta.len())?;
        let total = self.offsets();
        let width = *self.layer_sizes.iter().max().expect("validated spec");
        let mut buf = vec![0.0; total + 2 * width];
        self.backprop(theta, input, upstream, grad_theta, &mut buf);
        let out = buf[total - self.n_outputs()..total].to_vec();
        let grad_input = buf[total..total + self.n_inputs()].to_vec();
        Ok((out, grad_input))
    }

    /// [`vjp`](Self::vjp) for scalar networks, returning (output, d/d input).
    pub fn vjp_scalar(&self, theta: &[f64], input: f64, upstream: f64, grad_theta: &mut [f64]) -> Result<(f64, f64)> {
        self.check(theta, &[input])?;
        Error::check_len("network cotangent", self.n_outputs(), 1)?;
        Error::check_len("network gradient", self.n_params(), grad_theta.len())?;
        let total = self.offsets();
        let width = *self.layer_sizes.iter().max().expect("validated spec");
        let need = total + 2 * width;
        if need <= STACK_ACTS {
            let mut buf = [0.0; STACK_ACTS];
            self.backprop(theta, &[input], &[upstream], grad_theta, &mut buf[..need]);
            Ok((buf[total - 1], buf[total]))
        } else {
            let (out, din) = self.vjp(theta, &[input], &[upstream], grad_theta)?;
            Ok((out[0], din[0]))
        }
    }

    /// Forward and backward pass in `buf` (activations, then two delta
    /// buffers of the widest layer). On return the input cotangent sits at
    /// the start of the delta area.
    fn backprop(&self, theta: &[f64], input: &[f64], upstream: &[f64], grad_theta: &mut [f64], buf: &mut [f64]) {
        let total = self.offsets();
        let width = *self.layer_sizes.iter().max().expect("validated spec");
        let (acts, deltas) = buf.split_at_mut(total);
        let (first, second) = deltas.split_at_mut(width);
        let (mut delta, mut back) = (first, &mut second[..width]);
        self.activations_into(theta, input, acts);
        delta[..upstream.len()].copy_from_slice(upstream);
        let mut offset = self.n_params();
        let mut start = total - self.n_outputs();
        let mut swapped = false;
        for l in (0..self.layer_sizes.len() - 1).rev() {
            let (n_in, n_out) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
            offset -= n_in * n_out + n_out;
            start -= n_in;
            let prev = &acts[start..start + n_in];
            let weights = &theta[offset..offset + n_in * n_out];
            let (gw, gb) = grad_theta[offset..offset + n_in * n_out + n_out].split_at_mut(n_in * n_out);
            let back_in = &mut back[..n_in];
            back_in.iter_mut().for_each(|b| *b = 0.0);
            for (o, &d) in delta[..n_out].iter().enumerate() {
                gb[o] += d;
                let row = &weights[o * n_in..(o + 1) * n_in];
                let grow = &mut gw[o * n_in..(o + 1) * n_in];
                for ((g, b), (&w, &p)) in grow.iter_mut().zip(back_in.iter_mut()).zip(row.iter().zip(prev)) {
                    *g += d * p;
                    *b += w * d;
                }
            }
            if l > 0 {
                for (b, a) in back_in.iter_mut().zip(prev) {
                    *b *= 1.0 - a * a;
                }
            }
            std::mem::swap(&mut delta, &mut back);
            swapped = !swapped;
        }
        let n_in = self.n_inputs();
        for d in &mut delta[..n_in] {
            *d /= self.input_scale;
        }
        if swapped {
            back[..n_in].copy_from_slice(&delta[..n_in]);
        }
    }
}

/// tanh through a single exp; absolute error stays at rounding level and
/// it is about twice as fast as the libm routine.
#[inline]
fn tanh(z: f64) -> f64 {
    1.0 - 2.0 / ((2.0 * z).exp() + 1.0)
}

/// Networks whose layers fit in this many activations evaluate on the stack.
const STACK_ACTS: usize = 128;

pub fn glorot_limit(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn count_formula(sizes: &[usize]) -> usize {
        let mut n = 0;
        for i in 0..sizes.len() - 1 {
            n += sizes[i] * sizes[i + 1] + sizes[i + 1];
        }
        n
    }

    #[test]
    fn default_parameter_count() {
        let spec = MlpSpec::default();
        assert_eq!(spec.n_params(), 61);
        assert_eq!(spec.n_params(), count_formula(&[1, 6, 6, 1]));
        let zeros = spec.init(3, NetInit::Zeros);
        assert_eq!(zeros.len(), 61);
        assert!(zeros.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn glorot_bounds_and_zero_bias() {
        let spec = MlpSpec::default();
        let theta = spec.init(7, NetInit::GlorotUniform);
        assert!((glorot_limit(6, 6) - 0.707_106_781).abs() < 1e-8);
        // layer 2 (6→6) weights start after 1·6 + 6 entries
        let w2 = &theta[12..48];
        assert!(w2.iter().all(|w| w.abs() <= 0.5f64.sqrt()));
        assert!(w2.iter().any(|w| *w != 0.0));
        assert!(theta[48..54].iter().all(|&b| b == 0.0));
        assert!(theta[6..12].iter().all(|&b| b == 0.0));
        assert_eq!(theta, spec.init(7, NetInit::GlorotUniform));
        assert_ne!(theta, spec.init(8, NetInit::GlorotUniform));
    }

    #[test]
    fn hand_evaluated_single_layer() {
        let spec = MlpSpec {
            layer_sizes: vec![1, 1],
            input_scale: 1.0,
        };
        assert_eq!(spec.forward_scalar(&[2.0, 0.5], 1.0).unwrap(), 2.5);
    }

    #[test]
    fn zero_network_and_output_bias() {
        let spec = MlpSpec::default();
        let mut theta = spec.init(1, NetInit::GlorotUniform);
        assert_eq!(spec.forward_scalar(&vec![0.0; 61], 3.7).unwrap(), 0.0);
        // zero output weights: output equals output bias exactly
        for w in &mut theta[54..60] {
            *w = 0.0;
        }
        theta[60] = -0.37;
        assert_eq!(spec.forward_scalar(&theta, 12.0).unwrap(), -0.37);
    }

    #[test]
    fn length_mismatch() {
        let spec = MlpSpec::default();
        assert!(matches!(
            spec.forward_scalar(&[0.0; 60], 1.0),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn vjp_matches_directional_finite_differences() {
        let spec = MlpSpec::default().with_input_scale(130.0);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for trial in 0..10 {
            let theta: Vec<f64> = (0..61).map(|_| rng.random_range(-1.0..1.0)).collect();
            let dir: Vec<f64> = (0..61).map(|_| rng.random_range(-1.0..1.0)).collect();
            let x = 13.0 * trial as f64;
            let mut g = vec![0.0; 61];
            let (_, gin) = spec.vjp(&theta, &[x], &[1.0], &mut g).unwrap();
            let h = 1e-6;
            let shifted = |s: f64| {
                let t: Vec<f64> = theta.iter().zip(&dir).map(|(a, d)| a + s * d).collect();
                spec.forward_scalar(&t, x).unwrap()
            };
            let fd = (shifted(h) - shifted(-h)) / (2.0 * h);
            let analytic: f64 = g.iter().zip(&dir).map(|(a, b)| a * b).sum();
            assert!((fd - analytic).abs() <= 1e-6 * analytic.abs().max(1e-3), "{fd} vs {analytic}");
            let fdx = (spec.forward_scalar(&theta, x + 1e-4).unwrap()
                - spec.forward_scalar(&theta, x - 1e-4).unwrap())
                / 2e-4;
            assert!((fdx - gin[0]).abs() <= 1e-6 * gin[0].abs().max(1e-3));
        }
    }
}
