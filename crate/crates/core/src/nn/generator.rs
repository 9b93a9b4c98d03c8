use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::param::{push_conv, push_norm};
use super::{Bound, Forward, Network, ParamSet};
use crate::error::{Error, Result};
use crate::tensor::{Element, Tape, Tensor, TensorId, INSTANCE_NORM_EPS};

const RELU_GAIN: f64 = std::f64::consts::SQRT_2;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GeneratorConfig {
    pub in_channels: usize,
    pub base_channels: usize,
    pub n_blocks: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            in_channels: 1,
            base_channels: 16,
            n_blocks: 4,
        }
    }
}

/// Fully convolutional residual encoder-decoder:
/// 7x7 stem, two stride-2 stages, `n_blocks` residual blocks, two
/// upsample+conv stages and a 7x7 head with tanh. Output has the input's shape.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorNet<F> {
    pub config: GeneratorConfig,
    pub params: ParamSet<F>,
}

impl<F: Element> GeneratorNet<F> {
    pub fn new(config: GeneratorConfig, seed: u64) -> Result<Self> {
        let GeneratorConfig { in_channels, base_channels: b, n_blocks } = config;
        if b < 4 || n_blocks < 1 || in_channels < 1 {
            return Err(Error::Config(format!(
                "generator needs base_channels >= 4 and n_blocks >= 1, got {config:?}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamSet::new();
        push_conv(&mut p, &mut rng, "stem", in_channels, b, 7, RELU_GAIN);
        push_norm(&mut p, "stem.norm", b);
        push_conv(&mut p, &mut rng, "down1", b, 2 * b, 3, RELU_GAIN);
        push_norm(&mut p, "down1.norm", 2 * b);
        push_conv(&mut p, &mut rng, "down2", 2 * b, 4 * b, 3, RELU_GAIN);
        push_norm(&mut p, "down2.norm", 4 * b);
        for i in 0..n_blocks {
            let name = format!("block{i}");
            push_conv(&mut p, &mut rng, &format!("{name}.conv1"), 4 * b, 4 * b, 3, RELU_GAIN);
            push_norm(&mut p, &format!("{name}.norm1"), 4 * b);
            push_conv(&mut p, &mut rng, &format!("{name}.conv2"), 4 * b, 4 * b, 3, RELU_GAIN);
            push_norm(&mut p, &format!("{name}.norm2"), 4 * b);
        }
        push_conv(&mut p, &mut rng, "up1", 4 * b, 2 * b, 3, RELU_GAIN);
        push_norm(&mut p, "up1.norm", 2 * b);
        push_conv(&mut p, &mut rng, "up2", 2 * b, b, 3, RELU_GAIN);
        push_norm(&mut p, "up2.norm", b);
        push_conv(&mut p, &mut rng, "head", b, in_channels, 7, 1.0);
        Ok(GeneratorNet { config, params: p })
    }

    pub fn forward(&self, tape: &mut Tape<F>, x: TensorId) -> Result<Forward> {
        self.forward_with(tape, x, false)
    }

    /// Forward pass on a fresh tape with every parameter bound as a constant.
    pub fn infer(&self, x: &Tensor<F>) -> Result<Tensor<F>> {
        let mut tape = Tape::new();
        let xi = tape.constant(x.clone());
        let out = self.forward_with(&mut tape, xi, true)?.output;
        Ok(tape.value(out).clone())
    }

    fn forward_with(&self, tape: &mut Tape<F>, x: TensorId, constants: bool) -> Result<Forward> {
        let shape = tape.shape(x).to_vec();
        let &[_, c, h, w] = shape.as_slice() else {
            return Err(Error::dim(format!("generator input must be NCHW, got {shape:?}")));
        };
        if c != self.config.in_channels {
            return Err(Error::dim(format!(
                "generator expects {} channel(s), got {c}",
                self.config.in_channels
            )));
        }
        if h % 4 != 0 || w % 4 != 0 || h < 8 || w < 8 {
            return Err(Error::dim(format!("generator needs H, W divisible by 4 and >= 8, got {h}x{w}")));
        }
        let mut bound = if constants { self.params.bind_constants(tape) } else { self.params.bind(tape) };
        let b = &mut bound;

        let mut y = conv_norm_relu(tape, b, x, 1, 3)?;
        y = conv_norm_relu(tape, b, y, 2, 1)?;
        y = conv_norm_relu(tape, b, y, 2, 1)?;
        for _ in 0..self.config.n_blocks {
            let skip = y;
            let r = conv_norm_relu(tape, b, y, 1, 1)?;
            let (wt, bias, g, s) = (b.take(), b.take(), b.take(), b.take());
            let r = tape.conv2d(r, wt, bias, 1, 1)?;
            let r = tape.instance_norm(r, g, s, INSTANCE_NORM_EPS)?;
            y = tape.add(skip, r)?;
        }
        for _ in 0..2 {
            let u = tape.upsample_nearest(y, 2)?;
            y = conv_norm_relu(tape, b, u, 1, 1)?;
        }
        let (wt, bias) = (b.take(), b.take());
        let y = tape.conv2d(y, wt, bias, 1, 3)?;
        let output = tape.tanh(y)?;
        bound.finish();
        Ok(Forward { output, bound })
    }
}

/// conv -> instance norm -> relu, consuming four bound parameters.
pub(crate) fn conv_norm_relu<F: Element>(
    tape: &mut Tape<F>,
    b: &mut Bound,
    x: TensorId,
    stride: usize,
    pad: usize,
) -> Result<TensorId> {
    let (wt, bias, g, s) = (b.take(), b.take(), b.take(), b.take());
    let y = tape.conv2d(x, wt, bias, stride, pad)?;
    let y = tape.instance_norm(y, g, s, INSTANCE_NORM_EPS)?;
    tape.relu(y)
}

impl<F: Element> Network<F> for GeneratorNet<F> {
    fn params(&self) -> &ParamSet<F> {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamSet<F> {
        &mut self.params
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn small() -> GeneratorConfig {
        GeneratorConfig { in_channels: 1, base_channels: 4, n_blocks: 1 }
    }

    #[test]
    fn deterministic_in_seed() {
        let a = GeneratorNet::<f32>::new(small(), 7).unwrap();
        let b = GeneratorNet::<f32>::new(small(), 7).unwrap();
        assert_eq!(a.params.fingerprint(), b.params.fingerprint());
        let c = GeneratorNet::<f32>::new(small(), 8).unwrap();
        assert_ne!(a.params.fingerprint(), c.params.fingerprint());
    }

    #[test]
    fn parameter_count_closed_form() {
        let net = GeneratorNet::<f32>::new(GeneratorConfig::default(), 0).unwrap();
        let conv = |ci: usize, co: usize, k: usize| co * ci * k * k + co;
        let norm = |c: usize| 2 * c;
        let b = 16;
        let want = conv(1, b, 7) + norm(b)
            + conv(b, 2 * b, 3) + norm(2 * b)
            + conv(2 * b, 4 * b, 3) + norm(4 * b)
            + 4 * (2 * conv(4 * b, 4 * b, 3) + 2 * norm(4 * b))
            + conv(4 * b, 2 * b, 3) + norm(2 * b)
            + conv(2 * b, b, 3) + norm(b)
            + conv(b, 1, 7);
        assert_eq!(want, 344_577);
        assert_eq!(net.params.count(), want);
    }

    #[test]
    fn zero_image_gives_bounded_output_of_same_shape() {
        let net = GeneratorNet::<f32>::new(small(), 1).unwrap();
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros(vec![2, 1, 16, 16]));
        let out = net.forward(&mut tape, x).unwrap().output;
        assert_eq!(tape.shape(out), &[2, 1, 16, 16]);
        assert!(tape.data(out).iter().all(|v| v.is_finite() && (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn indivisible_spatial_dims_rejected() {
        let net = GeneratorNet::<f32>::new(small(), 1).unwrap();
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros(vec![1, 1, 18, 16]));
        assert!(matches!(net.forward(&mut tape, x), Err(Error::Dimension(_))));
    }

    #[test]
    fn shapes_independent_of_resolution() {
        let net = GeneratorNet::<f32>::new(small(), 1).unwrap();
        for size in [16, 32] {
            let mut tape = Tape::new();
            let x = tape.constant(Tensor::zeros(vec![1, 1, size, size]));
            let out = net.forward(&mut tape, x).unwrap().output;
            assert_eq!(tape.shape(out), &[1, 1, size, size]);
        }
    }
}
