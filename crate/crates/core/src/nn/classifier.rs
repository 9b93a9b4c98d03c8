use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::param::{push_conv, Parameter};
use super::{Forward, Network, ParamSet};
use crate::error::{Error, Result};
use crate::tensor::{Element, Tape, Tensor, TensorId};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ClassifierConfig {
    pub in_channels: usize,
    pub base_channels: usize,
    pub n_stages: usize,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            in_channels: 1,
            base_channels: 16,
            n_stages: 3,
        }
    }
}

impl ClassifierConfig {
    /// Channel width after stage `s`.
    fn width(&self, s: usize) -> usize {
        self.base_channels << s
    }
}

/// Small residual classifier: 3x3 stem, `n_stages` stride-2 residual
/// stages (projection shortcut), global average pool and a zero-initialized
/// affine map to a single logit. No normalization layers: per-sample
/// standardization would rescale an empty feature map into noise and hide
/// whether a detector fired at all.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierNet<F> {
    pub config: ClassifierConfig,
    pub params: ParamSet<F>,
}

impl<F: Element> ClassifierNet<F> {
    pub fn new(config: ClassifierConfig, seed: u64) -> Result<Self> {
        let ClassifierConfig { in_channels, base_channels: b, n_stages } = config;
        if b < 4 || n_stages < 1 || in_channels < 1 {
            return Err(Error::Config(format!(
                "classifier needs base_channels >= 4 and n_stages >= 1, got {config:?}"
            )));
        }
        let gain = std::f64::consts::SQRT_2;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamSet::new();
        push_conv(&mut p, &mut rng, "stem", in_channels, b, 3, gain);
        let mut cin = b;
        for s in 0..n_stages {
            let cout = config.width(s);
            let name = format!("stage{s}");
            push_conv(&mut p, &mut rng, &format!("{name}.conv1"), cin, cout, 3, gain);
            push_conv(&mut p, &mut rng, &format!("{name}.conv2"), cout, cout, 3, 1.0);
            push_conv(&mut p, &mut rng, &format!("{name}.shortcut"), cin, cout, 1, 1.0);
            cin = cout;
        }
        p.push(Parameter::new("fc.weight", Tensor::zeros(vec![1, cin])));
        p.push(Parameter::new("fc.bias", Tensor::zeros(vec![1])));
        Ok(ClassifierNet { config, params: p })
    }

    /// One raw logit per sample, shape (N, 1).
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
            return Err(Error::dim(format!("classifier input must be NCHW, got {shape:?}")));
        };
        if c != self.config.in_channels {
            return Err(Error::dim(format!(
                "classifier expects {} channel(s), got {c}",
                self.config.in_channels
            )));
        }
        let div = 1usize << self.config.n_stages;
        if h % div != 0 || w % div != 0 || h / div < 2 || w / div < 2 {
            return Err(Error::dim(format!(
                "classifier with {} stages needs H, W divisible by {div} (and >= {}), got {h}x{w}",
                self.config.n_stages,
                2 * div
            )));
        }
        let mut bound = if constants { self.params.bind_constants(tape) } else { self.params.bind(tape) };
        let b = &mut bound;
        let (wt, bias) = (b.take(), b.take());
        let stem = tape.conv2d(x, wt, bias, 1, 1)?;
        let mut y = tape.relu(stem)?;
        for _ in 0..self.config.n_stages {
            let (wt, bias) = (b.take(), b.take());
            let r = tape.conv2d(y, wt, bias, 2, 1)?;
            let r = tape.relu(r)?;
            let (wt, bias) = (b.take(), b.take());
            let r = tape.conv2d(r, wt, bias, 1, 1)?;
            let (sw, sb) = (b.take(), b.take());
            let skip = tape.conv2d(y, sw, sb, 2, 0)?;
            let sum = tape.add(skip, r)?;
            y = tape.relu(sum)?;
        }
        let pooled = tape.spatial_mean(y)?;
        let (fw, fb) = (b.take(), b.take());
        let output = tape.linear(pooled, fw, fb)?;
        bound.finish();
        Ok(Forward { output, bound })
    }
}

impl<F: Element> Network<F> for ClassifierNet<F> {
    fn params(&self) -> &ParamSet<F> {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamSet<F> {
        &mut self.params
    }
}
