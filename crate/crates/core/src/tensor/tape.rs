use super::{Element, Tensor};
use crate::error::{Error, Result};

/// Handle to a tensor owned by a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TensorId(pub(crate) usize);

impl TensorId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OpKind {
    Add,
    Sub,
    Mul,
    Neg,
    Abs,
    Log,
    Clamp,
    Conv2d,
    UpsampleNearest,
    Relu,
    LeakyRelu,
    Tanh,
    Sigmoid,
    InstanceNorm,
    Mean,
    SpatialMean,
    Linear,
    BceWithLogits,
}

/// Operation-specific values cached for the backward pass.
#[derive(Debug)]
pub(crate) enum Saved<F> {
    None,
    Clamp {
        min: f64,
        max: f64,
    },
    LeakyRelu {
        slope: f64,
    },
    Conv {
        stride: usize,
        pad: usize,
        /// Per-sample im2col buffers (or padded inputs on the direct path),
        /// kept only when the weight needs a gradient.
        cols: Option<Vec<F>>,
    },
    Upsample {
        factor: usize,
    },
    InstanceNorm {
        normalized: Vec<F>,
        inv_std: Vec<F>,
    },
    Bce {
        labels: Vec<f64>,
        /// Per-sample flag: false where the probability clamp is active.
        active: Vec<bool>,
    },
}

#[derive(Debug)]
pub struct TapeNode<F> {
    pub op: OpKind,
    pub inputs: Vec<TensorId>,
    pub output: TensorId,
    pub(crate) saved: Saved<F>,
}

/// Single-owner computation graph for one forward/backward pass.
#[derive(Debug, Default)]
pub struct Tape<F> {
    pub(crate) values: Vec<Tensor<F>>,
    pub(crate) nodes: Vec<TapeNode<F>>,
}

impl<F: Element> Tape<F> {
    pub fn new() -> Self {
        Tape {
            values: Vec::new(),
            nodes: Vec::new(),
        }
    }

    /// Registers an externally created tensor (input, target or parameter).
    pub fn leaf(&mut self, tensor: Tensor<F>) -> TensorId {
        self.values.push(tensor);
        TensorId(self.values.len() - 1)
    }

    pub fn constant(&mut self, tensor: Tensor<F>) -> TensorId {
        self.leaf(tensor.with_requires_grad(false))
    }

    pub fn scalar(&mut self, v: f64) -> TensorId {
        self.constant(Tensor::scalar(F::from_f64_lossy(v)))
    }

    pub fn value(&self, id: TensorId) -> &Tensor<F> {
        &self.values[id.0]
    }

    pub fn shape(&self, id: TensorId) -> &[usize] {
        self.values[id.0].shape()
    }

    pub fn data(&self, id: TensorId) -> &[F] {
        self.values[id.0].data()
    }

    pub fn grad(&self, id: TensorId) -> Option<&[F]> {
        self.values[id.0].grad()
    }

    pub fn requires_grad(&self, id: TensorId) -> bool {
        self.values[id.0].requires_grad()
    }

    pub fn nodes(&self) -> &[TapeNode<F>] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn zero_grads(&mut self) {
        self.values.iter_mut().for_each(Tensor::zero_grad);
    }

    /// Stores `out` and, if any input requires a gradient, records the node.
    pub(crate) fn record(
        &mut self,
        op: OpKind,
        inputs: &[TensorId],
        out: Tensor<F>,
        saved: impl FnOnce() -> Saved<F>,
    ) -> TensorId {
        let needs_grad = inputs.iter().any(|&i| self.requires_grad(i));
        let id = self.leaf(out.with_requires_grad(needs_grad));
        if needs_grad {
            self.nodes.push(TapeNode {
                op,
                inputs: inputs.to_vec(),
                output: id,
                saved: saved(),
            });
        }
        id
    }

    /// Reverse sweep from a scalar loss. Gradients are summed into the
    /// `grad` buffer of every tensor that requires one.
    pub fn backward(&mut self, loss: TensorId) -> Result<()> {
        if self.values[loss.0].numel() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<F>>> = Vec::new();
        grads.resize_with(self.values.len(), || None);
        grads[loss.0] = Some(vec![F::one()]);

        for node in self.nodes.iter().rev() {
            let Some(gout) = grads[node.output.0].take() else {
                continue;
            };
            for (input, g) in self.node_backward(node, &gout) {
                match &mut grads[input.0] {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, &b)| *a = *a + b),
                    slot @ None => *slot = Some(g),
                }
            }
            grads[node.output.0] = Some(gout);
        }

        for (value, g) in self.values.iter_mut().zip(grads) {
            if !value.requires_grad() {
                continue;
            }
            match g {
                Some(g) => value.accumulate_grad_owned(g),
                None if value.grad().is_none() => {
                    value.accumulate_grad(&vec![F::zero(); value.numel()])
                }
                None => {}
            }
        }
        Ok(())
    }

    fn node_backward(&self, node: &TapeNode<F>, gout: &[F]) -> Vec<(TensorId, Vec<F>)> {
        use OpKind::*;
        match node.op {
            Add | Sub | Mul => self.binary_backward(node, gout),
            Neg | Abs | Log | Clamp | Relu | LeakyRelu | Tanh | Sigmoid => {
                self.unary_backward(node, gout)
            }
            Conv2d => self.conv2d_backward(node, gout),
            UpsampleNearest => self.upsample_backward(node, gout),
            InstanceNorm => self.instance_norm_backward(node, gout),
            Mean => self.mean_backward(node, gout),
            SpatialMean => self.spatial_mean_backward(node, gout),
            Linear => self.linear_backward(node, gout),
            BceWithLogits => self.bce_backward(node, gout),
        }
    }
}
