use super::tape::{OpKind, Saved, TapeNode};
use super::{Element, Tape, Tensor, TensorId};
use crate::error::{Error, Result};

/// Floor applied before taking a logarithm.
pub const LOG_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ElementwiseKind {
    Add,
    Sub,
    Mul,
    Neg,
    Abs,
    Log,
    Clamp { min: f64, max: f64 },
}

impl ElementwiseKind {
    fn is_binary(self) -> bool {
        matches!(self, Self::Add | Self::Sub | Self::Mul)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Activation {
    Relu,
    LeakyRelu(f64),
    Tanh,
    Sigmoid,
}

pub(crate) fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

use super::reduce::lane_sum as sum;

impl<F: Element> Tape<F> {
    /// Generic entry point for element-by-element arithmetic.
    pub fn elementwise(
        &mut self,
        kind: ElementwiseKind,
        a: TensorId,
        b: Option<TensorId>,
    ) -> Result<TensorId> {
        match (kind.is_binary(), b) {
            (true, Some(b)) => self.binary(kind, a, b),
            (true, None) => Err(Error::Arity(format!("{kind:?} needs two operands"))),
            (false, None) => self.unary(kind, a),
            (false, Some(_)) => Err(Error::Arity(format!("{kind:?} takes one operand"))),
        }
    }

    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.binary(ElementwiseKind::Add, a, b)
    }

    pub fn sub(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.binary(ElementwiseKind::Sub, a, b)
    }

    pub fn mul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.binary(ElementwiseKind::Mul, a, b)
    }

    pub fn neg(&mut self, a: TensorId) -> Result<TensorId> {
        self.unary(ElementwiseKind::Neg, a)
    }

    pub fn abs(&mut self, a: TensorId) -> Result<TensorId> {
        self.unary(ElementwiseKind::Abs, a)
    }

    pub fn log(&mut self, a: TensorId) -> Result<TensorId> {
        self.unary(ElementwiseKind::Log, a)
    }

    pub fn clamp(&mut self, a: TensorId, min: f64, max: f64) -> Result<TensorId> {
        self.unary(ElementwiseKind::Clamp { min, max }, a)
    }

    fn binary(&mut self, kind: ElementwiseKind, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (ta, tb) = (self.value(a), self.value(b));
        let shape = if ta.shape() == tb.shape() || tb.is_scalar_like() {
            ta.shape().to_vec()
        } else if ta.is_scalar_like() {
            tb.shape().to_vec()
        } else {
            return Err(Error::dim(format!(
                "{kind:?}: shapes {:?} and {:?} are not broadcast-compatible",
                ta.shape(),
                tb.shape()
            )));
        };
        let op: fn(F, F) -> F = match kind {
            ElementwiseKind::Add => |x, y| x + y,
            ElementwiseKind::Sub => |x, y| x - y,
            _ => |x, y| x * y,
        };
        let n: usize = shape.iter().product();
        let (da, db) = (ta.data(), tb.data());
        let data: Vec<F> = if da.len() == db.len() {
            da.iter().zip(db).map(|(&x, &y)| op(x, y)).collect()
        } else if db.len() == 1 {
            da.iter().map(|&x| op(x, db[0])).collect()
        } else {
            db.iter().map(|&y| op(da[0], y)).collect()
        };
        debug_assert_eq!(data.len(), n);
        let op_kind = match kind {
            ElementwiseKind::Add => OpKind::Add,
            ElementwiseKind::Sub => OpKind::Sub,
            _ => OpKind::Mul,
        };
        let out = Tensor::new(shape, data)?;
        Ok(self.record(op_kind, &[a, b], out, || Saved::None))
    }

    fn unary(&mut self, kind: ElementwiseKind, a: TensorId) -> Result<TensorId> {
        let x = self.value(a);
        let (op_kind, data, saved): (OpKind, Vec<F>, Saved<F>) = match kind {
            ElementwiseKind::Neg => (OpKind::Neg, x.data().iter().map(|&v| -v).collect(), Saved::None),
            ElementwiseKind::Abs => (OpKind::Abs, x.data().iter().map(|v| v.abs()).collect(), Saved::None),
            ElementwiseKind::Log => {
                let floor = F::from_f64_lossy(LOG_FLOOR);
                (
                    OpKind::Log,
                    x.data().iter().map(|&v| v.max(floor).ln()).collect(),
                    Saved::None,
                )
            }
            ElementwiseKind::Clamp { min, max } => {
                if min > max {
                    return Err(Error::contract(format!("clamp bounds {min} > {max}")));
                }
                let (lo, hi) = (F::from_f64_lossy(min), F::from_f64_lossy(max));
                (
                    OpKind::Clamp,
                    x.data().iter().map(|&v| v.max(lo).min(hi)).collect(),
                    Saved::Clamp { min, max },
                )
            }
            _ => unreachable!("binary kinds handled by `binary`"),
        };
        let out = Tensor::new(x.shape().to_vec(), data)?;
        Ok(self.record(op_kind, &[a], out, || saved))
    }

    pub fn activation(&mut self, kind: Activation, a: TensorId) -> Result<TensorId> {
        let x = self.value(a);
        let zero = F::zero();
        let (op_kind, data, saved): (OpKind, Vec<F>, Saved<F>) = match kind {
            Activation::Relu => (OpKind::Relu, x.data().iter().map(|&v| v.max(zero)).collect(), Saved::None),
            Activation::LeakyRelu(slope) => {
                let s = F::from_f64_lossy(slope);
                (
                    OpKind::LeakyRelu,
                    x.data().iter().map(|&v| if v > zero { v } else { v * s }).collect(),
                    Saved::LeakyRelu { slope },
                )
            }
            Activation::Tanh => (OpKind::Tanh, x.data().iter().map(|v| v.tanh()).collect(), Saved::None),
            Activation::Sigmoid => (
                OpKind::Sigmoid,
                x.data()
                    .iter()
                    .map(|&v| F::from_f64_lossy(sigmoid(v.as_f64())))
                    .collect(),
                Saved::None,
            ),
        };
        let out = Tensor::new(x.shape().to_vec(), data)?;
        Ok(self.record(op_kind, &[a], out, || saved))
    }

    pub fn relu(&mut self, a: TensorId) -> Result<TensorId> {
        self.activation(Activation::Relu, a)
    }

    pub fn tanh(&mut self, a: TensorId) -> Result<TensorId> {
        self.activation(Activation::Tanh, a)
    }

    pub fn sigmoid(&mut self, a: TensorId) -> Result<TensorId> {
        self.activation(Activation::Sigmoid, a)
    }

    /// Arithmetic mean of all elements, as a rank-0 tensor.
    pub fn reduce_mean(&mut self, a: TensorId) -> Result<TensorId> {
        let x = self.value(a);
        if x.numel() == 0 {
            return Err(Error::Degenerate("mean of an empty tensor".into()));
        }
        let n = F::from_usize(x.numel()).expect("count fits");
        let out = Tensor::scalar(sum(x.data()) / n);
        Ok(self.record(OpKind::Mean, &[a], out, || Saved::None))
    }

    /// Mean over the spatial axes of an NCHW tensor, giving (N, C).
    pub fn spatial_mean(&mut self, a: TensorId) -> Result<TensorId> {
        let x = self.value(a);
        let &[n, c, h, w] = x.shape() else {
            return Err(Error::dim(format!("spatial_mean expects NCHW, got {:?}", x.shape())));
        };
        let hw = h * w;
        let inv = F::one() / F::from_usize(hw).expect("count fits");
        let data: Vec<F> = x.data().chunks_exact(hw).map(|p| sum(p) * inv).collect();
        let out = Tensor::new(vec![n, c], data)?;
        Ok(self.record(OpKind::SpatialMean, &[a], out, || Saved::None))
    }

    /// Affine map `x W^T + b` with `x: (N, In)`, `W: (Out, In)`, `b: (Out)`.
    pub fn linear(&mut self, x: TensorId, w: TensorId, b: TensorId) -> Result<TensorId> {
        let (tx, tw, tb) = (self.value(x), self.value(w), self.value(b));
        let (&[n, fin], &[fout, win], &[bout]) = (tx.shape(), tw.shape(), tb.shape()) else {
            return Err(Error::dim("linear expects x (N,In), W (Out,In), b (Out)"));
        };
        if fin != win || bout != fout {
            return Err(Error::dim(format!(
                "linear: x {:?}, W {:?}, b {:?}",
                tx.shape(),
                tw.shape(),
                tb.shape()
            )));
        }
        let mut data = vec![F::zero(); n * fout];
        for row in data.chunks_exact_mut(fout) {
            row.copy_from_slice(tb.data());
        }
        F::gemm(n, fin, fout, tx.data(), false, tw.data(), true, &mut data, true);
        let out = Tensor::new(vec![n, fout], data)?;
        Ok(self.record(OpKind::Linear, &[x, w, b], out, || Saved::None))
    }

    /// Mean binary cross-entropy of `logits` (N or N x 1) against 0/1 labels,
    /// computed from the logit in a stable form with the implied probability
    /// clamped to `[1e-12, 1 - 1e-12]`.
    pub fn bce_with_logits(&mut self, logits: TensorId, labels: &[f64]) -> Result<TensorId> {
        let x = self.value(logits);
        if x.numel() != labels.len() {
            return Err(Error::dim(format!(
                "{} logits for {} labels",
                x.numel(),
                labels.len()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&z| z != 0.0 && z != 1.0) {
            return Err(Error::contract(format!("label {bad} is not in {{0, 1}}")));
        }
        if labels.is_empty() {
            return Err(Error::Degenerate("bce over an empty batch".into()));
        }
        let max_loss = -(LOG_FLOOR.ln());
        let min_loss = -((1.0 - LOG_FLOOR).ln());
        let mut active = Vec::with_capacity(labels.len());
        let mut total = 0.0;
        for (&l, &z) in x.data().iter().zip(labels) {
            let l = l.as_f64();
            // -log(sigma(l)) for z=1, -log(1 - sigma(l)) for z=0
            let raw = l.max(0.0) - l * z + (-l.abs()).exp().ln_1p();
            let clamped = raw.clamp(min_loss, max_loss);
            active.push(clamped == raw);
            total += clamped;
        }
        let out = Tensor::scalar(F::from_f64_lossy(total / labels.len() as f64));
        let labels = labels.to_vec();
        Ok(self.record(OpKind::BceWithLogits, &[logits], out, || Saved::Bce { labels, active }))
    }

    // ----- backward rules -------------------------------------------------

    pub(crate) fn binary_backward(&self, node: &TapeNode<F>, gout: &[F]) -> Vec<(TensorId, Vec<F>)> {
        let (a, b) = (node.inputs[0], node.inputs[1]);
        let (ta, tb) = (self.value(a), self.value(b));
        let n = gout.len();
        let expand = |t: &Tensor<F>, i: usize| if t.numel() == 1 { t.data()[0] } else { t.data()[i] };
        let reduce_to = |t: &Tensor<F>, g: Vec<F>| if t.numel() == 1 && n != 1 { vec![sum(&g)] } else { g };
        let mut out = Vec::with_capacity(2);
        if ta.requires_grad() {
            let g: Vec<F> = match node.op {
                OpKind::Add | OpKind::Sub => gout.to_vec(),
                _ => (0..n).map(|i| gout[i] * expand(tb, i)).collect(),
            };
            out.push((a, reduce_to(ta, g)));
        }
        if tb.requires_grad() {
            let g: Vec<F> = match node.op {
                OpKind::Add => gout.to_vec(),
                OpKind::Sub => gout.iter().map(|&g| -g).collect(),
                _ => (0..n).map(|i| gout[i] * expand(ta, i)).collect(),
            };
            out.push((b, reduce_to(tb, g)));
        }
        out
    }

    pub(crate) fn unary_backward(&self, node: &TapeNode<F>, gout: &[F]) -> Vec<(TensorId, Vec<F>)> {
        let a = node.inputs[0];
        if !self.requires_grad(a) {
            return Vec::new();
        }
        let x = self.data(a);
        let y = self.data(node.output);
        let zero = F::zero();
        let one = F::one();
        let g: Vec<F> = match (&node.op, &node.saved) {
            (OpKind::Neg, _) => gout.iter().map(|&g| -g).collect(),
            (OpKind::Abs, _) => gout
                .iter()
                .zip(x)
                .map(|(&g, &v)| if v > zero { g } else if v < zero { -g } else { zero })
                .collect(),
            (OpKind::Log, _) => {
                let floor = F::from_f64_lossy(LOG_FLOOR);
                gout.iter()
                    .zip(x)
                    .map(|(&g, &v)| if v > floor { g / v } else { zero })
                    .collect()
            }
            (OpKind::Clamp, Saved::Clamp { min, max }) => {
                let (lo, hi) = (F::from_f64_lossy(*min), F::from_f64_lossy(*max));
                gout.iter()
                    .zip(x)
                    .map(|(&g, &v)| if v >= lo && v <= hi { g } else { zero })
                    .collect()
            }
            (OpKind::Relu, _) => gout
                .iter()
                .zip(x)
                .map(|(&g, &v)| if v > zero { g } else { zero })
                .collect(),
            (OpKind::LeakyRelu, Saved::LeakyRelu { slope }) => {
                let s = F::from_f64_lossy(*slope);
                gout.iter()
                    .zip(x)
                    .map(|(&g, &v)| if v > zero { g } else { g * s })
                    .collect()
            }
            (OpKind::Tanh, _) => gout.iter().zip(y).map(|(&g, &t)| g * (one - t * t)).collect(),
            (OpKind::Sigmoid, _) => gout.iter().zip(y).map(|(&g, &s)| g * s * (one - s)).collect(),
            (op, saved) => unreachable!("unary backward for {op:?} with {saved:?}"),
        };
        vec![(a, g)]
    }

    pub(crate) fn mean_backward(&self, node: &TapeNode<F>, gout: &[F]) -> Vec<(TensorId, Vec<F>)> {
        let a = node.inputs[0];
        if !self.requires_grad(a) {
            return Vec::new();
        }
        let n = self.value(a).numel();
        let g = gout[0] / F::from_usize(n).expect("count fits");
        vec![(a, vec![g; n])]
    }

    pub(crate) fn spatial_mean_backward(&self, node: &TapeNode<F>, gout: &[F]) -> Vec<(TensorId, Vec<F>)> {
        let a = node.inputs[0];
        if !self.requires_grad(a) {
            return Vec::new();
        }
        let shape = self.shape(a);
        let hw = shape[2] * shape[3];
        let inv = F::one() / F::from_usize(hw).expect("count fits");
        let g = gout.iter().flat_map(|&g| std::iter::repeat_n(g * inv, hw)).collect();
        vec![(a, g)]
    }

    pub(crate) fn linear_backward(&self, node: &TapeNode<F>, gout: &[F]) -> Vec<(TensorId, Vec<F>)> {
        let (x, w, b) = (node.inputs[0], node.inputs[1], node.inputs[2]);
        let (tx, tw) = (self.value(x), self.value(w));
        let (n, fin) = (tx.shape()[0], tx.shape()[1]);
        let fout = tw.shape()[0];
        let mut out = Vec::new();
        if tx.requires_grad() {
            let mut g = vec![F::zero(); n * fin];
            F::gemm(n, fout, fin, gout, false, tw.data(), false, &mut g, false);
            out.push((x, g));
        }
        if tw.requires_grad() {
            let mut g = vec![F::zero(); fout * fin];
            F::gemm(fout, n, fin, gout, true, tx.data(), false, &mut g, false);
            out.push((w, g));
        }
        if self.requires_grad(b) {
            let mut g = vec![F::zero(); fout];
            for row in gout.chunks_exact(fout) {
                g.iter_mut().zip(row).for_each(|(a, &r)| *a = *a + r);
            }
            out.push((b, g));
        }
        out
    }

    pub(crate) fn bce_backward(&self, node: &TapeNode<F>, gout: &[F]) -> Vec<(TensorId, Vec<F>)> {
        let a = node.inputs[0];
        let Saved::Bce { labels, active } = &node.saved else {
            unreachable!("bce node without saved labels");
        };
        if !self.requires_grad(a) {
            return Vec::new();
        }
        let scale = gout[0].as_f64() / labels.len() as f64;
        let g = self
            .data(a)
            .iter()
            .zip(labels.iter().zip(active))
            .map(|(&l, (&z, &on))| {
                if on {
                    F::from_f64_lossy((sigmoid(l.as_f64()) - z) * scale)
                } else {
                    F::zero()
                }
            })
            .collect();
        vec![(a, g)]
    }
}
