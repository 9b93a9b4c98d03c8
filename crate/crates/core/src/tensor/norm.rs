use super::reduce::{lane_dot, lane_sq_dev, lane_sum};
use super::tape::{OpKind, Saved, TapeNode};
use super::{Element, Tape, Tensor, TensorId};
use crate::error::{Error, Result};

pub const INSTANCE_NORM_EPS: f64 = 1e-5;

impl<F: Element> Tape<F> {
    /// Per-sample, per-channel standardization over H x W followed by a
    /// per-channel affine map.
    pub fn instance_norm(&mut self, x: TensorId, gain: TensorId, shift: TensorId, eps: f64) -> Result<TensorId> {
        let (tx, tg, ts) = (self.value(x), self.value(gain), self.value(shift));
        let &[n, c, h, w] = tx.shape() else {
            return Err(Error::dim(format!("instance_norm expects NCHW, got {:?}", tx.shape())));
        };
        if tg.shape() != [c] || ts.shape() != [c] {
            return Err(Error::dim(format!(
                "instance_norm: gain {:?} / shift {:?} must be [{c}]",
                tg.shape(),
                ts.shape()
            )));
        }
        let hw = h * w;
        if hw < 2 {
            return Err(Error::Degenerate("instance_norm over a single pixel".into()));
        }
        let inv_hw = F::one() / F::from_usize(hw).expect("count fits");
        let eps = F::from_f64_lossy(eps);
        let mut normalized = vec![F::zero(); tx.numel()];
        let mut inv_std = Vec::with_capacity(n * c);
        let mut out = vec![F::zero(); tx.numel()];
        let planes = tx.data().chunks_exact(hw).zip(normalized.chunks_exact_mut(hw)).zip(out.chunks_exact_mut(hw));
        for (i, ((plane, norm), dst)) in planes.enumerate() {
            let ch = i % c;
            let mean = lane_sum(plane) * inv_hw;
            let var = lane_sq_dev(plane, mean) * inv_hw;
            let is = F::one() / (var + eps).sqrt();
            inv_std.push(is);
            let (g, s) = (tg.data()[ch], ts.data()[ch]);
            for ((&v, xn), y) in plane.iter().zip(norm.iter_mut()).zip(dst.iter_mut()) {
                *xn = (v - mean) * is;
                *y = g * *xn + s;
            }
        }
        let out = Tensor::new(tx.shape().to_vec(), out)?;
        Ok(self.record(OpKind::InstanceNorm, &[x, gain, shift], out, || Saved::InstanceNorm {
            normalized,
            inv_std,
        }))
    }

    pub(crate) fn instance_norm_backward(&self, node: &TapeNode<F>, gout: &[F]) -> Vec<(TensorId, Vec<F>)> {
        let (x, gain, shift) = (node.inputs[0], node.inputs[1], node.inputs[2]);
        let Saved::InstanceNorm { normalized, inv_std } = &node.saved else {
            unreachable!("instance_norm node without saved state");
        };
        let shape = self.shape(x);
        let (c, hw) = (shape[1], shape[2] * shape[3]);
        let g_data = self.data(gain);
        let mut out = Vec::new();

        if self.requires_grad(x) {
            let inv_hw = F::one() / F::from_usize(hw).expect("count fits");
            let mut dx = vec![F::zero(); gout.len()];
            let planes = gout.chunks_exact(hw).zip(normalized.chunks_exact(hw)).zip(dx.chunks_exact_mut(hw));
            for (i, ((gp, xp), dst)) in planes.enumerate() {
                let g = g_data[i % c];
                let mean_d = lane_sum(gp) * g * inv_hw;
                let mean_dx = lane_dot(gp, xp) * g * inv_hw;
                let is = inv_std[i];
                for ((&go, &xn), d) in gp.iter().zip(xp).zip(dst.iter_mut()) {
                    *d = (go * g - mean_d - xn * mean_dx) * is;
                }
            }
            out.push((x, dx));
        }
        if self.requires_grad(gain) || self.requires_grad(shift) {
            let mut dg = vec![F::zero(); c];
            let mut ds = vec![F::zero(); c];
            for (i, (gp, xp)) in gout.chunks_exact(hw).zip(normalized.chunks_exact(hw)).enumerate() {
                let ch = i % c;
                dg[ch] = dg[ch] + lane_dot(gp, xp);
                ds[ch] = ds[ch] + lane_sum(gp);
            }
            if self.requires_grad(gain) {
                out.push((gain, dg));
            }
            if self.requires_grad(shift) {
                out.push((shift, ds));
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(values: &[f64], shape: Vec<usize>, gain: f64, shift: f64) -> Vec<f64> {
        let mut tape = Tape::new();
        let c = shape[1];
        let x = tape.constant(Tensor::from_f64(shape, values).unwrap());
        let g = tape.constant(Tensor::from_f64(vec![c], &vec![gain; c]).unwrap());
        let s = tape.constant(Tensor::from_f64(vec![c], &vec![shift; c]).unwrap());
        let y = tape.instance_norm(x, g, s, INSTANCE_NORM_EPS).unwrap();
        tape.data(y).to_vec()
    }

    #[test]
    fn constant_channel_maps_to_zero() {
        assert!(run(&[4.2; 9], vec![1, 1, 3, 3], 1.0, 0.0).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn two_pixel_channel() {
        // mean 0, biased variance 1
        let y = run(&[-1.0, 1.0], vec![1, 1, 1, 2], 1.0, 0.0);
        let s = 1.0 / (1.0 + INSTANCE_NORM_EPS).sqrt();
        assert!((y[0] + s).abs() < 1e-15 && (y[1] - s).abs() < 1e-15);
    }

    #[test]
    fn zero_gain_collapses_to_shift() {
        let y = run(&[0.1, 2.0, -3.0, 0.4], vec![1, 1, 2, 2], 0.0, 3.0);
        assert!(y.iter().all(|&v| v == 3.0));
    }

    #[test]
    fn single_pixel_is_degenerate() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::zeros(vec![2, 1, 1, 1]));
        let g = tape.constant(Tensor::zeros(vec![1]));
        let s = tape.constant(Tensor::zeros(vec![1]));
        assert!(matches!(tape.instance_norm(x, g, s, 1e-5), Err(Error::Degenerate(_))));
    }
}
