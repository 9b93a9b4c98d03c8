use super::tape::{OpKind, Saved, TapeNode};
use super::reduce::{lane_dot, lane_sum};
use super::{Element, Tape, Tensor, TensorId};
use crate::error::{Error, Result};

fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let r = if i < 0 {
        -i
    } else if i >= n {
        2 * (n - 1) - i
    } else {
        i
    };
    r as usize
}

/// Geometry of one convolution call.
#[derive(Clone, Copy, Debug)]
struct Geom {
    c: usize,
    h: usize,
    w: usize,
    o: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl Geom {
    fn hp(&self) -> usize {
        self.h + 2 * self.pad
    }

    fn wp(&self) -> usize {
        self.w + 2 * self.pad
    }

    fn rows(&self) -> usize {
        self.c * self.k * self.k
    }

    fn pixels(&self) -> usize {
        self.ho * self.wo
    }

    /// Narrow stride-1 outputs skip im2col and accumulate shifted rows directly.
    fn direct(&self) -> bool {
        self.stride == 1 && self.o <= 2
    }
}

/// Reflection-pads every plane of one sample into `dst` (C x Hp x Wp).
fn pad_sample<F: Element>(g: &Geom, src: &[F], dst: &mut [F]) {
    let (hp, wp) = (g.hp(), g.wp());
    let cols: Vec<usize> = (0..wp).map(|x| reflect(x as isize - g.pad as isize, g.w)).collect();
    for c in 0..g.c {
        let plane = &src[c * g.h * g.w..(c + 1) * g.h * g.w];
        for y in 0..hp {
            let sy = reflect(y as isize - g.pad as isize, g.h);
            let srow = &plane[sy * g.w..(sy + 1) * g.w];
            let drow = &mut dst[(c * hp + y) * wp..(c * hp + y + 1) * wp];
            drow[g.pad..g.pad + g.w].copy_from_slice(srow);
            for x in (0..g.pad).chain(g.pad + g.w..wp) {
                drow[x] = srow[cols[x]];
            }
        }
    }
}

/// Adjoint of [`pad_sample`]: folds a padded gradient back onto the input.
fn unpad_sample_add<F: Element>(g: &Geom, src: &[F], dst: &mut [F]) {
    let (hp, wp) = (g.hp(), g.wp());
    for c in 0..g.c {
        let plane = &mut dst[c * g.h * g.w..(c + 1) * g.h * g.w];
        for y in 0..hp {
            let sy = reflect(y as isize - g.pad as isize, g.h);
            let prow = &src[(c * hp + y) * wp..(c * hp + y + 1) * wp];
            let drow = &mut plane[sy * g.w..(sy + 1) * g.w];
            for (d, &v) in drow.iter_mut().zip(&prow[g.pad..g.pad + g.w]) {
                *d = *d + v;
            }
            for x in (0..g.pad).chain(g.pad + g.w..wp) {
                let sx = reflect(x as isize - g.pad as isize, g.w);
                drow[sx] = drow[sx] + prow[x];
            }
        }
    }
}

fn im2col<F: Element>(g: &Geom, padded: &[F], col: &mut [F]) {
    let (hp, wp, k, s) = (g.hp(), g.wp(), g.k, g.stride);
    let mut r = 0;
    for c in 0..g.c {
        for ki in 0..k {
            for kj in 0..k {
                let row = &mut col[r * g.pixels()..(r + 1) * g.pixels()];
                for oy in 0..g.ho {
                    let base = (c * hp + oy * s + ki) * wp + kj;
                    let dst = &mut row[oy * g.wo..(oy + 1) * g.wo];
                    if s == 1 {
                        dst.copy_from_slice(&padded[base..base + g.wo]);
                    } else {
                        for (ox, d) in dst.iter_mut().enumerate() {
                            *d = padded[base + ox * s];
                        }
                    }
                }
                r += 1;
            }
        }
    }
}

fn col2im_add<F: Element>(g: &Geom, col: &[F], padded: &mut [F]) {
    let (hp, wp, k, s) = (g.hp(), g.wp(), g.k, g.stride);
    let mut r = 0;
    for c in 0..g.c {
        for ki in 0..k {
            for kj in 0..k {
                let row = &col[r * g.pixels()..(r + 1) * g.pixels()];
                for oy in 0..g.ho {
                    let base = (c * hp + oy * s + ki) * wp + kj;
                    let src = &row[oy * g.wo..(oy + 1) * g.wo];
                    if s == 1 {
                        for (d, &v) in padded[base..base + g.wo].iter_mut().zip(src) {
                            *d = *d + v;
                        }
                    } else {
                        for (ox, &v) in src.iter().enumerate() {
                            padded[base + ox * s] = padded[base + ox * s] + v;
                        }
                    }
                }
                r += 1;
            }
        }
    }
}

fn axpy<F: Element>(a: F, x: &[F], y: &mut [F]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi = *yi + a * xi;
    }
}

/// Direct stride-1 forward for one sample: `out` is O x Ho x Wo.
fn direct_forward<F: Element>(g: &Geom, padded: &[F], weight: &[F], out: &mut [F]) {
    let (hp, wp, k) = (g.hp(), g.wp(), g.k);
    for o in 0..g.o {
        let plane = &mut out[o * g.pixels()..(o + 1) * g.pixels()];
        for c in 0..g.c {
            for ki in 0..k {
                for kj in 0..k {
                    let wv = weight[((o * g.c + c) * k + ki) * k + kj];
                    for oy in 0..g.ho {
                        let base = (c * hp + oy + ki) * wp + kj;
                        axpy(wv, &padded[base..base + g.wo], &mut plane[oy * g.wo..(oy + 1) * g.wo]);
                    }
                }
            }
        }
    }
}

impl<F: Element> Tape<F> {
    /// Cross-correlation of an NCHW input with an OIKK kernel, using
    /// reflection padding of `pad` pixels on every side.
    pub fn conv2d(
        &mut self,
        x: TensorId,
        weight: TensorId,
        bias: TensorId,
        stride: usize,
        pad: usize,
    ) -> Result<TensorId> {
        let (tx, tw, tb) = (self.value(x), self.value(weight), self.value(bias));
        let &[n, c, h, w] = tx.shape() else {
            return Err(Error::dim(format!("conv2d input must be NCHW, got {:?}", tx.shape())));
        };
        let &[o, ci, k, k2] = tw.shape() else {
            return Err(Error::dim(format!("conv2d weight must be OIKK, got {:?}", tw.shape())));
        };
        if ci != c {
            return Err(Error::dim(format!("conv2d: input has {c} channels, weight expects {ci}")));
        }
        if k != k2 {
            return Err(Error::dim(format!("conv2d: non-square kernel {k}x{k2}")));
        }
        if tb.shape() != [o] {
            return Err(Error::dim(format!("conv2d: bias shape {:?}, expected [{o}]", tb.shape())));
        }
        if stride == 0 {
            return Err(Error::dim("conv2d: stride must be positive"));
        }
        if pad >= h || pad >= w {
            return Err(Error::dim(format!("conv2d: reflect pad {pad} needs spatial dims > {pad}, got {h}x{w}")));
        }
        if h + 2 * pad < k || w + 2 * pad < k {
            return Err(Error::dim(format!("conv2d: padded input {}x{} smaller than kernel {k}", h + 2 * pad, w + 2 * pad)));
        }
        let ho = (h + 2 * pad - k) / stride + 1;
        let wo = (w + 2 * pad - k) / stride + 1;
        let g = Geom { c, h, w, o, k, stride, pad, ho, wo };
        let (rows, pixels) = (g.rows(), g.pixels());
        let padded_len = c * g.hp() * g.wp();
        let keep = tw.requires_grad();

        let mut out = vec![F::zero(); n * o * pixels];
        let mut padded = vec![F::zero(); padded_len];
        // direct mode keeps padded inputs, gemm mode keeps im2col buffers
        let mut saved = Vec::new();
        if keep {
            saved.reserve(n * if g.direct() { padded_len } else { rows * pixels });
        }
        let mut col = if g.direct() { Vec::new() } else { vec![F::zero(); rows * pixels] };
        for s in 0..n {
            let sample = &tx.data()[s * c * h * w..(s + 1) * c * h * w];
            pad_sample(&g, sample, &mut padded);
            let dst = &mut out[s * o * pixels..(s + 1) * o * pixels];
            for (plane, &bv) in dst.chunks_exact_mut(pixels).zip(tb.data()) {
                plane.fill(bv);
            }
            if g.direct() {
                direct_forward(&g, &padded, tw.data(), dst);
                if keep {
                    saved.extend_from_slice(&padded);
                }
            } else {
                im2col(&g, &padded, &mut col);
                F::gemm(o, rows, pixels, tw.data(), false, &col, false, dst, true);
                if keep {
                    saved.extend_from_slice(&col);
                }
            }
        }

        let out = Tensor::new(vec![n, o, ho, wo], out)?;
        Ok(self.record(OpKind::Conv2d, &[x, weight, bias], out, || Saved::Conv {
            stride,
            pad,
            cols: keep.then_some(saved),
        }))
    }

    /// Nearest-neighbour upsampling: every pixel becomes a `factor x factor` block.
    pub fn upsample_nearest(&mut self, x: TensorId, factor: usize) -> Result<TensorId> {
        let tx = self.value(x);
        let &[n, c, h, w] = tx.shape() else {
            return Err(Error::dim(format!("upsample expects NCHW, got {:?}", tx.shape())));
        };
        if factor == 0 {
            return Err(Error::dim("upsample factor must be >= 1"));
        }
        let (oh, ow) = (h * factor, w * factor);
        let mut out = Vec::with_capacity(n * c * oh * ow);
        for plane in tx.data().chunks_exact(h * w) {
            for y in 0..oh {
                let row = &plane[(y / factor) * w..(y / factor + 1) * w];
                for x in 0..ow {
                    out.push(row[x / factor]);
                }
            }
        }
        let out = Tensor::new(vec![n, c, oh, ow], out)?;
        Ok(self.record(OpKind::UpsampleNearest, &[x], out, || Saved::Upsample { factor }))
    }

    pub(crate) fn conv2d_backward(&self, node: &TapeNode<F>, gout: &[F]) -> Vec<(TensorId, Vec<F>)> {
        let (x, weight, bias) = (node.inputs[0], node.inputs[1], node.inputs[2]);
        let Saved::Conv { stride, pad, cols } = &node.saved else {
            unreachable!("conv node without saved state");
        };
        let (tx, tw) = (self.value(x), self.value(weight));
        let (n, c, h, w) = (tx.shape()[0], tx.shape()[1], tx.shape()[2], tx.shape()[3]);
        let (o, k) = (tw.shape()[0], tw.shape()[2]);
        let (ho, wo) = (self.shape(node.output)[2], self.shape(node.output)[3]);
        let g = Geom { c, h, w, o, k, stride: *stride, pad: *pad, ho, wo };
        let (rows, pixels) = (g.rows(), g.pixels());
        let padded_len = c * g.hp() * g.wp();
        let (hp, wp) = (g.hp(), g.wp());
        let mut out = Vec::new();

        if tx.requires_grad() {
            let mut dx = vec![F::zero(); tx.numel()];
            let mut dpad = vec![F::zero(); padded_len];
            let mut dcol = if g.direct() { Vec::new() } else { vec![F::zero(); rows * pixels] };
            for s in 0..n {
                let gs = &gout[s * o * pixels..(s + 1) * o * pixels];
                dpad.fill(F::zero());
                if g.direct() {
                    for oc in 0..o {
                        let gplane = &gs[oc * pixels..(oc + 1) * pixels];
                        for ch in 0..c {
                            for ki in 0..k {
                                for kj in 0..k {
                                    let wv = tw.data()[((oc * c + ch) * k + ki) * k + kj];
                                    for oy in 0..ho {
                                        let base = (ch * hp + oy + ki) * wp + kj;
                                        axpy(wv, &gplane[oy * wo..(oy + 1) * wo], &mut dpad[base..base + wo]);
                                    }
                                }
                            }
                        }
                    }
                } else {
                    F::gemm(rows, o, pixels, tw.data(), true, gs, false, &mut dcol, false);
                    col2im_add(&g, &dcol, &mut dpad);
                }
                unpad_sample_add(&g, &dpad, &mut dx[s * c * h * w..(s + 1) * c * h * w]);
            }
            out.push((x, dx));
        }
        if tw.requires_grad() {
            let saved = cols.as_ref().expect("buffers saved when weight requires grad");
            let mut dw = vec![F::zero(); tw.numel()];
            for s in 0..n {
                let gs = &gout[s * o * pixels..(s + 1) * o * pixels];
                if g.direct() {
                    let padded = &saved[s * padded_len..(s + 1) * padded_len];
                    for oc in 0..o {
                        let gplane = &gs[oc * pixels..(oc + 1) * pixels];
                        for ch in 0..c {
                            for ki in 0..k {
                                for kj in 0..k {
                                    let mut acc = F::zero();
                                    for oy in 0..ho {
                                        let base = (ch * hp + oy + ki) * wp + kj;
                                        acc = acc + lane_dot(&gplane[oy * wo..(oy + 1) * wo], &padded[base..base + wo]);
                                    }
                                    let i = ((oc * c + ch) * k + ki) * k + kj;
                                    dw[i] = dw[i] + acc;
                                }
                            }
                        }
                    }
                } else {
                    let col = &saved[s * rows * pixels..(s + 1) * rows * pixels];
                    F::gemm(o, pixels, rows, gs, false, col, true, &mut dw, true);
                }
            }
            out.push((weight, dw));
        }
        if self.requires_grad(bias) {
            let mut db = vec![F::zero(); o];
            for sample in gout.chunks_exact(o * pixels) {
                for (d, plane) in db.iter_mut().zip(sample.chunks_exact(pixels)) {
                    *d = *d + lane_sum(plane);
                }
            }
            out.push((bias, db));
        }
        out
    }

    pub(crate) fn upsample_backward(&self, node: &TapeNode<F>, gout: &[F]) -> Vec<(TensorId, Vec<F>)> {
        let x = node.inputs[0];
        let Saved::Upsample { factor } = node.saved else {
            unreachable!("upsample node without factor");
        };
        if !self.requires_grad(x) {
            return Vec::new();
        }
        let shape = self.shape(x);
        let (h, w) = (shape[2], shape[3]);
        let (oh, ow) = (h * factor, w * factor);
        let mut dx = vec![F::zero(); self.value(x).numel()];
        for (dplane, gplane) in dx.chunks_exact_mut(h * w).zip(gout.chunks_exact(oh * ow)) {
            for y in 0..oh {
                for xx in 0..ow {
                    let i = (y / factor) * w + xx / factor;
                    dplane[i] = dplane[i] + gplane[y * ow + xx];
                }
            }
        }
        vec![(x, dx)]
    }
}
