//! Reductions split across independent accumulators so the compiler can
//! vectorize them. Summation order is fixed, so results are deterministic.

use super::Element;

const LANES: usize = 8;

pub(crate) fn lane_sum<F: Element>(v: &[F]) -> F {
    let mut acc = [F::zero(); LANES];
    let chunks = v.chunks_exact(LANES);
    let tail = chunks.remainder();
    for c in chunks {
        for (a, &x) in acc.iter_mut().zip(c) {
            *a = *a + x;
        }
    }
    let mut s = tail.iter().fold(F::zero(), |a, &b| a + b);
    for a in acc {
        s = s + a;
    }
    s
}

pub(crate) fn lane_dot<F: Element>(a: &[F], b: &[F]) -> F {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [F::zero(); LANES];
    let ca = a.chunks_exact(LANES);
    let cb = b.chunks_exact(LANES);
    let tail = ca.remainder().iter().zip(cb.remainder()).fold(F::zero(), |s, (&x, &y)| s + x * y);
    for (xa, xb) in ca.zip(cb) {
        for i in 0..LANES {
            acc[i] = acc[i] + xa[i] * xb[i];
        }
    }
    acc.iter().fold(tail, |s, &v| s + v)
}

/// Sum of squared deviations from `mean`.
pub(crate) fn lane_sq_dev<F: Element>(v: &[F], mean: F) -> F {
    let mut acc = [F::zero(); LANES];
    let chunks = v.chunks_exact(LANES);
    let tail = chunks.remainder().iter().fold(F::zero(), |s, &x| s + (x - mean) * (x - mean));
    for c in chunks {
        for (a, &x) in acc.iter_mut().zip(c) {
            *a = *a + (x - mean) * (x - mean);
        }
    }
    acc.iter().fold(tail, |s, &v| s + v)
}
