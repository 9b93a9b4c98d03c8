//! Central-difference gradient checking.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Activation, Tape, Tensor, TensorId, INSTANCE_NORM_EPS};
use crate::error::Result;
use crate::losses::{bce_loss, combined_loss, l1_loss};

/// Max over coordinates of `|analytic - numeric| / (|analytic| + |numeric| + 1e-12)`
/// for a scalar function built on a fresh tape from `point`.
pub fn grad_check<G>(f: G, point: &Tensor<f64>, h: f64) -> Result<f64>
where
    G: Fn(&mut Tape<f64>, TensorId) -> Result<TensorId>,
{
    let eval = |p: &Tensor<f64>| -> Result<f64> {
        let mut tape = Tape::new();
        let x = tape.constant(p.clone());
        let y = f(&mut tape, x)?;
        tape.value(y).item()
    };

    let mut tape = Tape::new();
    let x = tape.leaf(point.clone().with_requires_grad(true));
    let y = f(&mut tape, x)?;
    tape.backward(y)?;
    let analytic = tape.grad(x).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; point.numel()]);

    let mut worst: f64 = 0.0;
    let mut probe = point.clone();
    for (i, &a) in analytic.iter().enumerate() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let up = eval(&probe)?;
        probe.data_mut()[i] = orig - h;
        let down = eval(&probe)?;
        probe.data_mut()[i] = orig;
        let numeric = (up - down) / (2.0 * h);
        worst = worst.max((a - numeric).abs() / (a.abs() + numeric.abs() + 1e-12));
    }
    Ok(worst)
}

type ScalarFn = Box<dyn Fn(&mut Tape<f64>, TensorId) -> Result<TensorId>>;

/// A named scalar function and the point to check it at.
pub struct GradCase {
    pub name: String,
    pub point: Tensor<f64>,
    pub f: ScalarFn,
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let v: Vec<f64> = (0..n).map(|_| rng.random_range(lo..hi)).collect();
    Tensor::from_f64(shape.to_vec(), &v).expect("sized")
}

/// Values with magnitude in `[lo, hi]` and random sign, to stay off kinks at 0.
fn off_zero(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let mut t = uniform(rng, shape, lo, hi);
    for v in t.data_mut() {
        if rng.random::<bool>() {
            *v = -*v;
        }
    }
    t
}

/// `mean(y * r)` for a fixed pseudo-random `r`, so every output element
/// carries a distinct weight.
fn weighted_mean(tape: &mut Tape<f64>, y: TensorId) -> Result<TensorId> {
    let shape = tape.shape(y).to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(0xC0FFEE ^ shape.iter().product::<usize>() as u64);
    let r = tape.constant(uniform(&mut rng, &shape, 0.5, 1.5));
    let p = tape.mul(y, r)?;
    tape.reduce_mean(p)
}

fn case(name: impl Into<String>, point: Tensor<f64>, f: impl Fn(&mut Tape<f64>, TensorId) -> Result<TensorId> + 'static) -> GradCase {
    GradCase { name: name.into(), point, f: Box::new(f) }
}

/// Every differentiable operation and loss, each at a smooth random point
/// and with respect to each of its differentiable inputs.
pub fn op_cases(seed: u64) -> Vec<GradCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let img = [2usize, 2, 5, 5];
    let mut cases = Vec::new();

    let c = uniform(&mut rng, &img, -1.0, 1.0);
    for (name, kind) in [("add", 0), ("sub", 1), ("mul", 2)] {
        for swap in [false, true] {
            let other = c.clone();
            let point = uniform(&mut rng, &img, -1.0, 1.0);
            cases.push(case(format!("{name}[{}]", if swap { "rhs" } else { "lhs" }), point, move |t, x| {
                let k = t.constant(other.clone());
                let (a, b) = if swap { (k, x) } else { (x, k) };
                let y = match kind {
                    0 => t.add(a, b)?,
                    1 => t.sub(a, b)?,
                    _ => t.mul(a, b)?,
                };
                weighted_mean(t, y)
            }));
        }
    }
    cases.push(case("mul[self]", uniform(&mut rng, &img, -1.0, 1.0), |t, x| {
        let y = t.mul(x, x)?;
        weighted_mean(t, y)
    }));
    let k = uniform(&mut rng, &img, -1.0, 1.0);
    cases.push(case("mul[scalar lhs]", uniform(&mut rng, &[], -1.0, 1.0), move |t, x| {
        let kk = t.constant(k.clone());
        let y = t.mul(x, kk)?;
        weighted_mean(t, y)
    }));
    cases.push(case("add[scalar rhs]", uniform(&mut rng, &[1], -1.0, 1.0), |t, x| {
        let big = t.constant(Tensor::full(vec![2, 3], 0.3));
        let y = t.add(big, x)?;
        let y = t.mul(y, y)?;
        weighted_mean(t, y)
    }));
    cases.push(case("neg", uniform(&mut rng, &img, -1.0, 1.0), |t, x| {
        let y = t.neg(x)?;
        weighted_mean(t, y)
    }));
    cases.push(case("abs", off_zero(&mut rng, &img, 0.05, 1.0), |t, x| {
        let y = t.abs(x)?;
        weighted_mean(t, y)
    }));
    cases.push(case("log", uniform(&mut rng, &img, 0.2, 2.0), |t, x| {
        let y = t.log(x)?;
        weighted_mean(t, y)
    }));
    let mut clamp_point = off_zero(&mut rng, &img, 0.0, 0.3);
    for v in clamp_point.data_mut() {
        // keep at least 0.1 away from both bounds at +-0.5
        *v = if v.abs() < 0.15 { *v * 2.0 } else { v.signum() * (0.65 + v.abs()) };
    }
    cases.push(case("clamp", clamp_point, |t, x| {
        let y = t.clamp(x, -0.5, 0.5)?;
        weighted_mean(t, y)
    }));
    for (name, act) in [
        ("relu", Activation::Relu),
        ("leaky_relu", Activation::LeakyRelu(0.2)),
        ("tanh", Activation::Tanh),
        ("sigmoid", Activation::Sigmoid),
    ] {
        cases.push(case(name, off_zero(&mut rng, &img, 0.05, 2.0), move |t, x| {
            let y = t.activation(act, x)?;
            weighted_mean(t, y)
        }));
    }
    cases.push(case("reduce_mean", uniform(&mut rng, &img, -1.0, 1.0), |t, x| {
        let y = t.mul(x, x)?;
        t.reduce_mean(y)
    }));
    cases.push(case("spatial_mean", uniform(&mut rng, &img, -1.0, 1.0), |t, x| {
        let y = t.spatial_mean(x)?;
        let y = t.mul(y, y)?;
        weighted_mean(t, y)
    }));

    let (lx, lw, lb) = (uniform(&mut rng, &[3, 4], -1.0, 1.0), uniform(&mut rng, &[2, 4], -1.0, 1.0), uniform(&mut rng, &[2], -1.0, 1.0));
    for which in 0..3 {
        let (x0, w0, b0) = (lx.clone(), lw.clone(), lb.clone());
        let point = [&lx, &lw, &lb][which].clone();
        cases.push(case(format!("linear[{}]", ["x", "W", "b"][which]), point, move |t, p| {
            let mut ids = [t.constant(x0.clone()), t.constant(w0.clone()), t.constant(b0.clone())];
            ids[which] = p;
            let y = t.linear(ids[0], ids[1], ids[2])?;
            let y = t.mul(y, y)?;
            weighted_mean(t, y)
        }));
    }

    // (in channels, out channels, kernel, stride, pad)
    for (ci, co, k, stride, pad) in [(2, 3, 3, 1, 1), (2, 3, 3, 2, 1), (2, 1, 7, 1, 3), (2, 2, 1, 2, 0), (2, 3, 2, 1, 0)] {
        let size = if k == 7 { 6 } else { 5 };
        let x = uniform(&mut rng, &[2, ci, size, size], -1.0, 1.0);
        let w = uniform(&mut rng, &[co, ci, k, k], -0.5, 0.5);
        let b = uniform(&mut rng, &[co], -0.5, 0.5);
        for which in 0..3 {
            let (x0, w0, b0) = (x.clone(), w.clone(), b.clone());
            let point = [&x, &w, &b][which].clone();
            let name = format!("conv2d k{k} s{stride} p{pad} o{co}[{}]", ["input", "weight", "bias"][which]);
            cases.push(case(name, point, move |t, p| {
                let mut ids = [t.constant(x0.clone()), t.constant(w0.clone()), t.constant(b0.clone())];
                ids[which] = p;
                let y = t.conv2d(ids[0], ids[1], ids[2], stride, pad)?;
                let y = t.mul(y, y)?;
                weighted_mean(t, y)
            }));
        }
    }
    for factor in [2, 3] {
        cases.push(case(format!("upsample_nearest x{factor}"), uniform(&mut rng, &[2, 2, 3, 3], -1.0, 1.0), move |t, x| {
            let y = t.upsample_nearest(x, factor)?;
            let y = t.mul(y, y)?;
            weighted_mean(t, y)
        }));
    }

    let (nx, ng, ns) = (uniform(&mut rng, &img, -1.0, 1.0), uniform(&mut rng, &[2], 0.5, 1.5), uniform(&mut rng, &[2], -0.5, 0.5));
    for which in 0..3 {
        let (x0, g0, s0) = (nx.clone(), ng.clone(), ns.clone());
        let point = [&nx, &ng, &ns][which].clone();
        cases.push(case(format!("instance_norm[{}]", ["input", "gain", "shift"][which]), point, move |t, p| {
            let mut ids = [t.constant(x0.clone()), t.constant(g0.clone()), t.constant(s0.clone())];
            ids[which] = p;
            let y = t.instance_norm(ids[0], ids[1], ids[2], INSTANCE_NORM_EPS)?;
            weighted_mean(t, y)
        }));
    }

    let labels = vec![1.0, 0.0, 1.0, 0.0, 0.0, 1.0];
    let l2 = labels.clone();
    cases.push(case("bce_with_logits", uniform(&mut rng, &[6, 1], -6.0, 6.0), move |t, x| t.bce_with_logits(x, &l2)));

    let target = uniform(&mut rng, &img, -1.0, 1.0);
    let mut pred = off_zero(&mut rng, &img, 0.05, 0.5);
    for (p, y) in pred.data_mut().iter_mut().zip(target.data()) {
        *p += y;
    }
    let tg = target.clone();
    cases.push(case("l1_loss", pred.clone(), move |t, x| {
        let y = t.constant(tg.clone());
        l1_loss(t, x, y)
    }));
    let l3 = labels.clone();
    cases.push(case("bce_loss", uniform(&mut rng, &[6, 1], -4.0, 4.0), move |t, x| bce_loss(t, x, &l3)));
    let logits = uniform(&mut rng, &[6, 1], -4.0, 4.0);
    for which in 0..2 {
        let (p0, t0, lg0, lb0) = (pred.clone(), target.clone(), logits.clone(), labels.clone());
        let point = if which == 0 { pred.clone() } else { logits.clone() };
        cases.push(case(format!("combined_loss[{}]", ["generator output", "logits"][which]), point, move |t, p| {
            let (out, lg) = if which == 0 { (p, t.constant(lg0.clone())) } else { (t.constant(p0.clone()), p) };
            let y = t.constant(t0.clone());
            Ok(combined_loss(t, Some((out, y)), Some((lg, &lb0)))?.total)
        }));
    }
    cases
}

/// Runs [`op_cases`] and reports the worst relative error per case.
pub fn op_suite(seed: u64, h: f64) -> Result<Vec<(String, f64)>> {
    op_cases(seed)
        .into_iter()
        .map(|c| Ok((c.name, grad_check(&c.f, &c.point, h)?)))
        .collect()
}
