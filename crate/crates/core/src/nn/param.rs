use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::{Element, Tape, Tensor, TensorId};

#[derive(Clone, Debug, PartialEq)]
pub struct Parameter<F> {
    pub name: String,
    pub value: Tensor<F>,
    pub frozen: bool,
    pub adam_m: Vec<F>,
    pub adam_v: Vec<F>,
    pub step_count: u64,
}

impl<F: Element> Parameter<F> {
    pub fn new(name: impl Into<String>, value: Tensor<F>) -> Self {
        let n = value.numel();
        Parameter {
            name: name.into(),
            value,
            frozen: false,
            adam_m: vec![F::zero(); n],
            adam_v: vec![F::zero(); n],
            step_count: 0,
        }
    }
}

/// Ordered parameter registry. Forward passes bind parameters to a tape in
/// registry order and consume the ids in that same order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet<F> {
    params: Vec<Parameter<F>>,
}

/// Tape ids for each parameter of a [`ParamSet`], in registry order.
#[derive(Clone, Debug)]
pub struct Bound {
    ids: Vec<TensorId>,
    next: usize,
}

impl Bound {
    pub fn ids(&self) -> &[TensorId] {
        &self.ids
    }

    pub(crate) fn take(&mut self) -> TensorId {
        let id = self.ids[self.next];
        self.next += 1;
        id
    }

    pub(crate) fn finish(&self) {
        debug_assert_eq!(self.next, self.ids.len(), "forward did not consume every parameter");
    }
}

impl<F: Element> ParamSet<F> {
    pub fn new() -> Self {
        ParamSet { params: Vec::new() }
    }

    pub fn push(&mut self, p: Parameter<F>) {
        self.params.push(p);
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Parameter<F>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> std::slice::IterMut<'_, Parameter<F>> {
        self.params.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&Parameter<F>> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Parameter<F>> {
        self.params.iter_mut().find(|p| p.name == name)
    }

    /// Total number of scalar weights.
    pub fn count(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    pub fn set_frozen(&mut self, frozen: bool) {
        self.params.iter_mut().for_each(|p| p.frozen = frozen);
    }

    pub fn is_frozen(&self) -> bool {
        self.params.iter().all(|p| p.frozen)
    }

    pub fn zero_grads(&mut self) {
        self.params.iter_mut().for_each(|p| p.value.zero_grad());
    }

    /// Registers every parameter on `tape`. Frozen parameters enter as
    /// constants: the ops that consume them are still recorded whenever
    /// another input needs a gradient, so gradients keep flowing through a
    /// frozen network to whatever lies upstream of it.
    pub fn bind(&self, tape: &mut Tape<F>) -> Bound {
        self.bind_where(tape, |p| !p.frozen)
    }

    /// Binds every parameter as a constant regardless of its flag.
    pub fn bind_constants(&self, tape: &mut Tape<F>) -> Bound {
        self.bind_where(tape, |_| false)
    }

    fn bind_where(&self, tape: &mut Tape<F>, trainable: impl Fn(&Parameter<F>) -> bool) -> Bound {
        let ids = self
            .params
            .iter()
            .map(|p| {
                let mut t = p.value.clone();
                t.zero_grad();
                tape.leaf(t.with_requires_grad(trainable(p)))
            })
            .collect();
        Bound { ids, next: 0 }
    }

    /// Adds the gradients computed on `tape` into the parameters' buffers.
    pub fn absorb_grads(&mut self, tape: &Tape<F>, bound: &Bound) -> Result<()> {
        if bound.ids.len() != self.params.len() {
            return Err(Error::contract("binding does not belong to this parameter set"));
        }
        for (p, &id) in self.params.iter_mut().zip(&bound.ids) {
            if let Some(g) = tape.grad(id) {
                p.value.accumulate_grad(g);
            }
        }
        Ok(())
    }

    /// Bytes of every parameter value in registry order; used to monitor
    /// that frozen networks stay untouched.
    pub fn fingerprint(&self) -> Vec<u64> {
        self.params
            .iter()
            .flat_map(|p| p.value.data().iter().map(|v| v.as_f64().to_bits()))
            .collect()
    }
}

pub(crate) fn normal_tensor<F: Element, R: Rng>(rng: &mut R, shape: Vec<usize>, std: f64) -> Tensor<F> {
    let n: usize = shape.iter().product();
    let dist = Normal::new(0.0, std).expect("positive std");
    let data = (0..n).map(|_| F::from_f64_lossy(dist.sample(rng))).collect();
    Tensor::new(shape, data).expect("shape matches buffer")
}

/// Conv weight with fan-in scaled normal init plus zero bias.
pub(crate) fn push_conv<F: Element, R: Rng>(
    set: &mut ParamSet<F>,
    rng: &mut R,
    name: &str,
    cin: usize,
    cout: usize,
    k: usize,
    gain: f64,
) {
    let std = gain / ((cin * k * k) as f64).sqrt();
    set.push(Parameter::new(format!("{name}.weight"), normal_tensor(rng, vec![cout, cin, k, k], std)));
    set.push(Parameter::new(format!("{name}.bias"), Tensor::zeros(vec![cout])));
}

pub(crate) fn push_norm<F: Element>(set: &mut ParamSet<F>, name: &str, c: usize) {
    set.push(Parameter::new(format!("{name}.gain"), Tensor::full(vec![c], F::one())));
    set.push(Parameter::new(format!("{name}.shift"), Tensor::zeros(vec![c])));
}
