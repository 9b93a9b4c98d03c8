//! Generator and classifier networks, their parameter registry and Adam.

mod adam;
mod classifier;
mod generator;
mod param;

pub use adam::{adam_step, AdamConfig};
pub use classifier::{ClassifierConfig, ClassifierNet};
pub use generator::{GeneratorConfig, GeneratorNet};
pub use param::{Bound, ParamSet, Parameter};

use crate::tensor::{Element, TensorId};

/// Output of a forward pass plus the tape ids its parameters were bound to.
#[derive(Debug, Clone)]
pub struct Forward {
    pub output: TensorId,
    pub bound: Bound,
}

/// Anything owning a [`ParamSet`].
pub trait Network<F: Element> {
    fn params(&self) -> &ParamSet<F>;
    fn params_mut(&mut self) -> &mut ParamSet<F>;

    fn set_frozen(&mut self, frozen: bool) {
        self.params_mut().set_frozen(frozen);
    }
}

/// Marks every parameter of `net` as frozen (or trainable).
pub fn set_frozen<F: Element, N: Network<F>>(net: &mut N, frozen: bool) {
    net.set_frozen(frozen);
}
