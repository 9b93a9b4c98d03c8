//! Joint training of a polyenergetic-to-monoenergetic CT translator and a
//! lesion classifier operating on its output.
//!
//! The crate is self-contained: a small reverse-mode tensor library
//! ([`tensor`]), the networks and optimizer ([`nn`]), a synthetic dual-energy
//! phantom ([`phantom`]), losses and image/classification metrics
//! ([`losses`], [`metrics`]), the training loops ([`trainer`]) and the file
//! formats shared with the command line tool ([`io`]).

pub mod error;
pub mod io;
pub mod losses;
pub mod metrics;
pub mod nn;
pub mod phantom;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use losses::LossBreakdown;
pub use metrics::MetricsReport;
pub use nn::{AdamConfig, ClassifierNet, GeneratorNet, Parameter};
pub use phantom::{PhantomSpec, SampleRecord};
pub use tensor::{Tape, Tensor, TensorId};
pub use trainer::{FoldSplit, TrainConfig, TrainMode};

