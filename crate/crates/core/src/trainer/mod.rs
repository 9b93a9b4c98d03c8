//! Training loops: joint alternation, the sequential and classifier-only
//! baselines, batch mixing, the learning-rate schedule, patient-wise
//! cross-validation and best-epoch selection.

mod config;
mod run;
mod sampler;
mod split;
mod step;

pub use config::{lr_schedule, ClassifierInput, TrainConfig, TrainMode};
pub use run::{
    best_epoch_index, derive_seed, evaluate_epoch, run_fold, select_best_by_val, train_classifier_only,
    train_sequential, EpochLog, FoldOutcome, Models, Pools, TAG_CLS_INIT, TAG_CLS_PHASE, TAG_GEN_INIT, TAG_GEN_PHASE,
    TAG_JOINT,
};
pub use sampler::{mixed_batch_sampler, plan_mixed, plan_single, BatchPlan, Pool, Slot};
pub use split::{kfold_split, FoldSplit};
pub use step::{classifier_step, classify, generator_l1_step, stack, train_step_joint, translate, unstack};
