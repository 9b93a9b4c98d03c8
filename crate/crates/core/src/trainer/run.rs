use std::collections::HashSet;

use super::sampler::{mixed_batch_sampler, plan_mixed, plan_single, Pool};
use super::step::{classifier_step, classify, generator_l1_step, stack, train_step_joint, translate, unstack};
use super::{lr_schedule, ClassifierInput, FoldSplit, TrainConfig, TrainMode};
use crate::error::{Error, Result};
use crate::losses::LossBreakdown;
use crate::metrics::{aggregate, auroc, psnr, ssim, MetricsReport};
use crate::nn::{ClassifierNet, GeneratorNet, Network};
use crate::phantom::SampleRecord;
use crate::tensor::Tensor;

const EVAL_CHUNK: usize = 16;

/// Purpose tags mixed into [`derive_seed`].
pub const TAG_GEN_INIT: u64 = 1;
pub const TAG_CLS_INIT: u64 = 2;
pub const TAG_JOINT: u64 = 3;
pub const TAG_GEN_PHASE: u64 = 4;
pub const TAG_CLS_PHASE: u64 = 5;

/// Mixes a base seed with a purpose tag and indices into an independent seed.
pub fn derive_seed(base: u64, tag: u64, fold: usize, epoch: usize) -> u64 {
    let mut z = base;
    for part in [tag, fold as u64, epoch as u64] {
        z = (z ^ part).wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
    }
    z
}

/// The trained state of one run. `generator` is absent in classifier-only mode.
#[derive(Clone, Debug, PartialEq)]
pub struct Models {
    pub generator: Option<GeneratorNet<f32>>,
    pub classifier: ClassifierNet<f32>,
}

impl Models {
    pub fn init(cfg: &TrainConfig, fold: usize) -> Result<Self> {
        let generator = if cfg.mode.uses_generator() {
            Some(GeneratorNet::new(cfg.generator, derive_seed(cfg.seed, TAG_GEN_INIT, fold, 0))?)
        } else {
            None
        };
        let classifier = ClassifierNet::new(cfg.classifier, derive_seed(cfg.seed, TAG_CLS_INIT, fold, 0))?;
        Ok(Models { generator, classifier })
    }

    /// Generator used in front of the classifier, if the config routes through one.
    fn translator(&self, cfg: &TrainConfig) -> Option<&GeneratorNet<f32>> {
        match cfg.classifier_input {
            ClassifierInput::Generated => self.generator.as_ref(),
            ClassifierInput::Poly => None,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Pools<'a> {
    pub paired: &'a [SampleRecord],
    pub labeled: &'a [SampleRecord],
    pub eval: Option<&'a [SampleRecord]>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    /// 1-based; sequential runs keep counting through the classifier phase.
    pub epoch: usize,
    pub train: LossBreakdown,
    pub val: Option<MetricsReport>,
}

#[derive(Clone, Debug)]
pub struct FoldOutcome {
    pub fold: usize,
    pub epochs: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best: Models,
    pub test: MetricsReport,
    pub eval: Option<MetricsReport>,
}

/// Classifier inputs computed once, for pools whose translator is fixed.
struct Prepared {
    inputs: Vec<Tensor<f32>>,
    labels: Vec<f64>,
}

fn prepare(records: &[&SampleRecord], translator: Option<&GeneratorNet<f32>>) -> Result<Prepared> {
    let mut inputs = Vec::with_capacity(records.len());
    let mut labels = Vec::with_capacity(records.len());
    for chunk in records.chunks(EVAL_CHUNK) {
        let x = stack(chunk.iter().map(|r| &r.poly))?;
        let x = match translator {
            Some(g) => translate(g, &x)?,
            None => x,
        };
        inputs.extend(unstack(&x));
        for r in chunk {
            let z = r.label.ok_or_else(|| Error::contract(format!("patient {} has no label", r.patient_id)))?;
            labels.push(f64::from(z));
        }
    }
    Ok(Prepared { inputs, labels })
}

fn prepared_auroc(cls: &ClassifierNet<f32>, p: &Prepared) -> std::result::Result<f64, String> {
    let mut scores = Vec::with_capacity(p.inputs.len());
    for chunk in p.inputs.chunks(EVAL_CHUNK) {
        let x = stack(chunk.iter()).map_err(|e| e.to_string())?;
        scores.extend(classify(cls, &x).map_err(|e| e.to_string())?);
    }
    let z: Vec<u8> = p.labels.iter().map(|&v| v as u8).collect();
    auroc(&scores, &z).map_err(|e| e.to_string())
}

fn val_report(fold: usize, epoch: usize, auroc: std::result::Result<f64, String>) -> MetricsReport {
    MetricsReport {
        fold_id: fold,
        epoch,
        psnr_mean: f64::NAN,
        psnr_std: f64::NAN,
        ssim_mean: f64::NAN,
        ssim_std: f64::NAN,
        auroc,
    }
}

/// PSNR/SSIM of the translation against the mono target (where present)
/// and AuROC of the classifier (where labels are present). A missing
/// generator means the identity translation. Parameters are not touched.
pub fn evaluate_epoch(
    gen: Option<&GeneratorNet<f32>>,
    cls: Option<&ClassifierNet<f32>>,
    pool: &[SampleRecord],
    fold_id: usize,
    epoch: usize,
) -> Result<MetricsReport> {
    if pool.is_empty() {
        return Err(Error::Degenerate("evaluation pool is empty".into()));
    }
    let (mut psnrs, mut ssims, mut scores, mut labels) = (vec![], vec![], vec![], vec![]);
    for chunk in pool.chunks(EVAL_CHUNK) {
        let x = stack(chunk.iter().map(|r| &r.poly))?;
        let g = match gen {
            Some(g) => translate(g, &x)?,
            None => x,
        };
        let logits = match cls {
            Some(c) => Some(classify(c, &g)?),
            None => None,
        };
        for (i, (r, out)) in chunk.iter().zip(unstack(&g)).enumerate() {
            if let Some(y) = &r.mono {
                psnrs.push(psnr(&out, y)?);
                ssims.push(ssim(&out, y)?);
            }
            if let (Some(l), Some(z)) = (&logits, r.label) {
                scores.push(l[i]);
                labels.push(z);
            }
        }
    }
    let (psnr_mean, psnr_std) = aggregate(&psnrs).unwrap_or((f64::NAN, f64::NAN));
    let (ssim_mean, ssim_std) = aggregate(&ssims).unwrap_or((f64::NAN, f64::NAN));
    let auroc = match cls {
        Some(_) => auroc(&scores, &labels).map_err(|e| e.to_string()),
        None => Err("no classifier".to_string()),
    };
    Ok(MetricsReport { fold_id, epoch, psnr_mean, psnr_std, ssim_mean, ssim_std, auroc })
}

/// Index of the best validation AuROC; earliest wins ties, undefined
/// values never win unless nothing is defined.
pub fn best_epoch_index(reports: &[MetricsReport]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, r) in reports.iter().enumerate() {
        let v = r.auroc.as_ref().copied().unwrap_or(f64::NEG_INFINITY);
        let v = if v.is_nan() { f64::NEG_INFINITY } else { v };
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((i, v));
        }
    }
    best.map(|(i, _)| i)
}

/// Checkpoint of the epoch with the highest validation AuROC.
pub fn select_best_by_val<T: Clone>(reports: &[MetricsReport], checkpoints: &[T]) -> Result<T> {
    if reports.len() != checkpoints.len() {
        return Err(Error::contract(format!(
            "{} reports for {} checkpoints",
            reports.len(),
            checkpoints.len()
        )));
    }
    let i = best_epoch_index(reports).ok_or_else(|| Error::contract("no epochs to select from"))?;
    Ok(checkpoints[i].clone())
}

/// `n_slots` paired samples drawn from a reshuffled cycle over the pool.
/// Callers pass the joint epoch's slot count so the generator gets the
/// same number of updates per epoch in either mode.
fn generator_epoch(
    gen: &mut GeneratorNet<f32>,
    paired: &[SampleRecord],
    n_slots: usize,
    cfg: &TrainConfig,
    lr: f64,
    seed: u64,
) -> Result<LossBreakdown> {
    let mut losses = Vec::new();
    for plan in plan_mixed(paired.len(), 0, 0.0, cfg.batch_size, n_slots, seed)? {
        let batch: Vec<&SampleRecord> = plan.indices(Pool::Paired).map(|i| &paired[i]).collect();
        let x = stack(batch.iter().map(|r| &r.poly))?;
        let y = stack(batch.iter().map(|r| {
            r.mono.as_ref().ok_or_else(|| Error::contract(format!("patient {} has no mono target", r.patient_id)))
        }).collect::<Result<Vec<_>>>()?)?;
        let l = generator_l1_step(gen, &x, &y, &cfg.adam, lr)?;
        losses.push(LossBreakdown::from_parts(l, batch.len(), 0.0, 0));
    }
    Ok(LossBreakdown::mean(&losses))
}

fn classifier_epoch(cls: &mut ClassifierNet<f32>, train: &Prepared, cfg: &TrainConfig, lr: f64, seed: u64) -> Result<LossBreakdown> {
    let mut losses = Vec::new();
    for plan in plan_single(Pool::Labeled, train.inputs.len(), cfg.batch_size, seed)? {
        let idx: Vec<usize> = plan.indices(Pool::Labeled).collect();
        let x = stack(idx.iter().map(|&i| &train.inputs[i]))?;
        let z: Vec<f64> = idx.iter().map(|&i| train.labels[i]).collect();
        let l = classifier_step(cls, None, &x, &z, &cfg.adam, lr)?;
        losses.push(LossBreakdown::from_parts(0.0, 0, l, idx.len()));
    }
    Ok(LossBreakdown::mean(&losses))
}

fn joint_epoch(
    gen: &mut GeneratorNet<f32>,
    cls: &mut ClassifierNet<f32>,
    paired: &[SampleRecord],
    labeled: &[&SampleRecord],
    cfg: &TrainConfig,
    lr: f64,
    seed: u64,
) -> Result<LossBreakdown> {
    let mut losses = Vec::new();
    for plan in mixed_batch_sampler(paired.len(), labeled.len(), cfg, seed)? {
        let batch: Vec<&SampleRecord> = plan
            .slots
            .iter()
            .map(|s| match s.pool {
                Pool::Paired => &paired[s.index],
                Pool::Labeled => labeled[s.index],
            })
            .collect();
        losses.push(train_step_joint(gen, cls, &batch, cfg, lr)?);
    }
    Ok(LossBreakdown::mean(&losses))
}

fn select<'a>(records: &'a [SampleRecord], ids: &[u32]) -> Vec<&'a SampleRecord> {
    let ids: HashSet<u32> = ids.iter().copied().collect();
    records.iter().filter(|r| ids.contains(&r.patient_id)).collect()
}

fn owned(records: &[&SampleRecord]) -> Vec<SampleRecord> {
    records.iter().map(|&r| r.clone()).collect()
}

/// Trains one cross-validation fold in the configured mode, validating
/// after every classifier-training epoch and keeping the best one.
pub fn run_fold(
    cfg: &TrainConfig,
    pools: Pools<'_>,
    split: &FoldSplit,
    on_epoch: &mut dyn FnMut(&EpochLog),
) -> Result<FoldOutcome> {
    cfg.validate()?;
    let fold = split.fold_id;
    let train = select(pools.labeled, &split.train_patient_ids);
    let val = select(pools.labeled, &split.val_patient_ids);
    let test = select(pools.labeled, &split.test_patient_ids);
    if train.is_empty() || val.is_empty() || test.is_empty() {
        return Err(Error::contract(format!("fold {fold} has an empty train, val or test split")));
    }
    if cfg.mode.uses_generator() && pools.paired.is_empty() {
        return Err(Error::contract(format!("{} mode needs a paired pool", cfg.mode)));
    }
    let mut models = Models::init(cfg, fold)?;
    let n_epochs = cfg.total_epochs();
    let mut logs = Vec::new();
    let mut reports = Vec::new();
    let mut snapshots = Vec::new();
    let mut finish_epoch = |log: EpochLog, models: &Models, logs: &mut Vec<EpochLog>| {
        on_epoch(&log);
        if let Some(v) = &log.val {
            reports.push(v.clone());
            snapshots.push((log.epoch, models.clone()));
        }
        logs.push(log);
    };

    match cfg.mode {
        TrainMode::Joint => {
            let mut gen = models.generator.take().expect("joint mode has a generator");
            let mut cls = models.classifier.clone();
            for e in 0..n_epochs {
                let lr = lr_schedule(cfg, e)?;
                let seed = derive_seed(cfg.seed, TAG_JOINT, fold, e);
                let train_loss = joint_epoch(&mut gen, &mut cls, pools.paired, &train, cfg, lr, seed)?;
                let snapshot = Models { generator: Some(gen.clone()), classifier: cls.clone() };
                let val_auroc = prepared_auroc(&cls, &prepare(&val, snapshot.translator(cfg))?);
                let log = EpochLog { epoch: e + 1, train: train_loss, val: Some(val_report(fold, e + 1, val_auroc)) };
                finish_epoch(log, &snapshot, &mut logs);
            }
        }
        TrainMode::Sequential => {
            let mut gen = models.generator.take().expect("sequential mode has a generator");
            for e in 0..n_epochs {
                let lr = lr_schedule(cfg, e)?;
                let l = generator_epoch(&mut gen, pools.paired, pools.paired.len() + train.len(), cfg, lr, derive_seed(cfg.seed, TAG_GEN_PHASE, fold, e))?;
                finish_epoch(EpochLog { epoch: e + 1, train: l, val: None }, &models, &mut logs);
            }
            gen.set_frozen(true);
            models.generator = Some(gen);
            run_classifier_phase(cfg, &mut models, &train, &val, fold, n_epochs, &mut finish_epoch, &mut logs)?;
        }
        TrainMode::ClassifierOnly => {
            run_classifier_phase(cfg, &mut models, &train, &val, fold, 0, &mut finish_epoch, &mut logs)?;
        }
    }

    let (best_epoch, mut best) = select_best_by_val(&reports, &snapshots)?;
    if let Some(g) = best.generator.as_mut() {
        g.set_frozen(false);
    }
    let translator = best.translator(cfg).cloned();
    let test_report = match &translator {
        Some(g) => evaluate_epoch(Some(g), Some(&best.classifier), &owned(&test), fold, best_epoch)?,
        None => evaluate_epoch(None, Some(&best.classifier), &owned(&test), fold, best_epoch)?,
    };
    let eval_report = match pools.eval {
        Some(pool) => Some(evaluate_epoch(translator.as_ref(), Some(&best.classifier), pool, fold, best_epoch)?),
        None => None,
    };
    Ok(FoldOutcome { fold, epochs: logs, best_epoch, best, test: test_report, eval: eval_report })
}

#[allow(clippy::too_many_arguments)]
fn run_classifier_phase(
    cfg: &TrainConfig,
    models: &mut Models,
    train: &[&SampleRecord],
    val: &[&SampleRecord],
    fold: usize,
    epoch_offset: usize,
    finish_epoch: &mut dyn FnMut(EpochLog, &Models, &mut Vec<EpochLog>),
    logs: &mut Vec<EpochLog>,
) -> Result<()> {
    let translator = models.translator(cfg).cloned();
    let train_inputs = prepare(train, translator.as_ref())?;
    let val_inputs = prepare(val, translator.as_ref())?;
    for e in 0..cfg.total_epochs() {
        let lr = lr_schedule(cfg, e)?;
        let seed = derive_seed(cfg.seed, TAG_CLS_PHASE, fold, e);
        let l = classifier_epoch(&mut models.classifier, &train_inputs, cfg, lr, seed)?;
        let epoch = epoch_offset + e + 1;
        let log = EpochLog { epoch, train: l, val: Some(val_report(fold, epoch, prepared_auroc(&models.classifier, &val_inputs))) };
        finish_epoch(log, models, logs);
    }
    Ok(())
}

/// Generator on the whole paired pool, then the classifier on the frozen
/// generator's output for the whole labeled pool. No validation.
pub fn train_sequential(
    paired: &[SampleRecord],
    labeled: &[SampleRecord],
    cfg: &TrainConfig,
) -> Result<(GeneratorNet<f32>, ClassifierNet<f32>)> {
    let cfg = TrainConfig { mode: TrainMode::Sequential, classifier_input: ClassifierInput::Generated, ..cfg.clone() };
    let mut models = Models::init(&cfg, 0)?;
    let mut gen = models.generator.take().expect("sequential mode has a generator");
    if paired.is_empty() {
        return Err(Error::contract("sequential training needs a paired pool"));
    }
    if labeled.is_empty() {
        return Err(Error::contract("sequential training needs a labeled pool for its second phase"));
    }
    for e in 0..cfg.total_epochs() {
        let lr = lr_schedule(&cfg, e)?;
        generator_epoch(&mut gen, paired, paired.len() + labeled.len(), &cfg, lr, derive_seed(cfg.seed, TAG_GEN_PHASE, 0, e))?;
    }
    gen.set_frozen(true);
    let refs: Vec<&SampleRecord> = labeled.iter().collect();
    let inputs = prepare(&refs, Some(&gen))?;
    let mut cls = models.classifier;
    for e in 0..cfg.total_epochs() {
        let lr = lr_schedule(&cfg, e)?;
        classifier_epoch(&mut cls, &inputs, &cfg, lr, derive_seed(cfg.seed, TAG_CLS_PHASE, 0, e))?;
    }
    gen.set_frozen(false);
    Ok((gen, cls))
}

/// Classifier trained directly on polyenergetic inputs. No validation.
pub fn train_classifier_only(labeled: &[SampleRecord], cfg: &TrainConfig) -> Result<ClassifierNet<f32>> {
    if labeled.is_empty() {
        return Err(Error::contract("classifier-only training needs a labeled pool"));
    }
    let cfg = TrainConfig { mode: TrainMode::ClassifierOnly, classifier_input: ClassifierInput::Poly, ..cfg.clone() };
    let mut cls = Models::init(&cfg, 0)?.classifier;
    let refs: Vec<&SampleRecord> = labeled.iter().collect();
    let inputs = prepare(&refs, None)?;
    for e in 0..cfg.total_epochs() {
        let lr = lr_schedule(&cfg, e)?;
        classifier_epoch(&mut cls, &inputs, &cfg, lr, derive_seed(cfg.seed, TAG_CLS_PHASE, 0, e))?;
    }
    Ok(cls)
}
