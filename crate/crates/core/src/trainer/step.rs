use super::TrainConfig;
use crate::error::{Error, Result};
use crate::losses::{bce_loss, l1_loss, marker, LossBreakdown};
use crate::nn::{adam_step, AdamConfig, ClassifierNet, GeneratorNet, Network};
use crate::phantom::SampleRecord;
use crate::tensor::{Tape, Tensor};

/// Stacks `[1, H, W]` images into an `[N, 1, H, W]` batch.
pub fn stack<'a, I>(images: I) -> Result<Tensor<f32>>
where
    I: IntoIterator<Item = &'a Tensor<f32>>,
{
    let mut data = Vec::new();
    let mut dims: Option<Vec<usize>> = None;
    let mut n = 0;
    for img in images {
        match &dims {
            None => dims = Some(img.shape().to_vec()),
            Some(d) if d.as_slice() != img.shape() => {
                return Err(Error::dim(format!("cannot stack {:?} with {:?}", d, img.shape())));
            }
            Some(_) => {}
        }
        data.extend_from_slice(img.data());
        n += 1;
    }
    let dims = dims.ok_or_else(|| Error::contract("cannot stack an empty batch"))?;
    let mut shape = vec![n];
    shape.extend(dims);
    Tensor::new(shape, data)
}

/// Splits an `[N, ...]` batch back into per-sample tensors.
pub fn unstack(batch: &Tensor<f32>) -> Vec<Tensor<f32>> {
    let n = batch.shape()[0];
    let per = batch.numel() / n;
    let shape = batch.shape()[1..].to_vec();
    batch
        .data()
        .chunks(per)
        .map(|c| Tensor::new(shape.clone(), c.to_vec()).expect("chunk matches shape"))
        .collect()
}

/// Runs the generator without recording anything.
pub fn translate(gen: &GeneratorNet<f32>, x: &Tensor<f32>) -> Result<Tensor<f32>> {
    gen.infer(x)
}

/// Raw logits of the classifier, one per sample.
pub fn classify(cls: &ClassifierNet<f32>, x: &Tensor<f32>) -> Result<Vec<f64>> {
    Ok(cls.infer(x)?.data().iter().map(|&v| f64::from(v)).collect())
}

/// One L1 update of the generator on `(x, y)`; returns the loss.
pub fn generator_l1_step(
    gen: &mut GeneratorNet<f32>,
    x: &Tensor<f32>,
    y: &Tensor<f32>,
    adam: &AdamConfig,
    lr_now: f64,
) -> Result<f64> {
    gen.params.zero_grads();
    let mut tape = Tape::new();
    let xi = tape.constant(x.clone());
    let yi = tape.constant(y.clone());
    let fwd = gen.forward(&mut tape, xi)?;
    let loss = l1_loss(&mut tape, fwd.output, yi)?;
    let value = f64::from(tape.data(loss)[0]);
    tape.backward(loss)?;
    gen.params.absorb_grads(&tape, &fwd.bound)?;
    adam_step(&mut gen.params, adam, lr_now)?;
    Ok(value)
}

/// One BCE update of the classifier on `translator(x)` (or `x` itself);
/// the translator's parameters are never written.
pub fn classifier_step(
    cls: &mut ClassifierNet<f32>,
    translator: Option<&GeneratorNet<f32>>,
    x: &Tensor<f32>,
    labels: &[f64],
    adam: &AdamConfig,
    lr_now: f64,
) -> Result<f64> {
    cls.params.zero_grads();
    let mut tape = Tape::new();
    let mut input = tape.constant(x.clone());
    if let Some(gen) = translator {
        input = gen.forward(&mut tape, input)?.output;
    }
    let fwd = cls.forward(&mut tape, input)?;
    let loss = bce_loss(&mut tape, fwd.output, labels)?;
    let value = f64::from(tape.data(loss)[0]);
    tape.backward(loss)?;
    cls.params.absorb_grads(&tape, &fwd.bound)?;
    adam_step(&mut cls.params, adam, lr_now)?;
    Ok(value)
}

/// One joint step on a mixed batch: first an L1 update of the generator on
/// the paired samples with the classifier frozen, then a BCE update of the
/// classifier on `C(G(x))` for the labeled samples with the generator frozen.
/// Either half is skipped when its subset is empty. Both networks end
/// unfrozen.
pub fn train_step_joint(
    gen: &mut GeneratorNet<f32>,
    cls: &mut ClassifierNet<f32>,
    batch: &[&SampleRecord],
    cfg: &TrainConfig,
    lr_now: f64,
) -> Result<LossBreakdown> {
    let mut paired = Vec::new();
    let mut labeled = Vec::new();
    for &r in batch {
        if marker(r)? == 0 {
            paired.push(r);
        } else {
            labeled.push(r);
        }
    }
    let mut l1 = 0.0;
    if !paired.is_empty() {
        cls.set_frozen(true);
        gen.set_frozen(false);
        let x = stack(paired.iter().map(|r| &r.poly))?;
        let y = stack(paired.iter().map(|r| r.mono.as_ref().expect("marker 0 has mono")))?;
        l1 = generator_l1_step(gen, &x, &y, &cfg.adam, lr_now)?;
    }
    let mut cls_loss = 0.0;
    if !labeled.is_empty() {
        gen.set_frozen(true);
        cls.set_frozen(false);
        let x = stack(labeled.iter().map(|r| &r.poly))?;
        let z: Vec<f64> = labeled.iter().map(|r| f64::from(r.label.expect("marker 1 has label"))).collect();
        cls_loss = classifier_step(cls, Some(gen), &x, &z, &cfg.adam, lr_now)?;
    }
    gen.set_frozen(false);
    cls.set_frozen(false);
    Ok(LossBreakdown::from_parts(l1, paired.len(), cls_loss, labeled.len()))
}
