//! Translation, classification and marker-weighted combined losses.

use crate::error::{Error, Result};
use crate::phantom::SampleRecord;
use crate::tensor::{Element, Tape, TensorId};

/// Mean absolute error over all elements.
pub fn l1_loss<F: Element>(tape: &mut Tape<F>, pred: TensorId, target: TensorId) -> Result<TensorId> {
    if tape.shape(pred) != tape.shape(target) {
        return Err(Error::dim(format!(
            "l1_loss: prediction {:?} vs target {:?}",
            tape.shape(pred),
            tape.shape(target)
        )));
    }
    let diff = tape.sub(pred, target)?;
    let abs = tape.abs(diff)?;
    tape.reduce_mean(abs)
}

/// Batch-mean binary cross-entropy on raw logits of shape `[N, 1]`.
pub fn bce_loss<F: Element>(tape: &mut Tape<F>, logits: TensorId, labels: &[f64]) -> Result<TensorId> {
    let shape = tape.shape(logits);
    if shape.len() != 2 || shape[1] != 1 || shape[0] != labels.len() {
        return Err(Error::dim(format!("bce_loss: logits {:?} for {} labels", shape, labels.len())));
    }
    tape.bce_with_logits(logits, labels)
}

/// Marker value of a training record: 0 for a paired record, 1 for a labeled one.
pub fn marker(record: &SampleRecord) -> Result<u8> {
    match (&record.mono, record.label) {
        (Some(_), None) => Ok(0),
        (None, Some(_)) => Ok(1),
        (Some(_), Some(_)) => Err(Error::contract(format!(
            "patient {}: training sample carries both a mono target and a label",
            record.patient_id
        ))),
        (None, None) => Err(Error::contract(format!(
            "patient {}: training sample carries neither a mono target nor a label",
            record.patient_id
        ))),
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub l1: f64,
    pub cls: f64,
    pub combined: f64,
    pub n_paired: usize,
    pub n_labeled: usize,
}

impl LossBreakdown {
    pub fn from_parts(l1: f64, n_paired: usize, cls: f64, n_labeled: usize) -> Self {
        let n = n_paired + n_labeled;
        let m_bar = if n == 0 { 0.0 } else { n_labeled as f64 / n as f64 };
        let combined = match (n_paired, n_labeled) {
            (_, 0) => l1,
            (0, _) => cls,
            _ => m_bar * cls + (1.0 - m_bar) * l1,
        };
        LossBreakdown { l1, cls, combined, n_paired, n_labeled }
    }

    /// Mean over batches, each weighted equally. A term is averaged only
    /// over the batches that had samples for it.
    pub fn mean(batches: &[LossBreakdown]) -> LossBreakdown {
        if batches.is_empty() {
            return LossBreakdown::default();
        }
        let term = |value: fn(&LossBreakdown) -> f64, present: fn(&LossBreakdown) -> bool| {
            let (sum, n) = batches.iter().filter(|b| present(b)).fold((0.0, 0usize), |(s, n), b| (s + value(b), n + 1));
            if n == 0 {
                0.0
            } else {
                sum / n as f64
            }
        };
        LossBreakdown {
            l1: term(|b| b.l1, |b| b.n_paired > 0),
            cls: term(|b| b.cls, |b| b.n_labeled > 0),
            combined: term(|b| b.combined, |_| true),
            n_paired: batches.iter().map(|b| b.n_paired).sum(),
            n_labeled: batches.iter().map(|b| b.n_labeled).sum(),
        }
    }
}

pub struct CombinedLoss {
    pub breakdown: LossBreakdown,
    pub total: TensorId,
    pub l1: Option<TensorId>,
    pub cls: Option<TensorId>,
}

/// `m̄·L_cls + (1 − m̄)·L_L1` with each term the mean over its own subset.
///
/// `paired` holds the generator output and mono target of the m=0 samples,
/// `labeled` the logits and labels of the m=1 samples. With one subset
/// empty the result is the other loss node itself.
pub fn combined_loss<F: Element>(
    tape: &mut Tape<F>,
    paired: Option<(TensorId, TensorId)>,
    labeled: Option<(TensorId, &[f64])>,
) -> Result<CombinedLoss> {
    let (l1, n_paired) = match paired {
        Some((out, target)) => (Some(l1_loss(tape, out, target)?), tape.shape(out)[0]),
        None => (None, 0),
    };
    let (cls, n_labeled) = match labeled {
        Some((logits, labels)) => (Some(bce_loss(tape, logits, labels)?), labels.len()),
        None => (None, 0),
    };
    let value = |tape: &Tape<F>, id: Option<TensorId>| id.map_or(0.0, |i| tape.data(i)[0].as_f64());
    let breakdown = LossBreakdown::from_parts(value(tape, l1), n_paired, value(tape, cls), n_labeled);
    let total = match (l1, cls) {
        (Some(a), None) => a,
        (None, Some(b)) => b,
        (Some(a), Some(b)) => {
            let m_bar = n_labeled as f64 / (n_paired + n_labeled) as f64;
            let wa = tape.scalar(1.0 - m_bar);
            let wb = tape.scalar(m_bar);
            let a = tape.mul(wa, a)?;
            let b = tape.mul(wb, b)?;
            tape.add(a, b)?
        }
        (None, None) => return Err(Error::contract("combined_loss on an empty batch")),
    };
    Ok(CombinedLoss { breakdown, total, l1, cls })
}
