use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::TrainConfig;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Pool {
    Paired,
    Labeled,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Slot {
    pub pool: Pool,
    pub index: usize,
}

impl Slot {
    /// Loss marker: 1 when the slot contributes to the classification term.
    pub fn marker(&self) -> u8 {
        u8::from(self.pool == Pool::Labeled)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BatchPlan {
    pub slots: Vec<Slot>,
}

impl BatchPlan {
    pub fn indices(&self, pool: Pool) -> impl Iterator<Item = usize> + '_ {
        self.slots.iter().filter(move |s| s.pool == pool).map(|s| s.index)
    }
}

/// Endless reshuffled pass over `0..n`.
struct Cycler {
    order: Vec<usize>,
    pos: usize,
}

impl Cycler {
    fn new(n: usize) -> Self {
        Cycler { order: (0..n).collect(), pos: n }
    }

    fn next(&mut self, rng: &mut ChaCha8Rng) -> usize {
        if self.pos == self.order.len() {
            self.order.shuffle(rng);
            self.pos = 0;
        }
        self.pos += 1;
        self.order[self.pos - 1]
    }
}

/// One epoch of mixed batches. Each slot is labeled with probability
/// `mix_fraction`, then filled from that pool's reshuffled cycle. An epoch
/// has `n_paired + n_labeled` slots.
pub fn mixed_batch_sampler(n_paired: usize, n_labeled: usize, cfg: &TrainConfig, epoch_seed: u64) -> Result<Vec<BatchPlan>> {
    plan_mixed(n_paired, n_labeled, cfg.mix_fraction, cfg.batch_size, n_paired + n_labeled, epoch_seed)
}

/// Mixed sampling with an explicit slot count; `mix` may be 0 or 1 here.
pub fn plan_mixed(
    n_paired: usize,
    n_labeled: usize,
    mix: f64,
    batch_size: usize,
    n_slots: usize,
    seed: u64,
) -> Result<Vec<BatchPlan>> {
    if !(0.0..=1.0).contains(&mix) {
        return Err(Error::Config(format!("mix fraction {mix} outside [0, 1]")));
    }
    if batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    if (mix < 1.0 && n_paired == 0) || (mix > 0.0 && n_labeled == 0) {
        return Err(Error::contract(format!(
            "mixed sampling needs both pools, got {n_paired} paired and {n_labeled} labeled"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut paired = Cycler::new(n_paired);
    let mut labeled = Cycler::new(n_labeled);
    let slots: Vec<Slot> = (0..n_slots)
        .map(|_| {
            if rng.random::<f64>() < mix {
                Slot { pool: Pool::Labeled, index: labeled.next(&mut rng) }
            } else {
                Slot { pool: Pool::Paired, index: paired.next(&mut rng) }
            }
        })
        .collect();
    Ok(slots.chunks(batch_size).map(|c| BatchPlan { slots: c.to_vec() }).collect())
}

/// Shuffled single-pool batches covering every index once.
pub fn plan_single(pool: Pool, n: usize, batch_size: usize, seed: u64) -> Result<Vec<BatchPlan>> {
    if n == 0 {
        return Err(Error::contract(format!("{pool:?} pool is empty")));
    }
    if batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok(order
        .chunks(batch_size)
        .map(|c| BatchPlan { slots: c.iter().map(|&index| Slot { pool, index }).collect() })
        .collect())
}
