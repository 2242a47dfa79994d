//! Optimization loop, checkpoints and the finite-difference gradient audit.

mod adam;
mod audit;
mod checkpoint;
mod schedule;

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use adam::{adam_step, OptimState};
pub use audit::{grad_audit, toy_bags, toy_hyper_params, AuditReport, ParamAudit, AUDIT_FLOOR};
pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, read_checkpoint, write_checkpoint, Checkpoint, DDLC_MAGIC,
};
pub use schedule::cosine_lr;

use crate::config::HyperParams;
use crate::data::{uniform_sample, FeatureBag, Label};
use crate::error::{Error, Result};
use crate::lanet::LocalityPrior;
use crate::losses::{total_loss, BagTerm, LossValues};
use crate::math::{FaultInjection, Matrix, Tape};
use crate::model::{forward_bag, prior_for, ModelParams};
use crate::scorer::Dropout;

/// Mixes a base seed with a counter into an independent stream seed.
fn stream_seed(seed: u64, tag: u64, counter: u64) -> u64 {
    // splitmix64 finalizer over the combined words
    let mut z = seed
        ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ counter.wrapping_mul(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const SHUFFLE_STREAM: u64 = 1;
const DROPOUT_STREAM: u64 = 2;

/// Training bags split by class, already subsampled to `t_max`.
#[derive(Debug, Clone)]
pub struct TrainSet {
    pub positives: Vec<Matrix>,
    pub negatives: Vec<Matrix>,
}

impl TrainSet {
    pub fn new(bags: &[FeatureBag], t_max: usize) -> Result<Self> {
        let mut set = TrainSet {
            positives: Vec::new(),
            negatives: Vec::new(),
        };
        for bag in bags {
            if bag.len() < 2 {
                return Err(Error::Data(format!(
                    "{}: bags need at least 2 snippets",
                    bag.video_id
                )));
            }
            let sampled = uniform_sample(bag, t_max).features;
            match bag.label {
                Label::Abnormal => set.positives.push(sampled),
                Label::Normal => set.negatives.push(sampled),
            }
        }
        if set.positives.is_empty() || set.negatives.is_empty() {
            return Err(Error::Config(format!(
                "training needs both classes, got {} abnormal and {} normal bags",
                set.positives.len(),
                set.negatives.len()
            )));
        }
        Ok(set)
    }
}

/// Mean loss components over one epoch's steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub lr: f64,
    pub steps: usize,
    pub total: f64,
    pub mil: f64,
    pub dr: f64,
    pub da: f64,
}

/// Records the objective for one batch. With `dropout_seed` the MLP dropout
/// is active; without it the forward pass is deterministic inference.
pub struct BatchObjective {
    pub tape: Tape,
    pub loss: crate::losses::LossParts,
    pub vars: crate::model::ModelVars,
}

pub fn batch_objective(
    params: &ModelParams,
    hyper: &HyperParams,
    batch: &[(&Matrix, Label)],
    dropout_seed: Option<u64>,
    priors: &mut HashMap<usize, LocalityPrior>,
    fault: Option<FaultInjection>,
) -> Result<BatchObjective> {
    let mut tape = fault.map_or_else(Tape::new, Tape::with_fault);
    let vars = params.register(&mut tape);
    let mut rng = dropout_seed.map(ChaCha8Rng::seed_from_u64);
    let mut terms = Vec::with_capacity(batch.len());
    for &(x, label) in batch {
        let t_len = x.rows();
        if !priors.contains_key(&t_len) {
            priors.insert(t_len, prior_for(&hyper.model, t_len)?);
        }
        let prior = &priors[&t_len];
        let out = match rng.as_mut() {
            Some(rng) => {
                let mut dropout = Dropout {
                    rate: hyper.model.dropout,
                    rng,
                };
                forward_bag(&mut tape, &vars, x, prior, Some(&mut dropout))?
            }
            None => forward_bag::<ChaCha8Rng>(&mut tape, &vars, x, prior, None)?,
        };
        terms.push(BagTerm {
            scores: out.scores,
            features: out.features,
            label,
        });
    }
    let loss = total_loss(&mut tape, &terms, &hyper.loss)?;
    Ok(BatchObjective { tape, loss, vars })
}

/// Owns the parameters and optimizer state across epochs.
pub struct Trainer {
    pub hyper: HyperParams,
    pub params: ModelParams,
    pub optim: OptimState,
    pub epochs_done: usize,
    priors: HashMap<usize, LocalityPrior>,
}

impl Trainer {
    pub fn new(hyper: HyperParams) -> Result<Self> {
        hyper.validate()?;
        let params = ModelParams::init(&hyper.model, hyper.train.seed)?;
        let optim = OptimState::new(
            params.named().into_iter().map(|(_, m)| m),
            hyper.train.beta1,
            hyper.train.beta2,
            hyper.train.adam_eps,
        );
        Ok(Trainer {
            hyper,
            params,
            optim,
            epochs_done: 0,
            priors: HashMap::new(),
        })
    }

    pub fn from_checkpoint(ck: Checkpoint) -> Result<Self> {
        ck.hyper.validate()?;
        Ok(Trainer {
            hyper: ck.hyper,
            params: ck.params,
            optim: ck.optim,
            epochs_done: ck.epochs_done,
            priors: HashMap::new(),
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            hyper: self.hyper.clone(),
            epochs_done: self.epochs_done,
            params: self.params.clone(),
            optim: self.optim.clone(),
        }
    }

    /// Number of optimizer steps in one epoch: enough half-batches to visit
    /// every bag of the larger class once.
    pub fn steps_per_epoch(&self, data: &TrainSet) -> usize {
        let half = self.hyper.train.batch_size / 2;
        data.positives
            .len()
            .max(data.negatives.len())
            .div_ceil(half)
    }

    /// Loss of one batch without updating anything; dropout follows the seed
    /// the next step would use.
    pub fn peek_loss(&mut self, batch: &[(&Matrix, Label)]) -> Result<LossValues> {
        let seed = stream_seed(self.hyper.train.seed, DROPOUT_STREAM, self.optim.step + 1);
        let obj = batch_objective(
            &self.params,
            &self.hyper,
            batch,
            Some(seed),
            &mut self.priors,
            None,
        )?;
        Ok(obj.loss.values(&obj.tape))
    }

    /// Forward, backward and one Adam update on `batch`.
    pub fn step(&mut self, batch: &[(&Matrix, Label)], lr: f64) -> Result<LossValues> {
        let seed = stream_seed(self.hyper.train.seed, DROPOUT_STREAM, self.optim.step + 1);
        let mut obj = batch_objective(
            &self.params,
            &self.hyper,
            batch,
            Some(seed),
            &mut self.priors,
            None,
        )?;
        let values = obj.loss.values(&obj.tape);
        if !values.total.is_finite() {
            return Err(Error::NonFinite(format!(
                "loss at step {}",
                self.optim.step + 1
            )));
        }
        let grads = obj.tape.backward(obj.loss.total)?;
        let grads: Vec<Matrix> = obj
            .vars
            .all()
            .into_iter()
            .map(|v| {
                grads
                    .get(v)
                    .cloned()
                    .expect("every parameter is registered")
            })
            .collect();
        let names: Vec<String> = self.params.named().into_iter().map(|(n, _)| n).collect();
        let mut tensors = self.params.tensors_mut();
        adam_step(&mut tensors, &grads, &names, &mut self.optim, lr)?;
        Ok(values)
    }

    pub fn train_epoch(&mut self, data: &TrainSet) -> Result<EpochMetrics> {
        let epoch = self.epochs_done;
        let cfg = &self.hyper.train;
        let lr = cosine_lr(epoch, cfg.epochs, cfg.base_lr);
        let half = cfg.batch_size / 2;
        let mut rng =
            ChaCha8Rng::seed_from_u64(stream_seed(cfg.seed, SHUFFLE_STREAM, epoch as u64));
        let mut pos_order: Vec<usize> = (0..data.positives.len()).collect();
        let mut neg_order: Vec<usize> = (0..data.negatives.len()).collect();
        pos_order.shuffle(&mut rng);
        neg_order.shuffle(&mut rng);

        let steps = self.steps_per_epoch(data);
        let mut sums = LossValues::default();
        for s in 0..steps {
            let mut batch: Vec<(&Matrix, Label)> = Vec::with_capacity(2 * half);
            for i in 0..half {
                let p = pos_order[(s * half + i) % pos_order.len()];
                batch.push((&data.positives[p], Label::Abnormal));
            }
            for i in 0..half {
                let n = neg_order[(s * half + i) % neg_order.len()];
                batch.push((&data.negatives[n], Label::Normal));
            }
            let v = self.step(&batch, lr)?;
            sums.total += v.total;
            sums.mil += v.mil;
            sums.dr += v.dr;
            sums.da += v.da;
        }
        self.epochs_done += 1;
        let n = steps as f64;
        Ok(EpochMetrics {
            epoch,
            lr,
            steps,
            total: sums.total / n,
            mil: sums.mil / n,
            dr: sums.dr / n,
            da: sums.da / n,
        })
    }

    /// Runs the remaining epochs, calling `on_epoch` after each.
    pub fn fit(
        &mut self,
        data: &TrainSet,
        mut on_epoch: impl FnMut(&Trainer, &EpochMetrics) -> Result<()>,
    ) -> Result<Vec<EpochMetrics>> {
        let mut trace = Vec::new();
        while self.epochs_done < self.hyper.train.epochs {
            let m = self.train_epoch(data)?;
            on_epoch(self, &m)?;
            trace.push(m);
        }
        Ok(trace)
    }
}
