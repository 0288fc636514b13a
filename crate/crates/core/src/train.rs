//! Teacher-forced minibatch training with validation-based checkpoint
//! selection.

use alloc::format;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

use crate::ingest::{IdMaps, SplitDataset, Trajectory};
use crate::metrics::{evaluate, EvalUnit, MetricsReport, ModelScorer, K_LIST};
use crate::model::{Batch, GetNextModel, GraphInputs, Step, Target, TimeTarget};
use crate::nn::{Optimizer, OptimizerKind, Tape};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub seed: u64,
    pub alpha: f64,
    pub beta: f64,
    pub eval_unit: EvalUnit,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 16,
            learning_rate: 1e-3,
            optimizer: OptimizerKind::default(),
            seed: 42,
            alpha: 0.5,
            beta: 0.5,
            eval_unit: EvalUnit::AllPositions,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidConfig("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be >= 1".into()));
        }
        // Zero is allowed: it is the null-update probe.
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig(format!("learning_rate {} must be finite and >= 0", self.learning_rate)));
        }
        Ok(())
    }
}

/// One teacher-forced sequence: inputs `q_1..q_{m-1}` and targets taken
/// from `q_2..q_m`.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub inputs: Vec<Step>,
    pub targets: Vec<Target>,
}

/// One example per trajectory of length at least 2. Trajectories longer
/// than `max_checkins` keep their most recent `max_checkins` check-ins.
pub fn make_training_examples(
    trajectories: &[Trajectory],
    id_maps: &IdMaps,
    max_checkins: usize,
    time_target: TimeTarget,
) -> Vec<Example> {
    trajectories
        .iter()
        .filter(|t| t.len() >= 2)
        .map(|t| {
            let checkins = &t.checkins[t.len().saturating_sub(max_checkins.max(2))..];
            Example {
                inputs: checkins[..checkins.len() - 1]
                    .iter()
                    .map(|c| Step::from_checkin(c, id_maps))
                    .collect(),
                targets: checkins
                    .windows(2)
                    .map(|w| Target::next(&w[0], &w[1], id_maps, time_target))
                    .collect(),
            }
        })
        .collect()
}

/// Pads every member to the longest input by repeating its last step.
pub fn make_batch(examples: &[&Example]) -> Batch {
    let width = examples.iter().map(|e| e.inputs.len()).max().unwrap_or(0);
    let mut batch = Batch {
        inputs: Vec::with_capacity(examples.len()),
        targets: Vec::with_capacity(examples.len()),
        mask: Vec::with_capacity(examples.len()),
    };
    for e in examples {
        let pad = width - e.inputs.len();
        let last_in = *e.inputs.last().expect("examples are nonempty");
        let last_t = *e.targets.last().expect("examples are nonempty");
        let mut inputs = e.inputs.clone();
        let mut targets = e.targets.clone();
        inputs.extend(core::iter::repeat_n(last_in, pad));
        targets.extend(core::iter::repeat_n(last_t, pad));
        let mut mask = alloc::vec![true; e.inputs.len()];
        mask.extend(core::iter::repeat_n(false, pad));
        batch.inputs.push(inputs);
        batch.targets.push(targets);
        batch.mask.push(mask);
    }
    batch
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    pub val_mrr: Option<f64>,
}

/// Stateful epoch runner over a fixed example set.
pub struct Trainer<'g> {
    model: GetNextModel,
    graph: &'g GraphInputs,
    examples: Vec<Example>,
    optimizer: Optimizer,
    rng: ChaCha8Rng,
    batch_size: usize,
    epoch: usize,
}

impl<'g> Trainer<'g> {
    pub fn new(model: GetNextModel, graph: &'g GraphInputs, examples: Vec<Example>, cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        if examples.is_empty() {
            return Err(Error::EmptyTrain);
        }
        let optimizer = Optimizer::new(cfg.optimizer, cfg.learning_rate, model.store());
        Ok(Self {
            model,
            graph,
            examples,
            optimizer,
            // Distinct stream from the model initializer.
            rng: ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x005e_ed0f_5eed),
            batch_size: cfg.batch_size,
            epoch: 0,
        })
    }

    pub fn model(&self) -> &GetNextModel {
        &self.model
    }

    pub fn into_model(self) -> GetNextModel {
        self.model
    }

    /// Epochs completed so far.
    pub fn epoch(&self) -> usize {
        self.epoch
    }

    /// One pass over shuffled examples. Returns the loss averaged over
    /// supervised positions.
    pub fn run_epoch(&mut self) -> Result<f64> {
        self.epoch += 1;
        let mut order: Vec<usize> = (0..self.examples.len()).collect();
        order.shuffle(&mut self.rng);
        let mut weighted = 0.0;
        let mut positions = 0usize;
        for chunk in order.chunks(self.batch_size) {
            let members: Vec<&Example> = chunk.iter().map(|&i| &self.examples[i]).collect();
            let batch = make_batch(&members);
            let mut tape = Tape::new();
            let loss = self.model.batch_loss(&mut tape, self.graph, &batch, Some(&mut self.rng))?;
            let value = tape.value(loss.total).item();
            if !value.is_finite() {
                return Err(Error::DivergenceDetected { epoch: self.epoch });
            }
            self.model.store_mut().zero_grad();
            tape.backward(loss.total, self.model.store_mut())?;
            self.optimizer.step(self.model.store_mut());
            let n = batch.n_supervised();
            weighted += value * n as f64;
            positions += n;
        }
        let mean = weighted / positions as f64;
        if !mean.is_finite() {
            return Err(Error::DivergenceDetected { epoch: self.epoch });
        }
        Ok(mean)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters of the epoch with the best validation MRR, or of the last
    /// epoch when there is no validation data.
    pub model: GetNextModel,
    pub best_epoch: usize,
    pub history: Vec<EpochRecord>,
}

/// Trains for `cfg.epochs` epochs, calling `on_epoch` after each one.
pub fn train(
    model: GetNextModel,
    graph: &GraphInputs,
    split: &SplitDataset,
    id_maps: &IdMaps,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    let c = model.config();
    let examples = make_training_examples(&split.train, id_maps, c.max_seq_len, c.time_target);
    let mut trainer = Trainer::new(model, graph, examples, cfg)?;
    let has_val = split.validation.iter().any(|t| t.len() >= 2);
    let mut best: Option<(f64, usize, GetNextModel)> = None;
    let mut history = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        let mean_loss = trainer.run_epoch()?;
        let val_mrr = if has_val {
            Some(validation_report(trainer.model(), graph, &split.validation, id_maps, cfg.eval_unit)?.mrr)
        } else {
            None
        };
        let record = EpochRecord {
            epoch: trainer.epoch(),
            mean_loss,
            val_mrr,
        };
        on_epoch(&record);
        if let Some(mrr) = val_mrr {
            if best.as_ref().is_none_or(|(b, _, _)| mrr > *b) {
                best = Some((mrr, record.epoch, trainer.model().clone()));
            }
        }
        history.push(record);
    }
    let (best_epoch, model) = match best {
        Some((_, epoch, model)) => (epoch, model),
        None => (trainer.epoch(), trainer.into_model()),
    };
    Ok(TrainOutcome {
        model,
        best_epoch,
        history,
    })
}

fn validation_report(
    model: &GetNextModel,
    graph: &GraphInputs,
    trajectories: &[Trajectory],
    id_maps: &IdMaps,
    unit: EvalUnit,
) -> Result<MetricsReport> {
    let scorer = ModelScorer::new(model, graph)?;
    evaluate(&scorer, trajectories, id_maps, &K_LIST, unit)
}
