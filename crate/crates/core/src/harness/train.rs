use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::RunConfig;
use crate::autodiff::Tape;
use crate::buffer::{BufferSnapshot, Policy, ReplayBuffer};
use crate::confidence::ConfidenceLedger;
use crate::data::{augment, InputKind, Sample, Task};
use crate::error::{Error, Result};
use crate::evaluate::batch_tensor;
use crate::model::{LossKind, Model};
use crate::tensor::{softmax_row, Tensor};
use crate::{ClassId, SampleId};

/// Independent random streams, one per concern, all derived from the run seed.
#[derive(Debug, Clone, Copy)]
#[repr(u64)]
pub enum Stream {
    Init = 1,
    Order = 2,
    Retrieval = 3,
    Augment = 4,
    Selection = 5,
}

pub fn stream_rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

/// What happened while training one task.
#[derive(Debug, Clone)]
pub struct TaskReport {
    pub task: usize,
    pub steps: usize,
    pub skipped: usize,
    /// Mean loss over the last epoch's steps.
    pub final_loss: f64,
    pub buffer: BufferSnapshot,
    pub ledger: Option<ConfidenceLedger>,
    /// Class of every training sample, kept alongside the ledger.
    pub labels: BTreeMap<SampleId, ClassId>,
    /// Rows of the batches handed to the loss, with their step counts.
    pub batch_rows: BTreeMap<usize, usize>,
}

/// Model, buffer and random streams for one seeded run.
pub struct RunState {
    pub config: RunConfig,
    pub kind: InputKind,
    pub model: Model<f64>,
    pub buffer: ReplayBuffer,
    init: ChaCha8Rng,
    order: ChaCha8Rng,
    retrieval: ChaCha8Rng,
    augment: ChaCha8Rng,
    selection: ChaCha8Rng,
    /// Stream elements offered to the reservoir so far.
    seen: usize,
}

impl RunState {
    pub fn new(config: &RunConfig, kind: InputKind, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut init = stream_rng(seed, Stream::Init);
        let mut model = Model::new(config.encoder_spec(kind.input_dim()), &mut init)?;
        model.normalize = config.normalize;
        Ok(RunState {
            config: config.clone(),
            kind,
            model,
            buffer: ReplayBuffer::new(config.buffer_size, config.policy)?,
            init,
            order: stream_rng(seed, Stream::Order),
            retrieval: stream_rng(seed, Stream::Retrieval),
            augment: stream_rng(seed, Stream::Augment),
            selection: stream_rng(seed, Stream::Selection),
            seen: 0,
        })
    }

    /// Temperature used for confidences: the loss's scale for PCL, 1 for CE.
    fn confidence_scale(&self) -> f64 {
        match self.config.loss {
            LossKind::Pcl => self.config.temperature,
            LossKind::Ce => 1.0,
        }
    }

    /// Trains on one task for `epochs` epochs with replay, then updates the buffer.
    ///
    /// Every epoch visits each training sample once in shuffled order. A final
    /// short batch is topped up with samples from the start of the same
    /// permutation so every step has exactly `b` current samples; confidences
    /// are recorded only on a sample's first visit in the epoch.
    pub fn train_task(&mut self, task: &Task) -> Result<TaskReport> {
        if task.train.is_empty() {
            return Err(Error::InvalidArgument(format!("task {} has no training samples", task.id)));
        }
        for &c in &task.classes {
            self.model.classifier.add_class(c, &mut self.init);
        }
        let cfg = self.config.clone();
        let b = cfg.batch_size;
        let n = task.train.len();
        let steps_per_epoch = n.div_ceil(b);
        let records = cfg.policy.is_balanced() || cfg.dump_confidence;
        let mut ledger = ConfidenceLedger::new(task.id, cfg.confidence_epochs)?;
        let mut perm: Vec<usize> = (0..n).collect();
        let mut steps = 0;
        let mut skipped = 0;
        let mut final_loss = 0.0;
        let mut batch_rows = BTreeMap::new();

        for epoch in 1..=cfg.epochs {
            perm.shuffle(&mut self.order);
            let mut epoch_loss = 0.0;
            let mut epoch_steps = 0;
            for k in 0..steps_per_epoch {
                let positions: Vec<usize> = (k * b..k * b + b).collect();
                let current: Vec<&Sample> = positions.iter().map(|&p| &task.train[perm[p % n]]).collect();
                let fresh: Vec<bool> = positions.iter().map(|&p| p < n).collect();
                let record = records && epoch <= cfg.confidence_epochs;
                let outcome = self.step(&current, &fresh, record.then_some((&mut ledger, epoch)))?;
                match outcome {
                    Some((loss, rows)) => {
                        *batch_rows.entry(rows).or_insert(0) += 1;
                        epoch_loss += loss;
                        epoch_steps += 1;
                        steps += 1;
                    }
                    None => skipped += 1,
                }
                if cfg.policy == Policy::Reservoir && epoch == 1 {
                    for (s, &f) in current.iter().zip(&fresh) {
                        if f {
                            self.seen += 1;
                            self.buffer.reservoir_insert(&mut self.selection, (*s).clone(), self.seen);
                        }
                    }
                }
            }
            if epoch_steps > 0 {
                final_loss = epoch_loss / epoch_steps as f64;
            }
        }

        self.end_of_task(task, &ledger)?;
        Ok(TaskReport {
            task: task.id,
            steps,
            skipped,
            final_loss,
            buffer: self.buffer.snapshot(),
            labels: if records { task.train.iter().map(|s| (s.id, s.label)).collect() } else { BTreeMap::new() },
            ledger: records.then_some(ledger),
            batch_rows,
        })
    }

    /// Variance, prune and update under balanced policies; registration only for reservoir.
    fn end_of_task(&mut self, task: &Task, ledger: &ConfidenceLedger) -> Result<()> {
        let mut classes = task.classes.clone();
        classes.sort_unstable();
        if self.config.policy == Policy::Reservoir {
            self.buffer.register_task(task.id, &classes);
            return Ok(());
        }
        let quotas = self.buffer.plan_quotas(task.id, &classes)?;
        self.buffer.prune_lowest_variance(&quotas);
        let report = match self.config.policy {
            Policy::Challenging => self.buffer.update_challenging(ledger, task.id, &task.train, &quotas)?,
            Policy::Hard => self.buffer.update_hard(ledger, task.id, &task.train, &quotas)?,
            Policy::RandomBalanced => {
                self.buffer
                    .update_random_balanced(&mut self.selection, task.id, &task.train, &quotas)?
            }
            Policy::Reservoir => unreachable!(),
        };
        log::debug!("task {}: stored {} samples, buffer {}", task.id, report.inserted, self.buffer.len());
        Ok(())
    }

    /// One SGD step on `[current, replay, aug(current), aug(replay)]`.
    /// Returns the loss and batch rows, or `None` when the batch held a single
    /// class twice in a row.
    fn step(
        &mut self,
        current: &[&Sample],
        fresh: &[bool],
        record: Option<(&mut ConfidenceLedger, usize)>,
    ) -> Result<Option<(f64, usize)>> {
        let mut record = record;
        for attempt in 0..2 {
            let replay: Vec<Sample> = self
                .buffer
                .random_retrieval(&mut self.retrieval, current.len())
                .into_iter()
                .cloned()
                .collect();
            let originals: Vec<&Sample> = current.iter().copied().chain(replay.iter()).collect();
            let augmented = augment(originals.iter().map(|s| s.features.as_slice()), self.kind, &mut self.augment);
            let labels: Vec<ClassId> = originals.iter().chain(&originals).map(|s| s.label).collect();
            let x = batch_tensor(
                originals
                    .iter()
                    .map(|s| s.features.as_slice())
                    .chain(augmented.iter().map(Vec::as_slice)),
            )?;

            let mut tape = Tape::new();
            let bound = self.model.bind(&mut tape)?;
            let xv = tape.leaf(x);
            let z = self.model.forward(&mut tape, &bound, xv)?;
            if !tape.value(z).is_finite() {
                return Err(Error::Diverged { task: current[0].task, what: "embeddings" });
            }
            if let Some((ledger, epoch)) = record.take() {
                self.record_confidences(tape.value(z), current, fresh, ledger, epoch)?;
            }
            let loss = match self.model.loss(self.config.loss, &mut tape, &bound, z, &labels, self.config.temperature) {
                Ok(l) => l,
                Err(Error::DegenerateBatch(c)) => {
                    if attempt == 0 && !self.buffer.is_empty() {
                        continue;
                    }
                    log::warn!("skipping a batch whose only class is {c}");
                    return Ok(None);
                }
                Err(e) => return Err(e),
            };
            let value = tape.value(loss).item().ok_or_else(|| Error::Contract("loss is not a scalar".into()))?;
            if !value.is_finite() {
                return Err(Error::Diverged { task: current[0].task, what: "loss" });
            }
            let grads = tape.backward(loss)?;
            self.model.accumulate(&bound, &grads)?;
            self.model.sgd_step(self.config.learning_rate)?;
            return Ok(Some((value, labels.len())));
        }
        log::warn!("skipping a single-class batch after resampling the buffer");
        Ok(None)
    }

    fn record_confidences(
        &self,
        z: &Tensor<f64>,
        current: &[&Sample],
        fresh: &[bool],
        ledger: &mut ConfidenceLedger,
        epoch: usize,
    ) -> Result<()> {
        let d = z.shape()[1];
        let rows = current.len();
        let head = Tensor::new(vec![rows, d], z.data()[..rows * d].to_vec())?;
        let logits = self.model.classifier.logits(&head)?;
        let c = logits.shape()[1];
        let inv = 1.0 / self.confidence_scale();
        let mut probs = vec![0.0; c];
        for (i, s) in current.iter().enumerate() {
            if !fresh[i] {
                continue;
            }
            let scaled: Vec<f64> = logits.data()[i * c..(i + 1) * c].iter().map(|v| v * inv).collect();
            softmax_row(&scaled, &mut probs);
            let target = self.model.classifier.row_of(s.label).ok_or(Error::UnknownClass(s.label))?;
            ledger.record(s.id, epoch, &probs, target)?;
        }
        Ok(())
    }
}
