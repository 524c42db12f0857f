//! Per-sample target-class confidence over the first `E` epochs of a task, and
//! the variance statistic used to rank buffer candidates.

use std::collections::BTreeMap;
use std::io::Write;

use crate::error::{Error, Result};
use crate::{ClassId, SampleId, TaskId};

const ROW_SUM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceLedger {
    horizon: usize,
    task: TaskId,
    /// `(epoch, Γ_e)` pairs, sorted by epoch.
    records: BTreeMap<SampleId, Vec<(usize, f64)>>,
}

impl ConfidenceLedger {
    /// `horizon` is `E`, the number of leading epochs that are recorded.
    pub fn new(task: TaskId, horizon: usize) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::InvalidArgument("confidence horizon must be at least 1".into()));
        }
        Ok(ConfidenceLedger {
            horizon,
            task,
            records: BTreeMap::new(),
        })
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn task(&self) -> TaskId {
        self.task
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn samples(&self) -> impl Iterator<Item = SampleId> + '_ {
        self.records.keys().copied()
    }

    /// Confidences recorded for `sample`, in epoch order.
    pub fn confidences(&self, sample: SampleId) -> Vec<f64> {
        self.records
            .get(&sample)
            .map(|r| r.iter().map(|&(_, g)| g).collect())
            .unwrap_or_default()
    }

    /// Records `Γ_e = probs[target]` for `sample` at 1-based `epoch ≤ E`.
    pub fn record(&mut self, sample: SampleId, epoch: usize, probs: &[f64], target: usize) -> Result<()> {
        if epoch == 0 || epoch > self.horizon {
            return Err(Error::InvalidArgument(format!(
                "epoch {epoch} outside the recorded range 1..={}",
                self.horizon
            )));
        }
        let &gamma = probs.get(target).ok_or_else(|| {
            Error::InvalidArgument(format!("target {target} outside a row of {} probabilities", probs.len()))
        })?;
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > ROW_SUM_TOLERANCE || probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::InvalidArgument(format!("not a probability row (sums to {sum})")));
        }
        let recs = self.records.entry(sample).or_default();
        match recs.binary_search_by_key(&epoch, |&(e, _)| e) {
            Ok(_) => Err(Error::DuplicateRecord { sample, epoch }),
            Err(pos) => {
                recs.insert(pos, (epoch, gamma));
                Ok(())
            }
        }
    }

    fn complete(&self, sample: SampleId) -> Result<&[(usize, f64)]> {
        let recs = self.records.get(&sample).map(Vec::as_slice).unwrap_or(&[]);
        if recs.len() != self.horizon {
            return Err(Error::IncompleteRecords {
                sample,
                have: recs.len(),
                need: self.horizon,
            });
        }
        Ok(recs)
    }

    pub fn is_complete(&self, sample: SampleId) -> bool {
        self.complete(sample).is_ok()
    }

    /// Population variance `σ² = (1/E) Σ_e (Γ_e − Γ̄)²`, accumulated with
    /// Welford's update.
    pub fn variance(&self, sample: SampleId) -> Result<f64> {
        let recs = self.complete(sample)?;
        let (mut mean, mut m2) = (0.0, 0.0);
        for (k, &(_, g)) in recs.iter().enumerate() {
            let delta = g - mean;
            mean += delta / (k + 1) as f64;
            m2 += delta * (g - mean);
        }
        Ok((m2 / recs.len() as f64).max(0.0))
    }

    /// `Γ̄`, the mean confidence over the `E` records.
    pub fn mean_confidence(&self, sample: SampleId) -> Result<f64> {
        let recs = self.complete(sample)?;
        Ok(recs.iter().map(|&(_, g)| g).sum::<f64>() / recs.len() as f64)
    }

    /// Samples of one class by descending variance; ties by ascending id.
    pub fn rank_class(&self, class: ClassId, samples: &[SampleId]) -> Result<Vec<SampleId>> {
        self.rank_by(class, samples, |l, s| l.variance(s), true)
    }

    /// Samples of one class by ascending mean confidence; ties by ascending id.
    pub fn rank_class_by_mean(&self, class: ClassId, samples: &[SampleId]) -> Result<Vec<SampleId>> {
        self.rank_by(class, samples, |l, s| l.mean_confidence(s), false)
    }

    fn rank_by(
        &self,
        class: ClassId,
        samples: &[SampleId],
        key: impl Fn(&Self, SampleId) -> Result<f64>,
        descending: bool,
    ) -> Result<Vec<SampleId>> {
        let mut keyed = samples
            .iter()
            .map(|&s| key(self, s).map(|k| (k, s)))
            .collect::<Result<Vec<_>>>()
            .map_err(|e| {
                log::debug!("ranking class {class}: {e}");
                e
            })?;
        keyed.sort_by(|a, b| {
            let ord = a.0.total_cmp(&b.0);
            let ord = if descending { ord.reverse() } else { ord };
            ord.then(a.1.cmp(&b.1))
        });
        Ok(keyed.into_iter().map(|(_, s)| s).collect())
    }

    /// Writes `sample_id,class,gamma_1..gamma_E,variance` rows for complete samples.
    pub fn write_csv<W: Write>(&self, mut out: W, class_of: impl Fn(SampleId) -> Option<ClassId>) -> std::io::Result<()> {
        write!(out, "sample_id,class")?;
        for e in 1..=self.horizon {
            write!(out, ",gamma_{e}")?;
        }
        writeln!(out, ",variance")?;
        for (&s, recs) in &self.records {
            let Ok(var) = self.variance(s) else { continue };
            let class = class_of(s).map(|c| c.to_string()).unwrap_or_default();
            write!(out, "{s},{class}")?;
            for &(_, g) in recs {
                write!(out, ",{g:.6}")?;
            }
            writeln!(out, ",{var:.8}")?;
        }
        Ok(())
    }
}
