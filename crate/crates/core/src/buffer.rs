//! Capacity-bounded replay memory partitioned by task, then class.
//!
//! Balanced policies touch the buffer only at task boundaries: old classes are
//! truncated to their new quota ([`ReplayBuffer::prune_lowest_variance`]) and
//! the finished task's classes are filled with their quota of selected samples.
//! Within a class list, samples are kept in selection order, so truncation
//! always drops the least preferred tail. The reservoir policy ignores the
//! partition structure and keeps one flat list.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use indexmap::IndexMap;
use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::confidence::ConfidenceLedger;
use crate::data::Sample;
use crate::error::{Error, Result};
use crate::{ClassId, SampleId, TaskId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Policy {
    /// Highest confidence variance per class (ACR).
    #[default]
    #[serde(alias = "acr")]
    Challenging,
    /// Lowest mean confidence per class.
    Hard,
    /// Uniform choice per class under the same quotas.
    RandomBalanced,
    /// Batch-wise reservoir sampling over the whole stream.
    Reservoir,
}

impl Policy {
    pub const ALL: [Policy; 4] = [Policy::Challenging, Policy::Hard, Policy::RandomBalanced, Policy::Reservoir];

    pub fn name(self) -> &'static str {
        match self {
            Policy::Challenging => "challenging",
            Policy::Hard => "hard",
            Policy::RandomBalanced => "random-balanced",
            Policy::Reservoir => "reservoir",
        }
    }

    pub fn is_balanced(self) -> bool {
        self != Policy::Reservoir
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Policy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "acr" {
            return Ok(Policy::Challenging);
        }
        Policy::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown policy {s:?}")))
    }
}

/// Per-class slot allocation after `t = tasks.len()` tasks.
///
/// Each class of task `k` gets `⌊capacity / (t·|Cᵏ|)⌋`; the remaining slots go
/// one each to classes in (task, class) order. When the capacity is smaller
/// than the number of classes, the earliest `capacity` classes get one slot.
pub fn class_quota(capacity: usize, tasks: &[(TaskId, Vec<ClassId>)]) -> Result<IndexMap<ClassId, usize>> {
    if tasks.is_empty() {
        return Err(Error::InvalidArgument("quota needs at least one task".into()));
    }
    if let Some((t, _)) = tasks.iter().find(|(_, c)| c.is_empty()) {
        return Err(Error::InvalidArgument(format!("task {t} has no classes")));
    }
    let t = tasks.len();
    let all: Vec<(ClassId, usize)> = tasks
        .iter()
        .flat_map(|(_, classes)| classes.iter().map(move |&c| (c, classes.len())))
        .collect();
    if capacity < all.len() {
        log::warn!(
            "buffer capacity {capacity} is below the {} classes seen; only the earliest classes get a slot",
            all.len()
        );
        return Ok(all.iter().enumerate().map(|(i, &(c, _))| (c, usize::from(i < capacity))).collect());
    }
    let mut quotas: IndexMap<ClassId, usize> = all.iter().map(|&(c, n)| (c, capacity / (t * n))).collect();
    let mut leftover = capacity - quotas.values().sum::<usize>();
    for q in quotas.values_mut() {
        if leftover == 0 {
            break;
        }
        *q += 1;
        leftover -= 1;
    }
    debug_assert_eq!(leftover, 0);
    Ok(quotas)
}

/// Classes that received fewer samples than their quota.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct UpdateReport {
    pub inserted: usize,
    pub shortfalls: Vec<(ClassId, usize, usize)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayBuffer {
    capacity: usize,
    policy: Policy,
    partitions: IndexMap<TaskId, IndexMap<ClassId, Vec<Sample>>>,
    flat: Vec<Sample>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, policy: Policy) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::InvalidArgument("buffer capacity must be at least 1".into()));
        }
        Ok(ReplayBuffer {
            capacity,
            policy,
            partitions: IndexMap::new(),
            flat: Vec::new(),
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn policy(&self) -> Policy {
        self.policy
    }

    pub fn len(&self) -> usize {
        self.flat.len() + self.partitions.values().flat_map(|p| p.values()).map(Vec::len).sum::<usize>()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Every stored sample: partitions in (task, class, rank) order, then the flat list.
    pub fn iter(&self) -> impl Iterator<Item = &Sample> {
        self.partitions
            .values()
            .flat_map(|p| p.values())
            .flatten()
            .chain(&self.flat)
    }

    /// Stored samples of one class of one task, best-ranked first.
    pub fn class_samples(&self, task: TaskId, class: ClassId) -> &[Sample] {
        self.partitions
            .get(&task)
            .and_then(|p| p.get(&class))
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    /// Declares a task and its classes (arrival order) without storing anything.
    pub fn register_task(&mut self, task: TaskId, classes: &[ClassId]) {
        let part = self.partitions.entry(task).or_default();
        for &c in classes {
            part.entry(c).or_default();
        }
    }

    /// Quotas for every registered task plus `task`.
    pub fn plan_quotas(&self, task: TaskId, classes: &[ClassId]) -> Result<IndexMap<ClassId, usize>> {
        let mut tasks: Vec<(TaskId, Vec<ClassId>)> = self
            .partitions
            .iter()
            .map(|(&t, p)| (t, p.keys().copied().collect()))
            .collect();
        match tasks.iter_mut().find(|(t, _)| *t == task) {
            Some(entry) => {
                for &c in classes {
                    if !entry.1.contains(&c) {
                        entry.1.push(c);
                    }
                }
            }
            None => tasks.push((task, classes.to_vec())),
        }
        class_quota(self.capacity, &tasks)
    }

    /// Truncates every stored class to its quota, dropping the tail of its
    /// ranked list. Classes at or under quota are untouched.
    pub fn prune_lowest_variance(&mut self, quotas: &IndexMap<ClassId, usize>) -> Vec<Sample> {
        let mut removed = Vec::new();
        for part in self.partitions.values_mut() {
            for (c, list) in part.iter_mut() {
                if let Some(&q) = quotas.get(c) {
                    if list.len() > q {
                        removed.extend(list.drain(q..));
                    }
                }
            }
        }
        removed
    }

    /// Stores, per class of `task`, the quota-many samples with the highest
    /// confidence variance, in descending variance order.
    pub fn update_challenging(
        &mut self,
        ledger: &ConfidenceLedger,
        task: TaskId,
        samples: &[Sample],
        quotas: &IndexMap<ClassId, usize>,
    ) -> Result<UpdateReport> {
        self.update_ranked(task, samples, quotas, |c, ids| ledger.rank_class(c, ids))
    }

    /// Stores, per class of `task`, the quota-many samples with the lowest
    /// mean confidence, in ascending order.
    pub fn update_hard(
        &mut self,
        ledger: &ConfidenceLedger,
        task: TaskId,
        samples: &[Sample],
        quotas: &IndexMap<ClassId, usize>,
    ) -> Result<UpdateReport> {
        self.update_ranked(task, samples, quotas, |c, ids| ledger.rank_class_by_mean(c, ids))
    }

    /// Stores, per class of `task`, a uniform quota-sized subset.
    pub fn update_random_balanced<R: Rng + ?Sized>(
        &mut self,
        rng: &mut R,
        task: TaskId,
        samples: &[Sample],
        quotas: &IndexMap<ClassId, usize>,
    ) -> Result<UpdateReport> {
        self.update_ranked(task, samples, quotas, |_, ids| {
            let k = ids.len();
            Ok(index::sample(rng, k, k).into_iter().map(|i| ids[i]).collect())
        })
    }

    fn update_ranked(
        &mut self,
        task: TaskId,
        samples: &[Sample],
        quotas: &IndexMap<ClassId, usize>,
        mut rank: impl FnMut(ClassId, &[SampleId]) -> Result<Vec<SampleId>>,
    ) -> Result<UpdateReport> {
        if !self.policy.is_balanced() {
            return Err(Error::Contract(format!("{} buffers are not updated per task", self.policy)));
        }
        let mut by_class: BTreeMap<ClassId, Vec<&Sample>> = BTreeMap::new();
        for s in samples {
            by_class.entry(s.label).or_default().push(s);
        }
        let classes: Vec<ClassId> = by_class.keys().copied().collect();
        self.register_task(task, &classes);

        let mut report = UpdateReport::default();
        for (c, members) in by_class {
            let quota = *quotas
                .get(&c)
                .ok_or_else(|| Error::Contract(format!("no quota planned for class {c}")))?;
            let ids: Vec<SampleId> = members.iter().map(|s| s.id).collect();
            let by_id: BTreeMap<SampleId, &Sample> = members.iter().map(|s| (s.id, *s)).collect();
            let ranked = rank(c, &ids)?;
            let chosen: Vec<Sample> = ranked.iter().take(quota).map(|id| by_id[id].clone()).collect();
            if chosen.len() < quota {
                log::warn!("class {c}: only {} samples for a quota of {quota}", chosen.len());
                report.shortfalls.push((c, chosen.len(), quota));
            }
            report.inserted += chosen.len();
            self.partitions[&task][&c] = chosen;
        }
        if self.len() > self.capacity {
            return Err(Error::Contract(format!(
                "buffer holds {} samples, capacity {}; prune before updating",
                self.len(),
                self.capacity
            )));
        }
        Ok(report)
    }

    /// Reservoir step for the `n`-th stream element (1-based): append while
    /// there is room, otherwise replace a uniform slot with probability `capacity/n`.
    pub fn reservoir_insert<R: Rng + ?Sized>(&mut self, rng: &mut R, sample: Sample, n: usize) {
        if self.flat.len() < self.capacity {
            self.flat.push(sample);
            return;
        }
        let j = rng.random_range(0..n.max(1));
        if j < self.capacity {
            self.flat[j] = sample;
        }
    }

    /// `b` samples drawn uniformly with replacement; empty when the buffer is.
    pub fn random_retrieval<R: Rng + ?Sized>(&self, rng: &mut R, b: usize) -> Vec<&Sample> {
        let all: Vec<&Sample> = self.iter().collect();
        if all.is_empty() {
            return Vec::new();
        }
        (0..b).map(|_| all[rng.random_range(0..all.len())]).collect()
    }

    pub fn snapshot(&self) -> BufferSnapshot {
        let mut tasks: IndexMap<TaskId, IndexMap<ClassId, Vec<SampleId>>> = self
            .partitions
            .iter()
            .map(|(&t, p)| (t, p.iter().map(|(&c, l)| (c, l.iter().map(|s| s.id).collect())).collect()))
            .collect();
        for s in &self.flat {
            tasks.entry(s.task).or_default().entry(s.label).or_default().push(s.id);
        }
        BufferSnapshot {
            capacity: self.capacity,
            policy: self.policy,
            tasks,
        }
    }
}

/// Immutable view of buffer membership: task → class → sample ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BufferSnapshot {
    pub capacity: usize,
    pub policy: Policy,
    pub tasks: IndexMap<TaskId, IndexMap<ClassId, Vec<SampleId>>>,
}

impl BufferSnapshot {
    pub fn len(&self) -> usize {
        self.class_counts().iter().sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn task_counts(&self) -> Vec<usize> {
        self.tasks.values().map(|p| p.values().map(Vec::len).sum()).collect()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        self.tasks.values().flat_map(|p| p.values().map(Vec::len)).collect()
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "capacity": self.capacity,
            "policy": self.policy,
            "tasks": self.tasks,
            "task_counts": self.task_counts(),
            "class_counts": self.class_counts(),
        })
    }
}

/// `(population std / mean) × 100`.
pub fn coefficient_of_variation(counts: &[usize]) -> Result<f64> {
    if counts.is_empty() {
        return Err(Error::Undefined("coefficient of variation of no counts"));
    }
    let n = counts.len() as f64;
    let mean = counts.iter().sum::<usize>() as f64 / n;
    if mean == 0.0 {
        return Err(Error::Undefined("coefficient of variation of all-zero counts"));
    }
    let var = counts.iter().map(|&c| (c as f64 - mean).powi(2)).sum::<f64>() / n;
    Ok(var.sqrt() / mean * 100.0)
}
