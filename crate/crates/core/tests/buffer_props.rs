//! Replay-buffer properties: quotas, selection oracles, sampling frequencies.

use std::collections::HashMap;

use acr::buffer::{class_quota, coefficient_of_variation, Policy, ReplayBuffer};
use acr::confidence::ConfidenceLedger;
use acr::data::Sample;
use acr::{ClassId, SampleId, TaskId};
use indexmap::IndexMap;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn sample(id: SampleId, label: ClassId, task: TaskId) -> Sample {
    Sample { id, features: vec![0.0], label, task }
}

fn task_samples(task: TaskId, classes: &[ClassId], per_class: usize) -> Vec<Sample> {
    let mut out = Vec::new();
    for &c in classes {
        for k in 0..per_class {
            out.push(sample((task * 100_000 + c * 1000 + k) as SampleId, c, task));
        }
    }
    out
}

/// Ledger whose target confidences are uniform in [0, 1).
fn random_ledger(rng: &mut ChaCha8Rng, task: TaskId, ids: &[SampleId], e: usize) -> ConfidenceLedger {
    let mut l = ConfidenceLedger::new(task, e).unwrap();
    for &id in ids {
        for epoch in 1..=e {
            let g: f64 = rng.random_range(0.0..1.0);
            l.record(id, epoch, &[g, 1.0 - g], 0).unwrap();
        }
    }
    l
}

fn naive_variance(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n
}

proptest! {
    #[test]
    fn quotas_fill_capacity_fairly(
        capacity in 1usize..500,
        sizes in prop::collection::vec(1usize..12, 1..8),
    ) {
        let mut next = 0;
        let tasks: Vec<(TaskId, Vec<ClassId>)> = sizes
            .iter()
            .enumerate()
            .map(|(t, &n)| {
                let cs = (next..next + n).collect();
                next += n;
                (t, cs)
            })
            .collect();
        let q = class_quota(capacity, &tasks).unwrap();
        let total: usize = q.values().sum();
        prop_assert_eq!(total, capacity);
        if capacity >= next {
            let t = tasks.len();
            for (_, classes) in &tasks {
                let fair = capacity / (t * classes.len());
                for c in classes {
                    prop_assert!(q[c] == fair || q[c] == fair + 1);
                }
            }
        }
    }

    #[test]
    fn challenging_update_is_top_k_by_variance(seed in 0u64..1000, quota in 0usize..30) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let samples = task_samples(0, &[7], 25);
        let ids: Vec<SampleId> = samples.iter().map(|s| s.id).collect();
        let ledger = random_ledger(&mut rng, 0, &ids, 5);
        let mut b = ReplayBuffer::new(1000, Policy::Challenging).unwrap();
        let mut q = IndexMap::new();
        q.insert(7, quota);
        b.update_challenging(&ledger, 0, &samples, &q).unwrap();
        let got: Vec<SampleId> = b.class_samples(0, 7).iter().map(|s| s.id).collect();

        let mut oracle: Vec<(f64, SampleId)> = ids
            .iter()
            .map(|&id| (naive_variance(&ledger.confidences(id)), id))
            .collect();
        oracle.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
        let want: Vec<SampleId> = oracle.iter().take(quota).map(|p| p.1).collect();
        prop_assert_eq!(got.len(), quota.min(25));
        // ties within 1e-12 may order either way; compare variances
        for (g, w) in got.iter().zip(&want) {
            let vg = naive_variance(&ledger.confidences(*g));
            let vw = naive_variance(&ledger.confidences(*w));
            prop_assert!((vg - vw).abs() < 1e-12);
        }
    }

    #[test]
    fn hard_update_is_bottom_k_by_mean(seed in 0u64..1000, quota in 1usize..25) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let samples = task_samples(0, &[3], 25);
        let ids: Vec<SampleId> = samples.iter().map(|s| s.id).collect();
        let ledger = random_ledger(&mut rng, 0, &ids, 4);
        let mut b = ReplayBuffer::new(1000, Policy::Hard).unwrap();
        let mut q = IndexMap::new();
        q.insert(3, quota);
        b.update_hard(&ledger, 0, &samples, &q).unwrap();
        let kept: Vec<f64> = b.class_samples(0, 3).iter().map(|s| ledger.mean_confidence(s.id).unwrap()).collect();
        let mut all: Vec<f64> = ids.iter().map(|&id| ledger.mean_confidence(id).unwrap()).collect();
        all.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let worst_kept = kept.iter().cloned().fold(f64::MIN, f64::max);
        prop_assert!(worst_kept <= all[quota - 1] + 1e-12);
    }

    #[test]
    fn balanced_runs_never_exceed_capacity(
        capacity in 1usize..120,
        tasks in 1usize..6,
        per_class in 1usize..30,
        seed in 0u64..100,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut b = ReplayBuffer::new(capacity, Policy::RandomBalanced).unwrap();
        for t in 0..tasks {
            let classes = [2 * t, 2 * t + 1];
            let samples = task_samples(t, &classes, per_class);
            let q = b.plan_quotas(t, &classes).unwrap();
            b.prune_lowest_variance(&q);
            b.update_random_balanced(&mut rng, t, &samples, &q).unwrap();
            prop_assert!(b.len() <= capacity);
            for (c, &quota) in &q {
                let task = c / 2;
                prop_assert!(b.class_samples(task, *c).len() <= quota);
            }
        }
    }
}

#[test]
fn balance_after_every_boundary_with_divisible_capacity() {
    // 240 is divisible by t·4 for t = 1..=5
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut b = ReplayBuffer::new(240, Policy::Challenging).unwrap();
    for t in 0..5 {
        let classes: Vec<ClassId> = (4 * t..4 * t + 4).collect();
        let samples = task_samples(t, &classes, 100);
        let ids: Vec<SampleId> = samples.iter().map(|s| s.id).collect();
        let ledger = random_ledger(&mut rng, t, &ids, 5);
        let q = b.plan_quotas(t, &classes).unwrap();
        b.prune_lowest_variance(&q);
        b.update_challenging(&ledger, t, &samples, &q).unwrap();
        let snap = b.snapshot();
        assert_eq!(snap.len(), 240);
        assert_eq!(coefficient_of_variation(&snap.task_counts()).unwrap(), 0.0);
        assert_eq!(coefficient_of_variation(&snap.class_counts()).unwrap(), 0.0);
    }
}

#[test]
fn second_boundary_prunes_old_classes_to_the_new_quota() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut b = ReplayBuffer::new(200, Policy::Challenging).unwrap();
    let first = task_samples(0, &[0, 1, 2, 3], 60);
    let ids: Vec<SampleId> = first.iter().map(|s| s.id).collect();
    let l0 = random_ledger(&mut rng, 0, &ids, 5);
    let q = b.plan_quotas(0, &[0, 1, 2, 3]).unwrap();
    b.update_challenging(&l0, 0, &first, &q).unwrap();
    assert_eq!(b.class_samples(0, 0).len(), 50);
    let top25: Vec<SampleId> = b.class_samples(0, 0)[..25].iter().map(|s| s.id).collect();

    let second = task_samples(1, &[4, 5, 6, 7], 60);
    let ids: Vec<SampleId> = second.iter().map(|s| s.id).collect();
    let l1 = random_ledger(&mut rng, 1, &ids, 5);
    let q = b.plan_quotas(1, &[4, 5, 6, 7]).unwrap();
    let removed = b.prune_lowest_variance(&q);
    assert_eq!(removed.len(), 100);
    b.update_challenging(&l1, 1, &second, &q).unwrap();
    let kept: Vec<SampleId> = b.class_samples(0, 0).iter().map(|s| s.id).collect();
    assert_eq!(kept, top25);
    assert_eq!(b.len(), 200);
}

#[test]
fn update_is_idempotent() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let samples = task_samples(0, &[0, 1], 30);
    let ids: Vec<SampleId> = samples.iter().map(|s| s.id).collect();
    let l = random_ledger(&mut rng, 0, &ids, 5);
    let mut b = ReplayBuffer::new(20, Policy::Challenging).unwrap();
    let q = b.plan_quotas(0, &[0, 1]).unwrap();
    b.update_challenging(&l, 0, &samples, &q).unwrap();
    let once = b.snapshot();
    b.update_challenging(&l, 0, &samples, &q).unwrap();
    assert_eq!(b.snapshot(), once);
}

#[test]
fn incomplete_ledger_is_rejected() {
    let samples = task_samples(0, &[0, 1], 3);
    let l = ConfidenceLedger::new(0, 5).unwrap();
    let mut b = ReplayBuffer::new(4, Policy::Challenging).unwrap();
    let q = b.plan_quotas(0, &[0, 1]).unwrap();
    assert!(b.update_challenging(&l, 0, &samples, &q).is_err());
}

#[test]
fn random_balanced_selects_uniformly() {
    // quota 50 of 200: each sample kept with probability 1/4
    let samples = task_samples(0, &[0], 200);
    let mut counts: HashMap<SampleId, usize> = HashMap::new();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let trials = 10_000;
    for _ in 0..trials {
        let mut b = ReplayBuffer::new(50, Policy::RandomBalanced).unwrap();
        let q = b.plan_quotas(0, &[0]).unwrap();
        b.update_random_balanced(&mut rng, 0, &samples, &q).unwrap();
        for s in b.iter() {
            *counts.entry(s.id).or_default() += 1;
        }
    }
    // binomial(10000, 0.25): std ≈ 43.3; 3.5σ ≈ 150
    for s in &samples {
        let c = counts.get(&s.id).copied().unwrap_or(0) as f64;
        assert!((c - 2500.0).abs() < 150.0, "sample {} kept {c} times", s.id);
    }
}

#[test]
fn retrieval_is_uniform_with_replacement() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut b = ReplayBuffer::new(10, Policy::Reservoir).unwrap();
    for i in 0..10 {
        b.reservoir_insert(&mut rng, sample(i, 0, 0), i as usize + 1);
    }
    let mut counts = [0usize; 10];
    for _ in 0..2000 {
        for s in b.random_retrieval(&mut rng, 10) {
            counts[s.id as usize] += 1;
        }
    }
    // 20000 draws, p = 0.1: mean 2000, std ≈ 42
    for c in counts {
        assert!((c as f64 - 2000.0).abs() < 200.0, "{counts:?}");
    }
}

#[test]
fn reservoir_retention_is_capacity_over_stream_length() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let trials = 4000;
    let mut kept = vec![0usize; 1000];
    for _ in 0..trials {
        let mut b = ReplayBuffer::new(100, Policy::Reservoir).unwrap();
        for i in 0..1000u64 {
            b.reservoir_insert(&mut rng, sample(i, 0, 0), i as usize + 1);
        }
        assert_eq!(b.len(), 100);
        for s in b.iter() {
            kept[s.id as usize] += 1;
        }
    }
    let rates: Vec<f64> = kept.iter().map(|&k| k as f64 / trials as f64).collect();
    let mean = rates.iter().sum::<f64>() / rates.len() as f64;
    assert!((mean - 0.1).abs() < 1e-12);
    // per-item std at 4000 trials ≈ 0.0047
    assert!(rates.iter().all(|r| (r - 0.1).abs() < 0.025));
}
