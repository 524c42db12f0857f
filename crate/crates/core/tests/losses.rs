//! Loss values against independent scalar evaluations.

use acr::autodiff::Tape;
use acr::model::{ce_loss, pcl_loss, ProxyClassifier};
use acr::tensor::Tensor;
use acr::ClassId;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Batch {
    z: Vec<Vec<f64>>,
    labels: Vec<ClassId>,
    proxies: Vec<Vec<f64>>,
}

fn random_batch(rng: &mut ChaCha8Rng, n: usize, d: usize, classes: usize) -> Batch {
    let mut labels: Vec<ClassId> = (0..n).map(|_| rng.random_range(0..classes)).collect();
    // at least two classes present
    labels[0] = 0;
    labels[n - 1] = 1;
    Batch {
        z: (0..n).map(|_| (0..d).map(|_| rng.random_range(-2.0..2.0)).collect()).collect(),
        labels,
        proxies: (0..classes).map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()).collect(),
    }
}

fn classifier(proxies: &[Vec<f64>]) -> ProxyClassifier<f64> {
    let mut c = ProxyClassifier::new(proxies[0].len());
    for (k, p) in proxies.iter().enumerate() {
        c.add_class_with(k, p.clone());
    }
    c
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Direct scalar evaluation of the proxy contrastive loss.
fn pcl_oracle(b: &Batch, tau: f64, set: &[ClassId]) -> f64 {
    let n = b.z.len() as f64;
    let total: f64 = b
        .z
        .iter()
        .zip(&b.labels)
        .map(|(z, &y)| {
            let num = (dot(z, &b.proxies[y]) / tau).exp();
            let den: f64 = set.iter().map(|&l| (dot(z, &b.proxies[l]) / tau).exp()).sum();
            (num / den).ln()
        })
        .sum();
    -total / n
}

fn pcl(b: &Batch, tau: f64, set: &[ClassId]) -> f64 {
    let c = classifier(&b.proxies);
    let mut tape = Tape::new();
    let z = tape.leaf(Tensor::from_rows(&b.z).unwrap());
    let w = tape.leaf(c.proxies().unwrap().value().clone());
    let l = pcl_loss(&mut tape, z, &b.labels, &c, w, tau, set).unwrap();
    tape.value(l).item().unwrap()
}

fn ce(b: &Batch) -> f64 {
    let c = classifier(&b.proxies);
    let mut tape = Tape::new();
    let z = tape.leaf(Tensor::from_rows(&b.z).unwrap());
    let w = tape.leaf(c.proxies().unwrap().value().clone());
    let l = ce_loss(&mut tape, z, &b.labels, &c, w).unwrap();
    tape.value(l).item().unwrap()
}

fn present(labels: &[ClassId]) -> Vec<ClassId> {
    let mut s = labels.to_vec();
    s.sort_unstable();
    s.dedup();
    s
}

#[test]
fn pcl_matches_direct_evaluation() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for _ in 0..50 {
        let b = random_batch(&mut rng, 9, 5, 6);
        let tau = rng.random_range(0.1..2.0);
        let set = present(&b.labels);
        let (got, want) = (pcl(&b, tau, &set), pcl_oracle(&b, tau, &set));
        assert!((got - want).abs() < 1e-10 * want.abs().max(1.0), "{got} vs {want}");
    }
}

#[test]
fn single_sample_orthonormal_proxies() {
    // z = W_y with orthonormal proxies, τ = 1: loss = −ln(e / (e + C − 1))
    for c in 2..6usize {
        let proxies: Vec<Vec<f64>> = (0..c).map(|k| (0..c).map(|j| f64::from(u8::from(j == k))).collect()).collect();
        let b = Batch {
            z: vec![proxies[0].clone()],
            labels: vec![0],
            proxies,
        };
        let set: Vec<ClassId> = (0..c).collect();
        let e = std::f64::consts::E;
        let want = -(e / (e + (c - 1) as f64)).ln();
        assert!((pcl(&b, 1.0, &set) - want).abs() < 1e-14);
    }
}

#[test]
fn all_classes_at_unit_temperature_is_cross_entropy() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..100 {
        let b = random_batch(&mut rng, 7, 4, 5);
        let all: Vec<ClassId> = (0..5).collect();
        assert!((pcl(&b, 1.0, &all) - ce(&b)).abs() < 1e-12);
    }
}

#[test]
fn invariant_to_a_shared_proxy_shift() {
    // adding v to every proxy adds z·v to every logit of a row
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..20 {
        let b = random_batch(&mut rng, 6, 4, 4);
        let v: Vec<f64> = (0..4).map(|_| rng.random_range(-3.0..3.0)).collect();
        let shifted = Batch {
            proxies: b.proxies.iter().map(|p| p.iter().zip(&v).map(|(a, c)| a + c).collect()).collect(),
            z: b.z.clone(),
            labels: b.labels.clone(),
        };
        let set = present(&b.labels);
        assert!((pcl(&b, 0.5, &set) - pcl(&shifted, 0.5, &set)).abs() < 1e-9);
    }
}

#[test]
fn batch_class_subset_never_exceeds_all_classes() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..100 {
        let b = random_batch(&mut rng, 5, 3, 8);
        let all: Vec<ClassId> = (0..8).collect();
        let tau = rng.random_range(0.1..1.0);
        assert!(pcl(&b, tau, &present(&b.labels)) <= pcl(&b, tau, &all) + 1e-12);
    }
}

#[test]
fn loss_is_non_negative_and_finite_at_low_temperature() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let b = random_batch(&mut rng, 8, 6, 4);
    let l = pcl(&b, 0.01, &present(&b.labels));
    assert!(l.is_finite() && l >= 0.0);
}
