use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{class_ids, seeded, split_per_class, InputKind, Sample, Task, TaskStream};
use crate::error::{Error, Result};

/// Gaussian-blob classes in `dim` dimensions.
///
/// Each class mean is a random unit direction scaled by `margin`; samples add
/// unit-variance isotropic noise. A margin of 0 makes every class identical.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub tasks: usize,
    pub classes_per_task: usize,
    pub samples_per_class: usize,
    pub dim: usize,
    pub margin: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            tasks: 5,
            classes_per_task: 4,
            samples_per_class: 250,
            dim: 16,
            margin: 3.0,
            seed: 0,
        }
    }
}

pub fn make_synthetic_stream(spec: &SyntheticSpec) -> Result<TaskStream> {
    if spec.tasks == 0 || spec.classes_per_task == 0 || spec.samples_per_class == 0 || spec.dim == 0 {
        return Err(Error::InvalidArgument(format!("stream parameters must be positive: {spec:?}")));
    }
    if !(spec.margin >= 0.0) {
        return Err(Error::InvalidArgument(format!("margin must be non-negative, got {}", spec.margin)));
    }
    class_ids(spec.tasks, spec.classes_per_task)?;
    let mut next_id = 0u64;
    let tasks = (0..spec.tasks)
        .map(|t| {
            let classes: Vec<usize> = (t * spec.classes_per_task..(t + 1) * spec.classes_per_task).collect();
            let per_class = classes
                .iter()
                .map(|&c| {
                    let mut rng = seeded(spec.seed, c as u64);
                    let mut mean: Vec<f64> = (0..spec.dim).map(|_| StandardNormal.sample(&mut rng)).collect();
                    let norm = mean.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
                    mean.iter_mut().for_each(|v| *v *= spec.margin / norm);
                    (0..spec.samples_per_class)
                        .map(|_| {
                            let features = mean
                                .iter()
                                .map(|&m| m + rng.sample::<f64, _>(StandardNormal))
                                .collect();
                            let s = Sample { id: next_id, features, label: c, task: t };
                            next_id += 1;
                            s
                        })
                        .collect()
                })
                .collect();
            let (train, test) = split_per_class(per_class);
            Task { id: t, classes, train, test }
        })
        .collect();
    Ok(TaskStream {
        kind: InputKind::Vector { dim: spec.dim },
        tasks,
    })
}
