//! Class-incremental task streams, training augmentation and the corruption
//! suite used for out-of-distribution evaluation.

mod augment;
pub mod cache;
mod corrupt;
mod image;
mod synthetic;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use augment::{augment, augment_image, augment_vector, flip_horizontal, VECTOR_AUGMENT_STD};
pub use corrupt::{
    corrupt, corrupt_image, defocus_blur, gaussian_noise, impulse_noise, pixelate, shot_noise, CorruptionKind,
    CorruptionSpec, MAX_SEVERITY,
};
pub use image::{make_image_stream, ImageStreamSpec};
pub use synthetic::{make_synthetic_stream, SyntheticSpec};

use crate::error::{Error, Result};
use crate::{ClassId, SampleId, TaskId};

/// One labeled input with a stable identity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub id: SampleId,
    pub features: Vec<f64>,
    pub label: ClassId,
    pub task: TaskId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum InputKind {
    Vector { dim: usize },
    /// Single-channel `side × side` grid, row-major, values in [0, 1].
    Image { side: usize },
}

impl InputKind {
    pub fn input_dim(self) -> usize {
        match self {
            InputKind::Vector { dim } => dim,
            InputKind::Image { side } => side * side,
        }
    }

    pub fn side(self) -> Option<usize> {
        match self {
            InputKind::Image { side } => Some(side),
            InputKind::Vector { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Task {
    pub id: TaskId,
    pub classes: Vec<ClassId>,
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskStream {
    pub kind: InputKind,
    pub tasks: Vec<Task>,
}

impl TaskStream {
    pub fn num_tasks(&self) -> usize {
        self.tasks.len()
    }

    /// Checks disjoint class sets, label membership and disjoint splits.
    pub fn validate(&self) -> Result<()> {
        let mut seen_classes = std::collections::HashSet::new();
        let mut seen_ids = std::collections::HashSet::new();
        let dim = self.kind.input_dim();
        for task in &self.tasks {
            for &c in &task.classes {
                if !seen_classes.insert(c) {
                    return Err(Error::InvalidArgument(format!("class {c} appears in more than one task")));
                }
            }
            for s in task.train.iter().chain(&task.test) {
                if !task.classes.contains(&s.label) || s.task != task.id {
                    return Err(Error::InvalidArgument(format!(
                        "sample {} (label {}, task {}) does not belong to task {}",
                        s.id, s.label, s.task, task.id
                    )));
                }
                if s.features.len() != dim {
                    return Err(Error::InvalidArgument(format!("sample {} has {} features, expected {dim}", s.id, s.features.len())));
                }
                if !seen_ids.insert(s.id) {
                    return Err(Error::InvalidArgument(format!("sample id {} is not unique", s.id)));
                }
            }
        }
        Ok(())
    }
}

/// Deterministic generator for one `(seed, stream)` pair.
pub(crate) fn seeded(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Splits each class's samples 80/20 into train and test, preserving order.
pub(crate) fn split_per_class(per_class: Vec<Vec<Sample>>) -> (Vec<Sample>, Vec<Sample>) {
    let mut train = Vec::new();
    let mut test = Vec::new();
    for samples in per_class {
        let n_train = (samples.len() * 4).div_ceil(5);
        let mut it = samples.into_iter();
        train.extend(it.by_ref().take(n_train));
        test.extend(it);
    }
    (train, test)
}

pub(crate) fn class_ids(tasks: usize, classes_per_task: usize) -> Result<usize> {
    tasks
        .checked_mul(classes_per_task)
        .filter(|&n| n < u32::MAX as usize)
        .ok_or_else(|| Error::InvalidArgument(format!("{tasks} × {classes_per_task} classes exceed the label range")))
}
