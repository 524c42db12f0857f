use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{class_ids, seeded, split_per_class, InputKind, Sample, Task, TaskStream};
use crate::error::{Error, Result};

/// Procedural grayscale glyph classes.
///
/// Every class is a fixed set of soft line strokes. Samples perturb the glyph
/// (`jitter` scales translation, endpoint wobble, stroke width, brightness and
/// pixel noise), a share of samples is blended with another glyph of the same
/// task (`ambiguity` is the largest blend weight), and `outlier_fraction` of
/// samples are unrelated random glyphs that keep their label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ImageStreamSpec {
    pub tasks: usize,
    pub classes_per_task: usize,
    pub samples_per_class: usize,
    pub side: usize,
    pub strokes: usize,
    pub jitter: f64,
    pub ambiguity: f64,
    pub outlier_fraction: f64,
    pub seed: u64,
}

impl Default for ImageStreamSpec {
    fn default() -> Self {
        ImageStreamSpec {
            tasks: 5,
            classes_per_task: 4,
            samples_per_class: 250,
            side: 12,
            strokes: 3,
            jitter: 1.0,
            ambiguity: 0.5,
            outlier_fraction: 0.05,
            seed: 0,
        }
    }
}

type Stroke = [f64; 4];

fn random_glyph<R: Rng + ?Sized>(rng: &mut R, strokes: usize) -> Vec<Stroke> {
    (0..strokes)
        .map(|_| std::array::from_fn(|_| rng.random_range(0.15..0.85)))
        .collect()
}

struct Pose {
    shift: (f64, f64),
    wobble: Vec<Stroke>,
    width: f64,
    brightness: f64,
}

impl Pose {
    fn sample<R: Rng + ?Sized>(rng: &mut R, strokes: usize, jitter: f64) -> Self {
        let mut n = || -> f64 { StandardNormal.sample(rng) };
        Pose {
            shift: (0.05 * jitter * n(), 0.05 * jitter * n()),
            wobble: (0..strokes)
                .map(|_| std::array::from_fn(|_| 0.03 * jitter * n()))
                .collect(),
            width: 0.07 * (1.0 + 0.15 * jitter * n()).clamp(0.6, 1.4),
            brightness: 1.0 - 0.2 * jitter * n().abs().min(1.5),
        }
    }
}

fn segment_distance2(px: f64, py: f64, s: &Stroke) -> f64 {
    let (ax, ay, bx, by) = (s[0], s[1], s[2], s[3]);
    let (dx, dy) = (bx - ax, by - ay);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((px - ax) * dx + (py - ay) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let (cx, cy) = (ax + t * dx - px, ay + t * dy - py);
    cx * cx + cy * cy
}

fn render(glyph: &[Stroke], pose: &Pose, side: usize) -> Vec<f64> {
    let strokes: Vec<Stroke> = glyph
        .iter()
        .zip(&pose.wobble)
        .map(|(s, w)| {
            [
                s[0] + w[0] + pose.shift.0,
                s[1] + w[1] + pose.shift.1,
                s[2] + w[2] + pose.shift.0,
                s[3] + w[3] + pose.shift.1,
            ]
        })
        .collect();
    let inv = 1.0 / (2.0 * pose.width * pose.width);
    let mut out = Vec::with_capacity(side * side);
    for i in 0..side {
        for j in 0..side {
            let (px, py) = ((j as f64 + 0.5) / side as f64, (i as f64 + 0.5) / side as f64);
            let d2 = strokes
                .iter()
                .map(|s| segment_distance2(px, py, s))
                .fold(f64::INFINITY, f64::min);
            out.push(pose.brightness * (-d2 * inv).exp());
        }
    }
    out
}

pub fn make_image_stream(spec: &ImageStreamSpec) -> Result<TaskStream> {
    if spec.side < 8 {
        return Err(Error::InvalidArgument(format!("image side must be at least 8, got {}", spec.side)));
    }
    if spec.tasks == 0 || spec.classes_per_task == 0 || spec.samples_per_class == 0 || spec.strokes == 0 {
        return Err(Error::InvalidArgument(format!("stream parameters must be positive: {spec:?}")));
    }
    if !(spec.jitter >= 0.0) || !(0.0..=1.0).contains(&spec.ambiguity) || !(0.0..=1.0).contains(&spec.outlier_fraction) {
        return Err(Error::InvalidArgument(format!(
            "jitter must be ≥ 0 and ambiguity/outlier fraction in [0, 1]: {spec:?}"
        )));
    }
    let n_classes = class_ids(spec.tasks, spec.classes_per_task)?;
    let glyphs: Vec<Vec<Stroke>> = (0..n_classes)
        .map(|c| random_glyph(&mut seeded(spec.seed, c as u64), spec.strokes))
        .collect();

    let mut next_id = 0u64;
    let tasks = (0..spec.tasks)
        .map(|t| {
            let classes: Vec<usize> = (t * spec.classes_per_task..(t + 1) * spec.classes_per_task).collect();
            let per_class = classes
                .iter()
                .map(|&c| {
                    let mut rng = seeded(spec.seed, (n_classes + c) as u64);
                    (0..spec.samples_per_class)
                        .map(|_| {
                            let pixels = sample_pixels(spec, &glyphs, &classes, c, &mut rng);
                            let s = Sample { id: next_id, features: pixels, label: c, task: t };
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
        kind: InputKind::Image { side: spec.side },
        tasks,
    })
}

fn sample_pixels<R: Rng + ?Sized>(
    spec: &ImageStreamSpec,
    glyphs: &[Vec<Stroke>],
    task_classes: &[usize],
    class: usize,
    rng: &mut R,
) -> Vec<f64> {
    let side = spec.side;
    let outlier = spec.outlier_fraction > 0.0 && rng.random_bool(spec.outlier_fraction);
    let own = if outlier {
        random_glyph(rng, spec.strokes)
    } else {
        glyphs[class].clone()
    };
    let pose = Pose::sample(rng, spec.strokes, spec.jitter);
    let mut pixels = render(&own, &pose, side);

    if spec.ambiguity > 0.0 && task_classes.len() > 1 && !outlier {
        let weight = rng.random_range(0.0..=spec.ambiguity);
        let others: Vec<usize> = task_classes.iter().copied().filter(|&o| o != class).collect();
        let other = others[rng.random_range(0..others.len())];
        let pose = Pose::sample(rng, spec.strokes, spec.jitter);
        let blend = render(&glyphs[other], &pose, side);
        for (p, b) in pixels.iter_mut().zip(blend) {
            *p = (1.0 - weight) * *p + weight * b;
        }
    }
    if spec.jitter > 0.0 {
        for p in pixels.iter_mut() {
            *p += 0.03 * spec.jitter * rng.sample::<f64, _>(StandardNormal);
        }
    }
    pixels.iter_mut().for_each(|p| *p = p.clamp(0.0, 1.0));
    pixels
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shapes_and_ranges() {
        let spec = ImageStreamSpec {
            tasks: 1,
            classes_per_task: 4,
            samples_per_class: 100,
            side: 8,
            ..Default::default()
        };
        let s = make_image_stream(&spec).unwrap();
        s.validate().unwrap();
        assert_eq!(s.kind, InputKind::Image { side: 8 });
        let t = &s.tasks[0];
        assert_eq!(t.train.len() + t.test.len(), 400);
        assert!(t.train.iter().all(|x| x.features.len() == 64));
        assert!(t.train.iter().flat_map(|x| &x.features).all(|p| (0.0..=1.0).contains(p)));
    }

    #[test]
    fn zero_variation_gives_identical_class_members() {
        let spec = ImageStreamSpec {
            tasks: 1,
            classes_per_task: 3,
            samples_per_class: 10,
            side: 8,
            jitter: 0.0,
            ambiguity: 0.0,
            outlier_fraction: 0.0,
            ..Default::default()
        };
        let s = make_image_stream(&spec).unwrap();
        for c in 0..3 {
            let members: Vec<&Sample> = s.tasks[0].train.iter().filter(|x| x.label == c).collect();
            assert!(members.windows(2).all(|w| w[0].features == w[1].features));
        }
        let first = |c| s.tasks[0].train.iter().find(|x| x.label == c).unwrap().features.clone();
        assert_ne!(first(0), first(1));
    }

    #[test]
    fn deterministic_per_seed() {
        let spec = ImageStreamSpec { samples_per_class: 20, seed: 4, ..Default::default() };
        assert_eq!(make_image_stream(&spec).unwrap(), make_image_stream(&spec).unwrap());
    }

    #[test]
    fn rejects_small_side() {
        assert!(make_image_stream(&ImageStreamSpec { side: 7, ..Default::default() }).is_err());
    }
}
