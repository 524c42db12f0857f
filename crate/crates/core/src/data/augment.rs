use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::InputKind;

/// Standard deviation of the additive noise used on vector inputs.
pub const VECTOR_AUGMENT_STD: f64 = 0.05;

fn reflect(k: isize, n: usize) -> usize {
    let n = n as isize;
    let r = if k < 0 {
        -k
    } else if k >= n {
        2 * (n - 1) - k
    } else {
        k
    };
    r as usize
}

/// Reflect-pads by one pixel, crops `side × side` at `shift = (dx, dy) ∈ [-1, 1]²`
/// relative to the original position, then optionally mirrors left-right.
pub fn augment_image(pixels: &[f64], side: usize, shift: (isize, isize), flip: bool) -> Vec<f64> {
    debug_assert_eq!(pixels.len(), side * side);
    let (dx, dy) = shift;
    let mut out = Vec::with_capacity(side * side);
    for i in 0..side {
        let si = reflect(i as isize + dy, side);
        for j in 0..side {
            let jj = if flip { side - 1 - j } else { j };
            let sj = reflect(jj as isize + dx, side);
            out.push(pixels[si * side + sj]);
        }
    }
    out
}

pub fn flip_horizontal(pixels: &[f64], side: usize) -> Vec<f64> {
    augment_image(pixels, side, (0, 0), true)
}

pub fn augment_vector<R: Rng + ?Sized>(features: &[f64], rng: &mut R) -> Vec<f64> {
    let noise = Normal::new(0.0, VECTOR_AUGMENT_STD).expect("valid std");
    features.iter().map(|&v| v + noise.sample(rng)).collect()
}

/// Independent random crop + flip per image, or additive noise for vectors.
/// Labels are untouched, so the caller keeps them alongside.
pub fn augment<'a, R, I>(inputs: I, kind: InputKind, rng: &mut R) -> Vec<Vec<f64>>
where
    R: Rng + ?Sized,
    I: IntoIterator<Item = &'a [f64]>,
{
    inputs
        .into_iter()
        .map(|x| match kind {
            InputKind::Image { side } => {
                let shift = (rng.random_range(-1i32..=1) as isize, rng.random_range(-1i32..=1) as isize);
                let flip = rng.random_bool(0.5);
                augment_image(x, side, shift, flip)
            }
            InputKind::Vector { .. } => augment_vector(x, rng),
        })
        .collect()
}
