use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use super::{seeded, InputKind, Sample};
use crate::error::{Error, Result};

pub const MAX_SEVERITY: u8 = 5;

// Severity ladders, indexed by severity − 1. Noise levels follow the usual
// common-corruption constants for small images; blur radius and pixelation
// scale are restated for grids of 8–16 pixels.
const GAUSSIAN_STD: [f64; 5] = [0.04, 0.06, 0.08, 0.09, 0.10];
const SHOT_PHOTONS: [f64; 5] = [500.0, 250.0, 100.0, 75.0, 50.0];
const IMPULSE_RATE: [f64; 5] = [0.01, 0.02, 0.03, 0.05, 0.07];
const DEFOCUS_RADIUS: [f64; 5] = [1.0, 1.25, 1.5, 2.0, 2.5];
const PIXELATE_SCALE: [f64; 5] = [0.9, 0.75, 0.6, 0.5, 0.4];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CorruptionKind {
    GaussianNoise,
    ShotNoise,
    ImpulseNoise,
    DefocusBlur,
    Pixelate,
}

impl CorruptionKind {
    pub const ALL: [CorruptionKind; 5] = [
        CorruptionKind::GaussianNoise,
        CorruptionKind::ShotNoise,
        CorruptionKind::ImpulseNoise,
        CorruptionKind::DefocusBlur,
        CorruptionKind::Pixelate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CorruptionKind::GaussianNoise => "gaussian-noise",
            CorruptionKind::ShotNoise => "shot-noise",
            CorruptionKind::ImpulseNoise => "impulse-noise",
            CorruptionKind::DefocusBlur => "defocus-blur",
            CorruptionKind::Pixelate => "pixelate",
        }
    }

    /// Ladder value for `severity` in 1..=5: noise std, photon count, flip
    /// rate, disk radius or pixelation scale.
    pub fn parameter(self, severity: u8) -> Option<f64> {
        let i = usize::from(severity).checked_sub(1).filter(|&i| i < 5)?;
        Some(match self {
            CorruptionKind::GaussianNoise => GAUSSIAN_STD[i],
            CorruptionKind::ShotNoise => SHOT_PHOTONS[i],
            CorruptionKind::ImpulseNoise => IMPULSE_RATE[i],
            CorruptionKind::DefocusBlur => DEFOCUS_RADIUS[i],
            CorruptionKind::Pixelate => PIXELATE_SCALE[i],
        })
    }
}

impl fmt::Display for CorruptionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CorruptionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        CorruptionKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown corruption {s:?}")))
    }
}

/// One corruption at one severity. Severity 0 is the identity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CorruptionSpec {
    pub kind: CorruptionKind,
    pub severity: u8,
    #[serde(default)]
    pub seed: u64,
}

impl CorruptionSpec {
    pub fn new(kind: CorruptionKind, severity: u8) -> Self {
        CorruptionSpec { kind, severity, seed: 0 }
    }

    /// Every kind at every severity 1..=5.
    pub fn full_suite() -> Vec<CorruptionSpec> {
        CorruptionKind::ALL
            .into_iter()
            .flat_map(|k| (1..=MAX_SEVERITY).map(move |s| CorruptionSpec::new(k, s)))
            .collect()
    }

    pub fn label(&self) -> String {
        format!("{}_{}", self.kind, self.severity)
    }
}

impl FromStr for CorruptionSpec {
    type Err = Error;

    /// `kind:severity`, e.g. `gaussian-noise:3`.
    fn from_str(s: &str) -> Result<Self> {
        let (kind, sev) = s
            .split_once(':')
            .ok_or_else(|| Error::InvalidArgument(format!("expected kind:severity, got {s:?}")))?;
        let severity = sev
            .parse()
            .map_err(|_| Error::InvalidArgument(format!("bad severity {sev:?}")))?;
        if severity > MAX_SEVERITY {
            return Err(Error::InvalidArgument(format!("severity {severity} outside 1..=5")));
        }
        Ok(CorruptionSpec::new(kind.parse()?, severity))
    }
}

fn clamp_unit(pixels: &mut [f64]) {
    pixels.iter_mut().for_each(|p| *p = p.clamp(0.0, 1.0));
}

pub fn gaussian_noise<R: Rng + ?Sized>(pixels: &[f64], std: f64, rng: &mut R) -> Vec<f64> {
    let noise = Normal::new(0.0, std).expect("finite std");
    let mut out: Vec<f64> = pixels.iter().map(|&p| p + noise.sample(rng)).collect();
    clamp_unit(&mut out);
    out
}

/// Photon-count noise: `Poisson(x·photons) / photons`.
pub fn shot_noise<R: Rng + ?Sized>(pixels: &[f64], photons: f64, rng: &mut R) -> Vec<f64> {
    let mut out: Vec<f64> = pixels
        .iter()
        .map(|&p| {
            let lambda = p.clamp(0.0, 1.0) * photons;
            if lambda <= 0.0 {
                0.0
            } else {
                Poisson::new(lambda).expect("positive rate").sample(rng) / photons
            }
        })
        .collect();
    clamp_unit(&mut out);
    out
}

/// Salt-and-pepper: each pixel is replaced with probability `rate` by 0 or 1.
pub fn impulse_noise<R: Rng + ?Sized>(pixels: &[f64], rate: f64, rng: &mut R) -> Vec<f64> {
    pixels
        .iter()
        .map(|&p| {
            if rng.random_bool(rate) {
                if rng.random_bool(0.5) {
                    1.0
                } else {
                    0.0
                }
            } else {
                p
            }
        })
        .collect()
}

/// Convolution with a normalized disk of the given radius; borders replicate.
pub fn defocus_blur(pixels: &[f64], side: usize, radius: f64) -> Vec<f64> {
    let r = radius.floor() as isize;
    let taps: Vec<(isize, isize)> = (-r..=r)
        .flat_map(|dy| (-r..=r).map(move |dx| (dy, dx)))
        .filter(|&(dy, dx)| ((dy * dy + dx * dx) as f64) <= radius * radius)
        .collect();
    let norm = 1.0 / taps.len() as f64;
    let at = |i: isize, j: isize| {
        let i = i.clamp(0, side as isize - 1) as usize;
        let j = j.clamp(0, side as isize - 1) as usize;
        pixels[i * side + j]
    };
    let mut out = Vec::with_capacity(pixels.len());
    for i in 0..side as isize {
        for j in 0..side as isize {
            out.push(norm * taps.iter().map(|&(dy, dx)| at(i + dy, j + dx)).sum::<f64>());
        }
    }
    clamp_unit(&mut out);
    out
}

/// Area-average down to `round(side·scale)` cells, then nearest-neighbour back up.
pub fn pixelate(pixels: &[f64], side: usize, scale: f64) -> Vec<f64> {
    let cells = ((side as f64 * scale).round() as usize).clamp(1, side);
    let cell_of = |k: usize| k * cells / side;
    let mut sums = vec![0.0; cells * cells];
    let mut counts = vec![0usize; cells * cells];
    for i in 0..side {
        for j in 0..side {
            let c = cell_of(i) * cells + cell_of(j);
            sums[c] += pixels[i * side + j];
            counts[c] += 1;
        }
    }
    let mut out = Vec::with_capacity(pixels.len());
    for i in 0..side {
        for j in 0..side {
            let c = cell_of(i) * cells + cell_of(j);
            out.push(sums[c] / counts[c] as f64);
        }
    }
    out
}

pub fn corrupt_image<R: Rng + ?Sized>(pixels: &[f64], side: usize, kind: CorruptionKind, severity: u8, rng: &mut R) -> Result<Vec<f64>> {
    if severity == 0 {
        return Ok(pixels.to_vec());
    }
    let p = kind
        .parameter(severity)
        .ok_or_else(|| Error::InvalidArgument(format!("severity {severity} outside 1..=5")))?;
    Ok(match kind {
        CorruptionKind::GaussianNoise => gaussian_noise(pixels, p, rng),
        CorruptionKind::ShotNoise => shot_noise(pixels, p, rng),
        CorruptionKind::ImpulseNoise => impulse_noise(pixels, p, rng),
        CorruptionKind::DefocusBlur => defocus_blur(pixels, side, p),
        CorruptionKind::Pixelate => pixelate(pixels, side, p),
    })
}

/// Corrupts every sample of an image test set; ids, labels and order are kept.
pub fn corrupt(samples: &[Sample], kind: InputKind, spec: &CorruptionSpec) -> Result<Vec<Sample>> {
    let side = kind
        .side()
        .ok_or_else(|| Error::InvalidArgument("corruptions apply to image streams only".into()))?;
    if spec.severity > MAX_SEVERITY {
        return Err(Error::InvalidArgument(format!("severity {} outside 1..=5", spec.severity)));
    }
    let mut rng = seeded(spec.seed, spec.kind as u64);
    samples
        .iter()
        .map(|s| {
            Ok(Sample {
                features: corrupt_image(&s.features, side, spec.kind, spec.severity, &mut rng)?,
                ..s.clone()
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn parse_specs() {
        let s: CorruptionSpec = "defocus-blur:4".parse().unwrap();
        assert_eq!(s, CorruptionSpec::new(CorruptionKind::DefocusBlur, 4));
        assert!("defocus-blur:6".parse::<CorruptionSpec>().is_err());
        assert!("fog:1".parse::<CorruptionSpec>().is_err());
        assert!("pixelate".parse::<CorruptionSpec>().is_err());
    }

    #[test]
    fn severity_zero_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let img: Vec<f64> = (0..64).map(|k| k as f64 / 64.0).collect();
        for kind in CorruptionKind::ALL {
            assert_eq!(corrupt_image(&img, 8, kind, 0, &mut rng).unwrap(), img);
        }
        assert!(corrupt_image(&img, 8, CorruptionKind::Pixelate, 6, &mut rng).is_err());
    }

    #[test]
    fn full_impulse_saturates() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let out = impulse_noise(&[0.5; 256], 1.0, &mut rng);
        assert!(out.iter().all(|&p| p == 0.0 || p == 1.0));
        assert!(out.contains(&0.0) && out.contains(&1.0));
    }

    #[test]
    fn blur_and_pixelate_preserve_constants() {
        let flat = vec![0.3; 100];
        for r in DEFOCUS_RADIUS {
            assert!(defocus_blur(&flat, 10, r).iter().all(|&p| (p - 0.3).abs() < 1e-12));
        }
        for s in PIXELATE_SCALE {
            assert!(pixelate(&flat, 10, s).iter().all(|&p| (p - 0.3).abs() < 1e-12));
        }
    }

    #[test]
    fn pixelate_averages_blocks() {
        // 8x8 to 4 cells: each 2x2 block becomes its mean
        let img: Vec<f64> = (0..64).map(|k| (k % 2) as f64).collect();
        assert!(pixelate(&img, 8, 0.5).iter().all(|&p| (p - 0.5).abs() < 1e-12));
    }

    #[test]
    fn shot_noise_is_unbiased() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let out = shot_noise(&vec![0.4; 4096], 100.0, &mut rng);
        let mean = out.iter().sum::<f64>() / out.len() as f64;
        assert!((mean - 0.4).abs() < 0.01, "{mean}");
    }

    #[test]
    fn vector_streams_are_rejected() {
        let s = Sample { id: 0, features: vec![0.0; 4], label: 0, task: 0 };
        assert!(corrupt(&[s], InputKind::Vector { dim: 4 }, &CorruptionSpec::new(CorruptionKind::Pixelate, 1)).is_err());
    }
}
