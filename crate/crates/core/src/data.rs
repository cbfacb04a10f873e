//! Seeded 2-D toy datasets. Every batch is generated on the fly from an RNG
//! stream, so runs carry no external data dependency.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::rng::{stream_rng, streams};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Dataset {
    #[serde(rename = "two_moons")]
    TwoMoons,
    #[serde(rename = "checkerboard")]
    Checkerboard,
    #[serde(rename = "eight_gaussians")]
    EightGaussians,
}

impl Dataset {
    pub const DIM: usize = 2;

    /// Half-width of the box every sample is guaranteed to fall in, with
    /// generous margin; used as a sanity bound on generated samples.
    pub fn bounding_half_width(self) -> f64 {
        match self {
            Dataset::TwoMoons => 3.0,
            Dataset::Checkerboard => 2.5,
            Dataset::EightGaussians => 4.0,
        }
    }
}

const MOON_NOISE: f64 = 0.05;
const MODE_STD: f64 = 0.15;

fn moons_point(rng: &mut impl Rng) -> [f64; 2] {
    let theta = rng.gen_range(0.0..std::f64::consts::PI);
    let upper = rng.gen_bool(0.5);
    let (mut x, mut y) = if upper {
        (theta.cos(), theta.sin())
    } else {
        (1.0 - theta.cos(), 0.5 - theta.sin())
    };
    x += MOON_NOISE * rng.sample::<f64, _>(StandardNormal) - 0.5;
    y += MOON_NOISE * rng.sample::<f64, _>(StandardNormal) - 0.25;
    [x, y]
}

fn checkerboard_point(rng: &mut impl Rng) -> [f64; 2] {
    let x: f64 = rng.gen_range(-2.0..2.0);
    let stripe = rng.gen_range(0.0..1.0f64) - if rng.gen_bool(0.5) { 2.0 } else { 0.0 };
    let parity = (x.floor() as i64).rem_euclid(2) as f64;
    [x, stripe + parity]
}

fn eight_gaussians_point(rng: &mut impl Rng) -> [f64; 2] {
    let k = rng.gen_range(0..8u32);
    let angle = std::f64::consts::FRAC_PI_4 * k as f64;
    [
        2.0 * angle.cos() + MODE_STD * rng.sample::<f64, _>(StandardNormal),
        2.0 * angle.sin() + MODE_STD * rng.sample::<f64, _>(StandardNormal),
    ]
}

/// Draws `n` samples using the caller's RNG (one row per sample, d = 2).
pub fn sample_with(dataset: Dataset, n: usize, rng: &mut impl Rng) -> Tensor {
    let mut data = Vec::with_capacity(n * Dataset::DIM);
    for _ in 0..n {
        let p = match dataset {
            Dataset::TwoMoons => moons_point(rng),
            Dataset::Checkerboard => checkerboard_point(rng),
            Dataset::EightGaussians => eight_gaussians_point(rng),
        };
        data.extend_from_slice(&p);
    }
    Tensor::new_unchecked(vec![n, Dataset::DIM], data)
}

/// Draws `n` samples from the dataset's dedicated stream of `seed`.
pub fn sample_dataset(dataset: Dataset, n: usize, seed: u64) -> Tensor {
    sample_with(dataset, n, &mut stream_rng(seed, streams::DATA))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shapes_and_determinism() {
        for ds in [Dataset::TwoMoons, Dataset::Checkerboard, Dataset::EightGaussians] {
            let a = sample_dataset(ds, 64, 7);
            let b = sample_dataset(ds, 64, 7);
            assert_eq!(a.shape(), &[64, 2]);
            assert_eq!(a.data(), b.data());
            let c = sample_dataset(ds, 64, 8);
            assert_ne!(a.data(), c.data());
        }
    }

    #[test]
    fn samples_stay_in_bounds() {
        for ds in [Dataset::TwoMoons, Dataset::Checkerboard, Dataset::EightGaussians] {
            let x = sample_dataset(ds, 2000, 3);
            let half = ds.bounding_half_width();
            for v in x.data() {
                assert!(v.abs() <= half, "{ds:?} sample {v} outside +-{half}");
            }
        }
    }

    #[test]
    fn checkerboard_cells_alternate() {
        let x = sample_dataset(Dataset::Checkerboard, 2000, 11);
        for i in 0..x.rows() {
            let (a, b) = (x.at(i, 0).floor() as i64, x.at(i, 1).floor() as i64);
            assert_eq!((a + b).rem_euclid(2), 0, "row {i} landed on a dark cell");
        }
    }

    #[test]
    fn moons_hug_the_two_arcs() {
        let x = sample_dataset(Dataset::TwoMoons, 1000, 13);
        for i in 0..x.rows() {
            let (px, py) = (x.at(i, 0) + 0.5, x.at(i, 1) + 0.25);
            let mut best = f64::INFINITY;
            for k in 0..=200 {
                let t = std::f64::consts::PI * k as f64 / 200.0;
                let d_up = (px - t.cos()).powi(2) + (py - t.sin()).powi(2);
                let d_lo = (px - (1.0 - t.cos())).powi(2) + (py - (0.5 - t.sin())).powi(2);
                best = best.min(d_up).min(d_lo);
            }
            assert!(best.sqrt() <= 6.0 * MOON_NOISE, "row {i} strays {}", best.sqrt());
        }
    }

    #[test]
    fn eight_gaussians_hit_every_mode() {
        let x = sample_dataset(Dataset::EightGaussians, 1000, 17);
        let mut seen = [false; 8];
        for i in 0..x.rows() {
            let mut nearest = 0;
            let mut best = f64::INFINITY;
            for k in 0..8 {
                let angle = std::f64::consts::FRAC_PI_4 * k as f64;
                let d = (x.at(i, 0) - 2.0 * angle.cos()).powi(2)
                    + (x.at(i, 1) - 2.0 * angle.sin()).powi(2);
                if d < best {
                    best = d;
                    nearest = k;
                }
            }
            assert!(best.sqrt() <= 6.0 * MODE_STD, "row {i} far from every mode");
            seen[nearest] = true;
        }
        assert!(seen.iter().all(|s| *s), "modes hit: {seen:?}");
    }

    #[test]
    fn dataset_names_roundtrip_through_json() {
        for (ds, name) in [
            (Dataset::TwoMoons, "\"two_moons\""),
            (Dataset::Checkerboard, "\"checkerboard\""),
            (Dataset::EightGaussians, "\"eight_gaussians\""),
        ] {
            assert_eq!(serde_json::to_string(&ds).unwrap(), name);
            let back: Dataset = serde_json::from_str(name).unwrap();
            assert_eq!(back, ds);
        }
    }
}
