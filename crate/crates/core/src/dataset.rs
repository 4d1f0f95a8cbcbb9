//! Seeded 2-D toy datasets standing in for video latents.

use crate::error::{Error, Result};
use crate::rng::CounterRng;
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToyDataset {
    TwoGaussians,
    TwoMoons,
    Ring,
}

impl ToyDataset {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "two_gaussians" => Ok(ToyDataset::TwoGaussians),
            "two_moons" => Ok(ToyDataset::TwoMoons),
            "ring" => Ok(ToyDataset::Ring),
            other => Err(Error::config(format!(
                "unknown dataset {other:?}; expected two_gaussians, two_moons, or ring"
            ))),
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            ToyDataset::TwoGaussians => "two_gaussians",
            ToyDataset::TwoMoons => "two_moons",
            ToyDataset::Ring => "ring",
        }
    }

    /// Number of condition labels (one per mode).
    pub fn n_conds(&self) -> usize {
        match self {
            ToyDataset::TwoGaussians | ToyDataset::TwoMoons => 2,
            ToyDataset::Ring => 1,
        }
    }

    /// Representative centers, used to attribute samples to modes.
    pub fn mode_centers(&self) -> Vec<[f64; 2]> {
        match self {
            ToyDataset::TwoGaussians => vec![[-TWO_GAUSSIANS_SEP, 0.0], [TWO_GAUSSIANS_SEP, 0.0]],
            ToyDataset::TwoMoons => vec![[0.0, 0.5], [1.0, -0.0]],
            ToyDataset::Ring => vec![[0.0, 0.0]],
        }
    }

    /// One (point, mode label) draw.
    pub fn sample(&self, rng: &mut CounterRng) -> (Tensor, usize) {
        match self {
            ToyDataset::TwoGaussians => {
                let mode = rng.next_index(2);
                let cx = if mode == 0 { -TWO_GAUSSIANS_SEP } else { TWO_GAUSSIANS_SEP };
                let x = cx + TWO_GAUSSIANS_SIGMA * rng.next_gaussian();
                let y = TWO_GAUSSIANS_SIGMA * rng.next_gaussian();
                (Tensor::vector(&[x, y]), mode)
            }
            ToyDataset::TwoMoons => {
                let mode = rng.next_index(2);
                let theta = rng.uniform(0.0, std::f64::consts::PI);
                let (mut x, mut y) = if mode == 0 {
                    (theta.cos(), theta.sin())
                } else {
                    (1.0 - theta.cos(), 0.5 - theta.sin())
                };
                x += MOONS_NOISE * rng.next_gaussian();
                y += MOONS_NOISE * rng.next_gaussian();
                (Tensor::vector(&[x, y]), mode)
            }
            ToyDataset::Ring => {
                let theta = rng.uniform(0.0, std::f64::consts::TAU);
                let r = RING_RADIUS + RING_NOISE * rng.next_gaussian();
                (Tensor::vector(&[r * theta.cos(), r * theta.sin()]), 0)
            }
        }
    }

    pub fn sample_batch(&self, n: usize, rng: &mut CounterRng) -> Vec<(Tensor, usize)> {
        (0..n).map(|_| self.sample(rng)).collect()
    }

    /// Index of the nearest mode center.
    pub fn nearest_mode(&self, point: &[f64]) -> usize {
        let centers = self.mode_centers();
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (i, c) in centers.iter().enumerate() {
            let d = (point[0] - c[0]).powi(2) + (point[1] - c[1]).powi(2);
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        best
    }
}

pub const TWO_GAUSSIANS_SEP: f64 = 1.5;
pub const TWO_GAUSSIANS_SIGMA: f64 = 0.3;
const MOONS_NOISE: f64 = 0.08;
const RING_RADIUS: f64 = 1.5;
const RING_NOISE: f64 = 0.1;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_round_trips() {
        for name in ["two_gaussians", "two_moons", "ring"] {
            assert_eq!(ToyDataset::parse(name).unwrap().label(), name);
        }
        assert!(ToyDataset::parse("spiral").is_err());
    }

    #[test]
    fn draws_are_seed_deterministic() {
        let a = ToyDataset::TwoMoons.sample_batch(10, &mut CounterRng::new(1));
        let b = ToyDataset::TwoMoons.sample_batch(10, &mut CounterRng::new(1));
        for ((xa, la), (xb, lb)) in a.iter().zip(&b) {
            assert_eq!(xa, xb);
            assert_eq!(la, lb);
        }
    }

    #[test]
    fn two_gaussians_modes_sit_near_centers() {
        let mut rng = CounterRng::new(5);
        let batch = ToyDataset::TwoGaussians.sample_batch(2000, &mut rng);
        let mut sums = [[0.0; 2]; 2];
        let mut counts = [0usize; 2];
        for (x, label) in &batch {
            sums[*label][0] += x.data()[0];
            sums[*label][1] += x.data()[1];
            counts[*label] += 1;
        }
        for mode in 0..2 {
            let mean_x = sums[mode][0] / counts[mode] as f64;
            let want = ToyDataset::TwoGaussians.mode_centers()[mode][0];
            assert!((mean_x - want).abs() < 0.05, "mode {mode} mean {mean_x}");
        }
        assert!(counts[0] > 800 && counts[1] > 800);
    }

    #[test]
    fn nearest_mode_attributes_correctly() {
        let ds = ToyDataset::TwoGaussians;
        assert_eq!(ds.nearest_mode(&[-1.4, 0.1]), 0);
        assert_eq!(ds.nearest_mode(&[1.6, -0.1]), 1);
    }
}
