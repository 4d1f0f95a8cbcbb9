//! Distribution-distance oracle used to judge generated samples.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Energy distance between two samples (plug-in V-statistic):
/// 2 E||X - Y|| - E||X - X'|| - E||Y - Y'||.
/// Non-negative, zero iff the distributions agree.
pub fn energy_distance(xs: &Tensor, ys: &Tensor) -> Result<f64> {
    let (n, d) = rows(xs)?;
    let (m, d2) = rows(ys)?;
    if d != d2 {
        return Err(Error::shape(format!("point dims differ: {d} vs {d2}")));
    }
    let cross = mean_pair_dist(xs.data(), n, ys.data(), m, d);
    let within_x = mean_pair_dist(xs.data(), n, xs.data(), n, d);
    let within_y = mean_pair_dist(ys.data(), m, ys.data(), m, d);
    Ok(2.0 * cross - within_x - within_y)
}

fn rows(t: &Tensor) -> Result<(usize, usize)> {
    if t.shape().len() != 2 {
        return Err(Error::shape(format!("expected a point matrix, got {:?}", t.shape())));
    }
    Ok((t.shape()[0], t.shape()[1]))
}

fn mean_pair_dist(a: &[f64], n: usize, b: &[f64], m: usize, d: usize) -> f64 {
    let mut total = 0.0;
    for i in 0..n {
        let ai = &a[i * d..(i + 1) * d];
        for j in 0..m {
            let bj = &b[j * d..(j + 1) * d];
            let mut sq = 0.0;
            for k in 0..d {
                let diff = ai[k] - bj[k];
                sq += diff * diff;
            }
            total += sq.sqrt();
        }
    }
    total / (n as f64 * m as f64)
}

/// Stack 2-D points into an (n x 2) matrix.
pub fn points_matrix(points: &[[f64; 2]]) -> Result<Tensor> {
    let mut data = Vec::with_capacity(points.len() * 2);
    for p in points {
        data.extend_from_slice(p);
    }
    Tensor::from_vec(vec![points.len(), 2], data)
}
