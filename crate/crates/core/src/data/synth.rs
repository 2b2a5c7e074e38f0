use crate::error::{Error, Result};
use crate::rng::Rng;

/// Two interleaved half circles. Class 0 lies on the upper unit arc centred
/// at the origin, class 1 on the lower unit arc centred at `(1, 0.5)`.
/// Angles are evenly spaced, Gaussian noise of `noise_std` is added to both
/// coordinates and the rows are shuffled.
pub fn gen_two_moons(
    n: usize,
    noise_std: f64,
    rng: &mut Rng,
) -> Result<(Vec<Vec<f64>>, Vec<usize>)> {
    if n < 2 {
        return Err(Error::InvalidHyperparameter(format!(
            "two-moons needs at least 2 points, got {n}"
        )));
    }
    if noise_std.is_nan() || noise_std < 0.0 {
        return Err(Error::InvalidHyperparameter(format!(
            "noise std must be non-negative, got {noise_std}"
        )));
    }
    let n_outer = n / 2;
    let n_inner = n - n_outer;
    let angle = |i: usize, m: usize| {
        if m <= 1 {
            0.0
        } else {
            std::f64::consts::PI * i as f64 / (m - 1) as f64
        }
    };
    let mut points: Vec<(Vec<f64>, usize)> = Vec::with_capacity(n);
    for i in 0..n_outer {
        let t = angle(i, n_outer);
        points.push((vec![t.cos(), t.sin()], 0));
    }
    for i in 0..n_inner {
        let t = angle(i, n_inner);
        points.push((vec![1.0 - t.cos(), 0.5 - t.sin()], 1));
    }
    if noise_std > 0.0 {
        for (p, _) in &mut points {
            for v in p.iter_mut() {
                *v += noise_std * rng.normal();
            }
        }
    }
    rng.shuffle(&mut points);
    Ok(points.into_iter().unzip())
}

/// Isotropic Gaussian clusters, one class per centre, assigned round-robin so
/// class counts differ by at most one.
pub fn gen_blobs(
    n: usize,
    centers: &[Vec<f64>],
    std: f64,
    rng: &mut Rng,
) -> Result<(Vec<Vec<f64>>, Vec<usize>)> {
    if centers.is_empty() {
        return Err(Error::InvalidHyperparameter(
            "blobs need at least one centre".into(),
        ));
    }
    if n < 2 || std.is_nan() || std < 0.0 {
        return Err(Error::InvalidHyperparameter(format!(
            "blobs need n >= 2 and std >= 0, got n={n}, std={std}"
        )));
    }
    let d = centers[0].len();
    if centers.iter().any(|c| c.len() != d) {
        return Err(Error::shape("blob centres differ in dimension"));
    }
    let mut points: Vec<(Vec<f64>, usize)> = (0..n)
        .map(|i| {
            let c = i % centers.len();
            let x = centers[c].iter().map(|&m| m + std * rng.normal()).collect();
            (x, c)
        })
        .collect();
    rng.shuffle(&mut points);
    Ok(points.into_iter().unzip())
}
