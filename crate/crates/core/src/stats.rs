//! Small statistics toolkit shared by the samplers and the fluctuation suite.

use crate::error::{usage, Result};

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Unbiased sample variance.
pub fn variance(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (x.len() as f64 - 1.0)
}

/// Mean and its standard error from non-overlapping batch means.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub batches: usize,
}

pub fn batch_means(x: &[f64], batches: usize) -> Result<BatchEstimate> {
    if batches < 2 || x.len() < batches {
        return usage(format!("batch means need at least 2 batches and one value per batch, got {} values", x.len()));
    }
    let size = x.len() / batches;
    let means: Vec<f64> = (0..batches).map(|b| mean(&x[b * size..(b + 1) * size])).collect();
    Ok(BatchEstimate { mean: mean(&means), std_error: (variance(&means) / batches as f64).sqrt(), batches })
}

/// Standard normal CDF.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

/// Kolmogorov-Smirnov statistic of a sample against a continuous CDF.
pub fn ks_statistic(sample: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut s = sample.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    s.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

/// KS distance to the normal law with the sample's own mean and standard deviation.
pub fn ks_normal_fitted(sample: &[f64]) -> f64 {
    let m = mean(sample);
    let s = variance(sample).sqrt();
    ks_statistic(sample, |x| normal_cdf((x - m) / s))
}

/// Mann-Kendall trend statistic, normal approximation without tie correction.
pub fn mann_kendall_z(x: &[f64]) -> f64 {
    let n = x.len();
    let mut s = 0i64;
    for i in 0..n {
        for j in i + 1..n {
            s += (x[j] - x[i]).partial_cmp(&0.0).map_or(0, |o| o as i64);
        }
    }
    let nf = n as f64;
    let var = nf * (nf - 1.0) * (2.0 * nf + 5.0) / 18.0;
    if s > 0 {
        (s as f64 - 1.0) / var.sqrt()
    } else if s < 0 {
        (s as f64 + 1.0) / var.sqrt()
    } else {
        0.0
    }
}

/// Ordinary least squares `y ~ X b`; returns coefficients and their standard errors.
#[derive(Debug, Clone, PartialEq)]
pub struct LeastSquares {
    pub coefficients: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub residual_rms: f64,
}

pub fn least_squares(rows: &[Vec<f64>], y: &[f64]) -> Result<LeastSquares> {
    let p = rows.first().map_or(0, Vec::len);
    let n = rows.len();
    if p == 0 || n < p || y.len() != n {
        return usage("least squares needs at least as many rows as columns");
    }
    let mut a = vec![vec![0.0; p]; p];
    let mut b = vec![0.0; p];
    for (r, &yy) in rows.iter().zip(y) {
        for i in 0..p {
            b[i] += r[i] * yy;
            for j in 0..p {
                a[i][j] += r[i] * r[j];
            }
        }
    }
    let inv = invert_spd(&a)?;
    let coef: Vec<f64> = (0..p).map(|i| (0..p).map(|j| inv[i][j] * b[j]).sum()).collect();
    let rss: f64 = rows
        .iter()
        .zip(y)
        .map(|(r, yy)| (yy - r.iter().zip(&coef).map(|(a, c)| a * c).sum::<f64>()).powi(2))
        .sum();
    let dof = (n - p).max(1) as f64;
    let sigma2 = rss / dof;
    Ok(LeastSquares {
        std_errors: (0..p).map(|i| (sigma2 * inv[i][i]).sqrt()).collect(),
        coefficients: coef,
        residual_rms: (rss / n as f64).sqrt(),
    })
}

fn invert_spd(a: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let p = a.len();
    let mut m: Vec<Vec<f64>> = a
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let mut r = row.clone();
            r.extend((0..p).map(|j| if i == j { 1.0 } else { 0.0 }));
            r
        })
        .collect();
    for c in 0..p {
        let piv = (c..p).max_by(|&i, &j| m[i][c].abs().total_cmp(&m[j][c].abs())).unwrap();
        if m[piv][c].abs() < 1e-300 {
            return usage("singular normal equations");
        }
        m.swap(c, piv);
        let d = m[c][c];
        m[c].iter_mut().for_each(|v| *v /= d);
        for r in 0..p {
            if r != c {
                let f = m[r][c];
                let pivot_row = m[c].clone();
                m[r].iter_mut().zip(&pivot_row).for_each(|(v, w)| *v -= f * w);
            }
        }
    }
    Ok(m.into_iter().map(|r| r[p..].to_vec()).collect())
}

/// Histogram counts of `values` in bins with the given edges (values outside are dropped).
pub fn histogram(values: impl IntoIterator<Item = f64>, edges: &[f64]) -> Vec<f64> {
    let mut counts = vec![0.0; edges.len().saturating_sub(1)];
    for v in values {
        if v < edges[0] || v >= edges[edges.len() - 1] {
            continue;
        }
        let k = edges.partition_point(|&e| e <= v) - 1;
        counts[k] += 1.0;
    }
    counts
}

/// `(1/2) sum |p/|p| - q/|q||` of two non-negative weight vectors.
pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    let sp: f64 = p.iter().sum();
    let sq: f64 = q.iter().sum();
    0.5 * p.iter().zip(q).map(|(a, b)| (a / sp - b / sq).abs()).sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn regression_recovers_coefficients() {
        let rows: Vec<Vec<f64>> = (1..20).map(|k| vec![1.0, k as f64, (k as f64).ln()]).collect();
        let y: Vec<f64> = rows.iter().map(|r| 2.0 - 0.5 * r[1] + 3.0 * r[2]).collect();
        let fit = least_squares(&rows, &y).unwrap();
        for (c, e) in fit.coefficients.iter().zip([2.0, -0.5, 3.0]) {
            assert!((c - e).abs() < 1e-9);
        }
        assert!(fit.residual_rms < 1e-9);
    }

    #[test]
    fn ks_and_trend_on_normal_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x: Vec<f64> = (0..4000).map(|_| StandardNormal.sample(&mut rng)).collect();
        assert!(ks_statistic(&x, normal_cdf) < 0.03);
        assert!(ks_normal_fitted(&x) < 0.03);
        assert!(mann_kendall_z(&x[..400]).abs() < 3.0);
        let trend: Vec<f64> = (0..100).map(|k| k as f64 + x[k]).collect();
        assert!(mann_kendall_z(&trend) > 5.0);
        let b = batch_means(&x, 40).unwrap();
        assert!(b.mean.abs() < 4.0 * b.std_error);
        assert!((normal_cdf(0.0) - 0.5).abs() < 1e-16);
        assert!((normal_cdf(1.959963984540054) - 0.975).abs() < 1e-12);
    }

    #[test]
    fn histogram_and_tv() {
        let h = histogram([0.1, 0.2, 0.5, 0.99, 1.0, -0.1], &[0.0, 0.5, 1.0]);
        assert_eq!(h, vec![2.0, 2.0]);
        assert_eq!(total_variation(&[1.0, 0.0], &[0.0, 2.0]), 1.0);
        assert_eq!(total_variation(&[1.0, 1.0], &[3.0, 3.0]), 0.0);
    }
}
