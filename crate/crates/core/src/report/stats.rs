use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::{par, rng};

/// Permutations evaluated per independently seeded chunk.
const CHUNK: usize = 1000;

fn check_pair(xs: &[f64], ys: &[f64]) -> Result<()> {
    if xs.len() != ys.len() {
        return Err(Error::LengthMismatch(xs.len(), ys.len()));
    }
    if xs.len() < 3 {
        return Err(Error::InvalidConfig(format!(
            "correlation needs at least 3 points, got {}",
            xs.len()
        )));
    }
    Ok(())
}

fn centered(v: &[f64]) -> Result<(Vec<f64>, f64)> {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    let c: Vec<f64> = v.iter().map(|x| x - mean).collect();
    let ss = c.iter().map(|x| x * x).sum::<f64>();
    if !(ss > 0.0) || c.iter().all(|&x| x.abs() <= 1e-15 * mean.abs().max(1.0)) {
        return Err(Error::ConstantVector);
    }
    Ok((c, ss.sqrt()))
}

fn corr_centered(xc: &[f64], xn: f64, yc: &[f64], yn: f64) -> f64 {
    let dot: f64 = xc.iter().zip(yc).map(|(a, b)| a * b).sum();
    (dot / (xn * yn)).clamp(-1.0, 1.0)
}

/// Sample Pearson correlation coefficient.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    check_pair(xs, ys)?;
    let (xc, xn) = centered(xs)?;
    let (yc, yn) = centered(ys)?;
    Ok(corr_centered(&xc, xn, &yc, yn))
}

/// Two-sided permutation p-value `(c + 1) / (N + 1)`, where `c` counts
/// seeded permutations of `ys` whose |r| reaches the observed |r|.
pub fn pearson_pvalue(xs: &[f64], ys: &[f64], num_permutations: usize, seed: u64) -> Result<f64> {
    if num_permutations < 1000 {
        return Err(Error::InvalidConfig(format!(
            "need at least 1000 permutations, got {num_permutations}"
        )));
    }
    check_pair(xs, ys)?;
    let (xc, xn) = centered(xs)?;
    let (yc, yn) = centered(ys)?;
    let observed = corr_centered(&xc, xn, &yc, yn).abs();
    // Guards against the identity permutation rounding just below itself.
    let threshold = observed - 1e-12;
    let chunks = num_permutations.div_ceil(CHUNK);
    let counts = par::map_range(chunks, |c| {
        let mut r = rng::rng(rng::derive(seed, c as u64));
        let n = CHUNK.min(num_permutations - c * CHUNK);
        let mut perm = yc.clone();
        let mut hits = 0usize;
        for _ in 0..n {
            perm.shuffle(&mut r);
            if corr_centered(&xc, xn, &perm, yn).abs() >= threshold {
                hits += 1;
            }
        }
        hits
    });
    let c: usize = counts.iter().sum();
    Ok((c + 1) as f64 / (num_permutations + 1) as f64)
}

/// Change in correlation when moving from the baseline property to another.
pub fn delta_r(r_base: f64, r_other: f64) -> f64 {
    r_other - r_base
}

/// Mean and 95% normal-approximation half-width (`1.96 * stderr`).
/// The half-width is NaN for fewer than two values.
pub fn mean_ci(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, f64::NAN);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, 1.96 * (var / n as f64).sqrt())
}

/// Median of the finite entries; NaN if there are none.
pub fn median(values: &[f64]) -> f64 {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        (v[m - 1] + v[m]) / 2.0
    }
}
