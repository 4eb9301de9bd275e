use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// One-sided Mann-Whitney rank-sum test of "x tends to be smaller than y".
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankSum {
    /// Pairs with `x > y`, ties counted one half.
    pub u: f64,
    pub z: f64,
    pub p_value: f64,
}

/// Normal approximation with tie-corrected variance and continuity correction.
pub fn rank_sum_less(x: &[f64], y: &[f64]) -> Result<RankSum> {
    if x.is_empty() || y.is_empty() {
        return Err(Error::EmptyInput("rank-sum test needs two non-empty samples".into()));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::Contract("rank-sum samples must be finite".into()));
    }
    let (n1, n2) = (x.len() as f64, y.len() as f64);
    let mut all: Vec<(f64, bool)> = x.iter().map(|&v| (v, true)).chain(y.iter().map(|&v| (v, false))).collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));

    let mut rank_x = 0.0;
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < all.len() {
        let j = all[i..].iter().position(|e| e.0 != all[i].0).map_or(all.len(), |k| i + k);
        let mid = (i + j + 1) as f64 / 2.0;
        rank_x += mid * all[i..j].iter().filter(|e| e.1).count() as f64;
        let t = (j - i) as f64;
        tie_term += t * t * t - t;
        i = j;
    }
    let u = rank_x - n1 * (n1 + 1.0) / 2.0;
    let n = n1 + n2;
    let mean = n1 * n2 / 2.0;
    let var = n1 * n2 / 12.0 * ((n + 1.0) - tie_term / (n * (n - 1.0)));
    if var <= 0.0 {
        return Ok(RankSum { u, z: 0.0, p_value: 1.0 });
    }
    let z = (u - mean + 0.5) / var.sqrt();
    let p_value = Normal::standard().cdf(z);
    Ok(RankSum { u, z, p_value })
}
