use rand::Rng;

use crate::error::{Error, Result};

/// Splits `[0, n_total)` into `k` contiguous segments; the first
/// `n_total % k` segments are one frame longer.
pub fn segment_bounds(n_total: usize, k: usize) -> Result<Vec<(usize, usize)>> {
    if k == 0 || k > n_total {
        return Err(Error::Sampling(format!(
            "cannot take {k} segments from {n_total} frames"
        )));
    }
    let (base, rem) = (n_total / k, n_total % k);
    let mut start = 0;
    Ok((0..k)
        .map(|i| {
            let len = base + usize::from(i < rem);
            let seg = (start, start + len);
            start += len;
            seg
        })
        .collect())
}

/// One uniformly drawn frame per segment; strictly increasing.
pub fn segment_sample<R: Rng + ?Sized>(n_total: usize, k: usize, rng: &mut R) -> Result<Vec<usize>> {
    Ok(segment_bounds(n_total, k)?
        .into_iter()
        .map(|(s, e)| rng.random_range(s..e))
        .collect())
}

/// Deterministic centre frame (`start + len / 2`) of each segment.
pub fn segment_centers(n_total: usize, k: usize) -> Result<Vec<usize>> {
    Ok(segment_bounds(n_total, k)?
        .into_iter()
        .map(|(s, e)| s + (e - s) / 2)
        .collect())
}
