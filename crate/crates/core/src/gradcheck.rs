//! Central finite-difference verification of aggregator gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::aggregator::{aggregate_backward, forward, init_params, AggregatorConfig, AggregatorParams};
use crate::error::Result;
use crate::tensor::Tensor;

pub const DEFAULT_STEP: f64 = 1e-6;
pub const DEFAULT_TOLERANCE: f64 = 1e-5;
/// Denominator floor for the relative error, so gradients that are
/// analytically zero are judged on absolute error.
pub const RELATIVE_FLOOR: f64 = 1e-3;

/// `|a − b| / max(|a|, |b|, RELATIVE_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockCheck {
    pub name: String,
    pub entries: usize,
    pub max_relative_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub config: AggregatorConfig,
    pub n: usize,
    pub seed: u64,
    pub tolerance: f64,
    pub blocks: Vec<BlockCheck>,
    pub max_relative_error: f64,
    pub worst_block: String,
    pub passed: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckOptions {
    pub n: usize,
    pub seed: u64,
    pub tolerance: f64,
    pub step: f64,
    /// Negative control: perturbs one analytic gradient entry so the check
    /// must fail.
    pub corrupt_adjoint: bool,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self { n: 5, seed: 0, tolerance: DEFAULT_TOLERANCE, step: DEFAULT_STEP, corrupt_adjoint: false }
    }
}

/// Parameters with every entry (including biases and `s`) moved away from
/// the initialisation, so each gradient path is exercised.
pub fn randomized_params(config: &AggregatorConfig, seed: u64) -> Result<AggregatorParams> {
    let mut p = init_params(config, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x9e37_79b9));
    if let Some(a) = p.attention.as_mut() {
        for (_, block) in a.blocks_mut() {
            for x in block.iter_mut() {
                *x += rng.random_range(-0.5..0.5);
            }
        }
    }
    Ok(p)
}

fn objective(params: &AggregatorParams, f: &Tensor, upstream: &Tensor) -> Result<f64> {
    let (out, _) = forward(params, f, None)?;
    Ok(out.data().iter().zip(upstream.data()).map(|(a, b)| a * b).sum())
}

/// Compares analytic gradients of `<u, F_v(F)>` for random `F`, `u` and
/// randomized parameters against central differences.
pub fn check_aggregator(config: &AggregatorConfig, opts: &GradCheckOptions) -> Result<GradCheckReport> {
    let params = randomized_params(config, opts.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_mul(31).wrapping_add(7));
    let m = config.m;
    let f = Tensor::matrix(m, opts.n, (0..m * opts.n).map(|_| rng.random_range(-1.0..1.0)).collect())?;
    let u = Tensor::vector((0..m).map(|_| rng.random_range(-1.0..1.0)).collect())?;

    let (_, state) = forward(&params, &f, None)?;
    let mut grads = aggregate_backward(&params, &state, &u)?;
    if opts.corrupt_adjoint {
        match grads.params.as_mut() {
            Some(g) => g.wq.weights.data[0] += 0.5,
            None => grads.input.data_mut()[0] += 0.5,
        }
    }

    let h = opts.step;
    let mut blocks = Vec::new();

    let mut worst = 0.0f64;
    for i in 0..f.len() {
        let mut fp = f.clone();
        fp.data_mut()[i] += h;
        let mut fm = f.clone();
        fm.data_mut()[i] -= h;
        let fd = (objective(&params, &fp, &u)? - objective(&params, &fm, &u)?) / (2.0 * h);
        worst = worst.max(relative_error(grads.input.data()[i], fd));
    }
    blocks.push(BlockCheck { name: "input".into(), entries: f.len(), max_relative_error: worst });

    if let (Some(analytic), Some(_)) = (&grads.params, &params.attention) {
        let names: Vec<&str> = analytic.blocks().iter().map(|(n, _)| *n).collect();
        for (bi, name) in names.into_iter().enumerate() {
            let len = analytic.blocks()[bi].1.len();
            let mut worst = 0.0f64;
            for j in 0..len {
                let mut pp = params.clone();
                pp.attention.as_mut().unwrap().blocks_mut()[bi].1[j] += h;
                let mut pm = params.clone();
                pm.attention.as_mut().unwrap().blocks_mut()[bi].1[j] -= h;
                let fd = (objective(&pp, &f, &u)? - objective(&pm, &f, &u)?) / (2.0 * h);
                worst = worst.max(relative_error(analytic.blocks()[bi].1[j], fd));
            }
            blocks.push(BlockCheck { name: name.into(), entries: len, max_relative_error: worst });
        }
    }

    let worst_block = blocks
        .iter()
        .max_by(|a, b| a.max_relative_error.total_cmp(&b.max_relative_error))
        .expect("at least the input block");
    Ok(GradCheckReport {
        config: *config,
        n: opts.n,
        seed: opts.seed,
        tolerance: opts.tolerance,
        max_relative_error: worst_block.max_relative_error,
        worst_block: worst_block.name.clone(),
        passed: worst_block.max_relative_error <= opts.tolerance,
        blocks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn passes_for_every_kind() {
        for cfg in [
            AggregatorConfig::nl(8, 4),
            AggregatorConfig::hgnl(8, 4, 4, 2, false),
            AggregatorConfig::hgnl(8, 4, 2, 2, true),
            AggregatorConfig::avg(8),
            AggregatorConfig::max(8),
        ] {
            let r = check_aggregator(&cfg, &GradCheckOptions { n: 3, ..Default::default() }).unwrap();
            assert!(r.passed, "{cfg:?}: {r:?}");
        }
    }

    #[test]
    fn corrupted_adjoint_fails() {
        for cfg in [AggregatorConfig::hgnl(8, 4, 4, 2, false), AggregatorConfig::avg(8)] {
            let opts = GradCheckOptions { n: 3, corrupt_adjoint: true, ..Default::default() };
            let r = check_aggregator(&cfg, &opts).unwrap();
            assert!(!r.passed);
        }
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert!((relative_error(2.0, 1.0) - 0.5).abs() < 1e-15);
        assert!((relative_error(1e-9, 0.0) - 1e-6).abs() < 1e-18);
    }
}
