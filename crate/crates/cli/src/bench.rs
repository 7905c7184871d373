//! Learning-time and retrieval-cost comparison between compiled fast weights
//! and the gradient-descent oracle / memory methods.

use std::time::{Duration, Instant};

use fastweights::fast_weights::compile_detailed;
use fastweights::linalg::SpectralPolicy;
use fastweights::oracles::{gd_least_squares, GdConfig};
use fastweights::tensor::{transpose_matmul, EmbeddingMatrix};
use fastweights::Result;
use serde::Serialize;

use crate::verify::relative_frobenius;

const F64_BYTES: usize = std::mem::size_of::<f64>();

/// Storage and per-query cost of a `d_x × d_y` weight matrix against a
/// memory of `rows` key-value pairs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CostModel {
    pub rows: usize,
    pub d_x: usize,
    pub d_y: usize,
}

impl CostModel {
    pub fn fast_weight_bytes(&self) -> usize {
        self.d_x * self.d_y * F64_BYTES
    }

    pub fn memory_bytes(&self) -> usize {
        self.rows * (self.d_x + self.d_y) * F64_BYTES
    }

    pub fn fast_weight_flops(&self) -> usize {
        self.d_x * self.d_y
    }

    pub fn memory_flops(&self) -> usize {
        self.rows * (self.d_x + self.d_y)
    }

    pub fn memory_ratio(&self) -> f64 {
        self.memory_bytes() as f64 / self.fast_weight_bytes() as f64
    }

    pub fn flop_ratio(&self) -> f64 {
        self.memory_flops() as f64 / self.fast_weight_flops() as f64
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct BenchReport {
    pub rows: usize,
    pub d_x: usize,
    pub d_y: usize,
    pub repeats: usize,
    pub retained_rank: usize,
    pub compile_seconds: f64,
    pub gd_seconds: f64,
    pub speedup: f64,
    pub gd_steps: usize,
    pub gd_converged: bool,
    /// Relative Frobenius distance between the GD limit and the exact closed form.
    pub gd_relative_gap: f64,
    pub fast_weight_bytes: usize,
    pub memory_bytes: usize,
    pub memory_ratio: f64,
    pub fast_weight_flops: usize,
    pub memory_flops: usize,
    pub flop_ratio: f64,
}

#[derive(Clone, Copy, Debug)]
pub struct BenchConfig {
    pub repeats: usize,
    /// GD stops once `‖∇‖_F ≤ relative_tolerance · ‖∇ at W = 0‖_F`.
    pub relative_tolerance: f64,
    pub max_steps: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            repeats: 5,
            relative_tolerance: 1e-4,
            max_steps: 1_000_000,
        }
    }
}

fn median(mut xs: Vec<Duration>) -> Duration {
    xs.sort_unstable();
    xs[xs.len() / 2]
}

/// Times closed-form compilation and gradient descent on the same problem,
/// reporting the median of `repeats` runs for each.
pub fn run_bench(
    keys: &EmbeddingMatrix,
    values: &EmbeddingMatrix,
    policy: &SpectralPolicy,
    cfg: &BenchConfig,
) -> Result<BenchReport> {
    let repeats = cfg.repeats.max(1);
    let cost = CostModel {
        rows: keys.rows(),
        d_x: keys.cols(),
        d_y: values.cols(),
    };

    let mut compile_times = Vec::with_capacity(repeats);
    let mut compiled = None;
    for _ in 0..repeats {
        let start = Instant::now();
        let c = compile_detailed(keys, values, policy, None)?;
        compile_times.push(start.elapsed());
        compiled = Some(c);
    }
    let compiled = compiled.expect("at least one repeat");

    let initial_gradient = 2.0 * transpose_matmul(keys, values)?.frobenius_norm();
    let tolerance = (cfg.relative_tolerance * initial_gradient).max(f64::MIN_POSITIVE);
    let mut gd_times = Vec::with_capacity(repeats);
    let mut outcome = None;
    for _ in 0..repeats {
        let start = Instant::now();
        let gd_cfg = GdConfig::for_keys(keys, cfg.max_steps, tolerance);
        let o = gd_least_squares(keys, values, &gd_cfg)?;
        gd_times.push(start.elapsed());
        outcome = Some(o);
    }
    let outcome = outcome.expect("at least one repeat");
    let exact = compile_detailed(keys, values, &SpectralPolicy::exact(), None)?;

    let compile_seconds = median(compile_times).as_secs_f64();
    let gd_seconds = median(gd_times).as_secs_f64();
    Ok(BenchReport {
        rows: cost.rows,
        d_x: cost.d_x,
        d_y: cost.d_y,
        repeats,
        retained_rank: compiled.retained_rank,
        compile_seconds,
        gd_seconds,
        speedup: gd_seconds / compile_seconds.max(1e-9),
        gd_steps: outcome.steps,
        gd_converged: outcome.converged,
        gd_relative_gap: relative_frobenius(&outcome.w, exact.weights.weights()),
        fast_weight_bytes: cost.fast_weight_bytes(),
        memory_bytes: cost.memory_bytes(),
        memory_ratio: cost.memory_ratio(),
        fast_weight_flops: cost.fast_weight_flops(),
        memory_flops: cost.memory_flops(),
        flop_ratio: cost.flop_ratio(),
    })
}
