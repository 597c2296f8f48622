//! Throughput of the fixed encoder datapath.

use std::time::Instant;

use ndarray::{Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{ensure, Result};
use crate::harness::synth::random_dictionary;
use crate::network::{EncoderParams, Tying};
use crate::problem::GroupStructure;

/// Reported alongside measurements for context: 10⁵ vectors of dimension
/// 100 through a 10-layer structured encoder in 3.6 s. Hardware dependent;
/// never compared against.
pub const REFERENCE_SECONDS_PER_VECTOR_PER_LAYER: f64 = 3.6e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchRow {
    pub depth: usize,
    pub n: usize,
    /// Wall time of a forward pass over all N vectors.
    pub seconds: f64,
    pub vectors_per_second: f64,
    pub seconds_per_vector_per_layer: f64,
}

fn time_once(params: &EncoderParams, data: &Array2<f64>) -> Result<f64> {
    let start = Instant::now();
    let out = params.forward_batch(data.view())?;
    let t = start.elapsed().as_secs_f64();
    std::hint::black_box(out);
    Ok(t)
}

fn row(params: &EncoderParams, n: usize, seconds: f64) -> BenchRow {
    BenchRow {
        depth: params.depth,
        n,
        seconds,
        vectors_per_second: n as f64 / seconds,
        seconds_per_vector_per_layer: seconds / (n * params.depth) as f64,
    }
}

/// Times `forward_batch` on `data`: the fastest of `repetitions` runs after
/// one warm-up.
pub fn bench(params: &EncoderParams, data: &Array2<f64>, repetitions: usize) -> Result<BenchRow> {
    ensure!(repetitions >= 1, Invalid, "need at least one repetition");
    ensure!(data.ncols() >= 1, Invalid, "need at least one vector");
    time_once(params, data)?;
    let mut best = f64::INFINITY;
    for _ in 0..repetitions {
        best = best.min(time_once(params, data)?);
    }
    Ok(row(params, data.ncols(), best))
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub m: usize,
    pub p: usize,
    /// Contiguous group sizes summing to p.
    pub group_sizes: Vec<usize>,
    pub lambda: f64,
    pub mu: f64,
    pub depths: Vec<usize>,
    pub n: usize,
    pub repetitions: usize,
    /// Vectors per timed slice; 0 times the whole batch at once.
    pub slice: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            m: 100,
            p: 256,
            group_sizes: vec![52, 51, 51, 51, 51],
            lambda: 0.1,
            mu: 0.1,
            depths: vec![2, 4, 8, 16],
            n: 10_000,
            repetitions: 15,
            slice: 500,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalingReport {
    /// One row per depth at N, then the smallest depth at 2N.
    pub rows: Vec<BenchRow>,
    /// Largest relative deviation of the per-vector-per-layer time from its
    /// mean across depths.
    pub per_layer_spread: f64,
    /// Time at 2N over time at N, smallest depth.
    pub n_doubling_ratio: f64,
    /// Per-vector time ratios between consecutive doubled depths.
    pub depth_doubling_ratios: Vec<f64>,
}

impl ScalingReport {
    /// The near-linear scaling claims, as a report: (label, holds).
    pub fn checks(&self) -> Vec<(String, bool)> {
        let mut out = vec![
            (
                format!("per-layer time spread {:.3} ≤ 0.25", self.per_layer_spread),
                self.per_layer_spread <= 0.25,
            ),
            (
                format!("doubling N ratio {:.3} in [1.6, 2.4]", self.n_doubling_ratio),
                (1.6..=2.4).contains(&self.n_doubling_ratio),
            ),
        ];
        for r in &self.depth_doubling_ratios {
            out.push((
                format!("doubling T ratio {r:.3} in [1.6, 2.4]"),
                (1.6..=2.4).contains(r),
            ));
        }
        out
    }
}

/// Benchmarks encoders of every configured depth over one random dictionary
/// and one batch of random vectors. The batch is timed in consecutive slices
/// of `cfg.slice` vectors; a configuration's time is the sum over slices of
/// the fastest time seen for that slice.
pub fn bench_scaling(cfg: &BenchConfig) -> Result<ScalingReport> {
    ensure!(!cfg.depths.is_empty(), Config, "depths must be nonempty");
    ensure!(
        cfg.group_sizes.iter().sum::<usize>() == cfg.p,
        Config,
        "group sizes must sum to p = {}",
        cfg.p
    );
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let d = random_dictionary(cfg.m, cfg.p, &mut rng)?;
    let gs = GroupStructure::contiguous(&cfg.group_sizes, cfg.lambda, cfg.mu)?;
    let data = Array2::from_shape_fn((cfg.m, 2 * cfg.n), |_| rng.sample::<f64, _>(StandardNormal));
    let half = data.slice(ndarray::s![.., ..cfg.n]).to_owned();
    let first = *cfg.depths.iter().min().expect("nonempty");
    let mut runs: Vec<(EncoderParams, &Array2<f64>)> = cfg
        .depths
        .iter()
        .map(|&depth| {
            Ok((
                EncoderParams::init_from_dictionary(&d, &gs, depth, Tying::Tied)?,
                &half,
            ))
        })
        .collect::<Result<_>>()?;
    runs.push((
        EncoderParams::init_from_dictionary(&d, &gs, first, Tying::Tied)?,
        &data,
    ));
    let slices: Vec<Vec<Array2<f64>>> = runs
        .iter()
        .map(|(_, x)| {
            let width = if cfg.slice == 0 { x.ncols() } else { cfg.slice };
            x.axis_chunks_iter(Axis(1), width).map(|c| c.to_owned()).collect()
        })
        .collect();
    let mut fastest: Vec<Vec<f64>> = slices.iter().map(|s| vec![f64::INFINITY; s.len()]).collect();
    // round-robin: each configuration once per round
    for round in 0..=cfg.repetitions {
        for ((params, _), (chunks, best)) in runs.iter().zip(slices.iter().zip(&mut fastest)) {
            for (chunk, b) in chunks.iter().zip(best.iter_mut()) {
                let t = time_once(params, chunk)?;
                if round > 0 {
                    *b = b.min(t);
                }
            }
        }
    }
    let best: Vec<f64> = fastest.iter().map(|b| b.iter().sum()).collect();
    let mut rows: Vec<BenchRow> = runs
        .iter()
        .zip(&best)
        .map(|((params, x), &t)| row(params, x.ncols(), t))
        .collect();
    let doubled = rows.pop().expect("doubled run");
    let base = rows
        .iter()
        .find(|r| r.depth == first)
        .expect("benchmarked")
        .seconds;

    let per_layer: Vec<f64> = rows.iter().map(|r| r.seconds_per_vector_per_layer).collect();
    let mean = per_layer.iter().sum::<f64>() / per_layer.len() as f64;
    let per_layer_spread = per_layer
        .iter()
        .map(|v| (v / mean - 1.0).abs())
        .fold(0.0, f64::max);
    let mut depth_doubling_ratios = Vec::new();
    for a in &rows {
        if let Some(b) = rows.iter().find(|b| b.depth == 2 * a.depth) {
            depth_doubling_ratios.push(b.seconds / a.seconds);
        }
    }
    rows.push(doubled);
    Ok(ScalingReport {
        rows,
        per_layer_spread,
        n_doubling_ratio: doubled.seconds / base,
        depth_doubling_ratios,
    })
}
