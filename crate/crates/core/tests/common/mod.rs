#![allow(dead_code)]

use ndarray::{Array1, Array2, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use structsparse::{soft_threshold, Dictionary, EncoderParams, GroupStructure, ThresholdPair, Tying};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn randn(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.sample(StandardNormal))
}

pub fn randn_vec(n: usize, rng: &mut ChaCha8Rng) -> Array1<f64> {
    Array1::from_shape_fn(n, |_| rng.sample(StandardNormal))
}

pub fn random_dictionary(m: usize, p: usize, rng: &mut ChaCha8Rng) -> Dictionary {
    Dictionary::normalized(randn(m, p, rng)).unwrap()
}

/// Random partition of 0..p into `k` nonempty groups (indices shuffled).
pub fn random_partition(p: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    use rand::seq::SliceRandom;
    let mut idx: Vec<usize> = (0..p).collect();
    idx.shuffle(rng);
    let mut cuts: Vec<usize> = rand::seq::index::sample(rng, p - 1, k - 1)
        .into_iter()
        .map(|c| c + 1)
        .collect();
    cuts.sort_unstable();
    let mut groups = Vec::with_capacity(k);
    let mut start = 0;
    for &c in cuts.iter().chain(std::iter::once(&p)) {
        groups.push(idx[start..c].to_vec());
        start = c;
    }
    groups
}

pub fn random_structure(p: usize, k: usize, lambda: f64, mu: f64, rng: &mut ChaCha8Rng) -> GroupStructure {
    GroupStructure::new(
        random_partition(p, k, rng),
        Array1::from_elem(p, lambda),
        Array1::from_elem(k, mu),
    )
    .unwrap()
}

/// Initialization plus a random perturbation of every parameter.
pub fn perturbed_params(
    d: &Dictionary,
    gs: &GroupStructure,
    alpha: Option<f64>,
    depth: usize,
    tying: Tying,
    scale: f64,
    rng: &mut ChaCha8Rng,
) -> EncoderParams {
    let mut params = match alpha {
        Some(a) => EncoderParams::init_with_alpha(d, gs, a, depth, tying).unwrap(),
        None => EncoderParams::init_from_dictionary(d, gs, depth, tying).unwrap(),
    };
    let flat: Vec<f64> = params
        .to_flat()
        .into_iter()
        .map(|v| v + scale * rng.sample::<f64, _>(StandardNormal))
        .collect();
    params.set_from_flat(&flat);
    params.clamp_thresholds();
    params
}

pub fn max_abs_diff(a: &Array1<f64>, b: &Array1<f64>) -> f64 {
    (a - b).iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

/// Largest violation of 0 ∈ u − v + ∂ψ(u) for ψ = Σ t_j|u_j| + Σ s_r‖u_r‖.
pub fn subgradient_violation(
    v: &Array1<f64>,
    u: &Array1<f64>,
    gs: &GroupStructure,
    tp: &ThresholdPair,
) -> f64 {
    let mut worst = 0.0f64;
    for (r, group) in gs.groups().iter().enumerate() {
        let s = tp.s[r];
        let norm = group.iter().map(|&j| u[j] * u[j]).sum::<f64>().sqrt();
        if norm == 0.0 {
            // need g with |g_j| ≤ t_j and ‖v_r − g‖ ≤ s
            let excess: f64 = group
                .iter()
                .map(|&j| {
                    let over = (v[j].abs() - tp.t[j]).max(0.0);
                    over * over
                })
                .sum::<f64>()
                .sqrt();
            worst = worst.max(excess - s);
        } else {
            for &j in group {
                let rest = v[j] - u[j] - s * u[j] / norm;
                let viol = if u[j] != 0.0 {
                    (rest - tp.t[j] * u[j].signum()).abs()
                } else {
                    rest.abs() - tp.t[j]
                };
                worst = worst.max(viol);
            }
        }
    }
    worst
}

pub fn random_prox_case(rng: &mut ChaCha8Rng) -> (Array1<f64>, GroupStructure, ThresholdPair) {
    let p = rng.random_range(2..=40);
    let k = rng.random_range(1..=p.min(8));
    let gs = random_structure(p, k, 0.0, 0.0, rng);
    let scale = rng.random_range(0.1..3.0);
    let v = randn_vec(p, rng) * scale;
    let t = Array1::from_shape_fn(p, |_| {
        if rng.random_bool(0.1) {
            0.0
        } else {
            rng.random_range(0.0..1.0)
        }
    });
    let s = Array1::from_shape_fn(k, |_| {
        if rng.random_bool(0.1) {
            0.0
        } else {
            rng.random_range(0.0..2.0)
        }
    });
    (v, gs, ThresholdPair::new(t, s).unwrap())
}

/// Textbook coordinate descent on the residual: the candidate for every
/// coordinate is soft(z_j + d_jᵀ(x − Dz), λ); the coordinate with the largest
/// change (lowest index on ties) is updated.
pub fn cod_oracle(x: ArrayView1<f64>, d: &Dictionary, lambda: f64, iters: usize) -> Vec<Array1<f64>> {
    let a = d.atoms();
    let mut z = Array1::<f64>::zeros(d.p());
    let mut out = Vec::with_capacity(iters + 1);
    let candidate = |z: &Array1<f64>| {
        let r = &x - &a.dot(z);
        let c = a.t().dot(&r);
        Array1::from_shape_fn(z.len(), |j| soft_threshold(z[j] + c[j], lambda))
    };
    for _ in 0..iters {
        let y = candidate(&z);
        out.push(y.clone());
        let mut best = 0;
        for j in 1..y.len() {
            if (y[j] - z[j]).abs() > (y[best] - z[best]).abs() {
                best = j;
            }
        }
        if y[best] == z[best] {
            break;
        }
        z[best] = y[best];
    }
    out.push(candidate(&z));
    out
}
