//! Central finite differences, used as the gradient oracle.

use rayon::prelude::*;

use super::backward::Gradients;
use crate::network::{EncoderParams, ForwardTrace};
use crate::prox::soft_threshold;

/// Central-difference gradient of `f` at `x` with step `h`.
///
/// Entries are independent, so they are evaluated in parallel; the result is
/// deterministic.
pub fn finite_diff<F>(f: F, x: &[f64], h: f64) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    assert!(h > 0.0, "finite-difference step must be positive");
    (0..x.len())
        .into_par_iter()
        .map_init(
            || x.to_vec(),
            |buf, i| {
                let orig = buf[i];
                buf[i] = orig + h;
                let up = f(buf);
                buf[i] = orig - h;
                let down = f(buf);
                buf[i] = orig;
                (up - down) / (2.0 * h)
            },
        )
        .collect()
}

/// Central differences of `loss` with respect to every encoder parameter.
pub fn finite_diff_grad<F>(loss: F, params: &EncoderParams, h: f64) -> Gradients
where
    F: Fn(&EncoderParams) -> f64 + Sync,
{
    let flat = params.to_flat();
    let g = finite_diff(
        |v| {
            let mut p = params.clone();
            p.set_from_flat(v);
            loss(&p)
        },
        &flat,
        h,
    );
    Gradients::from_flat(params, &g)
}

/// Largest entrywise relative error |a − b| / max(|a|, |b|, floor).
pub fn max_relative_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}

/// Distance of a traced forward pass to the nearest non-smooth point: a
/// coefficient at its threshold, a group norm at its group threshold, or a
/// tie in the group selection. Finite differences with steps well below this
/// margin see a smooth function.
pub fn trace_margin(params: &EncoderParams, trace: &ForwardTrace) -> f64 {
    let gs = &params.structure;
    let prox_margin = |b: &[f64], k: usize| {
        let th = &params.layer(k).thresholds;
        let mut margin = f64::INFINITY;
        let mut u = vec![0.0; b.len()];
        for j in 0..b.len() {
            margin = margin.min((b[j].abs() - th.t[j]).abs());
            u[j] = soft_threshold(b[j], th.t[j]);
        }
        for (r, group) in gs.groups().iter().enumerate() {
            if th.s[r] > 0.0 {
                let norm = group.iter().map(|&j| u[j] * u[j]).sum::<f64>().sqrt();
                margin = margin.min((norm - th.s[r]).abs());
            }
        }
        margin
    };
    let mut margin = f64::INFINITY;
    for (k, rec) in trace.layers.iter().enumerate() {
        margin = margin.min(prox_margin(rec.b_pre.as_slice().expect("contiguous"), k));
        let mut norms: Vec<f64> = gs
            .groups()
            .iter()
            .map(|g| g.iter().map(|&j| rec.e[j] * rec.e[j]).sum::<f64>().sqrt())
            .collect();
        if norms.len() > 1 {
            norms.sort_by(|a, b| b.total_cmp(a));
            margin = margin.min(norms[0] - norms[1]);
        }
    }
    margin.min(prox_margin(
        trace.final_b.as_slice().expect("contiguous"),
        params.depth - 1,
    ))
}
