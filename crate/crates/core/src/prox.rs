//! Closed-form proximal operators of the HiLasso regularizer.
//!
//! The prox of ψ(z) = Σ t_j|z_j| + Σ s_r‖z_r‖₂ over a partition is the
//! composition of elementwise soft-thresholding followed by group
//! soft-thresholding. The order matters; the reverse composition is not the
//! prox of ψ.

use ndarray::{Array1, ArrayView1};

use crate::error::{ensure, Result};
use crate::problem::GroupStructure;

/// Group norms at or below this are treated as exactly zero.
pub const ZERO_NORM: f64 = 1e-300;

/// Per-coefficient thresholds `t` and per-group thresholds `s`, already
/// divided by the step scale.
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdPair {
    pub t: Array1<f64>,
    pub s: Array1<f64>,
}

impl ThresholdPair {
    pub fn new(t: Array1<f64>, s: Array1<f64>) -> Result<Self> {
        ensure!(
            t.iter().chain(s.iter()).all(|v| v.is_finite() && *v >= 0.0),
            Invalid,
            "thresholds must be finite and nonnegative"
        );
        Ok(Self { t, s })
    }

    /// t = λ/α, s = μ/α.
    pub fn from_weights(gs: &GroupStructure, alpha: f64) -> Result<Self> {
        ensure!(alpha > 0.0, Invalid, "step scale must be positive, got {alpha}");
        Self::new(gs.lambda() / alpha, gs.mu() / alpha)
    }

    pub fn zeros(gs: &GroupStructure) -> Self {
        Self {
            t: Array1::zeros(gs.p()),
            s: Array1::zeros(gs.n_groups()),
        }
    }

    pub(crate) fn check(&self, gs: &GroupStructure) -> Result<()> {
        ensure!(
            self.t.len() == gs.p() && self.s.len() == gs.n_groups(),
            Dimension,
            "thresholds have lengths ({}, {}), structure needs ({}, {})",
            self.t.len(),
            self.s.len(),
            gs.p(),
            gs.n_groups()
        );
        Ok(())
    }

    /// Projects every entry onto [0, ∞).
    pub fn clamp_nonnegative(&mut self) {
        self.t.mapv_inplace(|v| v.max(0.0));
        self.s.mapv_inplace(|v| v.max(0.0));
    }
}

/// sign(b)·max(0, |b| − t).
///
/// Identity at zero threshold, signed zeros included; NaN propagates.
#[inline]
pub fn soft_threshold(b: f64, t: f64) -> f64 {
    // written as selects so loops over it vectorize
    let m = (b.abs() - t).max(0.0);
    let shrunk = if m > 0.0 { m.copysign(b) } else { 0.0 };
    if t == 0.0 || b.is_nan() {
        b
    } else {
        shrunk
    }
}

#[inline]
pub(crate) fn group_norm_sq(v: &[f64], group: &[usize]) -> f64 {
    group.iter().map(|&j| v[j] * v[j]).sum()
}

/// Vector soft-thresholding of one group, in place.
#[inline]
pub(crate) fn shrink_group(v: &mut [f64], group: &[usize], s: f64) {
    if s == 0.0 {
        return;
    }
    let norm = group_norm_sq(v, group).sqrt();
    if norm <= ZERO_NORM || norm <= s {
        for &j in group {
            v[j] = 0.0;
        }
    } else {
        let factor = (norm - s) / norm;
        for &j in group {
            v[j] *= factor;
        }
    }
}

/// In-place HiLasso prox on a contiguous buffer.
#[inline]
pub(crate) fn prox_hilasso_in_place(v: &mut [f64], gs: &GroupStructure, t: &[f64], s: &[f64]) {
    for (vj, &tj) in v.iter_mut().zip(t) {
        *vj = soft_threshold(*vj, tj);
    }
    for (group, &sr) in gs.groups().iter().zip(s) {
        shrink_group(v, group, sr);
    }
}

/// Group soft-thresholding applied independently to every group.
pub fn prox_group(v: ArrayView1<f64>, gs: &GroupStructure, s: ArrayView1<f64>) -> Array1<f64> {
    assert_eq!(v.len(), gs.p(), "vector length must match the structure");
    assert_eq!(s.len(), gs.n_groups(), "one group threshold per group");
    let mut out = v.to_vec();
    for (group, &sr) in gs.groups().iter().zip(s.iter()) {
        shrink_group(&mut out, group, sr);
    }
    Array1::from(out)
}

/// Prox of the scaled HiLasso regularizer: group shrinkage of the
/// elementwise soft-thresholded input.
pub fn prox_hilasso(v: ArrayView1<f64>, gs: &GroupStructure, tp: &ThresholdPair) -> Array1<f64> {
    assert_eq!(v.len(), gs.p(), "vector length must match the structure");
    tp.check(gs).expect("thresholds must match the structure");
    let mut out = v.to_vec();
    prox_hilasso_in_place(
        &mut out,
        gs,
        tp.t.as_slice().expect("contiguous"),
        tp.s.as_slice().expect("contiguous"),
    );
    Array1::from(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    #[test]
    fn scalar_cases() {
        assert!((soft_threshold(0.5, 0.2) - 0.3).abs() < 1e-15);
        assert_eq!(soft_threshold(-0.1, 0.2), 0.0);
        assert!((soft_threshold(-0.7, 0.2) + 0.5).abs() < 1e-15);
        for b in [-3.0, -0.0, 0.0, 1e-310, 2.5] {
            assert_eq!(soft_threshold(b, 0.0).to_bits(), b.to_bits());
        }
        assert!(soft_threshold(f64::NAN, 0.3).is_nan());
    }

    #[test]
    fn group_three_four() {
        let gs = GroupStructure::contiguous(&[2], 0.0, 0.0).unwrap();
        let out = prox_group(array![3.0, 4.0].view(), &gs, array![2.5].view());
        assert!((out[0] - 1.5).abs() < 1e-15 && (out[1] - 2.0).abs() < 1e-15);
        let out = prox_group(array![3.0, 4.0].view(), &gs, array![5.0].view());
        assert_eq!(out, array![0.0, 0.0]);
        let out = prox_group(array![3.0, 4.0].view(), &gs, array![0.0].view());
        assert_eq!(out, array![3.0, 4.0]);
    }

    #[test]
    fn zero_group_stays_zero() {
        let gs = GroupStructure::contiguous(&[2, 1], 0.0, 0.0).unwrap();
        let out = prox_group(array![0.0, 0.0, 1.0].view(), &gs, array![0.1, 0.1].view());
        assert_eq!(out[0], 0.0);
        assert_eq!(out[1], 0.0);
        let tiny = prox_group(array![1e-301, 0.0, 1.0].view(), &gs, array![1e-302, 0.0].view());
        assert_eq!(tiny[0], 0.0);
    }

    #[test]
    fn two_level_hand_case() {
        let gs = GroupStructure::contiguous(&[2], 0.0, 0.0).unwrap();
        let tp = ThresholdPair::new(array![0.5, 0.5], array![1.0]).unwrap();
        let out = prox_hilasso(array![2.0, -1.0].view(), &gs, &tp);
        let norm = 2.5f64.sqrt();
        let f = (norm - 1.0) / norm;
        assert!((out[0] - 1.5 * f).abs() < 1e-15);
        assert!((out[1] + 0.5 * f).abs() < 1e-15);
        assert!((out[0] - 0.55132).abs() < 1e-5 && (out[1] + 0.18377).abs() < 1e-5);
    }

    #[test]
    fn thresholds_rejected_when_negative() {
        assert!(ThresholdPair::new(array![0.1, -0.1], array![0.0]).is_err());
        assert!(ThresholdPair::new(array![0.1, f64::NAN], array![0.0]).is_err());
    }

    fn structure_strategy() -> impl Strategy<Value = (GroupStructure, Vec<f64>, ThresholdPair)> {
        prop::collection::vec(1usize..5, 1..6).prop_flat_map(|sizes| {
            let p: usize = sizes.iter().sum();
            let k = sizes.len();
            (
                Just(sizes),
                prop::collection::vec(-3.0f64..3.0, p),
                prop::collection::vec(0.0f64..1.0, p),
                prop::collection::vec(0.0f64..2.0, k),
            )
                .prop_map(|(sizes, v, t, s)| {
                    let gs = GroupStructure::contiguous(&sizes, 0.0, 0.0).unwrap();
                    (
                        gs,
                        v,
                        ThresholdPair::new(Array1::from(t), Array1::from(s)).unwrap(),
                    )
                })
        })
    }

    proptest! {
        #[test]
        fn sign_and_support_preserved((gs, v, tp) in structure_strategy()) {
            let v = Array1::from(v);
            let inner: Vec<f64> = v.iter().zip(tp.t.iter()).map(|(&b, &t)| soft_threshold(b, t)).collect();
            let out = prox_hilasso(v.view(), &gs, &tp);
            for j in 0..v.len() {
                prop_assert!(out[j] * v[j] >= 0.0);
                if inner[j] == 0.0 {
                    prop_assert_eq!(out[j], 0.0);
                }
            }
            let grouped = prox_group(Array1::from(inner).view(), &gs, tp.s.view());
            prop_assert_eq!(grouped, out);
        }

        #[test]
        fn composition_reductions_are_exact((gs, v, tp) in structure_strategy()) {
            let v = Array1::from(v);
            let only_t = ThresholdPair::new(tp.t.clone(), Array1::zeros(gs.n_groups())).unwrap();
            let out = prox_hilasso(v.view(), &gs, &only_t);
            for j in 0..v.len() {
                prop_assert_eq!(out[j].to_bits(), soft_threshold(v[j], tp.t[j]).to_bits());
            }
            let only_s = ThresholdPair::new(Array1::zeros(gs.p()), tp.s.clone()).unwrap();
            let out = prox_hilasso(v.view(), &gs, &only_s);
            let reference = prox_group(v.view(), &gs, tp.s.view());
            for j in 0..v.len() {
                prop_assert_eq!(out[j].to_bits(), reference[j].to_bits());
            }
        }
    }
}
