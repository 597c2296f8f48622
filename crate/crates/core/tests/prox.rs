mod common;

use ndarray::Array1;
use structsparse::{prox_group, prox_hilasso, soft_threshold, GroupStructure, ThresholdPair};

#[test]
fn prox_output_satisfies_subgradient_optimality() {
    let mut rng = common::rng(1);
    for _ in 0..1000 {
        let (v, gs, tp) = common::random_prox_case(&mut rng);
        let u = prox_hilasso(v.view(), &gs, &tp);
        let viol = common::subgradient_violation(&v, &u, &gs, &tp);
        assert!(viol <= 1e-8, "violation {viol}");
    }
}

#[test]
fn prox_is_composition_of_group_and_scalar_shrinkage() {
    let mut rng = common::rng(2);
    for _ in 0..1000 {
        let (v, gs, tp) = common::random_prox_case(&mut rng);
        let u = prox_hilasso(v.view(), &gs, &tp);
        let scalar = Array1::from_shape_fn(v.len(), |j| soft_threshold(v[j], tp.t[j]));
        let composed = prox_group(scalar.view(), &gs, tp.s.view());
        assert!(u.iter().zip(&composed).all(|(a, b)| a.to_bits() == b.to_bits()));
    }
}

#[test]
fn prox_is_nonexpansive() {
    let mut rng = common::rng(3);
    for _ in 0..1000 {
        let (v, gs, tp) = common::random_prox_case(&mut rng);
        let w = &v + &(common::randn_vec(v.len(), &mut rng) * 0.5);
        let pv = prox_hilasso(v.view(), &gs, &tp);
        let pw = prox_hilasso(w.view(), &gs, &tp);
        let num = (&pv - &pw).mapv(|x| x * x).sum().sqrt();
        let den = (&v - &w).mapv(|x| x * x).sum().sqrt();
        assert!(num <= den * (1.0 + 1e-12) + 1e-15);
    }
}

#[test]
fn prox_beats_dense_grid_on_a_two_coefficient_group() {
    let v = Array1::from(vec![3.0, -4.0]);
    let gs = GroupStructure::new(vec![vec![0, 1]], Array1::zeros(2), Array1::zeros(1)).unwrap();
    let tp = ThresholdPair::new(Array1::from(vec![0.5, 0.5]), Array1::from(vec![1.0])).unwrap();
    let u = prox_hilasso(v.view(), &gs, &tp);
    let f = |a: f64, b: f64| {
        0.5 * ((a - 3.0).powi(2) + (b + 4.0).powi(2)) + 0.5 * (a.abs() + b.abs()) + (a * a + b * b).sqrt()
    };
    let best = f(u[0], u[1]);
    let mut grid_best = f64::INFINITY;
    for i in -200..=200 {
        for j in -200..=200 {
            let (a, b) = (u[0] + i as f64 * 1e-3, u[1] + j as f64 * 1e-3);
            grid_best = grid_best.min(f(a, b));
        }
    }
    assert!(best <= grid_best + 1e-12);
    // soft(v, 0.5) = (2.5, −3.5), norm √18.5, then shrink by 1
    let n = 18.5f64.sqrt();
    assert!((u[0] - 2.5 * (n - 1.0) / n).abs() < 1e-15);
    assert!((u[1] + 3.5 * (n - 1.0) / n).abs() < 1e-15);
}

#[test]
fn zero_thresholds_are_identity() {
    let mut rng = common::rng(4);
    for _ in 0..100 {
        let (v, gs, _) = common::random_prox_case(&mut rng);
        let tp = ThresholdPair::zeros(&gs);
        let u = prox_hilasso(v.view(), &gs, &tp);
        assert!(u.iter().zip(&v).all(|(a, b)| a.to_bits() == b.to_bits()));
    }
}
