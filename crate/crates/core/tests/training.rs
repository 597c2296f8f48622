mod common;

use common::*;
use structsparse::harness::{gen_synthetic, SynthSpec};
use structsparse::objective::regularizer_with_mu;
use structsparse::solvers::{exact_codes, mean_exact_objective};
use structsparse::training::{loss_objective, loss_regression, train};
use structsparse::{
    DescentConfig, EncoderParams, GroupStructure, LossKind, LossSpec, ProblemInstance, Tying,
};

fn lasso_data(seed: u64, n: usize) -> ProblemInstance {
    let spec = SynthSpec {
        m: 16,
        group_sizes: vec![1; 32],
        active_groups: 3,
        active_fraction: 1.0,
        noise: 0.05,
        n,
        lambda: 0.1,
        mu: 0.0,
        seed,
        ..SynthSpec::default()
    };
    gen_synthetic(&spec).unwrap().instance
}

fn cod(inst: &ProblemInstance, depth: usize) -> EncoderParams {
    let gs = GroupStructure::singletons(inst.p(), 0.1).unwrap();
    EncoderParams::init_with_alpha(&inst.dictionary, &gs, 1.0, depth, Tying::Tied).unwrap()
}

#[test]
fn converged_depth_reproduces_exact_codes() {
    let mut r = rng(11);
    let d = random_dictionary(12, 8, &mut r);
    let gs = random_structure(8, 3, 0.2, 0.1, &mut r);
    let x = randn(12, 5, &mut r);
    let codes = exact_codes(x.view(), &d, &gs).unwrap();
    let inst = ProblemInstance::new(x, d.clone(), gs.clone())
        .unwrap()
        .with_exact_codes(codes)
        .unwrap();
    let params = EncoderParams::init_from_dictionary(&d, &gs, 3000, Tying::Tied).unwrap();
    assert!(loss_regression(&params, &inst).unwrap() < 1e-10);
}

#[test]
fn regression_training_beats_truncation() {
    let inst = lasso_data(3, 300);
    let codes = exact_codes(inst.data(), &inst.dictionary, &inst.structure).unwrap();
    let inst = inst.with_exact_codes(codes).unwrap();
    let init = cod(&inst, 5);
    let cfg = DescentConfig {
        epochs: 10,
        batch_size: 50,
        ..DescentConfig::default()
    };
    let out = train(&init, &inst, &LossSpec::new(LossKind::Regression), &cfg).unwrap();
    let before = loss_regression(&init, &inst).unwrap();
    let after = loss_regression(&out.params, &inst).unwrap();
    assert!(after < before, "{after} ≥ {before}");
}

#[test]
fn first_accepted_full_batch_steps_decrease() {
    let inst = lasso_data(5, 100);
    let mut params = cod(&inst, 3);
    let spec = LossSpec::new(LossKind::Objective);
    let cfg = DescentConfig {
        epochs: 1,
        ..DescentConfig::default()
    };
    let mut losses = vec![loss_objective(&params, &inst).unwrap()];
    while losses.len() <= 20 {
        let out = train(&params, &inst, &spec, &cfg).unwrap();
        if out.history[1].accepted == 1 {
            losses.push(out.history[1].loss);
        } else {
            break;
        }
        params = out.params;
    }
    assert!(losses.len() > 5, "too few accepted steps");
    for w in losses.windows(2) {
        assert!(w[1] < w[0], "{} ≥ {}", w[1], w[0]);
    }
}

#[test]
fn objective_gap_shrinks_and_orders_by_depth() {
    let cfg = DescentConfig {
        epochs: 15,
        batch_size: 50,
        ..DescentConfig::default()
    };
    let spec = LossSpec::new(LossKind::Objective);
    for seed in 0..2 {
        let inst = lasso_data(100 + seed, 300);
        let exact = mean_exact_objective(inst.data(), &inst.dictionary, &inst.structure).unwrap();
        let mut gaps = Vec::new();
        for depth in [1, 2, 4, 8] {
            let init = cod(&inst, depth);
            let trained = train(&init, &inst, &spec, &cfg).unwrap().params;
            let before = loss_objective(&init, &inst).unwrap() - exact;
            let after = loss_objective(&trained, &inst).unwrap() - exact;
            assert!(after >= -1e-12, "below the exact optimum");
            if depth == 4 {
                assert!(after <= 0.8 * before, "gap {before} → {after}");
            }
            gaps.push(after);
        }
        for w in gaps.windows(2) {
            assert!(w[1] <= w[0], "trained gaps {gaps:?} increase with depth");
        }
    }
}

#[test]
fn active_group_energy_lowers_discriminative_term() {
    let mut r = rng(21);
    let gs = GroupStructure::contiguous(&[3, 3], 0.1, 0.0).unwrap();
    let mu = ndarray::array![-1.0, 1.0];
    for _ in 0..20 {
        let z = randn_vec(6, &mut r);
        let mut louder = z.clone();
        for j in 0..3 {
            louder[j] *= 1.5;
        }
        let before = regularizer_with_mu(z.view(), &gs, mu.view());
        let after = regularizer_with_mu(louder.view(), &gs, mu.view());
        assert!(after < before, "{after} ≥ {before}");
    }
}
