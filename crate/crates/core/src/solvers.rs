//! Exact iterative solvers for the HiLasso problem
//! min_z ½‖x − Dz‖² + Σ λ_j|z_j| + Σ μ_r‖z_r‖₂.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, ShapeBuilder, Zip};
use rayon::prelude::*;

use crate::error::{ensure, Error, Result};
use crate::objective::{check_shapes, eval_objective, step_scale, StepMode};
use crate::problem::{Dictionary, GroupStructure, SparseCode};
use crate::prox::{group_norm_sq, prox_hilasso_in_place, soft_threshold, ThresholdPair};

/// Tolerance used whenever a solver result stands in for the exact code.
pub const EXACT_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    pub max_iter: usize,
    /// Stop once the iterate change (Euclidean norm) drops below this.
    pub tol: f64,
    pub record_history: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_iter: 10_000,
            tol: 1e-8,
            record_history: false,
        }
    }
}

impl SolverConfig {
    pub fn exact() -> Self {
        Self {
            max_iter: 200_000,
            tol: EXACT_TOL,
            record_history: false,
        }
    }

    fn check(&self) -> Result<()> {
        ensure!(self.max_iter >= 1, Invalid, "max_iter must be at least 1");
        ensure!(
            self.tol > 0.0 && self.tol.is_finite(),
            Invalid,
            "tol must be positive, got {}",
            self.tol
        );
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveResult {
    pub code: SparseCode,
    pub iterations: usize,
    pub final_objective: f64,
    pub objective_history: Option<Vec<f64>>,
    pub converged: bool,
}

/// The fixed linear operators of a splitting iteration with step 1/α:
/// W = Dᵀ/α, S = I − DᵀD/α and the scaled thresholds.
#[derive(Debug, Clone)]
pub struct SplittingOperators {
    /// p×m.
    pub filter: Array2<f64>,
    /// p×p, stored column-major so group columns are contiguous.
    pub inhibition: Array2<f64>,
    pub thresholds: ThresholdPair,
    pub alpha: f64,
}

impl SplittingOperators {
    pub fn new(d: &Dictionary, gs: &GroupStructure, alpha: f64) -> Result<Self> {
        ensure!(
            alpha.is_finite() && alpha > 0.0,
            Invalid,
            "step scale must be positive and finite, got {alpha}"
        );
        ensure!(
            gs.p() == d.p(),
            Dimension,
            "structure covers p = {} but the dictionary has p = {}",
            gs.p(),
            d.p()
        );
        let atoms = d.atoms();
        let p = d.p();
        let filter = atoms.t().mapv(|v| v / alpha);
        let gram = atoms.t().dot(atoms);
        let mut inhibition = Array2::zeros((p, p).f());
        Zip::indexed(&mut inhibition)
            .and(&gram)
            .for_each(|(i, j), s, &g| *s = if i == j { 1.0 } else { 0.0 } - g / alpha);
        Ok(Self {
            filter,
            inhibition,
            thresholds: ThresholdPair::from_weights(gs, alpha)?,
            alpha,
        })
    }
}

fn check_finite(v: &[f64], what: &str, iteration: usize) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(format!(
            "{what} became non-finite at iteration {iteration}; the step scale is likely too small"
        )))
    }
}

/// Forward-backward splitting: z ← prox(Wx + S z), step from the global
/// Lipschitz bound.
pub fn ista_solve(
    x: ArrayView1<f64>,
    d: &Dictionary,
    gs: &GroupStructure,
    cfg: &SolverConfig,
) -> Result<SolveResult> {
    cfg.check()?;
    check_shapes(x, ndarray::Array1::zeros(d.p()).view(), d, gs)?;
    let alpha = step_scale(d, gs, StepMode::Global)?.alpha;
    let ops = SplittingOperators::new(d, gs, alpha)?;
    let t = ops.thresholds.t.as_slice().expect("contiguous");
    let s = ops.thresholds.s.as_slice().expect("contiguous");

    let wx = crate::network::apply_filter(&ops.filter, x);
    let mut z = Array1::<f64>::zeros(d.p());
    let mut history = cfg.record_history.then(Vec::new);
    let mut iterations = 0;
    let mut converged = false;
    while iterations < cfg.max_iter {
        let mut next = &wx + &ops.inhibition.dot(&z);
        let buf = next.as_slice_mut().expect("contiguous");
        prox_hilasso_in_place(buf, gs, t, s);
        check_finite(buf, "ISTA iterate", iterations)?;
        let change = (&next - &z).mapv(|v| v * v).sum().sqrt();
        z = next;
        iterations += 1;
        if let Some(h) = history.as_mut() {
            h.push(eval_objective(x, z.view(), d, gs)?);
        }
        if change < cfg.tol {
            converged = true;
            break;
        }
    }
    let final_objective = eval_objective(x, z.view(), d, gs)?;
    Ok(SolveResult {
        code: SparseCode::from_finite(z),
        iterations,
        final_objective,
        objective_history: history,
        converged,
    })
}

/// Block-coordinate forward-backward with greedy group selection, step from
/// the per-group Lipschitz bound.
pub fn bcofb_solve(
    x: ArrayView1<f64>,
    d: &Dictionary,
    gs: &GroupStructure,
    cfg: &SolverConfig,
) -> Result<SolveResult> {
    let alpha = step_scale(d, gs, StepMode::PerGroupBound)?.alpha;
    bcofb_solve_with_alpha(x, d, gs, alpha, cfg)
}

/// BCoFB with an explicitly chosen step scale α.
pub fn bcofb_solve_with_alpha(
    x: ArrayView1<f64>,
    d: &Dictionary,
    gs: &GroupStructure,
    alpha: f64,
    cfg: &SolverConfig,
) -> Result<SolveResult> {
    cfg.check()?;
    check_shapes(x, Array1::zeros(d.p()).view(), d, gs)?;
    let ops = SplittingOperators::new(d, gs, alpha)?;
    let t = ops.thresholds.t.as_slice().expect("contiguous");
    let s = ops.thresholds.s.as_slice().expect("contiguous");
    let p = d.p();

    let mut b = crate::network::apply_filter(&ops.filter, x);
    let mut z = vec![0.0; p];
    let mut y = vec![0.0; p];
    let mut e = vec![0.0; p];
    let mut history = cfg.record_history.then(Vec::new);
    let mut iterations = 0;
    let mut converged = false;
    while iterations < cfg.max_iter {
        y.copy_from_slice(b.as_slice().expect("contiguous"));
        prox_hilasso_in_place(&mut y, gs, t, s);
        for j in 0..p {
            e[j] = y[j] - z[j];
        }
        let (g, largest) = select_group(&e, gs);
        if largest < cfg.tol {
            converged = true;
            break;
        }
        for &j in gs.group(g) {
            b.scaled_add(e[j], &ops.inhibition.column(j));
            z[j] = y[j];
        }
        iterations += 1;
        check_finite(b.as_slice().expect("contiguous"), "BCoFB state", iterations)?;
        if let Some(h) = history.as_mut() {
            h.push(eval_objective(x, ArrayView1::from(&z[..]), d, gs)?);
        }
    }
    let mut out = b.to_vec();
    prox_hilasso_in_place(&mut out, gs, t, s);
    let out = Array1::from(out);
    let final_objective = eval_objective(x, out.view(), d, gs)?;
    Ok(SolveResult {
        code: SparseCode::from_finite(out),
        iterations,
        final_objective,
        objective_history: history,
        converged,
    })
}

/// argmax_r ‖e_r‖₂ with ties resolved to the lowest group index.
/// Returns the group and its norm.
#[inline]
pub(crate) fn select_group(e: &[f64], gs: &GroupStructure) -> (usize, f64) {
    let mut best = 0;
    let mut best_sq = f64::NEG_INFINITY;
    for (r, group) in gs.groups().iter().enumerate() {
        let sq = group_norm_sq(e, group);
        if sq > best_sq {
            best = r;
            best_sq = sq;
        }
    }
    (best, best_sq.sqrt())
}

/// Coordinate descent for the Lasso: BCoFB with singleton groups, μ = 0
/// and α = 1. Assumes atoms of norm at most one.
pub fn cod_solve(x: ArrayView1<f64>, d: &Dictionary, lambda: f64, cfg: &SolverConfig) -> Result<SolveResult> {
    let gs = GroupStructure::singletons(d.p(), lambda)?;
    bcofb_solve_with_alpha(x, d, &gs, 1.0, cfg)
}

/// Norm of the minimal-norm element of ∇f₁(z) + ∂ψ(z).
///
/// Zero exactly when z minimizes the HiLasso objective.
pub fn optimality_residual(
    x: ArrayView1<f64>,
    z: ArrayView1<f64>,
    d: &Dictionary,
    gs: &GroupStructure,
) -> Result<f64> {
    check_shapes(x, z, d, gs)?;
    let residual = d.atoms().dot(&z) - x;
    let grad = d.atoms().t().dot(&residual);
    let lambda = gs.lambda();
    let mut total = 0.0;
    for (group, &mu) in gs.groups().iter().zip(gs.mu().iter()) {
        let norm = group.iter().map(|&j| z[j] * z[j]).sum::<f64>().sqrt();
        if norm > 0.0 {
            for &j in group {
                let g = grad[j] + mu * z[j] / norm;
                let r = if z[j] != 0.0 {
                    g + lambda[j] * z[j].signum()
                } else {
                    soft_threshold(g, lambda[j])
                };
                total += r * r;
            }
        } else {
            // distance from −g_r to the box [−λ, λ] plus the μ-ball
            let box_dist = group
                .iter()
                .map(|&j| soft_threshold(grad[j], lambda[j]).powi(2))
                .sum::<f64>()
                .sqrt();
            total += (box_dist - mu).max(0.0).powi(2);
        }
    }
    Ok(total.sqrt())
}

/// Exact codes for every column of `data` (p×N), solved by BCoFB at the
/// canonical exact tolerance. Columns are solved in parallel.
pub fn exact_codes(data: ArrayView2<f64>, d: &Dictionary, gs: &GroupStructure) -> Result<Array2<f64>> {
    let cfg = SolverConfig::exact();
    let codes = (0..data.ncols())
        .into_par_iter()
        .map(|n| bcofb_solve(data.column(n), d, gs, &cfg).map(|r| r.code.into_inner()))
        .collect::<Result<Vec<_>>>()?;
    let mut out = Array2::zeros((d.p(), data.ncols()));
    for (mut col, code) in out.axis_iter_mut(Axis(1)).zip(codes) {
        col.assign(&code);
    }
    Ok(out)
}

/// Mean exact HiLasso objective over the columns of `data`.
pub fn mean_exact_objective(data: ArrayView2<f64>, d: &Dictionary, gs: &GroupStructure) -> Result<f64> {
    let codes = exact_codes(data, d, gs)?;
    let mut total = 0.0;
    for n in 0..data.ncols() {
        total += eval_objective(data.column(n), codes.column(n), d, gs)?;
    }
    Ok(total / data.ncols() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn random_dictionary(m: usize, p: usize, seed: u64) -> Dictionary {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Dictionary::normalized(Array2::from_shape_fn((m, p), |_| rng.sample(StandardNormal))).unwrap()
    }

    fn random_signal(m: usize, seed: u64) -> Array1<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array1::from_shape_fn(m, |_| rng.sample(StandardNormal))
    }

    fn tight() -> SolverConfig {
        SolverConfig {
            max_iter: 200_000,
            tol: 1e-12,
            record_history: false,
        }
    }

    #[test]
    fn orthonormal_lasso_is_soft_threshold() {
        let d = Dictionary::new(Array2::eye(2)).unwrap();
        let gs = GroupStructure::singletons(2, 0.2).unwrap();
        let x = array![1.0, 0.1];
        for r in [
            ista_solve(x.view(), &d, &gs, &SolverConfig::default()).unwrap(),
            bcofb_solve(x.view(), &d, &gs, &SolverConfig::default()).unwrap(),
            cod_solve(x.view(), &d, 0.2, &SolverConfig::default()).unwrap(),
        ] {
            assert!((r.code.as_array()[0] - 0.8).abs() < 1e-6, "{:?}", r.code);
            assert_eq!(r.code.as_array()[1], 0.0);
            assert!(r.converged);
        }
        let r = cod_solve(x.view(), &d, 0.2, &SolverConfig::default()).unwrap();
        assert!((r.code.as_array()[0] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn zero_above_critical_lambda() {
        let d = random_dictionary(8, 12, 1);
        let x = random_signal(8, 2);
        let crit = d.atoms().t().dot(&x).iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let gs = GroupStructure::singletons(12, crit * 1.01).unwrap();
        let cfg = SolverConfig::default();
        for r in [
            ista_solve(x.view(), &d, &gs, &cfg).unwrap(),
            bcofb_solve(x.view(), &d, &gs, &cfg).unwrap(),
            cod_solve(x.view(), &d, crit * 1.01, &cfg).unwrap(),
        ] {
            assert!(r.code.as_array().iter().all(|&v| v == 0.0));
        }
        let res = optimality_residual(x.view(), Array1::zeros(12).view(), &d, &gs).unwrap();
        assert_eq!(res, 0.0);
    }

    #[test]
    fn zero_signal_stops_immediately() {
        let d = random_dictionary(5, 9, 3);
        let gs = GroupStructure::contiguous(&[3, 3, 3], 0.1, 0.1).unwrap();
        let r = bcofb_solve(Array1::zeros(5).view(), &d, &gs, &SolverConfig::default()).unwrap();
        assert_eq!(r.iterations, 0);
        assert!(r.code.as_array().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn ista_and_bcofb_agree_on_structured_instance() {
        let d = random_dictionary(20, 50, 4);
        let gs = GroupStructure::contiguous(&[10; 5], 0.1, 0.05).unwrap();
        let x = random_signal(20, 5);
        let cfg = SolverConfig {
            record_history: true,
            ..tight()
        };
        let a = ista_solve(x.view(), &d, &gs, &cfg).unwrap();
        let b = bcofb_solve(x.view(), &d, &gs, &cfg).unwrap();
        assert!((a.final_objective - b.final_objective).abs() < 1e-6);
        for r in [&a, &b] {
            let res = optimality_residual(x.view(), r.code.view(), &d, &gs).unwrap();
            assert!(res < 1e-5, "residual {res}");
        }
        let h = a.objective_history.unwrap();
        assert!(h.windows(2).all(|w| w[1] <= w[0] + 1e-12));
    }

    #[test]
    fn residual_grows_with_perturbation() {
        let d = random_dictionary(10, 15, 6);
        let gs = GroupStructure::contiguous(&[5, 5, 5], 0.1, 0.05).unwrap();
        let x = random_signal(10, 7);
        let z = bcofb_solve(x.view(), &d, &gs, &tight())
            .unwrap()
            .code
            .into_inner();
        let base = optimality_residual(x.view(), z.view(), &d, &gs).unwrap();
        assert!(base < 1e-5);
        let mut last = base;
        for eps in [1e-3, 1e-2, 1e-1] {
            let mut zp = z.clone();
            zp[0] += eps;
            let r = optimality_residual(x.view(), zp.view(), &d, &gs).unwrap();
            assert!(r >= last - 1e-9, "residual not growing: {r} < {last}");
            last = r;
        }
        assert!(last > 0.0);
    }

    #[test]
    fn solution_scales_with_problem() {
        let d = random_dictionary(12, 20, 8);
        let gs = GroupStructure::contiguous(&[5, 5, 10], 0.1, 0.05).unwrap();
        let x = random_signal(12, 9);
        let c = 3.0;
        let z1 = bcofb_solve(x.view(), &d, &gs, &tight())
            .unwrap()
            .code
            .into_inner();
        let z3 = bcofb_solve((&x * c).view(), &d, &gs.scaled(c).unwrap(), &tight())
            .unwrap()
            .code
            .into_inner();
        let diff = (&z3 - &(&z1 * c)).mapv(f64::abs).fold(0.0f64, |a, &v| a.max(v));
        assert!(diff < 1e-8, "diff {diff}");
    }

    #[test]
    fn invalid_config_rejected() {
        let d = random_dictionary(3, 3, 1);
        let gs = GroupStructure::singletons(3, 0.1).unwrap();
        let x = random_signal(3, 1);
        let bad = SolverConfig {
            tol: 0.0,
            ..SolverConfig::default()
        };
        assert!(ista_solve(x.view(), &d, &gs, &bad).is_err());
        assert!(bcofb_solve_with_alpha(x.view(), &d, &gs, 1e-300, &SolverConfig::default()).is_err());
    }
}
