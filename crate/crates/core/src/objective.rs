//! HiLasso objective evaluation and Lipschitz step-scale bounds.

use ndarray::{Array1, ArrayView1, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{ensure, Error, Result};
use crate::problem::{Dictionary, GroupStructure};

/// Inflation applied to power-iteration estimates so the returned value is
/// an upper bound on the true Lipschitz constant.
pub const STEP_SAFETY: f64 = 1.0001;

const POWER_TOL: f64 = 1e-10;
const POWER_MAX_ITER: usize = 50_000;
const POWER_SEED: u64 = 0x5eed_5ca1e;

/// ψ(z) = Σ_j λ_j |z_j| + Σ_r μ_r ‖z_r‖₂.
pub fn regularizer(z: ArrayView1<f64>, gs: &GroupStructure) -> f64 {
    regularizer_with_mu(z, gs, gs.mu().view())
}

/// ψ with the group weights replaced by `mu` (which may be signed).
pub fn regularizer_with_mu(z: ArrayView1<f64>, gs: &GroupStructure, mu: ArrayView1<f64>) -> f64 {
    assert_eq!(mu.len(), gs.n_groups(), "one weight per group");
    let l1: f64 = z
        .iter()
        .zip(gs.lambda().iter())
        .map(|(zj, lj)| lj * zj.abs())
        .sum();
    let groups: f64 = gs
        .groups()
        .iter()
        .zip(mu.iter())
        .map(|(g, mr)| mr * g.iter().map(|&j| z[j] * z[j]).sum::<f64>().sqrt())
        .sum();
    l1 + groups
}

pub(crate) fn half_residual_sq(x: ArrayView1<f64>, z: ArrayView1<f64>, d: &Dictionary) -> f64 {
    let r = &x - &d.atoms().dot(&z);
    0.5 * r.dot(&r)
}

/// f(x, z) = ½‖x − Dz‖² + ψ(z).
pub fn eval_objective(
    x: ArrayView1<f64>,
    z: ArrayView1<f64>,
    d: &Dictionary,
    gs: &GroupStructure,
) -> Result<f64> {
    check_shapes(x, z, d, gs)?;
    Ok(half_residual_sq(x, z, d) + regularizer(z, gs))
}

pub(crate) fn check_shapes(
    x: ArrayView1<f64>,
    z: ArrayView1<f64>,
    d: &Dictionary,
    gs: &GroupStructure,
) -> Result<()> {
    ensure!(
        x.len() == d.m(),
        Dimension,
        "signal has length {} but the dictionary has m = {}",
        x.len(),
        d.m()
    );
    ensure!(
        z.len() == d.p(),
        Dimension,
        "code has length {} but the dictionary has p = {}",
        z.len(),
        d.p()
    );
    ensure!(
        gs.p() == d.p(),
        Dimension,
        "structure covers p = {} but the dictionary has p = {}",
        gs.p(),
        d.p()
    );
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepMode {
    /// ‖D‖₂², the Lipschitz constant of the full fit-term gradient.
    Global,
    /// max_r ‖D_r‖₂², enough for block updates restricted to one group.
    PerGroupBound,
}

/// The step-scale constant α; iterations step by 1/α.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepScale {
    pub alpha: f64,
    pub mode: StepMode,
}

impl StepScale {
    pub fn new(alpha: f64, mode: StepMode) -> Result<Self> {
        ensure!(
            alpha.is_finite() && alpha > 0.0,
            Invalid,
            "step scale must be positive and finite, got {alpha}"
        );
        Ok(Self { alpha, mode })
    }
}

pub fn step_scale(d: &Dictionary, gs: &GroupStructure, mode: StepMode) -> Result<StepScale> {
    ensure!(
        gs.p() == d.p(),
        Dimension,
        "structure covers p = {} but the dictionary has p = {}",
        gs.p(),
        d.p()
    );
    let raw = match mode {
        StepMode::Global => spectral_norm_sq(d.atoms().view()),
        StepMode::PerGroupBound => gs
            .groups()
            .iter()
            .map(|g| spectral_norm_sq(d.group_columns(g).view()))
            .fold(0.0, f64::max),
    };
    if !(raw > 0.0) {
        return Err(Error::Invalid("dictionary has zero spectral norm".into()));
    }
    StepScale::new(raw * STEP_SAFETY, mode)
}

/// Largest eigenvalue of AᵀA by power iteration, without the safety factor.
pub fn spectral_norm_sq(a: ArrayView2<f64>) -> f64 {
    let n = a.ncols();
    if n == 0 || a.nrows() == 0 {
        return 0.0;
    }
    if n == 1 {
        let c = a.column(0);
        return c.dot(&c);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(POWER_SEED);
    let mut v: Array1<f64> = (0..n).map(|_| rng.random_range(0.5..1.5)).collect();
    let norm = v.dot(&v).sqrt();
    v /= norm;
    let mut estimate = 0.0;
    let mut last_delta = f64::INFINITY;
    for it in 0..POWER_MAX_ITER {
        let av = a.dot(&v);
        let next = av.dot(&av);
        if next == 0.0 {
            return 0.0;
        }
        let mut w = a.t().dot(&av);
        let wn = w.dot(&w).sqrt();
        w /= wn;
        v = w;
        // The estimate converges geometrically; bound the remaining error by
        // the geometric tail of the observed increments.
        let delta = (next - estimate).abs();
        let ratio = (delta / last_delta).min(1.0);
        let remaining = if ratio < 1.0 {
            delta * ratio / (1.0 - ratio)
        } else {
            f64::INFINITY
        };
        estimate = next;
        last_delta = delta;
        if it >= 2 && (delta == 0.0 || remaining <= POWER_TOL * next) {
            break;
        }
    }
    // Rayleigh quotient at the final vector.
    let av = a.dot(&v);
    av.dot(&av).max(estimate)
}
