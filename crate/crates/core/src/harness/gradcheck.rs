//! Randomized gradient checks of the unrolled encoders.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{ensure, Error, Result};
use crate::network::{EncoderParams, Tying};
use crate::problem::{Dictionary, GroupStructure, ProblemInstance};
use crate::training::{
    batch_loss, finite_diff_grad, loss_and_gradient, max_relative_error, trace_margin, LossKind, LossSpec,
};

/// Which unrolled solver the encoder mirrors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Architecture {
    /// Singleton groups, μ = 0, α = 1.
    Cod,
    /// Contiguous groups with both penalties, α from the per-group bound.
    Bcofb,
}

impl Architecture {
    pub fn name(self) -> &'static str {
        match self {
            Architecture::Cod => "cod",
            Architecture::Bcofb => "bcofb",
        }
    }
}

impl std::str::FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cod" => Ok(Architecture::Cod),
            "bcofb" => Ok(Architecture::Bcofb),
            other => Err(Error::Invalid(format!("unknown architecture '{other}'"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct GradcheckConfig {
    pub architecture: Architecture,
    pub tying: Tying,
    pub depth: usize,
    pub loss: LossKind,
    pub points: usize,
    pub m: usize,
    pub p: usize,
    /// Group size for [`Architecture::Bcofb`]; must divide p.
    pub group_size: usize,
    pub lambda: f64,
    pub mu: f64,
    /// Standard deviation of the perturbation applied to the initial
    /// parameters, so that every parameter is at a generic value.
    pub perturbation: f64,
    pub h: f64,
    /// Points closer than this to a non-smooth configuration are redrawn.
    pub min_margin: f64,
    /// Denominator floor of the relative error.
    pub floor: f64,
    pub seed: u64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            architecture: Architecture::Bcofb,
            tying: Tying::Tied,
            depth: 2,
            loss: LossKind::Regression,
            points: 100,
            m: 8,
            p: 12,
            group_size: 3,
            lambda: 0.1,
            mu: 0.1,
            perturbation: 0.02,
            h: 1e-5,
            min_margin: 1e-3,
            floor: 1e-6,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub points: usize,
    /// Draws discarded for lying too close to a kink or a selection tie.
    pub rejected: usize,
    pub max_relative_error: f64,
    /// Mean over points of the per-point maximum.
    pub mean_relative_error: f64,
    pub worst_point: usize,
}

impl GradcheckConfig {
    fn check(&self) -> Result<()> {
        ensure!(self.depth >= 1, Config, "depth must be at least 1");
        ensure!(self.points >= 1, Config, "points must be at least 1");
        ensure!(self.m >= 1 && self.p >= 2, Config, "m must be ≥ 1 and p ≥ 2");
        ensure!(
            self.h > 0.0 && self.min_margin > self.h,
            Config,
            "need 0 < h < min_margin"
        );
        if self.architecture == Architecture::Bcofb {
            ensure!(
                self.group_size >= 1
                    && self.p.is_multiple_of(self.group_size)
                    && self.p / self.group_size >= 2,
                Config,
                "group_size must divide p into at least two groups"
            );
        }
        Ok(())
    }

    fn structure(&self) -> Result<GroupStructure> {
        match self.architecture {
            Architecture::Cod => GroupStructure::singletons(self.p, self.lambda),
            Architecture::Bcofb => GroupStructure::contiguous(
                &vec![self.group_size; self.p / self.group_size],
                self.lambda,
                self.mu,
            ),
        }
    }
}

struct Point {
    params: EncoderParams,
    inst: ProblemInstance,
}

fn draw_point(cfg: &GradcheckConfig, gs: &GroupStructure, rng: &mut ChaCha8Rng) -> Result<Point> {
    let mut randn =
        |r: usize, c: usize| Array2::from_shape_fn((r, c), |_| rng.sample::<f64, _>(StandardNormal));
    let d = Dictionary::normalized(randn(cfg.m, cfg.p))?;
    let mut x = randn(cfg.m, 1);
    let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    x.mapv_inplace(|v| v / norm);
    let target = randn(cfg.p, 1).mapv(|v| 0.3 * v);
    let signs = randn(gs.n_groups(), 1).mapv(|v| if v < 0.0 { -cfg.mu } else { cfg.mu });
    let mut params = match cfg.architecture {
        Architecture::Cod => EncoderParams::init_with_alpha(&d, gs, 1.0, cfg.depth, cfg.tying)?,
        Architecture::Bcofb => EncoderParams::init_from_dictionary(&d, gs, cfg.depth, cfg.tying)?,
    };
    let flat: Vec<f64> = params
        .to_flat()
        .into_iter()
        .zip(randn(params.num_scalars(), 1).iter())
        .map(|(v, n)| v + cfg.perturbation * n)
        .collect();
    params.set_from_flat(&flat);
    params.clamp_thresholds();
    let inst = ProblemInstance::new(x, d, gs.clone())?
        .with_exact_codes(target)?
        .with_per_sample_mu(signs)?;
    Ok(Point { params, inst })
}

/// Compares backpropagated gradients with central finite differences at
/// random non-degenerate points.
pub fn run_gradcheck(cfg: &GradcheckConfig) -> Result<GradcheckReport> {
    cfg.check()?;
    let gs = cfg.structure()?;
    let spec = LossSpec::new(cfg.loss);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let max_draws = 1000 * cfg.points;
    let (mut accepted, mut rejected) = (0, 0);
    let (mut worst, mut worst_point, mut sum) = (0.0f64, 0, 0.0);
    while accepted < cfg.points {
        ensure!(
            accepted + rejected < max_draws,
            Invalid,
            "could not find {} non-degenerate points in {max_draws} draws",
            cfg.points
        );
        let pt = draw_point(cfg, &gs, &mut rng)?;
        let (_, trace) = pt.params.forward_traced(pt.inst.sample(0))?;
        if trace_margin(&pt.params, &trace) < cfg.min_margin {
            rejected += 1;
            continue;
        }
        let (_, grads) = loss_and_gradient(&pt.params, &pt.inst, &spec, &[0], false)?;
        let fd = finite_diff_grad(
            |p| batch_loss(p, &pt.inst, &spec, &[0]).unwrap_or(f64::NAN),
            &pt.params,
            cfg.h,
        );
        let err = max_relative_error(&grads.to_flat(), &fd.to_flat(), cfg.floor);
        if err > worst || accepted == 0 {
            worst = err;
            worst_point = accepted;
        }
        sum += err;
        accepted += 1;
    }
    Ok(GradcheckReport {
        points: accepted,
        rejected,
        max_relative_error: worst,
        mean_relative_error: sum / accepted as f64,
        worst_point,
    })
}

/// Parameters and single-sample instance of the `index`-th accepted point,
/// for reproducing a reported failure.
pub fn point_instance(cfg: &GradcheckConfig, index: usize) -> Result<(EncoderParams, ProblemInstance)> {
    cfg.check()?;
    let gs = cfg.structure()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut accepted = 0;
    loop {
        let pt = draw_point(cfg, &gs, &mut rng)?;
        let (_, trace) = pt.params.forward_traced(pt.inst.sample(0))?;
        if trace_margin(&pt.params, &trace) < cfg.min_margin {
            continue;
        }
        if accepted == index {
            return Ok((pt.params, pt.inst));
        }
        accepted += 1;
    }
}
