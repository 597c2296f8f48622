//! Training losses and Armijo-safeguarded gradient descent for the unrolled
//! encoders.

mod backward;
mod gradcheck;

pub use backward::{backward, backward_accumulate, dictionary_gradient, Gradients, LayerGradients};
pub use gradcheck::{finite_diff, finite_diff_grad, max_relative_error, trace_margin};

use ndarray::{Array1, Array2, ArrayView1};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{ensure, Error, Result};
use crate::network::{EncoderParams, Tying};
use crate::objective::{half_residual_sq, regularizer_with_mu};
use crate::problem::{Dictionary, GroupStructure, ProblemInstance};

/// Samples handled by one worker before its partial sums are merged.
/// Fixed so reductions happen in the same order on every run.
const CHUNK: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    /// ½‖z* − z‖² against the instance's exact codes.
    Regression,
    /// The instance's HiLasso objective at the encoder output.
    Objective,
    /// The HiLasso objective with signed per-sample group weights.
    Discriminative,
}

impl std::str::FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "regression" => Ok(LossKind::Regression),
            "objective" => Ok(LossKind::Objective),
            "discriminative" => Ok(LossKind::Discriminative),
            other => Err(Error::Invalid(format!("unknown loss '{other}'"))),
        }
    }
}

/// Which loss to train against. The quantities defining it (exact codes,
/// λ and μ, per-sample μ) are read from the [`ProblemInstance`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LossSpec {
    pub kind: LossKind,
}

impl LossSpec {
    pub fn new(kind: LossKind) -> Self {
        Self { kind }
    }

    pub fn check(&self, params: &EncoderParams, inst: &ProblemInstance) -> Result<()> {
        ensure!(
            params.m() == inst.m() && params.p() == inst.p(),
            Dimension,
            "encoder is {}x{} (p x m) but the instance has m = {}, p = {}",
            params.p(),
            params.m(),
            inst.m(),
            inst.p()
        );
        match self.kind {
            LossKind::Regression => ensure!(
                inst.exact_codes.is_some(),
                Invalid,
                "regression loss requires exact codes"
            ),
            LossKind::Discriminative => ensure!(
                inst.per_sample_mu.is_some(),
                Invalid,
                "discriminative loss requires per-sample group weights"
            ),
            LossKind::Objective => {}
        }
        Ok(())
    }
}

/// Loss of one sample and, optionally, its gradient with respect to z.
fn sample_loss(
    kind: LossKind,
    inst: &ProblemInstance,
    n: usize,
    z: ArrayView1<f64>,
    want_grad: bool,
) -> (f64, Option<Array1<f64>>) {
    match kind {
        LossKind::Regression => {
            let target = inst.exact_codes.as_ref().expect("checked").column(n);
            let diff = &z - &target;
            let loss = 0.5 * diff.dot(&diff);
            (loss, want_grad.then_some(diff))
        }
        LossKind::Objective | LossKind::Discriminative => {
            let gs = &inst.structure;
            let per_sample;
            let mu = if kind == LossKind::Discriminative {
                per_sample = inst.per_sample_mu.as_ref().expect("checked").column(n);
                per_sample
            } else {
                gs.mu().view()
            };
            let x = inst.sample(n);
            let d = &inst.dictionary;
            let loss = half_residual_sq(x, z, d) + regularizer_with_mu(z, gs, mu);
            if !want_grad {
                return (loss, None);
            }
            let residual = d.atoms().dot(&z) - x;
            let mut grad = d.atoms().t().dot(&residual);
            for (j, g) in grad.iter_mut().enumerate() {
                if z[j] != 0.0 {
                    *g += gs.lambda()[j] * z[j].signum();
                }
            }
            for (group, &mr) in gs.groups().iter().zip(mu.iter()) {
                let norm = group.iter().map(|&j| z[j] * z[j]).sum::<f64>().sqrt();
                if norm > 0.0 {
                    for &j in group {
                        grad[j] += mr * z[j] / norm;
                    }
                }
            }
            (loss, Some(grad))
        }
    }
}

/// Mean loss over the given sample columns.
pub fn batch_loss(
    params: &EncoderParams,
    inst: &ProblemInstance,
    spec: &LossSpec,
    columns: &[usize],
) -> Result<f64> {
    spec.check(params, inst)?;
    ensure!(!columns.is_empty(), Invalid, "empty batch");
    let partial = columns
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut sum = 0.0;
            for &n in chunk {
                let z = params.forward(inst.sample(n))?;
                sum += sample_loss(spec.kind, inst, n, z.view(), false).0;
            }
            Ok(sum)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(partial.iter().sum::<f64>() / columns.len() as f64)
}

/// Mean loss over the whole instance.
pub fn loss(params: &EncoderParams, inst: &ProblemInstance, spec: &LossSpec) -> Result<f64> {
    let all: Vec<usize> = (0..inst.n_samples()).collect();
    batch_loss(params, inst, spec, &all)
}

/// Mean ½‖z*_n − z_n‖².
pub fn loss_regression(params: &EncoderParams, inst: &ProblemInstance) -> Result<f64> {
    loss(params, inst, &LossSpec::new(LossKind::Regression))
}

/// Mean HiLasso objective of the encoder outputs.
pub fn loss_objective(params: &EncoderParams, inst: &ProblemInstance) -> Result<f64> {
    loss(params, inst, &LossSpec::new(LossKind::Objective))
}

/// Mean HiLasso objective with the signed per-sample group weights.
pub fn loss_discriminative(params: &EncoderParams, inst: &ProblemInstance) -> Result<f64> {
    loss(params, inst, &LossSpec::new(LossKind::Discriminative))
}

/// Mean loss over `columns` and its gradient with respect to the encoder
/// parameters. With `with_dictionary`, also the gradient of the loss's
/// explicit dependence on the dictionary (the fit term), stored in
/// `Gradients::dictionary`.
pub fn loss_and_gradient(
    params: &EncoderParams,
    inst: &ProblemInstance,
    spec: &LossSpec,
    columns: &[usize],
    with_dictionary: bool,
) -> Result<(f64, Gradients)> {
    spec.check(params, inst)?;
    ensure!(!columns.is_empty(), Invalid, "empty batch");
    let scale = 1.0 / columns.len() as f64;
    let partial = columns
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut grads = Gradients::zeros_like(params);
            let mut dict = with_dictionary.then(|| Array2::<f64>::zeros((inst.m(), inst.p())));
            let mut sum = 0.0;
            for &n in chunk {
                let (z, trace) = params.forward_traced(inst.sample(n))?;
                let (l, g) = sample_loss(spec.kind, inst, n, z.view(), true);
                sum += l;
                let upstream = g.expect("requested") * scale;
                backward_accumulate(params, &trace, upstream.view(), &mut grads)?;
                if let Some(dd) = dict.as_mut() {
                    if spec.kind != LossKind::Regression {
                        // d/dD ½‖x − Dz‖² = (Dz − x) zᵀ
                        let r = (inst.dictionary.atoms().dot(&z.view()) - inst.sample(n)) * scale;
                        for (mut col, &zj) in dd.columns_mut().into_iter().zip(z.as_array()) {
                            if zj != 0.0 {
                                col.scaled_add(zj, &r);
                            }
                        }
                    }
                }
            }
            grads.dictionary = dict;
            Ok((sum, grads))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut total = 0.0;
    let mut grads = Gradients::zeros_like(params);
    for (l, g) in &partial {
        total += l;
        grads.add_assign(g);
    }
    Ok((total * scale, grads))
}

/// Settings for mini-batch gradient descent with Armijo backtracking.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DescentConfig {
    /// Largest trial step.
    pub initial_step: f64,
    /// Sufficient-decrease constant c in (0, 1).
    pub armijo_c: f64,
    /// Backtracking factor β in (0, 1).
    pub backtrack: f64,
    pub max_backtracks: usize,
    pub epochs: usize,
    /// Samples per step; 0 means the full instance.
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for DescentConfig {
    fn default() -> Self {
        Self {
            initial_step: 1.0,
            armijo_c: 1e-4,
            backtrack: 0.5,
            max_backtracks: 30,
            epochs: 10,
            batch_size: 0,
            seed: 0,
        }
    }
}

impl DescentConfig {
    pub fn check(&self) -> Result<()> {
        ensure!(
            self.initial_step >= 0.0 && self.initial_step.is_finite(),
            Invalid,
            "initial step must be finite and nonnegative"
        );
        ensure!(
            self.armijo_c > 0.0 && self.armijo_c < 1.0,
            Invalid,
            "Armijo constant must lie in (0, 1)"
        );
        ensure!(
            self.backtrack > 0.0 && self.backtrack < 1.0,
            Invalid,
            "backtracking factor must lie in (0, 1)"
        );
        Ok(())
    }
}

/// Loss after one epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    /// 0 is the state before training.
    pub epoch: usize,
    pub loss: f64,
    pub accepted: usize,
    pub skipped: usize,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<P> {
    pub params: P,
    pub history: Vec<EpochRecord>,
}

#[derive(Debug, thiserror::Error)]
pub enum TrainError<P> {
    #[error(transparent)]
    Setup(#[from] Error),
    #[error("training diverged at epoch {epoch}: {message}")]
    Diverged {
        epoch: usize,
        message: String,
        last_good: Box<P>,
        history: Vec<EpochRecord>,
    },
}

impl<P> TrainError<P> {
    /// Drops the recovered parameters, keeping only the diagnostic.
    pub fn into_error(self) -> Error {
        match self {
            TrainError::Setup(e) => e,
            d @ TrainError::Diverged { .. } => Error::NonFinite(d.to_string()),
        }
    }
}

/// A differentiable training problem over a flat parameter vector.
trait Objective {
    fn n_samples(&self) -> usize;
    fn loss(&self, x: &[f64], batch: &[usize]) -> Result<f64>;
    fn loss_grad(&self, x: &[f64], batch: &[usize]) -> Result<(f64, Vec<f64>)>;
    fn project(&self, x: &mut [f64]);
}

/// Final parameters and per-epoch records.
type Descended = (Vec<f64>, Vec<EpochRecord>);

fn armijo_descent<O: Objective>(
    obj: &O,
    start: Vec<f64>,
    cfg: &DescentConfig,
) -> std::result::Result<Descended, (Vec<f64>, Vec<EpochRecord>, usize, String)> {
    let n = obj.n_samples();
    let all: Vec<usize> = (0..n).collect();
    let batch_size = if cfg.batch_size == 0 {
        n
    } else {
        cfg.batch_size.min(n)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut x = start;
    let mut history = Vec::with_capacity(cfg.epochs + 1);
    let initial = match obj.loss(&x, &all) {
        Ok(l) if l.is_finite() => l,
        Ok(l) => return Err((x, history, 0, format!("initial loss is {l}"))),
        Err(e) => return Err((x, history, 0, e.to_string())),
    };
    history.push(EpochRecord {
        epoch: 0,
        loss: initial,
        accepted: 0,
        skipped: 0,
    });
    let mut order = all.clone();
    let mut step_hint = cfg.initial_step;
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let (mut accepted, mut skipped) = (0, 0);
        for chunk in order.chunks(batch_size) {
            let mut batch = chunk.to_vec();
            batch.sort_unstable();
            let (l0, grad) = match obj.loss_grad(&x, &batch) {
                Ok(v) => v,
                Err(e) => return Err((x, history, epoch, e.to_string())),
            };
            if !l0.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err((x, history, epoch, "non-finite loss or gradient".into()));
            }
            let gn2: f64 = grad.iter().map(|g| g * g).sum();
            let mut step = step_hint;
            let mut done = false;
            for _ in 0..=cfg.max_backtracks {
                let mut cand: Vec<f64> = x.iter().zip(&grad).map(|(v, g)| v - step * g).collect();
                obj.project(&mut cand);
                if let Ok(l) = obj.loss(&cand, &batch) {
                    if l.is_finite() && l <= l0 - cfg.armijo_c * step * gn2 {
                        x = cand;
                        done = true;
                        break;
                    }
                }
                step *= cfg.backtrack;
            }
            if done {
                accepted += 1;
                // try a larger step next time, never above the configured one
                step_hint = (step / cfg.backtrack).min(cfg.initial_step);
            } else {
                skipped += 1;
                step_hint = cfg.initial_step;
            }
        }
        let l = match obj.loss(&x, &all) {
            Ok(l) if l.is_finite() => l,
            Ok(l) => return Err((x, history, epoch, format!("epoch loss is {l}"))),
            Err(e) => return Err((x, history, epoch, e.to_string())),
        };
        history.push(EpochRecord {
            epoch,
            loss: l,
            accepted,
            skipped,
        });
    }
    Ok((x, history))
}

struct EncoderObjective<'a> {
    template: &'a EncoderParams,
    inst: &'a ProblemInstance,
    spec: LossSpec,
    threshold_mask: Vec<bool>,
}

impl EncoderObjective<'_> {
    fn params(&self, x: &[f64]) -> EncoderParams {
        let mut p = self.template.clone();
        p.set_from_flat(x);
        p
    }
}

impl Objective for EncoderObjective<'_> {
    fn n_samples(&self) -> usize {
        self.inst.n_samples()
    }

    fn loss(&self, x: &[f64], batch: &[usize]) -> Result<f64> {
        batch_loss(&self.params(x), self.inst, &self.spec, batch)
    }

    fn loss_grad(&self, x: &[f64], batch: &[usize]) -> Result<(f64, Vec<f64>)> {
        let (l, g) = loss_and_gradient(&self.params(x), self.inst, &self.spec, batch, false)?;
        Ok((l, g.to_flat()))
    }

    fn project(&self, x: &mut [f64]) {
        for (v, &is_threshold) in x.iter_mut().zip(&self.threshold_mask) {
            if is_threshold && *v < 0.0 {
                *v = 0.0;
            }
        }
    }
}

fn threshold_mask(params: &EncoderParams) -> Vec<bool> {
    let mut mask = vec![false; params.filter.len()];
    for l in &params.layers {
        mask.extend(std::iter::repeat_n(false, l.inhibition.len()));
        mask.extend(std::iter::repeat_n(
            true,
            l.thresholds.t.len() + l.thresholds.s.len(),
        ));
    }
    mask
}

/// Trains free encoder parameters on `inst`.
///
/// Every mini-batch step backtracks from the current trial step until the
/// Armijo condition holds on that batch; thresholds are projected onto
/// [0, ∞) before the condition is tested. The history holds the full-instance
/// loss before training and after every epoch.
pub fn train(
    params: &EncoderParams,
    inst: &ProblemInstance,
    spec: &LossSpec,
    cfg: &DescentConfig,
) -> std::result::Result<TrainOutcome<EncoderParams>, TrainError<EncoderParams>> {
    cfg.check()?;
    spec.check(params, inst)?;
    let obj = EncoderObjective {
        template: params,
        inst,
        spec: *spec,
        threshold_mask: threshold_mask(params),
    };
    match armijo_descent(&obj, params.to_flat(), cfg) {
        Ok((x, history)) => Ok(TrainOutcome {
            params: obj.params(&x),
            history,
        }),
        Err((x, history, epoch, message)) => Err(TrainError::Diverged {
            epoch,
            message,
            last_good: Box::new(obj.params(&x)),
            history,
        }),
    }
}

/// An encoder whose operators are tied to a dictionary through
/// W = Dᵀ/α, S = I − DᵀD/α, t = λ/α, s = μ/α with a fixed α.
#[derive(Debug, Clone)]
pub struct TiedEncoder {
    pub structure: GroupStructure,
    pub alpha: f64,
    pub depth: usize,
}

impl TiedEncoder {
    pub fn params(&self, d: &Dictionary) -> Result<EncoderParams> {
        EncoderParams::init_with_alpha(d, &self.structure, self.alpha, self.depth, Tying::Tied)
    }

    /// Mean loss and its full gradient with respect to the dictionary: the
    /// encoder path chained through the tied operators plus the loss's own
    /// fit term.
    pub fn loss_and_dictionary_gradient(
        &self,
        d: &Dictionary,
        inst: &ProblemInstance,
        spec: &LossSpec,
        columns: &[usize],
    ) -> Result<(f64, Array2<f64>)> {
        let params = self.params(d)?;
        let inst = with_dictionary(inst, d);
        let (l, grads) = loss_and_gradient(&params, &inst, spec, columns, true)?;
        let mut dd = dictionary_gradient(&grads, d, self.alpha);
        if let Some(explicit) = &grads.dictionary {
            dd += explicit;
        }
        Ok((l, dd))
    }

    pub fn loss(
        &self,
        d: &Dictionary,
        inst: &ProblemInstance,
        spec: &LossSpec,
        columns: &[usize],
    ) -> Result<f64> {
        let params = self.params(d)?;
        batch_loss(&params, &with_dictionary(inst, d), spec, columns)
    }
}

fn with_dictionary(inst: &ProblemInstance, d: &Dictionary) -> ProblemInstance {
    let mut out = inst.clone();
    out.dictionary = d.clone();
    out
}

struct TiedObjective<'a> {
    enc: &'a TiedEncoder,
    inst: &'a ProblemInstance,
    spec: LossSpec,
    shape: (usize, usize),
}

impl TiedObjective<'_> {
    fn dictionary(&self, x: &[f64]) -> Result<Dictionary> {
        let atoms =
            Array2::from_shape_vec(self.shape, x.to_vec()).map_err(|e| Error::Dimension(e.to_string()))?;
        Dictionary::new(atoms)
    }
}

impl Objective for TiedObjective<'_> {
    fn n_samples(&self) -> usize {
        self.inst.n_samples()
    }

    fn loss(&self, x: &[f64], batch: &[usize]) -> Result<f64> {
        self.enc.loss(&self.dictionary(x)?, self.inst, &self.spec, batch)
    }

    fn loss_grad(&self, x: &[f64], batch: &[usize]) -> Result<(f64, Vec<f64>)> {
        let d = self.dictionary(x)?;
        let (l, g) = self
            .enc
            .loss_and_dictionary_gradient(&d, self.inst, &self.spec, batch)?;
        Ok((l, g.iter().copied().collect()))
    }

    fn project(&self, _x: &mut [f64]) {}
}

/// Jointly adapts the dictionary and the encoder tied to it by gradient
/// descent on the dictionary entries.
pub fn train_dictionary_tied(
    enc: &TiedEncoder,
    d: &Dictionary,
    inst: &ProblemInstance,
    spec: &LossSpec,
    cfg: &DescentConfig,
) -> std::result::Result<TrainOutcome<Dictionary>, TrainError<Dictionary>> {
    cfg.check()?;
    let obj = TiedObjective {
        enc,
        inst,
        spec: *spec,
        shape: d.atoms().dim(),
    };
    let start: Vec<f64> = d.atoms().iter().copied().collect();
    match armijo_descent(&obj, start, cfg) {
        Ok((x, history)) => Ok(TrainOutcome {
            params: obj.dictionary(&x)?,
            history,
        }),
        Err((x, history, epoch, message)) => Err(TrainError::Diverged {
            epoch,
            message,
            last_good: Box::new(obj.dictionary(&x).unwrap_or_else(|_| d.clone())),
            history,
        }),
    }
}
