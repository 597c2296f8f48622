//! Online sparse modeling: encoder adaptation on a sliding window of
//! streaming data, alternated with block-coordinate dictionary updates from
//! accumulated code statistics. No iterative sparse coding runs on this path;
//! codes always come from the encoder.

use ndarray::{s, Array2, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{ensure, Result};
use crate::network::{EncoderParams, Tying};
use crate::problem::{Dictionary, GroupStructure, ProblemInstance};
use crate::solvers::exact_codes;
use crate::training::{self, DescentConfig, LossKind, LossSpec};

/// Diagonal second moments below this leave the atom untouched.
pub const MIN_ATOM_ENERGY: f64 = 1e-10;

/// Samples `p` distinct columns of the first window uniformly without
/// replacement and normalizes them.
pub fn init_dictionary_from_stream(first_window: ArrayView2<f64>, p: usize, seed: u64) -> Result<Dictionary> {
    let k = first_window.ncols();
    ensure!(p >= 1, Invalid, "dictionary needs at least one atom");
    ensure!(
        k >= p,
        Invalid,
        "cannot draw {p} distinct atoms from a window of {k} samples"
    );
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picked = rand::seq::index::sample(&mut rng, k, p).into_vec();
    Dictionary::normalized(first_window.select(Axis(1), &picked))
}

/// Accumulated code statistics A = Σ z zᵀ (p×p) and B = Σ x zᵀ (m×p).
#[derive(Debug, Clone, PartialEq)]
pub struct DictStats {
    pub a: Array2<f64>,
    pub b: Array2<f64>,
    /// Effective (discounted) number of samples.
    pub count: f64,
}

impl DictStats {
    pub fn new(m: usize, p: usize) -> Self {
        Self {
            a: Array2::zeros((p, p)),
            b: Array2::zeros((m, p)),
            count: 0.0,
        }
    }

    /// Multiplies the accumulated history by `factor`.
    pub fn decay(&mut self, factor: f64) {
        self.a *= factor;
        self.b *= factor;
        self.count *= factor;
    }

    /// Adds samples `data` (m×N) with their codes (p×N).
    pub fn accumulate(&mut self, data: ArrayView2<f64>, codes: ArrayView2<f64>) -> Result<()> {
        ensure!(
            data.nrows() == self.b.nrows()
                && codes.nrows() == self.a.nrows()
                && data.ncols() == codes.ncols(),
            Dimension,
            "statistics expect m = {}, p = {} with matching sample counts",
            self.b.nrows(),
            self.a.nrows()
        );
        self.a += &codes.dot(&codes.t());
        self.b += &data.dot(&codes.t());
        self.count += data.ncols() as f64;
        Ok(())
    }
}

/// One block-coordinate pass over the atoms with the codes held fixed:
/// d_j ← Π(d_j + (B_j − D A_j) / A_jj), Π the projection onto the unit ball.
pub fn dict_update(d: &Dictionary, stats: &DictStats) -> Result<Dictionary> {
    ensure!(
        stats.a.dim() == (d.p(), d.p()) && stats.b.dim() == (d.m(), d.p()),
        Dimension,
        "statistics do not match a {}x{} dictionary",
        d.m(),
        d.p()
    );
    ensure!(stats.count > 0.0, Invalid, "no statistics accumulated");
    let mut atoms = d.atoms().clone();
    for j in 0..d.p() {
        let ajj = stats.a[[j, j]];
        if ajj < MIN_ATOM_ENERGY {
            continue;
        }
        let mut u = stats.b.column(j).to_owned() - atoms.dot(&stats.a.column(j));
        u /= ajj.max(MIN_ATOM_ENERGY);
        u += &atoms.column(j);
        let norm = u.dot(&u).sqrt();
        if norm == 0.0 || !norm.is_finite() {
            continue;
        }
        if norm > 1.0 {
            u /= norm;
        }
        atoms.column_mut(j).assign(&u);
    }
    Dictionary::new(atoms)
}

/// ½ Σ_n ‖x_n − D z_n‖².
pub fn reconstruction_error(d: &Dictionary, data: ArrayView2<f64>, codes: ArrayView2<f64>) -> f64 {
    let r = &data - &d.atoms().dot(&codes);
    0.5 * r.iter().map(|v| v * v).sum::<f64>()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamMode {
    /// Encoder parameters carry over between windows untouched.
    Free,
    /// After each dictionary update the encoder is re-initialized from the
    /// new dictionary.
    Retie,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OnlineConfig {
    pub window: usize,
    pub step: usize,
    /// Windows between dictionary updates; `None` never updates.
    pub dict_update_period: Option<usize>,
    /// Discount applied to the dictionary statistics once per update.
    pub forgetting: f64,
    pub tying: Tying,
    pub param_mode: ParamMode,
    /// Group partition and μ; `None` is the Lasso (singletons, μ = 0).
    /// Its λ is replaced by the run's λ.
    pub structure: Option<GroupStructure>,
    /// Per-window encoder training.
    pub descent: DescentConfig,
    pub seed: u64,
}

impl Default for OnlineConfig {
    fn default() -> Self {
        Self {
            window: 1000,
            step: 100,
            dict_update_period: Some(1),
            forgetting: 0.99,
            tying: Tying::Tied,
            param_mode: ParamMode::Free,
            structure: None,
            descent: DescentConfig {
                epochs: 1,
                batch_size: 100,
                ..DescentConfig::default()
            },
            seed: 0,
        }
    }
}

impl OnlineConfig {
    fn check(&self) -> Result<()> {
        ensure!(
            self.window >= 1 && self.step >= 1,
            Invalid,
            "window and step must be positive"
        );
        ensure!(
            self.step <= self.window,
            Invalid,
            "step {} exceeds window {}",
            self.step,
            self.window
        );
        ensure!(
            self.dict_update_period != Some(0),
            Invalid,
            "dictionary update period must be positive"
        );
        ensure!(
            self.forgetting > 0.0 && self.forgetting <= 1.0,
            Invalid,
            "forgetting factor must lie in (0, 1]"
        );
        self.descent.check()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowMetric {
    pub window: usize,
    /// First sample of the window.
    pub start: usize,
    /// One past the last sample.
    pub end: usize,
    /// Mean HiLasso objective of the adapted encoder over the window.
    pub mean_objective: f64,
    pub dict_updated: bool,
}

#[derive(Debug, Clone)]
pub struct OnlineOutcome {
    pub params: EncoderParams,
    pub dictionary: Dictionary,
    pub metrics: Vec<WindowMetric>,
}

/// Start offsets of every full window.
pub fn window_starts(n: usize, window: usize, step: usize) -> Vec<usize> {
    if n < window {
        return Vec::new();
    }
    (0..=(n - window)).step_by(step).collect()
}

/// Online sparse modeling over an ordered stream (m×N).
///
/// Per window: the encoder is trained on the window's samples against the
/// objective under the current dictionary, starting from the previous
/// window's parameters; the window's mean objective is recorded; and, when
/// due, the codes of the newly arrived samples update the dictionary
/// statistics and the dictionary.
pub fn online_run(
    stream: ArrayView2<f64>,
    p: usize,
    lambda: f64,
    depth: usize,
    cfg: &OnlineConfig,
) -> Result<OnlineOutcome> {
    cfg.check()?;
    let n = stream.ncols();
    ensure!(
        n >= cfg.window,
        Invalid,
        "stream has {n} samples, shorter than one window of {}",
        cfg.window
    );
    let gs = match &cfg.structure {
        Some(s) => {
            ensure!(
                s.p() == p,
                Dimension,
                "structure covers {} atoms, expected {p}",
                s.p()
            );
            s.with_weights(ndarray::Array1::from_elem(p, lambda), s.mu().clone())?
        }
        None => GroupStructure::singletons(p, lambda)?,
    };
    let mut dictionary = init_dictionary_from_stream(stream.slice(s![.., 0..cfg.window]), p, cfg.seed)?;
    let mut params = EncoderParams::init_from_dictionary(&dictionary, &gs, depth, cfg.tying)?;
    let mut stats = DictStats::new(stream.nrows(), p);
    let spec = LossSpec::new(LossKind::Objective);
    let mut metrics = Vec::new();
    let mut seen = 0;

    for (w, start) in window_starts(n, cfg.window, cfg.step).into_iter().enumerate() {
        let end = start + cfg.window;
        let window = stream.slice(s![.., start..end]).to_owned();
        let inst = ProblemInstance::new(window, dictionary.clone(), gs.clone())?;
        let descent = DescentConfig {
            seed: cfg.descent.seed.wrapping_add(w as u64),
            ..cfg.descent
        };
        params = training::train(&params, &inst, &spec, &descent)
            .map_err(training::TrainError::into_error)?
            .params;
        let mean_objective = training::loss(&params, &inst, &spec)?;

        let due = cfg.dict_update_period.is_some_and(|k| (w + 1) % k == 0);
        if due {
            let fresh = seen.max(start)..end;
            if !fresh.is_empty() {
                let data = stream.slice(s![.., fresh.clone()]);
                let codes = params.forward_batch(data)?;
                stats.decay(cfg.forgetting);
                stats.accumulate(data, codes.view())?;
                seen = end;
                dictionary = dict_update(&dictionary, &stats)?;
                if cfg.param_mode == ParamMode::Retie {
                    params = EncoderParams::init_from_dictionary(&dictionary, &gs, depth, cfg.tying)?;
                }
            }
        }
        metrics.push(WindowMetric {
            window: w,
            start,
            end,
            mean_objective,
            dict_updated: due,
        });
    }
    Ok(OnlineOutcome {
        params,
        dictionary,
        metrics,
    })
}

/// Batch dictionary learning with exact sparse codes: alternates exact
/// coding of all samples with block-coordinate dictionary passes, then
/// renormalizes the atoms. The reference against which online encoders are
/// judged.
pub fn offline_dictionary_learning(
    data: ArrayView2<f64>,
    gs: &GroupStructure,
    rounds: usize,
    seed: u64,
) -> Result<Dictionary> {
    let p = gs.p();
    let mut d = init_dictionary_from_stream(data, p, seed)?;
    for _ in 0..rounds {
        let codes = exact_codes(data, &d, gs)?;
        let mut stats = DictStats::new(data.nrows(), p);
        stats.accumulate(data, codes.view())?;
        for _ in 0..5 {
            d = dict_update(&d, &stats)?;
        }
        let atoms = d.atoms().clone();
        d = Dictionary::normalized(atoms)?;
    }
    Ok(d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn randn(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((rows, cols), |_| rng.sample(StandardNormal))
    }

    #[test]
    fn init_is_permutation_when_window_equals_p() {
        let w = randn(4, 6, 1);
        let d = init_dictionary_from_stream(w.view(), 6, 3).unwrap();
        let normalized = Dictionary::normalized(w.clone()).unwrap();
        let mut matched = [false; 6];
        for col in d.atoms().columns() {
            let k = (0..6)
                .find(|&k| !matched[k] && normalized.atoms().column(k) == col)
                .expect("atom must be a window column");
            matched[k] = true;
        }
        assert!(matched.iter().all(|&m| m));
        assert_eq!(d, init_dictionary_from_stream(w.view(), 6, 3).unwrap());
        assert!(init_dictionary_from_stream(w.view(), 7, 3).is_err());
    }

    #[test]
    fn zero_codes_leave_dictionary() {
        let d = Dictionary::normalized(randn(5, 4, 2)).unwrap();
        let mut stats = DictStats::new(5, 4);
        stats
            .accumulate(randn(5, 10, 3).view(), Array2::zeros((4, 10)).view())
            .unwrap();
        assert_eq!(dict_update(&d, &stats).unwrap(), d);
    }

    #[test]
    fn update_does_not_increase_reconstruction_error() {
        for seed in 0..10 {
            let d = Dictionary::normalized(randn(6, 8, seed)).unwrap();
            let data = randn(6, 40, seed + 100);
            let codes = randn(8, 40, seed + 200);
            let mut stats = DictStats::new(6, 8);
            stats.accumulate(data.view(), codes.view()).unwrap();
            let before = reconstruction_error(&d, data.view(), codes.view());
            let next = dict_update(&d, &stats).unwrap();
            let after = reconstruction_error(&next, data.view(), codes.view());
            assert!(after <= before + 1e-9, "{after} > {before}");
            for col in next.atoms().columns() {
                assert!(col.dot(&col).sqrt() <= 1.0 + 1e-12);
            }
        }
    }

    #[test]
    fn window_bookkeeping() {
        assert_eq!(window_starts(1000, 1000, 100), vec![0]);
        assert_eq!(window_starts(1250, 1000, 100), vec![0, 100, 200]);
        assert!(window_starts(999, 1000, 100).is_empty());
    }

    #[test]
    fn short_stream_rejected() {
        let cfg = OnlineConfig::default();
        assert!(online_run(randn(4, 500, 1).view(), 8, 0.1, 2, &cfg).is_err());
    }
}
