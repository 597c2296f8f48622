//! Experiment drivers: learned encoders against truncated iterations and
//! exact codes on synthetic data, classification by objective and by group
//! energy, and online modeling of a regime-switching stream.

use ndarray::{s, Array2, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::classify::{classify_group_energy, classify_min_objective, detection_accuracy, ClassModel, Coder};
use super::config::Config;
use super::formats::Table;
use super::synth::{
    gen_regimes, gen_synthetic, gen_with_dictionary, random_dictionary, RegimeSpec, SynthSpec,
};
use crate::error::{ensure, Error, Result};
use crate::modeling::{offline_dictionary_learning, online_run, OnlineConfig, WindowMetric};
use crate::network::{EncoderParams, Tying};
use crate::problem::{Dictionary, GroupStructure, ProblemInstance};
use crate::solvers::exact_codes;
use crate::training::{self, DescentConfig, LossKind, LossSpec};

/// Seed offset separating held-out draws from training draws.
const HELD_OUT: u64 = 0x9e37_79b9;

fn train_encoder(
    params: &EncoderParams,
    inst: &ProblemInstance,
    kind: LossKind,
    descent: &DescentConfig,
) -> Result<EncoderParams> {
    training::train(params, inst, &LossSpec::new(kind), descent)
        .map(|o| o.params)
        .map_err(training::TrainError::into_error)
}

/// The CoD network on the Lasso with weight λ: singletons, α = 1.
fn cod_encoder(d: &Dictionary, lambda: f64, depth: usize, tying: Tying) -> Result<EncoderParams> {
    let gs = GroupStructure::singletons(d.p(), lambda)?;
    EncoderParams::init_with_alpha(d, &gs, 1.0, depth, tying)
}

fn mean_objective(params: &EncoderParams, inst: &ProblemInstance) -> Result<f64> {
    training::loss(params, inst, &LossSpec::new(LossKind::Objective))
}

/// Mean ℓ2 distance between the columns of two code matrices.
pub fn mean_code_error(a: ArrayView2<f64>, b: ArrayView2<f64>) -> f64 {
    let n = a.ncols().max(1) as f64;
    a.columns()
        .into_iter()
        .zip(b.columns())
        .map(|(x, y)| (&x - &y).mapv(|v| v * v).sum().sqrt())
        .sum::<f64>()
        / n
}

#[derive(Debug, Clone, PartialEq)]
pub struct TruncationConfig {
    pub m: usize,
    pub p: usize,
    pub lambda: f64,
    pub depth: usize,
    /// Nonzero coefficients per sample.
    pub sparsity: usize,
    pub noise: f64,
    pub n_train: usize,
    pub n_test: usize,
    pub tying: Tying,
    pub descent: DescentConfig,
    pub seed: u64,
}

impl Default for TruncationConfig {
    fn default() -> Self {
        Self {
            m: 16,
            p: 32,
            lambda: 0.1,
            depth: 4,
            sparsity: 3,
            noise: 0.05,
            n_train: 500,
            n_test: 300,
            tying: Tying::Tied,
            descent: DescentConfig {
                epochs: 20,
                batch_size: 50,
                ..DescentConfig::default()
            },
            seed: 0,
        }
    }
}

/// Held-out mean objectives of exact codes and of a CoD encoder before and
/// after training on the objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruncationOutcome {
    pub seed: u64,
    pub exact: f64,
    pub untrained: f64,
    pub trained: f64,
}

impl TruncationOutcome {
    pub fn gap_untrained(&self) -> f64 {
        self.untrained - self.exact
    }

    pub fn gap_trained(&self) -> f64 {
        self.trained - self.exact
    }

    /// Fraction of the untrained gap removed by training.
    pub fn reduction(&self) -> f64 {
        1.0 - self.gap_trained() / self.gap_untrained()
    }
}

fn lasso_spec(cfg: &TruncationConfig, n: usize, seed: u64) -> SynthSpec {
    SynthSpec {
        m: cfg.m,
        group_sizes: vec![1; cfg.p],
        active_groups: cfg.sparsity,
        active_fraction: 1.0,
        noise: cfg.noise,
        n,
        lambda: cfg.lambda,
        mu: 0.0,
        seed,
        ..SynthSpec::default()
    }
}

/// Trains a truncated CoD encoder on the Lasso objective and measures its
/// held-out objective gap to exact codes before and after.
pub fn learning_vs_truncation(cfg: &TruncationConfig) -> Result<TruncationOutcome> {
    let train = gen_synthetic(&lasso_spec(cfg, cfg.n_train, cfg.seed))?;
    let d = train.dictionary().clone();
    let test = gen_with_dictionary(&lasso_spec(cfg, cfg.n_test, cfg.seed ^ HELD_OUT), &d)?;
    let init = cod_encoder(&d, cfg.lambda, cfg.depth, cfg.tying)?;
    let trained = train_encoder(&init, &train.instance, LossKind::Objective, &cfg.descent)?;
    let test = &test.instance;
    let codes = exact_codes(test.data(), &d, &test.structure)?;
    let exact = objective_of_codes(test, codes.view())?;
    Ok(TruncationOutcome {
        seed: cfg.seed,
        exact,
        untrained: mean_objective(&init, test)?,
        trained: mean_objective(&trained, test)?,
    })
}

fn objective_of_codes(inst: &ProblemInstance, codes: ArrayView2<f64>) -> Result<f64> {
    let mut total = 0.0;
    for n in 0..inst.n_samples() {
        total += crate::objective::eval_objective(
            inst.sample(n),
            codes.column(n),
            &inst.dictionary,
            &inst.structure,
        )?;
    }
    Ok(total / inst.n_samples() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct StructuredConfig {
    pub m: usize,
    pub group_sizes: Vec<usize>,
    pub active_groups: usize,
    pub active_fraction: f64,
    pub noise: f64,
    pub lambda: f64,
    pub mu: f64,
    pub depths: Vec<usize>,
    pub n_train: usize,
    pub n_test: usize,
    pub tying: Tying,
    pub descent: DescentConfig,
    pub seed: u64,
}

impl Default for StructuredConfig {
    fn default() -> Self {
        Self {
            m: 20,
            group_sizes: vec![8; 5],
            active_groups: 2,
            active_fraction: 0.5,
            noise: 0.05,
            lambda: 0.1,
            mu: 0.1,
            depths: vec![1, 2, 4],
            n_train: 400,
            n_test: 200,
            tying: Tying::Tied,
            descent: DescentConfig {
                epochs: 20,
                batch_size: 50,
                ..DescentConfig::default()
            },
            seed: 0,
        }
    }
}

/// Held-out mean ℓ2 code error to exact HiLasso codes at one depth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StructuredRow {
    pub seed: u64,
    pub depth: usize,
    pub structured: f64,
    pub unstructured: f64,
}

impl StructuredConfig {
    fn synth(&self, n: usize, seed: u64) -> SynthSpec {
        SynthSpec {
            m: self.m,
            group_sizes: self.group_sizes.clone(),
            active_groups: self.active_groups,
            active_fraction: self.active_fraction,
            noise: self.noise,
            n,
            lambda: self.lambda,
            mu: self.mu,
            seed,
            ..SynthSpec::default()
        }
    }
}

/// Trains a structured BCoFB encoder and an unstructured CoD encoder, with
/// the same depth and dictionary, to regress exact HiLasso codes, and
/// reports their held-out code errors per depth.
pub fn structured_vs_unstructured(cfg: &StructuredConfig) -> Result<Vec<StructuredRow>> {
    ensure!(!cfg.depths.is_empty(), Config, "depths must not be empty");
    let train = gen_synthetic(&cfg.synth(cfg.n_train, cfg.seed))?;
    let d = train.dictionary().clone();
    let gs = train.instance.structure.clone();
    let test = gen_with_dictionary(&cfg.synth(cfg.n_test, cfg.seed ^ HELD_OUT), &d)?;
    let train_inst = {
        let codes = exact_codes(train.instance.data(), &d, &gs)?;
        train.instance.clone().with_exact_codes(codes)?
    };
    let test_codes = exact_codes(test.instance.data(), &d, &gs)?;
    let mut rows = Vec::new();
    for &depth in &cfg.depths {
        let structured = EncoderParams::init_from_dictionary(&d, &gs, depth, cfg.tying)?;
        let structured = train_encoder(&structured, &train_inst, LossKind::Regression, &cfg.descent)?;
        let unstructured = cod_encoder(&d, cfg.lambda, depth, cfg.tying)?;
        let unstructured = train_encoder(&unstructured, &train_inst, LossKind::Regression, &cfg.descent)?;
        let err = |params: &EncoderParams| -> Result<f64> {
            let z = params.forward_batch(test.instance.data())?;
            Ok(mean_code_error(z.view(), test_codes.view()))
        };
        rows.push(StructuredRow {
            seed: cfg.seed,
            depth,
            structured: err(&structured)?,
            unstructured: err(&unstructured)?,
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionConfig {
    pub m: usize,
    pub sources: usize,
    pub atoms_per_source: usize,
    /// Sources active in every span.
    pub active: usize,
    pub active_fraction: f64,
    pub noise: f64,
    pub lambda: f64,
    pub mu: f64,
    /// Magnitude of the signed group weights of the discriminative loss.
    pub discriminative_weight: f64,
    pub depth: usize,
    /// Frames per pooled span.
    pub pool: usize,
    pub train_spans: usize,
    pub test_spans: usize,
    pub tying: Tying,
    pub descent: DescentConfig,
    pub seed: u64,
}

impl Default for DetectionConfig {
    fn default() -> Self {
        Self {
            m: 20,
            sources: 5,
            atoms_per_source: 10,
            active: 2,
            active_fraction: 0.3,
            noise: 0.05,
            lambda: 0.2,
            mu: 0.05,
            discriminative_weight: 0.05,
            depth: 2,
            pool: 1,
            train_spans: 1000,
            test_spans: 300,
            tying: Tying::Tied,
            descent: DescentConfig {
                epochs: 20,
                batch_size: 50,
                ..DescentConfig::default()
            },
            seed: 0,
        }
    }
}

impl DetectionConfig {
    fn synth(&self, spans: usize, seed: u64) -> SynthSpec {
        SynthSpec {
            m: self.m,
            group_sizes: vec![self.atoms_per_source; self.sources],
            active_groups: self.active,
            active_fraction: self.active_fraction,
            noise: self.noise,
            n: spans * self.pool,
            span: self.pool,
            lambda: self.lambda,
            mu: self.mu,
            seed,
            ..SynthSpec::default()
        }
    }
}

/// Group-energy detection accuracy per coding method.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectionOutcome {
    pub seed: u64,
    pub exact: f64,
    pub discriminative: f64,
    pub structured_objective: f64,
    pub structured_regression: f64,
    pub unstructured: f64,
}

impl DetectionOutcome {
    pub fn methods(&self) -> [(&'static str, f64); 5] {
        [
            ("exact", self.exact),
            ("discriminative", self.discriminative),
            ("structured_objective", self.structured_objective),
            ("structured_regression", self.structured_regression),
            ("unstructured", self.unstructured),
        ]
    }
}

/// Mixtures of sources, each source a group of atoms of one dictionary;
/// every span of frames draws its active sources, which are detected from
/// pooled group energies.
pub fn source_detection(cfg: &DetectionConfig) -> Result<DetectionOutcome> {
    ensure!(
        cfg.discriminative_weight >= 0.0,
        Config,
        "discriminative_weight must be ≥ 0"
    );
    let train = gen_synthetic(&cfg.synth(cfg.train_spans, cfg.seed))?;
    let d = train.dictionary().clone();
    let gs = train.instance.structure.clone();
    let test = gen_with_dictionary(&cfg.synth(cfg.test_spans, cfg.seed ^ HELD_OUT), &d)?;
    let truth: Vec<Vec<usize>> = test.active.iter().step_by(cfg.pool).cloned().collect();

    let codes = exact_codes(train.instance.data(), &d, &gs)?;
    let mut signed = Array2::from_elem(
        (gs.n_groups(), train.instance.n_samples()),
        cfg.discriminative_weight,
    );
    for (n, groups) in train.active.iter().enumerate() {
        for &r in groups {
            signed[[r, n]] = -cfg.discriminative_weight;
        }
    }
    let inst = train
        .instance
        .clone()
        .with_exact_codes(codes)?
        .with_per_sample_mu(signed)?;

    let init = EncoderParams::init_from_dictionary(&d, &gs, cfg.depth, cfg.tying)?;
    let discriminative = train_encoder(&init, &inst, LossKind::Discriminative, &cfg.descent)?;
    let objective = train_encoder(&init, &inst, LossKind::Objective, &cfg.descent)?;
    let regression = train_encoder(&init, &inst, LossKind::Regression, &cfg.descent)?;
    let unstructured = cod_encoder(&d, cfg.lambda, cfg.depth, cfg.tying)?;
    let unstructured = train_encoder(&unstructured, &inst, LossKind::Regression, &cfg.descent)?;

    let frames = test.instance.data();
    let accuracy = |coder: Coder<'_>| -> Result<f64> {
        let predicted = classify_group_energy(&coder, frames, &gs, cfg.pool, cfg.active)?;
        Ok(detection_accuracy(&predicted, &truth))
    };
    Ok(DetectionOutcome {
        seed: cfg.seed,
        exact: accuracy(Coder::Exact {
            dictionary: &d,
            structure: &gs,
        })?,
        discriminative: accuracy(Coder::Encoder(&discriminative))?,
        structured_objective: accuracy(Coder::Encoder(&objective))?,
        structured_regression: accuracy(Coder::Encoder(&regression))?,
        unstructured: accuracy(Coder::Encoder(&unstructured))?,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MinObjectiveConfig {
    pub classes: usize,
    pub m: usize,
    /// Atoms of every class dictionary.
    pub p: usize,
    pub sparsity: usize,
    pub noise: f64,
    pub lambda: f64,
    pub depth: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub tying: Tying,
    pub descent: DescentConfig,
    pub seed: u64,
}

impl Default for MinObjectiveConfig {
    fn default() -> Self {
        Self {
            classes: 2,
            m: 16,
            p: 24,
            sparsity: 3,
            noise: 0.2,
            lambda: 0.1,
            depth: 5,
            n_train: 300,
            n_test: 200,
            tying: Tying::Tied,
            descent: DescentConfig {
                epochs: 10,
                batch_size: 50,
                ..DescentConfig::default()
            },
            seed: 0,
        }
    }
}

/// Accuracy of per-class minimum-objective classification.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MinObjectiveOutcome {
    pub seed: u64,
    pub exact: f64,
    pub encoder: f64,
}

/// One Lasso model per class, coded exactly or by a CoD encoder trained on
/// the class's own samples; test samples are labeled by the smallest
/// objective.
pub fn min_objective_classification(cfg: &MinObjectiveConfig) -> Result<MinObjectiveOutcome> {
    ensure!(cfg.classes >= 2, Config, "classes must be at least 2");
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let spec = |n: usize, seed: u64| SynthSpec {
        m: cfg.m,
        group_sizes: vec![1; cfg.p],
        active_groups: cfg.sparsity,
        active_fraction: 1.0,
        noise: cfg.noise,
        n,
        lambda: cfg.lambda,
        mu: 0.0,
        seed,
        ..SynthSpec::default()
    };
    let mut dicts = Vec::new();
    let mut encoders = Vec::new();
    let mut tests = Vec::new();
    for c in 0..cfg.classes {
        let d = random_dictionary(cfg.m, cfg.p, &mut rng)?;
        let seed = cfg.seed.wrapping_add(1 + c as u64);
        let train = gen_with_dictionary(&spec(cfg.n_train, seed), &d)?;
        let test = gen_with_dictionary(&spec(cfg.n_test, seed ^ HELD_OUT), &d)?;
        let init = cod_encoder(&d, cfg.lambda, cfg.depth, cfg.tying)?;
        encoders.push(train_encoder(
            &init,
            &train.instance,
            LossKind::Objective,
            &cfg.descent,
        )?);
        tests.push(test.instance.data);
        dicts.push(d);
    }
    let gs = GroupStructure::singletons(cfg.p, cfg.lambda)?;
    let exact: Vec<ClassModel<'_>> = dicts.iter().map(|d| ClassModel::exact(d, &gs)).collect();
    let learned: Vec<ClassModel<'_>> = encoders
        .iter()
        .zip(&dicts)
        .map(|(e, d)| ClassModel::encoder(e, d))
        .collect();
    let (mut hits_exact, mut hits_encoder, mut total) = (0usize, 0usize, 0usize);
    for (c, data) in tests.iter().enumerate() {
        for x in data.columns() {
            hits_exact += usize::from(classify_min_objective(&exact, x)? == c);
            hits_encoder += usize::from(classify_min_objective(&learned, x)? == c);
            total += 1;
        }
    }
    Ok(MinObjectiveOutcome {
        seed: cfg.seed,
        exact: hits_exact as f64 / total as f64,
        encoder: hits_encoder as f64 / total as f64,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct OnlineExperimentConfig {
    pub regimes: RegimeSpec,
    pub p: usize,
    pub lambda: f64,
    pub depth: usize,
    pub online: OnlineConfig,
    /// Held-out samples per regime for the offline baseline.
    pub held_out: usize,
    pub offline_rounds: usize,
}

impl Default for OnlineExperimentConfig {
    fn default() -> Self {
        Self {
            regimes: RegimeSpec {
                m: 64,
                atoms: 32,
                regimes: 3,
                per_regime: 10_000,
                sparsity: 3,
                amplitude: 5.0,
                noise: 0.1,
                seed: 0,
            },
            p: 64,
            lambda: 1.0,
            depth: 4,
            online: OnlineConfig {
                forgetting: 0.95,
                ..OnlineConfig::default()
            },
            held_out: 1000,
            offline_rounds: 5,
        }
    }
}

/// First and final fully contained windows of one regime, against the
/// offline baseline on the final window's samples.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegimeSummary {
    pub regime: usize,
    pub first: f64,
    pub last: f64,
    /// Mean exact objective of the last window under a dictionary learned
    /// offline from held-out samples of the regime.
    pub offline: f64,
}

impl RegimeSummary {
    pub fn recovers(&self) -> bool {
        self.last < self.first
    }

    pub fn relative_to_offline(&self) -> f64 {
        (self.last - self.offline).abs() / self.offline.abs()
    }
}

#[derive(Debug, Clone)]
pub struct OnlineExperimentOutcome {
    pub metrics: Vec<WindowMetric>,
    pub regimes: Vec<RegimeSummary>,
}

/// Online modeling of a stream of consecutive regimes.
pub fn online_regimes(cfg: &OnlineExperimentConfig) -> Result<OnlineExperimentOutcome> {
    let spec = &cfg.regimes;
    let (stream, generators) = gen_regimes(spec)?;
    let out = online_run(stream.view(), cfg.p, cfg.lambda, cfg.depth, &cfg.online)?;
    let gs = GroupStructure::singletons(cfg.p, cfg.lambda)?;
    let mut regimes = Vec::new();
    for (r, generator) in generators.iter().enumerate() {
        let (lo, hi) = (r * spec.per_regime, (r + 1) * spec.per_regime);
        let inside: Vec<&WindowMetric> = out
            .metrics
            .iter()
            .filter(|w| w.start >= lo && w.end <= hi)
            .collect();
        let (Some(first), Some(last)) = (inside.first(), inside.last()) else {
            return Err(Error::Config(format!(
                "regime {r} contains no full window; per_regime must be at least window"
            )));
        };
        let held = spec.sample(generator, cfg.held_out, spec.seed ^ HELD_OUT ^ r as u64)?;
        let d = offline_dictionary_learning(held.view(), &gs, cfg.offline_rounds, spec.seed)?;
        let window = stream.slice(s![.., last.start..last.end]);
        let inst = ProblemInstance::new(window.to_owned(), d.clone(), gs.clone())?;
        let codes = exact_codes(window, &d, &gs)?;
        regimes.push(RegimeSummary {
            regime: r,
            first: first.mean_objective,
            last: last.mean_objective,
            offline: objective_of_codes(&inst, codes.view())?,
        });
    }
    Ok(OnlineExperimentOutcome {
        metrics: out.metrics,
        regimes,
    })
}

/// Per-window metrics as CSV rows.
pub fn window_table(metrics: &[WindowMetric]) -> Table {
    let mut t = Table::new(&["window", "start", "end", "mean_objective", "dict_updated"]);
    for w in metrics {
        t.push(vec![
            w.window.to_string(),
            w.start.to_string(),
            w.end.to_string(),
            w.mean_objective.to_string(),
            u8::from(w.dict_updated).to_string(),
        ]);
    }
    t
}

/// Results of one experiment run: the resolved configuration, one row per
/// (method, seed, metric), per-stage wall-clock times and any per-window
/// series. The metrics table depends only on the configuration.
#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub experiment: String,
    pub config: String,
    pub metrics: Table,
    pub runtimes: Table,
    pub windows: Option<Table>,
}

impl ExperimentReport {
    fn new(experiment: &str, config: &Config) -> Self {
        Self {
            experiment: experiment.to_string(),
            config: config.to_text(),
            metrics: Table::new(&["experiment", "method", "seed", "metric", "value"]),
            runtimes: Table::new(&["stage", "seconds"]),
            windows: None,
        }
    }

    fn metric(&mut self, method: &str, seed: u64, metric: &str, value: f64) {
        let row = vec![
            self.experiment.clone(),
            method.to_string(),
            seed.to_string(),
            metric.to_string(),
            value.to_string(),
        ];
        self.metrics.push(row);
    }

    fn timed<T>(&mut self, stage: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let start = std::time::Instant::now();
        let out = f()?;
        let secs = start.elapsed().as_secs_f64();
        self.runtimes.push(vec![stage.to_string(), format!("{secs:.6}")]);
        Ok(out)
    }

    /// Writes report.csv, runtimes.csv, config.txt and, when present,
    /// windows.csv into `dir`.
    pub fn save(&self, dir: &std::path::Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        self.metrics.save(&dir.join("report.csv"))?;
        self.runtimes.save(&dir.join("runtimes.csv"))?;
        std::fs::write(dir.join("config.txt"), &self.config)?;
        if let Some(w) = &self.windows {
            w.save(&dir.join("windows.csv"))?;
        }
        Ok(())
    }
}

pub const EXPERIMENTS: [&str; 3] = ["synth_structured", "online_regimes", "classify_synth"];

/// Parses "tied" or "untied".
fn tying(config: &Config, default: Tying) -> Result<Tying> {
    match config.get::<String>("tying")?.as_deref() {
        None => Ok(default),
        Some("tied") => Ok(Tying::Tied),
        Some("untied") => Ok(Tying::Untied),
        Some(other) => Err(Error::Config(format!("tying: unknown value '{other}'"))),
    }
}

/// Descent settings under the `train_` keys.
pub fn descent_from(config: &Config, default: DescentConfig) -> Result<DescentConfig> {
    let cfg = DescentConfig {
        initial_step: config.get_or("train_initial_step", default.initial_step)?,
        armijo_c: config.get_or("train_armijo_c", default.armijo_c)?,
        backtrack: config.get_or("train_backtrack", default.backtrack)?,
        max_backtracks: config.get_or("train_max_backtracks", default.max_backtracks)?,
        epochs: config.get_or("train_epochs", default.epochs)?,
        batch_size: config.get_or("train_batch_size", default.batch_size)?,
        seed: config.get_or("train_seed", default.seed)?,
    };
    cfg.check().map_err(|e| Error::Config(e.to_string()))?;
    Ok(cfg)
}

/// Runs a named experiment with the settings in `config`, over the seeds
/// listed under `seeds` (default 0, 1, 2).
pub fn run_experiment(name: &str, config: &Config) -> Result<ExperimentReport> {
    ensure!(
        EXPERIMENTS.contains(&name),
        Config,
        "unknown experiment '{name}', expected one of {}",
        EXPERIMENTS.join(", ")
    );
    let seeds: Vec<u64> = config.get_list_or("seeds", vec![0, 1, 2])?;
    ensure!(!seeds.is_empty(), Config, "seeds must not be empty");
    let mut report = ExperimentReport::new(name, config);
    match name {
        "synth_structured" => {
            let cfg = structured_config(config)?;
            config.finish()?;
            for &seed in &seeds {
                let cfg = StructuredConfig { seed, ..cfg.clone() };
                let rows = report.timed(&format!("seed_{seed}"), || structured_vs_unstructured(&cfg))?;
                for row in rows {
                    let metric = format!("code_error_t{}", row.depth);
                    report.metric("structured", seed, &metric, row.structured);
                    report.metric("unstructured", seed, &metric, row.unstructured);
                }
            }
        }
        "online_regimes" => {
            let cfg = online_config(config)?;
            config.finish()?;
            let seed = cfg.regimes.seed;
            let out = report.timed("online", || online_regimes(&cfg))?;
            for s in &out.regimes {
                let method = format!("regime_{}", s.regime);
                report.metric(&method, seed, "first_window_objective", s.first);
                report.metric(&method, seed, "final_window_objective", s.last);
                report.metric(&method, seed, "offline_objective", s.offline);
            }
            report.windows = Some(window_table(&out.metrics));
        }
        _ => {
            let (detection, classes) = classify_config(config)?;
            config.finish()?;
            for &seed in &seeds {
                let cfg = DetectionConfig {
                    seed,
                    ..detection.clone()
                };
                let out = report.timed(&format!("detection_seed_{seed}"), || source_detection(&cfg))?;
                for (method, acc) in out.methods() {
                    report.metric(method, seed, "detection_accuracy", acc);
                }
                let cfg = MinObjectiveConfig {
                    seed,
                    ..classes.clone()
                };
                let out = report.timed(&format!("min_objective_seed_{seed}"), || {
                    min_objective_classification(&cfg)
                })?;
                report.metric("exact", seed, "min_objective_accuracy", out.exact);
                report.metric("encoder", seed, "min_objective_accuracy", out.encoder);
            }
        }
    }
    Ok(report)
}

fn structured_config(config: &Config) -> Result<StructuredConfig> {
    let d = StructuredConfig::default();
    let groups: usize = config.get_or("groups", d.group_sizes.len())?;
    let group_size: usize = config.get_or("group_size", d.group_sizes[0])?;
    let base = StructuredConfig {
        m: config.get_or("m", d.m)?,
        group_sizes: vec![group_size; groups],
        active_groups: config.get_or("active_groups", d.active_groups)?,
        active_fraction: config.get_or("active_fraction", d.active_fraction)?,
        noise: config.get_or("noise", d.noise)?,
        lambda: config.get_or("lambda", d.lambda)?,
        mu: config.get_or("mu", d.mu)?,
        depths: config.get_list_or("depths", d.depths)?,
        n_train: config.get_or("n_train", d.n_train)?,
        n_test: config.get_or("n_test", d.n_test)?,
        tying: tying(config, d.tying)?,
        descent: descent_from(config, d.descent)?,
        seed: 0,
    };
    Ok(base)
}

fn classify_config(config: &Config) -> Result<(DetectionConfig, MinObjectiveConfig)> {
    let d = DetectionConfig::default();
    let descent = descent_from(config, d.descent)?;
    let tying = tying(config, d.tying)?;
    let base = DetectionConfig {
        m: config.get_or("m", d.m)?,
        sources: config.get_or("sources", d.sources)?,
        atoms_per_source: config.get_or("atoms_per_source", d.atoms_per_source)?,
        active: config.get_or("active", d.active)?,
        active_fraction: config.get_or("active_fraction", d.active_fraction)?,
        noise: config.get_or("noise", d.noise)?,
        lambda: config.get_or("lambda", d.lambda)?,
        mu: config.get_or("mu", d.mu)?,
        discriminative_weight: config.get_or("discriminative_weight", d.discriminative_weight)?,
        depth: config.get_or("depth", d.depth)?,
        pool: config.get_or("pool", d.pool)?,
        train_spans: config.get_or("train_spans", d.train_spans)?,
        test_spans: config.get_or("test_spans", d.test_spans)?,
        tying,
        descent,
        seed: 0,
    };
    let c = MinObjectiveConfig::default();
    let classes = MinObjectiveConfig {
        classes: config.get_or("mo_classes", c.classes)?,
        m: config.get_or("mo_m", c.m)?,
        p: config.get_or("mo_p", c.p)?,
        sparsity: config.get_or("mo_sparsity", c.sparsity)?,
        noise: config.get_or("mo_noise", c.noise)?,
        lambda: config.get_or("mo_lambda", c.lambda)?,
        depth: config.get_or("mo_depth", c.depth)?,
        n_train: config.get_or("mo_n_train", c.n_train)?,
        n_test: config.get_or("mo_n_test", c.n_test)?,
        tying,
        descent,
        seed: 0,
    };
    Ok((base, classes))
}

fn online_config(config: &Config) -> Result<OnlineExperimentConfig> {
    let d = OnlineExperimentConfig::default();
    let r = &d.regimes;
    let seed = config.get_or("seed", r.seed)?;
    let cfg = OnlineExperimentConfig {
        regimes: RegimeSpec {
            m: config.get_or("m", r.m)?,
            atoms: config.get_or("generator_atoms", r.atoms)?,
            regimes: config.get_or("regimes", r.regimes)?,
            per_regime: config.get_or("per_regime", r.per_regime)?,
            sparsity: config.get_or("sparsity", r.sparsity)?,
            amplitude: config.get_or("amplitude", r.amplitude)?,
            noise: config.get_or("noise", r.noise)?,
            seed,
        },
        p: config.get_or("p", d.p)?,
        lambda: config.get_or("lambda", d.lambda)?,
        depth: config.get_or("depth", d.depth)?,
        online: OnlineConfig {
            window: config.get_or("window", d.online.window)?,
            step: config.get_or("step", d.online.step)?,
            dict_update_period: Some(config.get_or("dict_update_period", 1usize)?),
            forgetting: config.get_or("forgetting", d.online.forgetting)?,
            tying: tying(config, d.online.tying)?,
            descent: descent_from(config, d.online.descent)?,
            seed,
            ..d.online
        },
        held_out: config.get_or("held_out", d.held_out)?,
        offline_rounds: config.get_or("offline_rounds", d.offline_rounds)?,
    };
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_experiment_rejected() {
        let err = run_experiment("nope", &Config::default()).unwrap_err();
        assert_eq!(err.kind(), "config");
    }

    #[test]
    fn unknown_key_rejected() {
        let mut c = Config::parse(
            "seeds = 0\ngroups = 4\nbogus = 1\nn_train = 20\nn_test = 10\ndepths = 1\ntrain_epochs = 1\n",
        )
        .unwrap();
        c.set("m", 8);
        let err = run_experiment("synth_structured", &c).unwrap_err();
        assert!(err.to_string().contains("bogus"), "{err}");
    }

    #[test]
    fn code_error_of_identical_codes_is_zero() {
        let a = Array2::from_shape_fn((3, 4), |(i, j)| (i * j) as f64);
        assert_eq!(mean_code_error(a.view(), a.view()), 0.0);
        let b = &a + 1.0;
        assert!((mean_code_error(a.view(), b.view()) - 3f64.sqrt()).abs() < 1e-12);
    }
}
