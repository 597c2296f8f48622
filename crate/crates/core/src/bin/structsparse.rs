//! Command-line front end. Every verb reads a flat `key = value` config file
//! (optional) with `--set key=value` overrides; unknown keys are errors.
//! Failures print a single `error kind=<kind> msg="<message>"` line on
//! stderr and exit nonzero.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ndarray::Array2;

use structsparse::harness::config::Config;
use structsparse::harness::experiment::{descent_from, run_experiment, window_table};
use structsparse::harness::formats::{
    load_any_matrix, load_dictionary, load_model, load_structure, save_dictionary, save_matrix,
    save_matrix_csv, save_model, save_structure, Table,
};
use structsparse::harness::{
    bench_scaling, classify_group_energy, classify_min_objective, gen_synthetic, run_gradcheck, BenchConfig,
    ClassModel, Coder, GradcheckConfig, SynthSpec,
};
use structsparse::modeling::{online_run, OnlineConfig, ParamMode};
use structsparse::solvers::{bcofb_solve, ista_solve, SolverConfig};
use structsparse::training::{self, DescentConfig, LossKind, LossSpec};
use structsparse::{EncoderParams, Error, GroupStructure, ProblemInstance, Result, Tying};

#[derive(Parser)]
#[command(
    name = "structsparse",
    version,
    about = "Structured sparse coding and learned encoders"
)]
struct Cli {
    #[command(subcommand)]
    verb: Verb,
}

#[derive(clap::Args)]
struct Settings {
    /// Config file of `key = value` lines.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Override or add a config entry.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Verb {
    /// Exact sparse codes of a data file.
    Solve(Settings),
    /// Build an encoder from a dictionary.
    Init(Settings),
    /// Train an encoder.
    Train(Settings),
    /// Run an encoder on a data file.
    Encode(Settings),
    /// Online sparse modeling over a stream.
    Online(Settings),
    /// Generate synthetic structured data.
    Synth(Settings),
    /// Min-objective or group-energy classification.
    Classify(Settings),
    /// Throughput and scaling of the encoder.
    Bench(Settings),
    /// Backpropagation against finite differences.
    Gradcheck(Settings),
    /// A named experiment: synth_structured, online_regimes or classify_synth.
    Experiment(Settings),
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("invalid arguments");
            eprintln!(
                "error kind=usage msg={}",
                quote(first.trim_start_matches("error: "))
            );
            return ExitCode::from(2);
        }
    };
    match dispatch(cli.verb) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error kind={} msg={}", e.kind(), quote(&e.to_string()));
            ExitCode::from(1)
        }
    }
}

fn quote(s: &str) -> String {
    let flat: String = s.chars().map(|c| if c.is_control() { ' ' } else { c }).collect();
    format!("\"{}\"", flat.replace('\\', "\\\\").replace('"', "\\\""))
}

fn dispatch(verb: Verb) -> Result<()> {
    let (settings, run): (Settings, fn(&Config) -> Result<()>) = match verb {
        Verb::Solve(s) => (s, solve),
        Verb::Init(s) => (s, init),
        Verb::Train(s) => (s, train),
        Verb::Encode(s) => (s, encode),
        Verb::Online(s) => (s, online),
        Verb::Synth(s) => (s, synth),
        Verb::Classify(s) => (s, classify),
        Verb::Bench(s) => (s, bench),
        Verb::Gradcheck(s) => (s, gradcheck),
        Verb::Experiment(s) => (s, experiment),
    };
    let mut config = match &settings.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    for kv in &settings.set {
        config.set_override(kv)?;
    }
    run(&config)
}

fn path(config: &Config, key: &str) -> Result<PathBuf> {
    config.require(key)
}

/// SSM1 unless the extension is `.csv`.
fn save_any_matrix(path: &Path, a: &Array2<f64>) -> Result<()> {
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
        save_matrix_csv(path, a)
    } else {
        save_matrix(path, a)
    }
}

fn tying(config: &Config) -> Result<Tying> {
    config.get::<String>("tying")?.map_or(Ok(Tying::Tied), |s| {
        s.parse().map_err(|e: Error| Error::Config(e.to_string()))
    })
}

fn solve(config: &Config) -> Result<()> {
    let data = load_any_matrix(&path(config, "data")?)?;
    let d = load_dictionary(&path(config, "dictionary")?)?;
    let gs = load_structure(&path(config, "structure")?)?;
    let solver: String = config.get_or("solver", "bcofb".to_string())?;
    let exact = SolverConfig::exact();
    let cfg = SolverConfig {
        max_iter: config.get_or("max_iter", exact.max_iter)?,
        tol: config.get_or("tol", exact.tol)?,
        record_history: false,
    };
    let out = path(config, "out")?;
    let report: Option<PathBuf> = config.get("report")?;
    config.finish()?;
    let run = match solver.as_str() {
        "bcofb" => bcofb_solve,
        "ista" => ista_solve,
        other => return Err(Error::Config(format!("field 'solver': unknown solver '{other}'"))),
    };
    let mut codes = Array2::zeros((d.p(), data.ncols()));
    let mut table = Table::new(&["sample", "iterations", "objective", "converged"]);
    let mut unconverged = 0;
    for (n, x) in data.columns().into_iter().enumerate() {
        let r = run(x, &d, &gs, &cfg)?;
        codes.column_mut(n).assign(r.code.as_array());
        unconverged += usize::from(!r.converged);
        table.push(vec![
            n.to_string(),
            r.iterations.to_string(),
            r.final_objective.to_string(),
            u8::from(r.converged).to_string(),
        ]);
    }
    save_any_matrix(&out, &codes)?;
    if let Some(p) = report {
        table.save(&p)?;
    }
    println!("samples={} unconverged={unconverged}", data.ncols());
    Ok(())
}

fn init(config: &Config) -> Result<()> {
    let d = load_dictionary(&path(config, "dictionary")?)?;
    let gs = load_structure(&path(config, "structure")?)?;
    let depth = config.get_or("depth", 2usize)?;
    let tying = tying(config)?;
    let alpha: Option<f64> = config.get("alpha")?;
    let out = path(config, "out")?;
    config.finish()?;
    let params = match alpha {
        Some(a) => EncoderParams::init_with_alpha(&d, &gs, a, depth, tying)?,
        None => EncoderParams::init_from_dictionary(&d, &gs, depth, tying)?,
    };
    save_model(&out, &params)?;
    println!("depth={depth} tying={} alpha={}", tying.name(), params.alpha_init);
    Ok(())
}

fn train(config: &Config) -> Result<()> {
    let params = load_model(&path(config, "model")?)?;
    let data = load_any_matrix(&path(config, "data")?)?;
    let d = load_dictionary(&path(config, "dictionary")?)?;
    let kind: LossKind = config
        .get_or("loss", "objective".to_string())?
        .parse()
        .map_err(|e: Error| Error::Config(e.to_string()))?;
    let exact: Option<PathBuf> = config.get("exact_codes")?;
    let weights: Option<PathBuf> = config.get("group_weights")?;
    let descent = descent_from(config, DescentConfig::default())?;
    let out = path(config, "out")?;
    let history: Option<PathBuf> = config.get("history")?;
    config.finish()?;

    let gs = params.structure.clone();
    let mut inst = ProblemInstance::new(data, d, gs)?;
    match (kind, exact) {
        (_, Some(p)) => inst = inst.with_exact_codes(load_any_matrix(&p)?)?,
        (LossKind::Regression, None) => {
            let codes = structsparse::solvers::exact_codes(inst.data(), &inst.dictionary, &inst.structure)?;
            inst = inst.with_exact_codes(codes)?;
        }
        _ => {}
    }
    if let Some(p) = weights {
        inst = inst.with_per_sample_mu(load_any_matrix(&p)?)?;
    }
    let outcome = training::train(&params, &inst, &LossSpec::new(kind), &descent)
        .map_err(training::TrainError::into_error)?;
    save_model(&out, &outcome.params)?;
    if let Some(p) = history {
        let mut t = Table::new(&["epoch", "loss", "accepted", "skipped"]);
        for h in &outcome.history {
            t.push(vec![
                h.epoch.to_string(),
                h.loss.to_string(),
                h.accepted.to_string(),
                h.skipped.to_string(),
            ]);
        }
        t.save(&p)?;
    }
    let first = outcome.history.first().map_or(f64::NAN, |h| h.loss);
    let last = outcome.history.last().map_or(f64::NAN, |h| h.loss);
    println!("initial_loss={first} final_loss={last}");
    Ok(())
}

fn encode(config: &Config) -> Result<()> {
    let params = load_model(&path(config, "model")?)?;
    let data = load_any_matrix(&path(config, "data")?)?;
    let out = path(config, "out")?;
    config.finish()?;
    let codes = params.forward_batch(data.view())?;
    save_any_matrix(&out, &codes)?;
    println!("samples={} p={}", codes.ncols(), codes.nrows());
    Ok(())
}

fn online(config: &Config) -> Result<()> {
    let stream = load_any_matrix(&path(config, "data")?)?;
    let d = OnlineConfig::default();
    let p = config.get_or("p", 64usize)?;
    let lambda = config.get_or("lambda", 1.0)?;
    let depth = config.get_or("depth", 4usize)?;
    let period = config.get_or("dict_update_period", 1usize)?;
    let param_mode = match config.get_or("param_mode", "free".to_string())?.as_str() {
        "free" => ParamMode::Free,
        "retie" => ParamMode::Retie,
        other => {
            return Err(Error::Config(format!(
                "field 'param_mode': unknown mode '{other}'"
            )))
        }
    };
    let structure = match config.get::<PathBuf>("structure")? {
        Some(p) => Some(load_structure(&p)?),
        None => None,
    };
    let cfg = OnlineConfig {
        window: config.get_or("window", d.window)?,
        step: config.get_or("step", d.step)?,
        dict_update_period: (period > 0).then_some(period),
        forgetting: config.get_or("forgetting", d.forgetting)?,
        tying: tying(config)?,
        param_mode,
        structure,
        descent: descent_from(config, d.descent)?,
        seed: config.get_or("seed", d.seed)?,
    };
    let out = path(config, "out_dir")?;
    config.finish()?;
    let outcome = online_run(stream.view(), p, lambda, depth, &cfg)?;
    std::fs::create_dir_all(&out)?;
    window_table(&outcome.metrics).save(&out.join("windows.csv"))?;
    save_dictionary(&out.join("dictionary.ssm"), &outcome.dictionary)?;
    save_model(&out.join("model.sse"), &outcome.params)?;
    let last = outcome.metrics.last().map_or(f64::NAN, |w| w.mean_objective);
    println!("windows={} final_objective={last}", outcome.metrics.len());
    Ok(())
}

fn synth(config: &Config) -> Result<()> {
    let d = SynthSpec::default();
    let spec = SynthSpec {
        m: config.get_or("m", d.m)?,
        group_sizes: config.get_list_or("group_sizes", d.group_sizes)?,
        active_groups: config.get_or("active_groups", d.active_groups)?,
        active_fraction: config.get_or("active_fraction", d.active_fraction)?,
        magnitude: (
            config.get_or("magnitude_low", d.magnitude.0)?,
            config.get_or("magnitude_high", d.magnitude.1)?,
        ),
        noise: config.get_or("noise", d.noise)?,
        n: config.get_or("n", d.n)?,
        span: config.get_or("span", d.span)?,
        lambda: config.get_or("lambda", d.lambda)?,
        mu: config.get_or("mu", d.mu)?,
        seed: config.get_or("seed", d.seed)?,
    };
    let out = path(config, "out_dir")?;
    config.finish()?;
    let s = gen_synthetic(&spec)?;
    std::fs::create_dir_all(&out)?;
    save_matrix(&out.join("data.ssm"), &s.instance.data)?;
    save_matrix(&out.join("truth.ssm"), &s.truth)?;
    save_dictionary(&out.join("dictionary.ssm"), s.dictionary())?;
    save_structure(&out.join("structure.txt"), &s.instance.structure)?;
    let mut t = Table::new(&["sample", "active_groups"]);
    for (n, groups) in s.active.iter().enumerate() {
        let g: Vec<String> = groups.iter().map(|r| r.to_string()).collect();
        t.push(vec![n.to_string(), g.join(" ")]);
    }
    t.save(&out.join("active.csv"))?;
    println!("m={} p={} n={}", spec.m, spec.p(), spec.n);
    Ok(())
}

fn classify(config: &Config) -> Result<()> {
    let mode: String = config.get_or("mode", "min_objective".to_string())?;
    let data = load_any_matrix(&path(config, "data")?)?;
    let out = path(config, "out")?;
    match mode.as_str() {
        "min_objective" => {
            let dict_paths: Vec<PathBuf> = config
                .get_list("dictionaries")?
                .ok_or_else(|| Error::Config("missing required field 'dictionaries'".into()))?;
            let model_paths: Option<Vec<PathBuf>> = config.get_list("models")?;
            let lambda = config.get_or("lambda", 0.1)?;
            let structure: Option<PathBuf> = config.get("structure")?;
            let truth: Option<Vec<usize>> = config.get_list("truth")?;
            config.finish()?;
            let dicts = dict_paths
                .iter()
                .map(|p| load_dictionary(p))
                .collect::<Result<Vec<_>>>()?;
            let structures = dicts
                .iter()
                .map(|d| match &structure {
                    Some(p) => load_structure(p),
                    None => GroupStructure::singletons(d.p(), lambda),
                })
                .collect::<Result<Vec<_>>>()?;
            let encoders = match &model_paths {
                Some(paths) => {
                    if paths.len() != dicts.len() {
                        return Err(Error::Config("models and dictionaries differ in length".into()));
                    }
                    paths.iter().map(|p| load_model(p)).collect::<Result<Vec<_>>>()?
                }
                None => Vec::new(),
            };
            let models: Vec<ClassModel<'_>> = if encoders.is_empty() {
                dicts
                    .iter()
                    .zip(&structures)
                    .map(|(d, gs)| ClassModel::exact(d, gs))
                    .collect()
            } else {
                encoders
                    .iter()
                    .zip(&dicts)
                    .map(|(e, d)| ClassModel::encoder(e, d))
                    .collect()
            };
            let mut t = Table::new(&["sample", "label"]);
            let mut labels = Vec::new();
            for (n, x) in data.columns().into_iter().enumerate() {
                let c = classify_min_objective(&models, x)?;
                labels.push(c);
                t.push(vec![n.to_string(), c.to_string()]);
            }
            t.save(&out)?;
            match truth {
                Some(truth) if truth.len() == labels.len() => {
                    let hits = labels.iter().zip(&truth).filter(|(a, b)| a == b).count();
                    println!(
                        "samples={} accuracy={}",
                        labels.len(),
                        hits as f64 / labels.len() as f64
                    );
                }
                Some(_) => {
                    return Err(Error::Config(
                        "field 'truth': one label per sample expected".into(),
                    ))
                }
                None => println!("samples={}", labels.len()),
            }
        }
        "group_energy" => {
            let model: Option<PathBuf> = config.get("model")?;
            let dictionary: Option<PathBuf> = config.get("dictionary")?;
            let structure: Option<PathBuf> = config.get("structure")?;
            let labels: Option<PathBuf> = config.get("labels")?;
            let pool = config.get_or("pool", 1usize)?;
            let top = config.get_or("top", 2usize)?;
            config.finish()?;
            let params = model.as_deref().map(load_model).transpose()?;
            let exact = match (&params, dictionary, structure) {
                (Some(_), _, _) => None,
                (None, Some(d), Some(s)) => Some((load_dictionary(&d)?, load_structure(&s)?)),
                _ => {
                    return Err(Error::Config(
                        "group_energy needs 'model' or both 'dictionary' and 'structure'".into(),
                    ))
                }
            };
            let (coder, own) = match (&params, &exact) {
                (Some(p), _) => (Coder::Encoder(p), &p.structure),
                (None, Some((d, gs))) => (
                    Coder::Exact {
                        dictionary: d,
                        structure: gs,
                    },
                    gs,
                ),
                _ => unreachable!("checked above"),
            };
            let partition = labels.as_deref().map(load_structure).transpose()?;
            let partition = partition.as_ref().unwrap_or(own);
            let spans = classify_group_energy(&coder, data.view(), partition, pool, top)?;
            let mut t = Table::new(&["span", "groups"]);
            for (s, g) in spans.iter().enumerate() {
                let g: Vec<String> = g.iter().map(|r| r.to_string()).collect();
                t.push(vec![s.to_string(), g.join(" ")]);
            }
            t.save(&out)?;
            println!("spans={}", spans.len());
        }
        other => {
            return Err(Error::Config(format!(
                "field 'mode': unknown mode '{other}', expected min_objective or group_energy"
            )))
        }
    }
    Ok(())
}

fn bench(config: &Config) -> Result<()> {
    let d = BenchConfig::default();
    let cfg = BenchConfig {
        m: config.get_or("m", d.m)?,
        p: config.get_or("p", d.p)?,
        group_sizes: config.get_list_or("group_sizes", d.group_sizes)?,
        lambda: config.get_or("lambda", d.lambda)?,
        mu: config.get_or("mu", d.mu)?,
        depths: config.get_list_or("depths", d.depths)?,
        n: config.get_or("n", d.n)?,
        repetitions: config.get_or("repetitions", d.repetitions)?,
        slice: config.get_or("slice", d.slice)?,
        seed: config.get_or("seed", d.seed)?,
    };
    let out: Option<PathBuf> = config.get("out")?;
    config.finish()?;
    let report = bench_scaling(&cfg)?;
    let mut t = Table::new(&[
        "depth",
        "n",
        "seconds",
        "vectors_per_second",
        "seconds_per_vector_per_layer",
    ]);
    for r in &report.rows {
        t.push(vec![
            r.depth.to_string(),
            r.n.to_string(),
            r.seconds.to_string(),
            r.vectors_per_second.to_string(),
            r.seconds_per_vector_per_layer.to_string(),
        ]);
    }
    print!("{}", t.to_csv());
    if let Some(p) = out {
        t.save(&p)?;
    }
    for (label, holds) in report.checks() {
        println!("check {} {label}", if holds { "ok" } else { "off" });
    }
    println!(
        "reference seconds_per_vector_per_layer={}",
        structsparse::harness::bench::REFERENCE_SECONDS_PER_VECTOR_PER_LAYER
    );
    Ok(())
}

fn gradcheck(config: &Config) -> Result<()> {
    let d = GradcheckConfig::default();
    let parse = |e: Error| Error::Config(e.to_string());
    let cfg = GradcheckConfig {
        architecture: config
            .get_or("architecture", d.architecture.name().to_string())?
            .parse()
            .map_err(parse)?,
        tying: tying(config)?,
        depth: config.get_or("depth", d.depth)?,
        loss: config
            .get_or("loss", "regression".to_string())?
            .parse()
            .map_err(parse)?,
        points: config.get_or("points", d.points)?,
        m: config.get_or("m", d.m)?,
        p: config.get_or("p", d.p)?,
        group_size: config.get_or("group_size", d.group_size)?,
        lambda: config.get_or("lambda", d.lambda)?,
        mu: config.get_or("mu", d.mu)?,
        perturbation: config.get_or("perturbation", d.perturbation)?,
        h: config.get_or("h", d.h)?,
        min_margin: config.get_or("min_margin", d.min_margin)?,
        floor: config.get_or("floor", d.floor)?,
        seed: config.get_or("seed", d.seed)?,
    };
    let tolerance = config.get_or("tolerance", 1e-4)?;
    config.finish()?;
    let r = run_gradcheck(&cfg)?;
    println!(
        "points={} rejected={} max_relative_error={} mean_relative_error={}",
        r.points, r.rejected, r.max_relative_error, r.mean_relative_error
    );
    if r.max_relative_error > tolerance {
        return Err(Error::Invalid(format!(
            "gradient check failed: max relative error {} exceeds {tolerance} at point {}",
            r.max_relative_error, r.worst_point
        )));
    }
    Ok(())
}

fn experiment(config: &Config) -> Result<()> {
    let name: String = config.require("name")?;
    let out = path(config, "out_dir")?;
    let report = run_experiment(&name, config)?;
    report.save(&out)?;
    print!("{}", report.metrics.to_csv());
    Ok(())
}
