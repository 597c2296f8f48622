mod common;

use common::*;
use ndarray::{array, Array1, Array2};
use structsparse::harness::classify::{
    classify_group_energy, classify_min_objective, detection_accuracy, group_energies, top_k, ClassModel,
    Coder,
};
use structsparse::harness::config::Config;
use structsparse::harness::experiment::run_experiment;
use structsparse::harness::synth::{gen_synthetic, SynthSpec};
use structsparse::{eval_objective, ista_solve, Dictionary, GroupStructure, SolverConfig};

/// Noise-free signals from class c's dictionary, three atoms each.
fn class_samples(dicts: &[Dictionary], per_class: usize, seed: u64) -> (Array2<f64>, Vec<usize>) {
    let mut r = rng(seed);
    let m = dicts[0].m();
    let mut x = Array2::zeros((m, per_class * dicts.len()));
    let mut labels = Vec::new();
    for (c, d) in dicts.iter().enumerate() {
        for i in 0..per_class {
            let n = c * per_class + i;
            let z = randn_vec(d.p(), &mut r);
            let mut sparse = Array1::zeros(d.p());
            for j in rand::seq::index::sample(&mut r, d.p(), 3) {
                sparse[j] = z[j].signum() * (1.0 + z[j].abs());
            }
            x.column_mut(n).assign(&d.reconstruct(sparse.view()));
            labels.push(c);
        }
    }
    (x, labels)
}

#[test]
fn min_objective_matches_independent_argmin_and_labels_clean_data() {
    let mut r = rng(1);
    let dicts: Vec<Dictionary> = (0..3).map(|_| random_dictionary(16, 24, &mut r)).collect();
    let gs = GroupStructure::singletons(24, 0.05).unwrap();
    let models: Vec<ClassModel> = dicts.iter().map(|d| ClassModel::exact(d, &gs)).collect();
    let (x, labels) = class_samples(&dicts, 20, 2);
    let mut correct = 0;
    for (n, col) in x.columns().into_iter().enumerate() {
        let got = classify_min_objective(&models, col).unwrap();
        let objectives: Vec<f64> = dicts
            .iter()
            .map(|d| {
                let z = ista_solve(col, d, &gs, &SolverConfig::exact()).unwrap().code;
                eval_objective(col, z.view(), d, &gs).unwrap()
            })
            .collect();
        let oracle = (0..objectives.len())
            .min_by(|&a, &b| objectives[a].total_cmp(&objectives[b]))
            .unwrap();
        assert_eq!(got, oracle, "sample {n}: {objectives:?}");
        correct += usize::from(got == labels[n]);
    }
    assert!(
        correct as f64 / labels.len() as f64 >= 0.95,
        "{correct}/{}",
        labels.len()
    );
}

#[test]
fn identical_models_give_label_zero() {
    let mut r = rng(3);
    let d = random_dictionary(8, 12, &mut r);
    let gs = GroupStructure::singletons(12, 0.1).unwrap();
    let models = [
        ClassModel::exact(&d, &gs),
        ClassModel::exact(&d, &gs),
        ClassModel::exact(&d, &gs),
    ];
    for _ in 0..10 {
        let x = randn_vec(8, &mut r);
        assert_eq!(classify_min_objective(&models, x.view()).unwrap(), 0);
    }
}

#[test]
fn class_order_does_not_change_the_decision() {
    let mut r = rng(4);
    let dicts: Vec<Dictionary> = (0..3).map(|_| random_dictionary(12, 16, &mut r)).collect();
    let gs = GroupStructure::contiguous(&[4; 4], 0.05, 0.05).unwrap();
    let forward: Vec<ClassModel> = dicts.iter().map(|d| ClassModel::exact(d, &gs)).collect();
    let reversed: Vec<ClassModel> = dicts.iter().rev().map(|d| ClassModel::exact(d, &gs)).collect();
    let (x, _) = class_samples(&dicts, 5, 5);
    for col in x.columns() {
        let a = classify_min_objective(&forward, col).unwrap();
        let b = classify_min_objective(&reversed, col).unwrap();
        assert_eq!(a, 2 - b);
    }
}

#[test]
fn single_class_rejected() {
    let d = Dictionary::normalized(Array2::eye(3)).unwrap();
    let gs = GroupStructure::singletons(3, 0.1).unwrap();
    let err =
        classify_min_objective(&[ClassModel::exact(&d, &gs)], array![1.0, 0.0, 0.0].view()).unwrap_err();
    assert_eq!(err.kind(), "invalid");
}

#[test]
fn group_energy_finds_the_active_groups() {
    let d = Dictionary::normalized(Array2::eye(12)).unwrap();
    let gs = GroupStructure::contiguous(&[3; 4], 0.01, 0.01).unwrap();
    let mut x = Array2::zeros((12, 6));
    for n in 0..6 {
        for j in [3, 4, 5, 9, 10, 11] {
            x[[j, n]] = 1.0 + 0.1 * (j + n) as f64;
        }
        x[[0, n]] = 0.05;
    }
    let coder = Coder::Exact {
        dictionary: &d,
        structure: &gs,
    };
    let spans = classify_group_energy(&coder, x.view(), &gs, 2, 2).unwrap();
    assert_eq!(spans, vec![vec![1, 3]; 3]);
    assert_eq!(detection_accuracy(&spans, &vec![vec![1, 3]; 3]), 1.0);
    let all = classify_group_energy(&coder, x.view(), &gs, 3, 4).unwrap();
    assert_eq!(all, vec![vec![0, 1, 2, 3]; 2]);
}

#[test]
fn group_energies_by_hand() {
    let gs = GroupStructure::new(vec![vec![0, 2], vec![1]], Array1::zeros(3), Array1::zeros(2)).unwrap();
    let codes = array![[1.0, 0.0], [2.0, -1.0], [3.0, 0.5]];
    let e = group_energies(codes.view(), &gs);
    assert_eq!(e, array![[10.0, 0.25], [4.0, 1.0]]);
}

#[test]
fn top_k_breaks_ties_toward_lower_index() {
    assert_eq!(top_k(&[1.0, 3.0, 3.0, 2.0], 2), vec![1, 2]);
    assert_eq!(top_k(&[5.0, 5.0, 5.0], 2), vec![0, 1]);
    assert_eq!(top_k(&[0.0, 1.0], 0), Vec::<usize>::new());
}

#[test]
fn synthetic_generator_respects_its_spec() {
    let spec = SynthSpec {
        m: 16,
        group_sizes: vec![8; 4],
        active_groups: 2,
        n: 200,
        span: 5,
        seed: 9,
        ..Default::default()
    };
    let data = gen_synthetic(&spec).unwrap();
    let gs = spec.structure().unwrap();
    assert_eq!(data.truth.dim(), (32, 200));
    for (n, z) in data.truth.columns().into_iter().enumerate() {
        let active: Vec<usize> = (0..4)
            .filter(|&r| gs.group(r).iter().any(|&j| z[j] != 0.0))
            .collect();
        assert_eq!(active, data.active[n]);
        assert_eq!(data.active[n], data.active[n - n % 5]);
        let x = data.dictionary().reconstruct(z);
        assert!(max_abs_diff(&x, &data.instance.data.column(n).to_owned()) < 1e-12);
    }
    assert_eq!(gen_synthetic(&spec).unwrap().truth, data.truth);
}

fn tiny_structured() -> Config {
    Config::parse(
        "m = 16\ngroups = 4\ngroup_size = 8\nactive_groups = 1\nn_train = 200\nn_test = 50\n\
         depths = 1, 2\ntrain_epochs = 3\nseeds = 0, 1\n",
    )
    .unwrap()
}

#[test]
fn experiment_reports_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let a = run_experiment("synth_structured", &tiny_structured()).unwrap();
    let b = run_experiment("synth_structured", &tiny_structured()).unwrap();
    a.save(&dir.path().join("a")).unwrap();
    b.save(&dir.path().join("b")).unwrap();
    let ra = std::fs::read(dir.path().join("a/report.csv")).unwrap();
    let rb = std::fs::read(dir.path().join("b/report.csv")).unwrap();
    assert_eq!(ra, rb);
    // two seeds, two depths, two methods
    assert_eq!(a.metrics.rows.len(), 8);
    assert!(dir.path().join("a/runtimes.csv").exists());
    assert!(dir.path().join("a/config.txt").exists());
    for row in &a.metrics.rows {
        let v: f64 = row[4].parse().unwrap();
        assert!(v.is_finite() && v >= 0.0);
    }
}

#[test]
fn unknown_experiment_and_key_rejected() {
    let err = run_experiment("nope", &Config::default()).unwrap_err();
    assert_eq!(err.kind(), "config");
    let cfg = Config::parse("deptth = 3\n").unwrap();
    let err = run_experiment("synth_structured", &cfg).unwrap_err();
    assert!(err.to_string().contains("deptth"), "{err}");
}
