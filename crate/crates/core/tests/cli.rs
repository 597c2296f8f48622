use std::path::Path;
use std::process::{Command, Output};

use structsparse::harness::formats::{load_dictionary, load_matrix, load_model, read_matrix_csv};

fn run(verb: &str, config: Option<&Path>, sets: &[String]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_structsparse"));
    cmd.arg(verb);
    if let Some(c) = config {
        cmd.arg("--config").arg(c);
    }
    for s in sets {
        cmd.arg("--set").arg(s);
    }
    cmd.output().expect("binary runs")
}

fn ok(verb: &str, config: Option<&Path>, sets: &[String]) -> String {
    let out = run(verb, config, sets);
    assert!(
        out.status.success(),
        "{verb} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn kv(k: &str, v: impl AsRef<Path>) -> String {
    format!("{k}={}", v.as_ref().display())
}

/// The single stderr line of a failed run: exit code and kind.
fn failure(out: &Output) -> (i32, String) {
    let err = String::from_utf8(out.stderr.clone()).unwrap();
    let lines: Vec<&str> = err.lines().collect();
    assert_eq!(lines.len(), 1, "{err}");
    let line = lines[0];
    assert!(line.starts_with("error kind="), "{line}");
    let rest = &line["error kind=".len()..];
    let (kind, msg) = rest.split_once(' ').unwrap();
    assert!(msg.starts_with("msg=\"") && msg.ends_with('"'), "{line}");
    (out.status.code().unwrap(), kind.to_string())
}

#[test]
fn full_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = d.join("synth.cfg");
    std::fs::write(
        &cfg,
        "m = 12\ngroup_sizes = 4, 4, 4, 4\nn = 60\nactive_groups = 2 # two\nnoise = 0.01\n",
    )
    .unwrap();
    ok(
        "synth",
        Some(&cfg),
        &[kv("out_dir", d.join("syn")), "seed=3".into()],
    );
    for f in [
        "data.ssm",
        "truth.ssm",
        "dictionary.ssm",
        "structure.txt",
        "active.csv",
    ] {
        assert!(d.join("syn").join(f).exists(), "{f}");
    }
    let data = d.join("syn/data.ssm");
    let dict = d.join("syn/dictionary.ssm");
    let structure = d.join("syn/structure.txt");
    assert_eq!(load_matrix(&data).unwrap().dim(), (12, 60));

    let stdout = ok(
        "solve",
        None,
        &[
            kv("data", &data),
            kv("dictionary", &dict),
            kv("structure", &structure),
            kv("out", d.join("z.csv")),
            kv("report", d.join("solve.csv")),
        ],
    );
    assert!(stdout.contains("unconverged=0"), "{stdout}");
    let z = read_matrix_csv(std::fs::File::open(d.join("z.csv")).unwrap()).unwrap();
    assert_eq!(z.dim(), (16, 60));

    ok(
        "init",
        None,
        &[
            kv("dictionary", &dict),
            kv("structure", &structure),
            "depth=3".into(),
            kv("out", d.join("m0.sse")),
        ],
    );
    assert_eq!(load_model(&d.join("m0.sse")).unwrap().depth, 3);
    let stdout = ok(
        "train",
        None,
        &[
            kv("model", d.join("m0.sse")),
            kv("data", &data),
            kv("dictionary", &dict),
            "loss=regression".into(),
            kv("exact_codes", d.join("z.csv")),
            "train_epochs=3".into(),
            kv("out", d.join("m1.sse")),
            kv("history", d.join("hist.csv")),
        ],
    );
    let losses: Vec<f64> = stdout
        .split_whitespace()
        .map(|t| t.split_once('=').unwrap().1.parse().unwrap())
        .collect();
    assert!(losses[1] <= losses[0], "{stdout}");

    ok(
        "encode",
        None,
        &[
            kv("model", d.join("m1.sse")),
            kv("data", &data),
            kv("out", d.join("codes.ssm")),
        ],
    );
    assert_eq!(load_matrix(&d.join("codes.ssm")).unwrap().dim(), (16, 60));

    let stdout = ok(
        "classify",
        None,
        &[
            "mode=group_energy".into(),
            kv("model", d.join("m1.sse")),
            kv("data", &data),
            "pool=2".into(),
            kv("out", d.join("spans.csv")),
        ],
    );
    assert!(stdout.contains("spans=30"), "{stdout}");
    let stdout = ok(
        "classify",
        None,
        &[
            kv("dictionaries", format!("{},{}", dict.display(), dict.display())),
            kv("data", &data),
            kv("out", d.join("labels.csv")),
        ],
    );
    assert!(stdout.contains("samples=60"), "{stdout}");
    let labels = std::fs::read_to_string(d.join("labels.csv")).unwrap();
    assert!(labels.lines().skip(1).all(|l| l.ends_with(",0")), "{labels}");

    ok(
        "online",
        None,
        &[
            kv("data", &data),
            "p=8".into(),
            "lambda=0.1".into(),
            "depth=2".into(),
            "window=20".into(),
            "step=20".into(),
            "train_epochs=2".into(),
            kv("out_dir", d.join("on")),
        ],
    );
    let windows = std::fs::read_to_string(d.join("on/windows.csv")).unwrap();
    assert_eq!(windows.lines().count(), 1 + 3, "{windows}");
    assert_eq!(load_dictionary(&d.join("on/dictionary.ssm")).unwrap().p(), 8);
}

#[test]
fn bench_gradcheck_and_experiment() {
    let dir = tempfile::tempdir().unwrap();
    let stdout = ok(
        "bench",
        None,
        &[
            "m=8".into(),
            "p=16".into(),
            "group_sizes=4,4,4,4".into(),
            "depths=1,2".into(),
            "n=50".into(),
            "repetitions=1".into(),
            kv("out", dir.path().join("b.csv")),
        ],
    );
    assert!(stdout.contains("check"), "{stdout}");
    assert_eq!(
        std::fs::read_to_string(dir.path().join("b.csv"))
            .unwrap()
            .lines()
            .count(),
        4
    );

    ok("gradcheck", None, &["points=2".into()]);

    ok(
        "experiment",
        None,
        &[
            "name=synth_structured".into(),
            "n_train=100".into(),
            "n_test=20".into(),
            "depths=1".into(),
            "train_epochs=1".into(),
            "seeds=0".into(),
            kv("out_dir", dir.path().join("e")),
        ],
    );
    assert!(dir.path().join("e/report.csv").exists());
}

#[test]
fn errors_are_one_machine_readable_line() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(
        "solve",
        None,
        &[
            "data=/nonexistent.ssm".into(),
            "dictionary=x".into(),
            "structure=y".into(),
            "out=z".into(),
        ],
    );
    assert_eq!(failure(&out), (1, "io".into()));

    let out = run("bench", None, &["bogus_key=1".into()]);
    let (code, kind) = failure(&out);
    assert_eq!((code, kind.as_str()), (1, "config"));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bogus_key"));

    let out = run("init", None, &[]);
    assert_eq!(failure(&out), (1, "config".into()));

    let out = run("experiment", None, &["name=nope".into()]);
    assert_eq!(failure(&out), (1, "config".into()));

    let bad = dir.path().join("bad.ssm");
    std::fs::write(&bad, b"XXXX\0\0\0\0\0\0\0\0\0\0\0\0\0\0\0\0").unwrap();
    let out = run(
        "encode",
        None,
        &[
            kv("model", &bad),
            kv("data", &bad),
            kv("out", dir.path().join("o")),
        ],
    );
    assert_eq!(failure(&out), (1, "format".into()));

    let out = run("nosuchverb", None, &[]);
    assert_eq!(failure(&out).0, 2);
    let out = run("solve", None, &["novalue".into()]);
    assert_ne!(out.status.code(), Some(0));
    failure(&out);

    let help = Command::new(env!("CARGO_BIN_EXE_structsparse"))
        .arg("--help")
        .output()
        .unwrap();
    assert!(help.status.success());
}
