use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const SMALL: &str = r#"{
  "data": {"target": "nondiff", "a": -1, "b": 1, "delta": 0.1, "m": 121, "m_test": 60, "seed": 4},
  "sal": {
    "defaults": {"width": 12, "max_iters": 300, "init": {"kind": "random_kernel", "scale": 6.0},
                 "window": {"mode": "tau_multiples", "factor": 6.0}, "quad_points": 40},
    "grades": [{"activation": {"kind": "sin_cos_half"}},
               {"activation": {"kind": "relu"}, "tau": 1e-2},
               {"activation": {"kind": "relu"}, "solver": "direct_min_norm"}]
  },
  "ssg": {"widths": [6, 6], "activations": [{"kind": "tanh"}, {"kind": "relu"}],
          "alpha": 1e-2, "epochs": 200, "seed": 5, "checkpoints": [49, 99]}
}"#;

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_sal-learn"));
    cmd.env_remove("SAL_LEARN_THREADS");
    cmd
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn masked_csv(path: &Path) -> String {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap();
    let timed: Vec<bool> = header.split(',').map(|h| h.ends_with("time_s")).collect();
    let mut out = vec![header.to_string()];
    for line in lines {
        let cells: Vec<&str> = line
            .split(',')
            .enumerate()
            .map(|(i, c)| if timed[i] { "*" } else { c })
            .collect();
        out.push(cells.join(","));
    }
    out.join("\n")
}

fn eval_figures(text: &str) -> (f64, f64) {
    let words: Vec<&str> = text.split_whitespace().collect();
    let after = |label: &str| -> f64 {
        let i = words.iter().position(|w| *w == label).unwrap();
        words[i + 1].parse().unwrap()
    };
    (after("rse(train)"), after("rse(test)"))
}

#[test]
fn train_sal_writes_reports_and_eval_reproduces_rse() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "run.json", SMALL);
    let out_dir = tmp.path().join("out");
    let out = run(&["train-sal", "--config", p(&cfg), "--out", p(&out_dir)]);
    assert!(out.status.success(), "{}", stderr(&out));

    let csv = fs::read_to_string(out_dir.join("sal.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(
        lines[0],
        "grade,tau,epsilon,iterations,train_time_s,rse_train,rse_test"
    );
    assert_eq!(lines.len(), 1 + 3 + 1);
    assert!(lines[4].starts_with("total_time,"));
    assert!(out_dir.join("config.resolved.json").exists());

    let log: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("sal_log.json")).unwrap()).unwrap();
    let last = log["report"]["records"]
        .as_array()
        .unwrap()
        .last()
        .unwrap()
        .clone();
    let (train, test) = (
        last["rse_train"].as_f64().unwrap(),
        last["rse_test"].as_f64().unwrap(),
    );

    let ev = run(&[
        "eval",
        "--model",
        p(&out_dir.join("sal_model.json")),
        "--config",
        p(&cfg),
    ]);
    assert!(ev.status.success(), "{}", stderr(&ev));
    let (etrain, etest) = eval_figures(&stdout(&ev));
    assert!(
        (etrain - train).abs() <= 1e-12 * train,
        "{etrain} vs {train}"
    );
    assert!((etest - test).abs() <= 1e-12 * test, "{etest} vs {test}");
}

#[test]
fn train_ssg_checkpoint_rows_and_eval() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "run.json", SMALL);
    let out_dir = tmp.path().join("out");
    let out = run(&["train-ssg", "--config", p(&cfg), "--out", p(&out_dir)]);
    assert!(out.status.success(), "{}", stderr(&out));
    let csv = fs::read_to_string(out_dir.join("ssg.csv")).unwrap();
    let rows: Vec<Vec<&str>> = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').collect())
        .collect();
    let epochs: Vec<&str> = rows.iter().map(|r| r[3]).collect();
    assert_eq!(epochs, ["49", "99", "199"]);
    assert!(rows.iter().all(|r| r[0] == "6x2"));

    let ev = run(&[
        "eval",
        "--model",
        p(&out_dir.join("ssg_model.json")),
        "--config",
        p(&cfg),
    ]);
    assert!(ev.status.success(), "{}", stderr(&ev));
    let (etrain, _) = eval_figures(&stdout(&ev));
    let last: f64 = rows.last().unwrap()[5].parse().unwrap();
    assert!((etrain - last).abs() <= 1e-5 * last, "{etrain} vs {last}");
}

#[test]
fn repeated_runs_are_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "run.json", SMALL);
    let dirs = [tmp.path().join("a"), tmp.path().join("b")];
    for d in &dirs {
        for command in ["train-sal", "train-ssg"] {
            let out = run(&[command, "--config", p(&cfg), "--out", p(d)]);
            assert!(out.status.success(), "{}", stderr(&out));
        }
    }
    for csv in ["sal.csv", "ssg.csv"] {
        assert_eq!(
            masked_csv(&dirs[0].join(csv)),
            masked_csv(&dirs[1].join(csv)),
            "{csv}"
        );
    }
    for model in ["sal_model.json", "ssg_model.json"] {
        assert_eq!(
            fs::read(dirs[0].join(model)).unwrap(),
            fs::read(dirs[1].join(model)).unwrap(),
            "{model}"
        );
    }
}

#[test]
fn seed_flag_changes_the_sal_run() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "run.json", SMALL);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert!(run(&["train-sal", "--config", p(&cfg), "--out", p(&a)])
        .status
        .success());
    assert!(run(&[
        "train-sal",
        "--config",
        p(&cfg),
        "--out",
        p(&b),
        "--seed",
        "17"
    ])
    .status
    .success());
    assert_ne!(
        fs::read(a.join("sal_model.json")).unwrap(),
        fs::read(b.join("sal_model.json")).unwrap()
    );
}

#[test]
fn compare_on_affine_data_reaches_every_threshold() {
    let tmp = tempfile::tempdir().unwrap();
    let table: String = (0..=40)
        .map(|i| {
            let x = -1.0 + i as f64 / 20.0;
            format!("{x},{}\n", 2.0 * x + 1.0)
        })
        .collect();
    fs::write(tmp.path().join("line.csv"), table).unwrap();
    let cfg = write_config(
        tmp.path(),
        "affine.json",
        r#"{
          "data": {"target": "custom", "custom_file": "line.csv", "a": -1, "b": 1, "m": 41, "m_test": 20, "seed": 2},
          "sal": {"grades": [{"width": 1, "activation": {"kind": "identity"}, "solver": "direct_min_norm"}]},
          "ssg": {"widths": [4], "activations": [{"kind": "identity"}], "alpha": 5e-2, "epochs": 3000, "seed": 1},
          "compare": {"thresholds": [1e-2, 1e-3, 1e-4]}
        }"#,
    );
    let out_dir = tmp.path().join("out");
    let out = run(&["compare", "--config", p(&cfg), "--out", p(&out_dir)]);
    assert!(out.status.success(), "{}", stderr(&out));
    let csv = fs::read_to_string(out_dir.join("compare.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "method,threshold,reached,step,time_s"
    );
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 6);
    assert!(rows.iter().all(|r| r.len() == 5 && r[2] == "yes"), "{csv}");
    let sal_steps: Vec<&str> = rows
        .iter()
        .filter(|r| r[0] == "sal")
        .map(|r| r[3])
        .collect();
    assert_eq!(sal_steps, ["1", "1", "1"]);
    for f in [
        "sal.csv",
        "ssg.csv",
        "compare_summary.txt",
        "sal_model.json",
        "ssg_model.json",
    ] {
        assert!(out_dir.join(f).exists(), "{f}");
    }
}

#[test]
fn compare_without_ssg_section_fails() {
    let tmp = tempfile::tempdir().unwrap();
    let text = SMALL
        .split("\"ssg\"")
        .next()
        .unwrap()
        .trim_end()
        .trim_end_matches(',')
        .to_string()
        + "\n}";
    let cfg = write_config(tmp.path(), "sal_only.json", &text);
    let out = run(&[
        "compare",
        "--config",
        p(&cfg),
        "--out",
        p(&tmp.path().join("out")),
    ]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("ssg"), "{}", stderr(&out));
}

#[test]
fn config_errors_name_the_offending_path() {
    let tmp = tempfile::tempdir().unwrap();
    let unknown = write_config(
        tmp.path(),
        "unknown.json",
        &SMALL.replace("\"seed\": 4", "\"seed\": 4, \"sede\": 1"),
    );
    let out = run(&[
        "train-sal",
        "--config",
        p(&unknown),
        "--out",
        p(&tmp.path().join("o")),
    ]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("data"), "{}", stderr(&out));
    assert!(stderr(&out).contains("sede"), "{}", stderr(&out));

    let missing = write_config(
        tmp.path(),
        "missing.json",
        &SMALL.replace("\"target\": \"nondiff\", ", ""),
    );
    let out = run(&[
        "train-sal",
        "--config",
        p(&missing),
        "--out",
        p(&tmp.path().join("o")),
    ]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("data.target"), "{}", stderr(&out));

    let duplicate = write_config(
        tmp.path(),
        "dup.json",
        &SMALL.replace("\"m\": 121", "\"m\": 121, \"m\": 122"),
    );
    let out = run(&[
        "train-sal",
        "--config",
        p(&duplicate),
        "--out",
        p(&tmp.path().join("o")),
    ]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("duplicate"), "{}", stderr(&out));
}

#[test]
fn invalid_thread_count_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "run.json", SMALL);
    let out = bin()
        .args([
            "train-sal",
            "--config",
            p(&cfg),
            "--out",
            p(&tmp.path().join("o")),
        ])
        .env("SAL_LEARN_THREADS", "zero")
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(stderr(&out).contains("SAL_LEARN_THREADS"));
}

#[test]
fn thread_count_does_not_change_the_model() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "run.json", SMALL);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert!(run(&["train-sal", "--config", p(&cfg), "--out", p(&a)])
        .status
        .success());
    let out = bin()
        .args(["train-sal", "--config", p(&cfg), "--out", p(&b)])
        .env("SAL_LEARN_THREADS", "3")
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", stderr(&out));
    let final_rse = |d: &Path| {
        let log: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(d.join("sal_log.json")).unwrap()).unwrap();
        log["report"]["records"].as_array().unwrap().last().unwrap()["rse_train"]
            .as_f64()
            .unwrap()
    };
    let (ra, rb) = (final_rse(&a), final_rse(&b));
    assert!((ra - rb).abs() <= 1e-8 * ra, "{ra} vs {rb}");
}
