#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};
use spitzkit::cohort::CohortSpec;

pub fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_spitzkit"))
}

/// Runs one subcommand against `dir`, passing `config` through a file.
pub fn spitzkit(dir: &Path, args: &[&str], config: Option<&Value>) -> Output {
    let mut cmd = bin();
    cmd.args(args).arg("--out").arg(dir);
    if let Some(cfg) = config {
        let path = dir.join(format!("config-{}.json", args.join("-").replace("--", "")));
        std::fs::create_dir_all(dir).unwrap();
        std::fs::write(&path, serde_json::to_vec_pretty(cfg).unwrap()).unwrap();
        cmd.arg("--config").arg(path);
    }
    cmd.output().expect("binary runs")
}

/// Like [`spitzkit`] but panics with stderr on a nonzero exit.
pub fn ok(dir: &Path, args: &[&str], config: Option<&Value>) -> Output {
    let out = spitzkit(dir, args, config);
    assert!(
        out.status.success(),
        "{args:?} failed with {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

/// The single JSON error line a failing command prints on stderr.
pub fn error_line(out: &Output) -> Value {
    let text = String::from_utf8_lossy(&out.stderr);
    let line = text.lines().last().unwrap_or_else(|| panic!("no stderr"));
    serde_json::from_str(line).unwrap_or_else(|e| panic!("stderr is not JSON ({e}): {text}"))
}

pub fn synth_config(n: usize, seed: u64) -> Value {
    json!({
        "cohort": CohortSpec::table1(n, seed),
        "bags": {"dim": 16, "min_tiles": 16, "max_tiles": 48, "signal_fraction": 0.5},
    })
}

/// A tiny model and schedule that still separates the synthetic classes.
pub fn train_config() -> Value {
    json!({
        "model": {"embed_dim": 16, "heads": 2, "depth": 1},
        "train": {
            "total_iterations": 600,
            "grad_accum": 4,
            "lr0": 3e-3,
            "lr_halving_period": 200,
            "validation_period": 200,
        },
    })
}

pub fn evaluate_config() -> Value {
    json!({"bootstrap": {"resamples": 200}})
}

/// synth, split, train on every fold of `task` and evaluate.
pub fn small_pipeline(dir: &Path, n: usize, seed: u64, task: &str) {
    let s = seed.to_string();
    ok(dir, &["synth", "--seed", &s], Some(&synth_config(n, seed)));
    ok(dir, &["split", "--seed", &s], None);
    for fold in 0..5 {
        let f = fold.to_string();
        ok(
            dir,
            &["train", "--task", task, "--fold", &f, "--seed", &s],
            Some(&train_config()),
        );
    }
    ok(
        dir,
        &["evaluate", "--task", task, "--seed", &s],
        Some(&evaluate_config()),
    );
}

pub fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r
        .records()
        .map(|x| x.unwrap().iter().map(String::from).collect())
        .collect();
    (header, rows)
}

/// Relative paths of every file under `root`, sorted.
pub fn files_under(root: &Path) -> Vec<PathBuf> {
    fn walk(dir: &Path, root: &Path, out: &mut Vec<PathBuf>) {
        for e in std::fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(&p, root, out);
            } else {
                out.push(p.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    let mut out = Vec::new();
    walk(root, root, &mut out);
    out.sort();
    out
}
