#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub const BIN: &str = env!("CARGO_BIN_EXE_zvq");

/// Runs the binary with `args`, quietly unless a test asks for logs.
pub fn zvq(args: &[&str]) -> Output {
    zvq_env(args, &[])
}

pub fn zvq_env(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(BIN);
    cmd.args(args);
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[track_caller]
pub fn ok(o: &Output) {
    assert!(o.status.success(), "exit {:?}\n{}", o.status.code(), stderr(o));
}

pub fn p(path: &Path) -> &str {
    path.to_str().expect("utf-8 path")
}

/// Synthetic corpus plus extracted features under `root`.
pub struct Prepared {
    pub corpus: PathBuf,
    pub features: PathBuf,
}

pub fn prepare(root: &Path, seed: u64) -> Prepared {
    let corpus = root.join("corpus");
    let features = root.join("features");
    let seed = seed.to_string();
    ok(&zvq(&["--log-level", "warn", "--seed", &seed, "--out", p(&corpus), "make-synth-corpus"]));
    ok(&zvq(&[
        "--log-level",
        "warn",
        "--jobs",
        "4",
        "--out",
        p(&features),
        "extract-features",
        "--manifest",
        p(&corpus.join("manifest.tsv")),
    ]));
    Prepared { corpus, features }
}

/// Small training config written to `root/<name>.ini`.
pub fn train_ini(root: &Path, name: &str, variant: &str, hidden: usize, steps: u64, extra: &str) -> PathBuf {
    let path = root.join(format!("{name}.ini"));
    let text = format!(
        "[model]\nvariant = {variant}\nhidden = {hidden}\n\n[train]\nsteps = {steps}\ncheckpoint_every = 100\nlog_every = 10\nusage_window = 100\n{extra}"
    );
    std::fs::write(&path, text).expect("write ini");
    path
}

pub fn train(config: &Path, features: &Path, out: &Path, resume: Option<&Path>) -> Output {
    let mut args = vec!["--log-level", "warn", "--config", p(config), "--out", p(out), "train", "--features", p(features)];
    if let Some(r) = resume {
        args.extend(["--resume", p(r)]);
    }
    zvq(&args)
}

pub fn log_lines(path: &Path) -> Vec<serde_json::Value> {
    std::fs::read_to_string(path)
        .expect("log exists")
        .lines()
        .map(|l| serde_json::from_str(l).expect("json line"))
        .collect()
}

pub fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

pub fn read(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

/// Every regular file under `dir`, relative path → bytes, sorted.
pub fn snapshot(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    fn walk(base: &Path, dir: &Path, out: &mut Vec<(PathBuf, Vec<u8>)>) {
        let mut entries: Vec<_> = std::fs::read_dir(dir).expect("dir").map(|e| e.expect("entry").path()).collect();
        entries.sort();
        for e in entries {
            if e.is_dir() {
                walk(base, &e, out);
            } else {
                out.push((e.strip_prefix(base).expect("prefix").to_path_buf(), read(&e)));
            }
        }
    }
    let mut out = Vec::new();
    walk(dir, dir, &mut out);
    out
}
