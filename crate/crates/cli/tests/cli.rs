use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn densedial(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_densedial")).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Sessions of 2..=7 utterances where the reply repeats a topic word.
fn write_sessions(path: &Path, n: usize, offset: usize) -> Vec<usize> {
    let mut lens = Vec::new();
    let mut text = String::new();
    for i in 0..n {
        let m = 2 + (i * 7 + offset) % 6;
        let topic = (i + offset) % 40;
        let utts: Vec<String> = (0..m).map(|t| format!("topic{topic} turn{t} word{}", (i + t) % 9)).collect();
        text.push_str(&serde_json::json!({"id": format!("s{}", i + offset), "utterances": utts}).to_string());
        text.push('\n');
        lens.push(m);
    }
    fs::write(path, text).unwrap();
    lens
}

#[test]
fn augment_writes_one_line_per_pair() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("a.jsonl");
    let out = dir.path().join("b.jsonl");
    let lens = write_sessions(&input, 30, 0);
    let o = densedial(&["augment", "--in", p(&input), "--out", p(&out), "--k", "5"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let lines = fs::read_to_string(&out).unwrap().lines().count();
    assert_eq!(lines, lens.iter().map(|m| (m - 1).min(5)).sum::<usize>());
}

#[test]
fn usage_errors_exit_1() {
    let o = densedial(&["augment", "--out", "x.jsonl"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("--in"), "{}", stderr(&o));
    assert!(stderr(&o).to_lowercase().contains("usage"));

    let o = densedial(&["augment", "--in", "a", "--out", "b", "--bogus-flag"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("--bogus-flag"));

    assert_eq!(code(&densedial(&["frobnicate"])), 1);
    assert_eq!(code(&densedial(&[])), 1);
}

#[test]
fn unreadable_input_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("b.jsonl");
    let o = densedial(&["augment", "--in", "/definitely/not/here.jsonl", "--out", p(&out)]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    assert!(!out.exists(), "no output on failure");

    let bad = dir.path().join("bad.jsonl");
    fs::write(&bad, "{\"id\": \"x\", \"utterances\": []}\nnot json\n").unwrap();
    assert_eq!(code(&densedial(&["augment", "--in", p(&bad), "--out", p(&out)])), 2);
}

#[test]
fn version_and_help() {
    let o = densedial(&["--version"]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains(env!("CARGO_PKG_VERSION")));
    assert_eq!(code(&densedial(&["train", "--help"])), 0);
}

struct Workspace {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

impl Workspace {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        Workspace { _dir: dir, root }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    fn train(&self, out: &str, seed: &str, manifest: Option<&Path>) -> Output {
        let train = self.path("train.jsonl");
        let ckpt = self.path(out);
        let mut args = vec![
            "train", "--train", p(&train), "--out", p(&ckpt), "--batch", "8", "--epochs", "2", "--lr", "1e-2",
            "--emb-dim", "16", "--dim", "16", "--seed", seed,
        ];
        if let Some(m) = manifest {
            args.extend(["--manifest", p(m)]);
        }
        densedial(&args)
    }
}

#[test]
fn full_workflow() {
    let ws = Workspace::new();
    write_sessions(&ws.path("train.jsonl"), 80, 0);
    write_sessions(&ws.path("test.jsonl"), 80, 0);

    let manifest = ws.path("train.manifest.json");
    let o = ws.train("a.dde", "3", Some(&manifest));
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let logs: Vec<Value> = stdout(&o).lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(logs.len(), 2);
    assert_eq!(logs[1]["epoch"], 2);

    let m: Value = serde_json::from_str(&fs::read_to_string(&manifest).unwrap()).unwrap();
    assert_eq!(m["command"], "train");
    assert_eq!(m["seed"], 3);
    assert_eq!(m["inputs"][0]["sha256"].as_str().unwrap().len(), 64);
    assert_eq!(m["flags"]["command"]["train"]["batch"], 8);

    // same seed, same bytes
    assert_eq!(code(&ws.train("b.dde", "3", None)), 0);
    assert_eq!(fs::read(ws.path("a.dde")).unwrap(), fs::read(ws.path("b.dde")).unwrap());
    assert_eq!(code(&ws.train("c.dde", "4", None)), 0);
    assert_ne!(fs::read(ws.path("a.dde")).unwrap(), fs::read(ws.path("c.dde")).unwrap());

    // the pool: every session's last utterance
    let mut pool = String::new();
    for line in fs::read_to_string(ws.path("test.jsonl")).unwrap().lines() {
        let s: Value = serde_json::from_str(line).unwrap();
        let last = s["utterances"].as_array().unwrap().last().unwrap().clone();
        pool.push_str(&serde_json::json!({"id": s["id"], "text": last}).to_string());
        pool.push('\n');
    }
    fs::write(ws.path("pool.jsonl"), pool).unwrap();
    fs::write(ws.path("extra.jsonl"), "{\"id\": \"e0\", \"text\": \"something unrelated\"}\n").unwrap();

    let ckpt = ws.path("a.dde");
    for kind in ["flat", "ivf", "lsh"] {
        let idx = ws.path(&format!("{kind}.ddix"));
        let o = densedial(&[
            "build-index", "--ckpt", p(&ckpt), "--responses", p(&ws.path("pool.jsonl")), "--nonparallel-out",
            p(&ws.path("extra.jsonl")), "--kind", kind, "--out", p(&idx), "--nlist", "4", "--bits", "32",
        ]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        let summary: Value = serde_json::from_str(&stdout(&o)).unwrap();
        assert_eq!(summary["entries"], 81);
        assert!(ws.path(&format!("{kind}.ddix.responses.jsonl")).exists());
    }

    let queries = ws.path("queries.txt");
    fs::write(&queries, "topic3 turn0 word1\ttopic3 turn1 word2\n[\"topic7 turn0\"]\n\n").unwrap();
    let flat = ws.path("flat.ddix");
    let o = densedial(&["search", "--idx", p(&flat), "--ckpt", p(&ckpt), "--queries", p(&queries), "--topk", "3"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let answers: Vec<Value> = stdout(&o).lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(answers.len(), 2);
    assert_eq!(answers[0]["hits"].as_array().unwrap().len(), 3);
    assert_eq!(answers[0]["context"].as_array().unwrap().len(), 2);

    let o = densedial(&["e2e-eval", "--ckpt", p(&ckpt), "--idx", p(&flat), "--test", p(&ws.path("test.jsonl"))]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let e2e: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(e2e["queries"], 80);
    assert!(e2e["r_at_10"].as_f64().unwrap() >= e2e["r_at_1"].as_f64().unwrap());

    let out = ws.path("pipe.json");
    let o = densedial(&[
        "pipeline-eval", "--ckpt", p(&ckpt), "--train", p(&ws.path("train.jsonl")), "--test", p(&ws.path("test.jsonl")),
        "--recall-size", "100", "--out", p(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let pipe: Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(pipe["system"], "pipeline");

    let eval = ws.path("eval.jsonl");
    fs::write(
        &eval,
        "{\"id\": \"q\", \"context\": [\"topic3 turn0\"], \"candidates\": [{\"text\": \"topic3 turn1\", \"rel\": 1}, {\"text\": \"topic9 turn1\", \"rel\": 0}]}\n",
    )
    .unwrap();
    let o = densedial(&["evaluate", "--ckpt", p(&ckpt), "--test", p(&eval), "--metrics", "map,r2@1,ndcg@2"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let report: Value = serde_json::from_str(&stdout(&o)).unwrap();
    let map = report["metrics"]["map"]["value"].as_f64().unwrap();
    assert!((0.5..=1.0).contains(&map));
    assert_eq!(code(&densedial(&["evaluate", "--ckpt", p(&ckpt), "--test", p(&eval), "--metrics", "nope"])), 1);

    let many = ws.path("many.txt");
    fs::write(&many, "topic1 turn0\n".repeat(15)).unwrap();
    let o = densedial(&["bench", "--idx", p(&ws.path("ivf.ddix")), "--ckpt", p(&ckpt), "--queries", p(&many), "--mode", "ivf"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let lat: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(lat["queries"], 5);
    let o = densedial(&["bench", "--idx", p(&flat), "--ckpt", p(&ckpt), "--queries", p(&many), "--mode", "lsh"]);
    assert_eq!(code(&o), 1, "mode must match the index kind");
    let o = densedial(&[
        "bench", "--train", p(&ws.path("train.jsonl")), "--ckpt", p(&ckpt), "--queries", p(&many), "--mode", "bm25-pipeline",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));

    // index files are data: a corrupt one is a data error
    fs::write(ws.path("junk.ddix"), b"nope").unwrap();
    fs::copy(ws.path("flat.ddix.responses.jsonl"), ws.path("junk.ddix.responses.jsonl")).unwrap();
    let o = densedial(&["search", "--idx", p(&ws.path("junk.ddix")), "--ckpt", p(&ckpt), "--queries", p(&queries)]);
    assert_eq!(code(&o), 2);
}

#[test]
fn bad_training_configuration_is_a_usage_error() {
    let ws = Workspace::new();
    write_sessions(&ws.path("train.jsonl"), 20, 0);
    let o = densedial(&[
        "train", "--train", p(&ws.path("train.jsonl")), "--out", p(&ws.path("x.dde")), "--warmup", "0.1",
    ]);
    assert_eq!(code(&o), 1, "{}", stderr(&o));
    assert!(!ws.path("x.dde").exists());
}
