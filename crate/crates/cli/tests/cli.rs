use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const TINY: &str = "\
corpus.n_samples = 48
diffusion.t_max = 8
diffusion.steps = 6
proj.steps = 4
eval.seeds = 1
eval.tuning_seeds = 1
eval.reference_size = 32
eval.embed_steps = 3
";

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_compbind"))
}

fn run(dir: &Path, args: &[&str]) -> Output {
    let out = bin().current_dir(dir).args(args).output().unwrap();
    out
}

fn ok(dir: &Path, args: &[&str]) {
    let out = run(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn tiny_dir() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("tiny.cfg"), TINY).unwrap();
    dir
}

fn read(p: PathBuf) -> Vec<u8> {
    fs::read(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

#[test]
fn gen_data_is_deterministic() {
    let dir = tiny_dir();
    let d = dir.path();
    ok(d, &["gen-data", "--config", "tiny.cfg", "--out", "a", "--seed", "7"]);
    ok(d, &["gen-data", "--config", "tiny.cfg", "--out", "b", "--seed", "7"]);
    assert_eq!(read(d.join("a/corpus.cbd")), read(d.join("b/corpus.cbd")));
    assert_eq!(read(d.join("a/gen-data.manifest")), read(d.join("b/gen-data.manifest")));
    ok(d, &["gen-data", "--config", "tiny.cfg", "--out", "c", "--seed", "8"]);
    assert_ne!(read(d.join("a/corpus.cbd")), read(d.join("c/corpus.cbd")));
    let manifest = String::from_utf8(read(d.join("a/gen-data.manifest"))).unwrap();
    assert!(manifest.contains("command=gen-data"));
    assert!(manifest.contains("seed=7"));
    assert!(manifest.contains("output.corpus.cbd=sha256:"));
    let echoed = String::from_utf8(read(d.join("a/gen-data.config"))).unwrap();
    assert!(echoed.contains("corpus.n_samples = 48"));
    assert!(echoed.contains("proj.lr = 0.001"));
}

#[test]
fn rerunning_into_the_same_directory_is_idempotent_but_never_overwrites() {
    let dir = tiny_dir();
    let d = dir.path();
    ok(d, &["gen-data", "--config", "tiny.cfg", "--out", "a", "--seed", "1"]);
    ok(d, &["gen-data", "--config", "tiny.cfg", "--out", "a", "--seed", "1"]);
    let before = read(d.join("a/corpus.cbd"));
    let out = run(d, &["gen-data", "--config", "tiny.cfg", "--out", "a", "--seed", "2"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(read(d.join("a/corpus.cbd")), before);
    assert!(!d.join("a/.staging-gen-data").exists());
}

#[test]
fn usage_and_validation_errors_exit_with_one() {
    let dir = tiny_dir();
    let d = dir.path();
    for args in [
        vec!["frobnicate"],
        vec!["gen-data", "--bogus"],
        vec!["gen-data", "--threads", "x"],
        vec!["gen-data", "--threads", "0"],
    ] {
        let out = run(d, &args);
        assert_eq!(out.status.code(), Some(1), "{args:?}");
        assert!(!out.stderr.is_empty());
    }
    fs::write(d.join("bad.cfg"), "corpus.colour = red\n").unwrap();
    let out = run(d, &["gen-data", "--config", "bad.cfg"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("corpus.colour"));

    let out = run(d, &["train-wiclp", "--encoder", "e.ckpt", "--denoiser", "nowhere/d.ckpt", "--data", "c.cbd"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("e.ckpt"));

    let out = run(d, &["sample", "--encoder", "e", "--denoiser", "d", "--prompt", "a red square", "--tau", "0.5"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(bin().arg("--help").output().unwrap().status.code(), Some(0));
}

#[test]
fn missing_denoiser_is_named() {
    let dir = tiny_dir();
    let d = dir.path();
    ok(d, &["gen-data", "--config", "tiny.cfg", "--out", "m", "--clean"]);
    ok(d, &["pretrain", "--config", "tiny.cfg", "--out", "m", "--data", "m/clean.cbd"]);
    let out = run(d, &[
        "train-wiclp", "--config", "tiny.cfg", "--out", "m", "--encoder", "m/encoder.ckpt", "--denoiser", "m/none.ckpt", "--data", "m/clean.cbd",
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("m/none.ckpt"));
}

/// Every command on a tiny configuration, twice, into separate directories.
fn full_run(d: &Path, out: &str) {
    let o = |f: &str| format!("{out}/{f}");
    let base = ["--config", "tiny.cfg", "--out", out, "--seed", "3", "--threads", "1"];
    let with = |extra: &[&str]| -> Vec<String> {
        extra.iter().chain(base.iter()).map(|s| s.to_string()).collect()
    };
    let go = |args: Vec<String>| {
        let refs: Vec<&str> = args.iter().map(String::as_str).collect();
        ok(d, &refs);
    };
    let (enc, den) = (o("encoder.ckpt"), o("denoiser.ckpt"));
    let models = ["--encoder", enc.as_str(), "--denoiser", den.as_str()];
    let m = |extra: &[&str]| -> Vec<String> {
        let mut v: Vec<&str> = extra.to_vec();
        v.extend_from_slice(&models);
        with(&v)
    };
    go(with(&["gen-data"]));
    go(with(&["gen-data", "--clean"]));
    go(with(&["pretrain", "--data", &o("corpus.cbd")]));
    go(with(&["analyze-attn", "--encoder", &enc, "--against", &enc, "--tags", "x,y"]));
    go(m(&["reweight-search"]));
    go(m(&["optimize-embed", "--prompt", "a red square and a blue circle"]));
    go(m(&["train-clp", "--data", &o("clean.cbd")]));
    go(m(&["train-wiclp", "--data", &o("clean.cbd")]));
    go(m(&["sample", "--prompt", "a green triangle and a red square", "--n", "2", "--proj", &o("wiclp.ckpt"), "--tau", "0.5", "--record", "8,1"]));
    go(m(&["eval", "--reweight", &o("reweight.params")]));
    go(m(&["tradeoff", "--proj", &o("wiclp.ckpt"), "--taus", "0,0.2,0.4,0.6,0.8,1.0"]));
    go(m(&["table", "--clp", &o("clp.ckpt"), "--wiclp", &o("wiclp.ckpt"), "--reweight", &o("reweight.params")]));
}

fn files(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(p) = stack.pop() {
        for e in fs::read_dir(&p).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

#[test]
fn every_command_reproduces_byte_identical_artifacts() {
    let dir = tiny_dir();
    let d = dir.path();
    full_run(d, "r1");
    full_run(d, "r2");
    let (a, b) = (files(&d.join("r1")), files(&d.join("r2")));
    assert_eq!(a, b);
    for f in &a {
        let (x, y) = (read(d.join("r1").join(f)), read(d.join("r2").join(f)));
        if f.extension().is_some_and(|e| e == "manifest") {
            // Manifests name their input paths, which differ by directory.
            let x = String::from_utf8(x).unwrap().replace("r1/", "r2/");
            assert_eq!(x, String::from_utf8(y).unwrap(), "{}", f.display());
        } else {
            assert_eq!(x, y, "{}", f.display());
        }
    }
    let names: Vec<String> = a.iter().map(|p| p.display().to_string()).collect();
    for expected in [
        "corpus.cbd", "clean.cbd", "encoder.ckpt", "denoiser.ckpt", "pretrain_loss.csv", "unintended.csv", "unintended_hist.png",
        "reweight_grid.csv", "reweight.params", "reweight_eval.csv", "embedding.ckpt", "embed_loss.csv", "embed_scores.csv",
        "clp.ckpt", "wiclp.ckpt", "wiclp_loss.csv", "sample_0.png", "sample_1.png", "scores.csv", "eval_table.csv",
        "tradeoff.csv", "tradeoff.png", "table.csv", "table.manifest",
    ] {
        assert!(names.iter().any(|n| n == expected), "missing {expected}");
    }
    assert!(names.iter().any(|n| n.starts_with("heatmaps/x/p000_0")));
    assert!(names.iter().any(|n| n.starts_with("cross_attn/sample_1_block0_t8")));

    let tradeoff = String::from_utf8(read(d.join("r1/tradeoff.csv"))).unwrap();
    assert_eq!(tradeoff.lines().next().unwrap(), "tau_fraction,mean_score,fid_proxy,n");
    assert_eq!(tradeoff.lines().count(), 7);
    let table = String::from_utf8(read(d.join("r1/table.csv"))).unwrap();
    // baseline, reweight, CLP, WiCLP and Switch-Off, three categories each.
    assert_eq!(table.lines().count(), 1 + 5 * 3);
    let grid = String::from_utf8(read(d.join("r1/reweight_grid.csv"))).unwrap();
    assert_eq!(grid.lines().count(), 28);

    // Inputs are hashed into the manifest of every consumer.
    let m = String::from_utf8(read(d.join("r1/train-wiclp.manifest"))).unwrap();
    assert!(m.contains("input.encoder=r1/encoder.ckpt sha256:"));
    assert!(m.contains("input.data=r1/clean.cbd sha256:"));
}
