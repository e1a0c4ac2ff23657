use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use pdn_core::imageio::save_grayscale;
use pdn_core::synthetic::scene;
use tempfile::TempDir;

fn pdn(args: &[&str]) -> Output {
    pdn_env(args, &[])
}

fn pdn_env(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_pdn"));
    cmd.args(args).env_remove("PDN_SEED").env_remove("PDN_THREADS").env("RUST_LOG", "warn");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("failed to launch pdn")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("terminated by signal")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// `n` clean scenes of `size`×`size` written as PGM into a fresh directory.
fn corpus(dir: &Path, name: &str, n: u64, size: usize) -> PathBuf {
    let d = dir.join(name);
    std::fs::create_dir_all(&d).unwrap();
    for i in 0..n {
        save_grayscale(&scene(3, i, size, size).unwrap(), d.join(format!("img{i}.pgm"))).unwrap();
    }
    d
}

#[test]
fn corrupt_is_deterministic_and_seeded() {
    let dir = TempDir::new().unwrap();
    let src = corpus(dir.path(), "c", 1, 24).join("img0.pgm");
    let out = |name: &str, args: &[&str], env: &[(&str, &str)]| {
        let p = dir.path().join(name);
        let mut a = vec!["corrupt", s(&src), s(&p)];
        a.extend_from_slice(args);
        let o = pdn_env(&a, env);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        std::fs::read(p).unwrap()
    };
    let a = out("a.pgm", &["--peak", "4", "--seed", "7"], &[]);
    let b = out("b.pgm", &["--peak", "4", "--seed", "7"], &[]);
    let c = out("c.pgm", &["--peak", "4", "--seed", "8"], &[]);
    assert_eq!(a, b);
    assert_ne!(a, c);
    // environment seed applies, the flag beats it
    let e = out("e.pgm", &["--peak", "4"], &[("PDN_SEED", "7")]);
    assert_eq!(e, a);
    let f = out("f.pgm", &["--peak", "4", "--seed", "8"], &[("PDN_SEED", "7")]);
    assert_eq!(f, c);
}

#[test]
fn config_file_sits_below_flags() {
    let dir = TempDir::new().unwrap();
    let src = corpus(dir.path(), "c", 1, 16).join("img0.pgm");
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "# run settings\npeak=4\nseed=7\n").unwrap();
    let run = |name: &str, extra: &[&str]| {
        let p = dir.path().join(name);
        let mut a = vec!["corrupt", s(&src), s(&p), "--config", s(&cfg)];
        a.extend_from_slice(extra);
        assert_eq!(code(&pdn(&a)), 0);
        std::fs::read(p).unwrap()
    };
    let from_file = run("a.pgm", &[]);
    let explicit = {
        let p = dir.path().join("b.pgm");
        assert_eq!(code(&pdn(&["corrupt", s(&src), s(&p), "--peak", "4", "--seed", "7"])), 0);
        std::fs::read(p).unwrap()
    };
    assert_eq!(from_file, explicit);
    assert_ne!(run("c.pgm", &["--seed", "9"]), from_file);

    std::fs::write(&cfg, "nonsense=1\n").unwrap();
    assert_eq!(code(&pdn(&["corrupt", s(&src), "x.pgm", "--config", s(&cfg)])), 1);
}

#[test]
fn usage_and_runtime_exit_codes() {
    let dir = TempDir::new().unwrap();
    let src = corpus(dir.path(), "c", 1, 16).join("img0.pgm");
    assert_eq!(code(&pdn(&["no-such-command"])), 1);
    assert_eq!(code(&pdn(&["--help"])), 0);
    assert_eq!(code(&pdn(&["corrupt", s(&src), "o.pgm", "--peak", "-1"])), 1);
    assert_eq!(code(&pdn(&["denoise", s(&src), "o.pgm"])), 1, "missing --weights");

    let missing = dir.path().join("missing.pgm");
    let o = pdn(&["corrupt", s(&missing), "o.pgm"]);
    assert_eq!(code(&o), 2);
    assert!(!o.stderr.is_empty());

    let bad = dir.path().join("bad.pdnw");
    std::fs::write(&bad, b"PDNW\x01\0\0\0garbage").unwrap();
    assert_eq!(code(&pdn(&["denoise", s(&src), "o.pgm", "--weights", s(&bad)])), 2);

    let empty = dir.path().join("empty");
    std::fs::create_dir(&empty).unwrap();
    let report = dir.path().join("r.csv");
    let o = pdn(&["evaluate", "--corpus-dir", s(&empty), "--weights", s(&bad), "--report", s(&report)]);
    assert_eq!(code(&o), 2, "weights are read before the corpus");
    let w = dir.path().join("w.pdnw");
    let train_dir = corpus(dir.path(), "t", 2, 40);
    let o = pdn(&[
        "train", "--corpus-dir", s(&train_dir), "--weights", s(&w), "--patch-size", "32", "--epochs", "0",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let o = pdn(&["evaluate", "--corpus-dir", s(&empty), "--weights", s(&w), "--report", s(&report)]);
    assert_eq!(code(&o), 1);
    assert!(!report.exists());
}

#[test]
fn train_denoise_evaluate_and_sweeps() {
    let dir = TempDir::new().unwrap();
    let train_dir = corpus(dir.path(), "train", 4, 40);
    let test_dir = corpus(dir.path(), "test", 2, 40);
    let w = dir.path().join("net.pdnw");
    let train_csv = dir.path().join("out/train.csv");
    let o = pdn(&[
        "train",
        "--corpus-dir", s(&train_dir),
        "--weights", s(&w),
        "--report", s(&train_csv),
        "--output-dir", s(&dir.path().join("ds")),
        "--patch-size", "32",
        "--patches-per-image", "10",
        "--batch-size", "8",
        "--epochs", "2",
        "--seed", "5",
        "--threads", "1",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(&train_csv).unwrap();
    assert!(csv.contains("# command=train\n") && csv.contains("# seed=5\n"));
    assert_eq!(csv.lines().filter(|l| !l.starts_with('#')).count(), 3);
    assert!(dir.path().join("ds/patches.manifest").exists());

    // denoise a corrupted test image
    let noisy = dir.path().join("noisy.pgm");
    let src = test_dir.join("img0.pgm");
    assert_eq!(code(&pdn(&["corrupt", s(&src), s(&noisy), "--seed", "1"])), 0);
    let den = dir.path().join("den.png");
    let o = pdn(&["denoise", s(&noisy), s(&den), "--weights", s(&w), "--stride", "8"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let img = pdn_core::imageio::load_grayscale(&den).unwrap();
    assert_eq!((img.width(), img.height()), (40, 40));

    // wrong peak warns but runs
    let o = pdn_env(&["denoise", s(&noisy), s(&den), "--weights", s(&w), "--peak", "2"], &[("RUST_LOG", "warn")]);
    assert_eq!(code(&o), 0);
    assert!(String::from_utf8_lossy(&o.stderr).contains("trained for peak 4"));

    let o = pdn(&["evaluate", "--corpus-dir", s(&test_dir), "--weights", s(&w), "--stride", "8"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let out = String::from_utf8(o.stdout).unwrap();
    let body: Vec<&str> = out.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(body[0], "image_id,baseline_psnr_db,candidate_psnr_db,gain_db");
    assert!(body[1].starts_with("img0,"));
    for key in ["mean_gain", "t_stat", "p_value", "win_rate"] {
        assert!(body.iter().any(|l| l.starts_with(key)), "{key}");
    }

    let o = pdn(&["sweep-stride", "--corpus-dir", s(&test_dir), "--weights", s(&w)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let out = String::from_utf8(o.stdout).unwrap();
    let rows: Vec<Vec<&str>> = out
        .lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(|l| l.split(',').collect())
        .collect();
    let strides: Vec<&str> = rows.iter().map(|r| r[0]).collect();
    assert_eq!(strides, ["1", "2", "4", "8", "16", "32"]);
    // (40 - 32) / s + 1 anchors per axis, plus the closing one when s does not divide 8
    let counts: Vec<&str> = rows.iter().map(|r| r[1]).collect();
    assert_eq!(counts, ["81", "25", "9", "4", "4", "4"]);
}

#[test]
fn sweep_peak_uses_one_file_per_peak() {
    let dir = TempDir::new().unwrap();
    let train_dir = corpus(dir.path(), "train", 2, 32);
    for peak in ["1", "2", "4", "8", "16"] {
        let w = dir.path().join(format!("net_{peak}.pdnw"));
        let o = pdn(&[
            "train", "--corpus-dir", s(&train_dir), "--weights", s(&w), "--patch-size", "32", "--epochs", "0",
            "--peak", peak,
        ]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    let template = dir.path().join("net_{peak}.pdnw");
    let report = dir.path().join("peaks.csv");
    let o = pdn(&[
        "sweep-peak", "--corpus-dir", s(&train_dir), "--weights", s(&template), "--stride", "32", "--report",
        s(&report),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(&report).unwrap();
    let body: Vec<&str> = csv.lines().filter(|l| !l.starts_with('#')).collect();
    assert!(body[0].ends_with(",win_rate"));
    let peaks: Vec<&str> = body[1..].iter().map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(peaks, ["1", "2", "4", "8", "16"]);

    let o = pdn(&["sweep-peak", "--corpus-dir", s(&train_dir), "--weights", s(&dir.path().join("net_4.pdnw"))]);
    assert_eq!(code(&o), 1);
}

#[test]
fn selftest_passes() {
    let o = pdn(&["selftest"]);
    assert_eq!(code(&o), 0);
    let out = String::from_utf8(o.stdout).unwrap();
    assert!(out.lines().count() >= 10);
    assert!(out.lines().all(|l| l.starts_with("PASS ")), "{out}");
}
