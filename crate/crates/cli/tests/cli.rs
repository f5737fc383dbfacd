use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn hfmm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hfmm")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = hfmm(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("hfmm-cli-{}-{name}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn field(stdout: &str, key: &str) -> f64 {
    let line = stdout.lines().find(|l| l.starts_with(key)).unwrap();
    line[key.len()..].split_whitespace().next().unwrap().parse().unwrap()
}

#[test]
fn gen_writes_grid_with_header() {
    let dir = scratch("gen");
    let (a, b) = (dir.join("a.txt"), dir.join("b.txt"));
    ok(&["gen", "--geometry", "grid:8", "--seed", "4", "-o", s(&a)]);
    ok(&["gen", "--geometry", "grid:8", "--seed", "4", "-o", s(&b)]);
    let text = fs::read_to_string(&a).unwrap();
    assert!(text.lines().any(|l| l == "# count 1024"));
    assert_eq!(text.lines().filter(|l| !l.starts_with('#')).count(), 1024);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());

    let c = dir.join("c.txt");
    ok(&["gen", "--geometry", "grid:8", "--seed", "5", "-o", s(&c)]);
    assert_ne!(fs::read(&a).unwrap(), fs::read(&c).unwrap());
}

#[test]
fn bad_geometry_is_an_error() {
    let dir = scratch("badgeo");
    for g in ["ring:4", "grid:-1", "grid:4:0.25:1", "grid"] {
        assert!(!hfmm(&["gen", "--geometry", g, "-o", s(&dir.join("x"))]).status.success(), "{g}");
    }
}

#[test]
fn verify_volume_meets_three_digits() {
    let dir = scratch("verify");
    let f = dir.join("v.txt");
    ok(&["gen", "--geometry", "volume:2", "-o", s(&f)]);
    let out = ok(&["verify", s(&f), "--ranks", "3", "--leaf-diameter", "0.125"]);
    assert_eq!(field(&out, "particles"), 512.0);
    assert!(field(&out, "relative rms error") <= 1e-3, "{out}");
}

#[test]
fn verify_error_shrinks_with_digits() {
    let dir = scratch("digits");
    let f = dir.join("g.txt");
    ok(&["gen", "--geometry", "grid:4", "-o", s(&f)]);
    let lo = field(&ok(&["verify", s(&f), "--digits", "2"]), "relative rms error");
    let hi = field(&ok(&["verify", s(&f), "--digits", "4"]), "relative rms error");
    assert!(hi < lo && hi <= 1e-4, "{lo} {hi}");
}

#[test]
fn zero_intensities_verify_cleanly() {
    let dir = scratch("zero");
    let f = dir.join("z.txt");
    let mut text = String::new();
    for i in 0..8 {
        for j in 0..8 {
            text.push_str(&format!("{} {} 0 0 0\n", i as f64 * 0.25, j as f64 * 0.25));
        }
    }
    fs::write(&f, text).unwrap();
    let out = ok(&["verify", s(&f), "--ranks", "2"]);
    assert_eq!(field(&out, "relative rms error"), 0.0);
}

#[test]
fn verify_guard_needs_force() {
    let dir = scratch("guard");
    let f = dir.join("g.txt");
    ok(&["gen", "--geometry", "grid:2", "-o", s(&f)]);
    let out = hfmm(&["verify", s(&f), "--max-particles", "10"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("--force"));
    ok(&["verify", s(&f), "--max-particles", "10", "--force"]);
}

#[test]
fn malformed_input_is_rejected() {
    let dir = scratch("malformed");
    let f = dir.join("m.txt");
    fs::write(&f, "0 0 0 1\n").unwrap();
    assert!(!hfmm(&["eval", s(&f)]).status.success());
    fs::write(&f, "0 0 0 1 0\n0 0 0 1 0\n").unwrap();
    assert!(!hfmm(&["eval", s(&f)]).status.success());
}

#[test]
fn eval_output_is_layout_independent() {
    let dir = scratch("eval");
    let f = dir.join("g.txt");
    ok(&["gen", "--geometry", "grid:4", "-o", s(&f)]);
    let (a, b) = (dir.join("a.txt"), dir.join("b.txt"));
    let ledger = dir.join("ledger.json");
    ok(&["eval", s(&f), "-o", s(&a), "--ledger", s(&ledger)]);
    ok(&["eval", s(&f), "-o", s(&b), "--ranks", "5", "--alignment", "rank-ordered", "--buffer-bytes", "64"]);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    assert_eq!(fs::read_to_string(&a).unwrap().lines().count(), 256);
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(&ledger).unwrap()).unwrap();
    assert!(json.is_object());
}

#[test]
fn scale_report_round_trip() {
    let dir = scratch("scale");
    let out = dir.join("study");
    let stdout = ok(&[
        "scale", "--geometry", "grid:4", "--geometry", "grid:8", "--ranks", "1,2,4", "-o", s(&out),
    ]);
    assert!(stdout.lines().any(|l| l.contains("N_p   1") && l.ends_with("eff 1.00")), "{stdout}");
    let names = ["scaling.csv", "ledger.csv", "fits.csv", "alignment.csv", "memory.csv", "failures.txt"];
    let before: Vec<Vec<u8>> = names.iter().map(|n| fs::read(out.join(n)).unwrap()).collect();
    ok(&["report", s(&out)]);
    for (n, b) in names.iter().zip(&before) {
        assert_eq!(&fs::read(out.join(n)).unwrap(), b, "{n} changed on regeneration");
    }
    let scaling = fs::read_to_string(out.join("scaling.csv")).unwrap();
    assert_eq!(scaling.lines().count(), 1 + 2 * 3 * 2);
}

#[test]
fn predict_prints_json() {
    let stdout = ok(&["predict", "--n-s", "4096", "--p", "4", "--levels", "7"]);
    let json: serde_json::Value = serde_json::from_str(&stdout).unwrap();
    assert_eq!(json["n_levels"], 7);
    assert!(json["m2l"].is_object());
    assert!(!hfmm(&["predict", "--n-s", "0", "--p", "4", "--levels", "7"]).status.success());
}

#[test]
fn tree_dump_lists_ranks() {
    let dir = scratch("dump");
    let f = dir.join("g.txt");
    ok(&["gen", "--geometry", "grid:4", "-o", s(&f)]);
    let stdout = ok(&["tree-dump", s(&f), "--ranks", "3"]);
    let json: serde_json::Value = serde_json::from_str(&stdout).unwrap();
    assert_eq!(json["ranks"].as_array().unwrap().len(), 3);
}
