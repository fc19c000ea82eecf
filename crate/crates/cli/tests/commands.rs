#[path = "../../kitti/tests/oracle/mod.rs"]
mod oracle;

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dfr_cli::{Checkpoint, RunConfig};
use dfr_core::ToyDetector;
use dfr_kitti::Difficulty;
use dfr_tensor::OpKind;

fn dfrnet(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dfrnet"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn text(b: &[u8]) -> String {
    String::from_utf8_lossy(b).into_owned()
}

fn fixture_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../kitti/tests/data/fixture3")
}

fn fixture(sub: &str) -> PathBuf {
    fixture_root().join(sub)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read_json(p: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

fn aps(summary: &serde_json::Value) -> Vec<Option<f64>> {
    summary["records"].as_array().unwrap().iter().map(|r| r["ap"].as_f64()).collect()
}

#[test]
fn eval_perfect_and_empty() {
    let tmp = tempfile::tempdir().unwrap();
    let gt = fixture("gt");
    let out = tmp.path().join("perfect");
    let o = dfrnet(&["eval", "--gt", s(&gt), "--det", s(&gt), "--out", s(&out)], tmp.path());
    assert!(o.status.success(), "{}", text(&o.stderr));
    let stdout = text(&o.stdout);
    assert!(stdout.contains("Easy") && stdout.contains("Mod.") && stdout.contains("AP_BEV"));
    let summary = read_json(&out.join("eval_summary.json"));
    let got = aps(&summary);
    assert_eq!(got.len(), 6);
    assert!(got.iter().flatten().all(|&v| v == 1.0), "{got:?}");
    assert_eq!(stdout.matches("1.000").count(), got.iter().flatten().count());

    let empty = tmp.path().join("empty");
    std::fs::create_dir(&empty).unwrap();
    let out = tmp.path().join("none");
    let o = dfrnet(&["eval", "--gt", s(&gt), "--det", s(&empty), "--out", s(&out)], tmp.path());
    assert!(o.status.success());
    let got = aps(&read_json(&out.join("eval_summary.json")));
    assert!(got.iter().flatten().all(|&v| v == 0.0), "{got:?}");
}

#[test]
fn eval_fixture_matches_brute_force() {
    let tmp = tempfile::tempdir().unwrap();
    let f = oracle::load_fixture(&fixture_root());
    for (mode, iou) in [("r40", "0.7"), ("r11", "0.5")] {
        let out = tmp.path().join(mode);
        let o = dfrnet(
            &[
                "eval", "--gt", s(&fixture("gt")), "--det", s(&fixture("det")), "--category", "car", "--iou", iou,
                "--mode", mode, "--out", s(&out),
            ],
            tmp.path(),
        );
        assert!(o.status.success(), "{}", text(&o.stderr));
        let summary = read_json(&out.join("eval_summary.json"));
        let mut k = 0;
        for bev in [false, true] {
            for d in [Difficulty::Easy, Difficulty::Moderate, Difficulty::Hard] {
                let spec = oracle::OracleSpec {
                    category: "Car",
                    ignored_neighbour: Some("Van"),
                    difficulty: Some(d),
                    iou: iou.parse().unwrap(),
                    bev,
                };
                let want = oracle::brute_force_ap(&f, &spec, mode == "r40");
                let got = summary["records"][k]["ap"].as_f64().unwrap();
                assert_eq!(got, want, "{mode} bev={bev} {d:?}");
                assert!(text(&o.stdout).contains(&format!("{want:.3}")));
                k += 1;
            }
        }
    }
}

#[test]
fn eval_error_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");
    let o = dfrnet(&["eval", "--gt", "no/such/dir", "--det", s(&fixture("det")), "--out", s(&out)], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(text(&o.stderr).contains("no/such/dir"));

    let bad = tmp.path().join("bad");
    std::fs::create_dir(&bad).unwrap();
    std::fs::write(bad.join("000000.txt"), "Car 0.00 0 0.00 0 0 10 10 1.5 1.6 4.0 0 1.7 20 0\nCar 1 2\n").unwrap();
    let o = dfrnet(&["eval", "--gt", s(&bad), "--det", s(&bad), "--out", s(&out)], tmp.path());
    assert_eq!(o.status.code(), Some(3));
    let err = text(&o.stderr);
    assert!(err.contains("000000.txt:2"), "{err}");

    let o = dfrnet(&["eval", "--gt", s(&fixture("gt")), "--category", "truck"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
}

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let p = dir.join("run.toml");
    std::fs::write(&p, body).unwrap();
    p
}

const SMALL: &str = "train.steps = 6\neval.scenes = 4\nmodel.channels = 8\n";

#[test]
fn toy_train_is_reproducible_and_checkpoint_restores() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let run = |out: &str| {
        let o = dfrnet(&["toy-train", "--config", s(&cfg), "--out", out], tmp.path());
        assert!(o.status.success(), "{}", text(&o.stderr));
        tmp.path().join(out)
    };
    let a = run("a");
    let b = run("b");
    let csv_a = std::fs::read(a.join("history.csv")).unwrap();
    assert_eq!(csv_a, std::fs::read(b.join("history.csv")).unwrap());
    assert_eq!(text(&csv_a).lines().count(), 7);
    assert!(text(&csv_a).starts_with("step,l_app,l_loc,s_app,s_loc,total\n"));
    // Rerunning into the same directory overwrites with identical bytes.
    let ckpt_a = std::fs::read(a.join("checkpoint.bin")).unwrap();
    run("a");
    assert_eq!(std::fs::read(a.join("checkpoint.bin")).unwrap(), ckpt_a);

    let ckpt = Checkpoint::from_bytes(&ckpt_a).unwrap();
    assert_eq!(ckpt.to_bytes(), ckpt_a);
    let snapshot = RunConfig::from_toml_str(&ckpt.config).unwrap();
    assert_eq!(snapshot.train.steps, 6);
    assert_eq!(snapshot.train.model.channels, 8);
    let mut det = ToyDetector::new(snapshot.train.model, 999).unwrap();
    ckpt.restore(&mut det.store).unwrap();
    for (p, e) in det.store.iter().zip(&ckpt.entries) {
        assert_eq!(p.name, e.name);
        assert!(p.tensor.data().iter().zip(&e.data).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
    let summary = read_json(&a.join("summary.json"));
    assert_eq!(summary["steps"], 6);
}

#[test]
fn toy_train_config_errors_and_precedence() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &format!("{SMALL}foo = 1\n"));
    let o = dfrnet(&["toy-train", "--config", s(&cfg), "--out", "x"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(text(&o.stderr).contains("`foo`"), "{}", text(&o.stderr));
    assert!(!tmp.path().join("x").exists());

    let cfg = write_config(tmp.path(), &format!("{SMALL}train.seed = 3\nout = \"from-file\"\n"));
    let o = dfrnet(&["toy-train", "--config", s(&cfg), "--seed", "4"], tmp.path());
    assert!(o.status.success(), "{}", text(&o.stderr));
    let snap = std::fs::read_to_string(tmp.path().join("from-file/config.toml")).unwrap();
    assert_eq!(RunConfig::from_toml_str(&snap).unwrap().train.seed, 4);
}

#[test]
fn commands_write_only_inside_out() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "train.steps = 2\neval.scenes = 2\nmodel.channels = 8\nablate.seeds = 2\nablate.sweep = \"clustering\"\n",
    );
    for cmd in ["toy-train", "ablate"] {
        let o = dfrnet(&[cmd, "--config", s(&cfg), "--out", cmd], tmp.path());
        assert!(o.status.success(), "{cmd}: {}", text(&o.stderr));
    }
    let o = dfrnet(&["eval", "--gt", s(&fixture("gt")), "--det", s(&fixture("det")), "--out", "eval"], tmp.path());
    assert!(o.status.success());
    let mut names: Vec<String> = std::fs::read_dir(tmp.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    assert_eq!(names, ["ablate", "eval", "run.toml", "toy-train"]);

    let rows = std::fs::read_to_string(tmp.path().join("ablate/ablation.csv")).unwrap();
    assert_eq!(rows.lines().count(), 1 + 4 * 2);
}

#[test]
fn gradcheck_reports_every_op_and_catches_faults() {
    let tmp = tempfile::tempdir().unwrap();
    let o = dfrnet(&["gradcheck", "--trials", "3"], tmp.path());
    assert!(o.status.success(), "{}{}", text(&o.stdout), text(&o.stderr));
    let stdout = text(&o.stdout);
    let lines: Vec<&str> = stdout.lines().skip(1).collect();
    assert_eq!(lines.len(), dfr_cli::commands::gradcheck_cases().len());
    for k in OpKind::DIFFERENTIABLE {
        let n = lines.iter().filter(|l| l.split_whitespace().next() == Some(k.name())).count();
        assert_eq!(n, 1, "{k}");
    }
    assert!(std::fs::read_dir(tmp.path()).unwrap().next().is_none());

    for op in ["matmul", "softmax", "gather"] {
        let o = dfrnet(&["gradcheck", "--trials", "2", "--inject-fault", op], tmp.path());
        assert_eq!(o.status.code(), Some(1), "{op}");
        let err = text(&o.stderr);
        let listed = err.split(": ").last().unwrap();
        assert!(listed.split(", ").any(|n| n.trim() == op), "{op}: {err}");
    }
    let o = dfrnet(&["gradcheck", "--inject-fault", "frobnicate"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
}
