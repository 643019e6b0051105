use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const TOY_MODEL: [&str; 12] = [
    "--set",
    "lift_width=8",
    "--set",
    "widths=8,8,8,8",
    "--set",
    "ratios=0.5,0.5,0.5,0.5",
    "--set",
    "k=6",
    "--set",
    "head_widths=8",
    "--set",
    "seg_head_width=8",
];

fn dunet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dunet")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = dunet(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str]) -> i32 {
    dunet(args).status.code().expect("exit code")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn gen_seg(dir: &Path, count: &str) -> std::path::PathBuf {
    let data = dir.join("data");
    ok(&[
        "gen-data",
        "--family",
        "seg-composites",
        "--n",
        "64",
        "--per-class",
        count,
        "--seed",
        "3",
        "--out",
        s(&data),
    ]);
    data
}

fn train_seg(data: &Path, out: &Path) {
    let mut args = vec![
        "train", "--task", "seg", "--data", s(data), "--epochs", "2", "--batch-size", "2", "--seed", "7", "--out", s(out),
    ];
    args.extend(TOY_MODEL);
    ok(&args);
}

#[test]
fn seeded_training_reruns_are_identical_and_reload() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen_seg(dir.path(), "6");
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    train_seg(&data, &a);
    train_seg(&data, &b);
    let csv = fs::read_to_string(a.join("metrics.csv")).unwrap();
    assert_eq!(csv, fs::read_to_string(b.join("metrics.csv")).unwrap());
    assert!(csv.starts_with("epoch,split,"));
    assert_eq!(fs::read(a.join("model.ckpt")).unwrap(), fs::read(b.join("model.ckpt")).unwrap());

    let (ea, eb) = (dir.path().join("ea.csv"), dir.path().join("eb.csv"));
    for out in [&ea, &eb] {
        ok(&["eval", "--ckpt", s(&a.join("model.ckpt")), "--data", s(&data), "--votes", "2", "--out", s(out)]);
    }
    let scores = fs::read_to_string(&ea).unwrap();
    assert_eq!(scores, fs::read_to_string(&eb).unwrap());
    assert_eq!(scores.lines().count(), 7);
}

#[test]
fn bad_arguments_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen_seg(dir.path(), "2");
    let out = dir.path().join("o");
    assert_eq!(code(&["train", "--task", "seg", "--data", s(&data), "--epochs", "0", "--out", s(&out)]), 2);
    let missing = dir.path().join("nowhere");
    assert_eq!(code(&["train", "--task", "seg", "--data", s(&missing), "--out", s(&out)]), 2);
    assert_eq!(code(&["train", "--task", "seg", "--data", s(&data), "--set", "widths=", "--out", s(&out)]), 2);
    assert_eq!(code(&["eval", "--ckpt", s(&missing), "--data", s(&data)]), 2);
}

#[test]
fn edge_experiment_signs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("edge.csv");
    ok(&["edge-experiment", "--weights", "-0.5,-0.1,0,0.1,0.5", "--out", s(&out)]);
    let text = fs::read_to_string(&out).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("w,delta_grad,sign"));
    for line in lines {
        let f: Vec<&str> = line.split(',').collect();
        let (w, delta): (f64, f64) = (f[0].parse().unwrap(), f[1].parse().unwrap());
        if w == 0.0 {
            assert!(delta.abs() < 1e-12);
        } else {
            assert_eq!(delta.signum(), -w.signum(), "{line}");
        }
    }
}

#[test]
fn diffuse_logs_contrast_and_rejects_unstable_steps() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("two");
    ok(&["gen-data", "--family", "two-region", "--n", "200", "--per-class", "1", "--out", s(&data)]);
    let cloud = fs::read_dir(&data).unwrap().next().unwrap().unwrap().path();
    let out = dir.path().join("pm.csv");
    ok(&["diffuse", "--diffusivity", "pm", "--lambda", "0.1", "--steps", "10", "--cloud", s(&cloud), "--out", s(&out)]);
    let text = fs::read_to_string(&out).unwrap();
    assert_eq!(text.lines().next(), Some("step,ratio"));
    assert_eq!(text.lines().count(), 12);

    let bad = dir.path().join("bad.csv");
    assert_eq!(code(&["diffuse", "--diffusivity", "const", "--tau", "2", "--cloud", s(&cloud), "--out", s(&bad)]), 3);
    assert!(!bad.exists());
}

#[test]
fn smoothness_writes_one_row_per_point_and_valid_svg() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen_seg(dir.path(), "2");
    let run = dir.path().join("run");
    train_seg(&data, &run);
    let cloud = fs::read_dir(&data).unwrap().next().unwrap().unwrap().path();
    let prefix = dir.path().join("sm");
    let ckpt = run.join("model.ckpt");
    let stdout = ok(&["smoothness", "--ckpt", s(&ckpt), "--cloud", s(&cloud), "--layer", "decoder/level0/du", "--out", s(&prefix)]);
    assert!(stdout.contains("boundary/interior"));
    for tag in ["before", "after"] {
        let csv = fs::read_to_string(dir.path().join(format!("sm_{tag}.csv"))).unwrap();
        assert_eq!(csv.lines().next(), Some("x,y,z,smoothness,label"));
        assert_eq!(csv.lines().count(), 65);
        let svg = fs::read_to_string(dir.path().join(format!("sm_{tag}.svg"))).unwrap();
        assert!(svg.starts_with("<?xml"));
        assert!(svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches("<circle").count(), 64);
        assert_eq!(svg.matches('<').count(), svg.matches('>').count());
    }
    let bad = dunet(&["smoothness", "--ckpt", s(&ckpt), "--cloud", s(&cloud), "--layer", "nope", "--out", s(&prefix)]);
    assert_eq!(bad.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("decoder/level0/du"));
}
