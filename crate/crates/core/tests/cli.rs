use std::path::Path;
use std::process::{Command, Output};

use image::{GrayImage, Luma, RgbImage};
use svam::data;
use svam::metrics;

fn svam(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_svam"))
        .current_dir(dir)
        .env("SVAM_THREADS", "2")
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn train_toy(dir: &Path, stage: &str, out: &str, extra: &[&str]) -> Output {
    let mut args = vec!["train", "--stage", stage, "--data", "toy", "--seed", "7", "--out", out];
    if !extra.contains(&"--epochs") {
        args.extend_from_slice(&["--epochs", "2"]);
    }
    args.extend_from_slice(extra);
    svam(dir, &args)
}

#[test]
fn train_is_deterministic_and_warns_without_pretraining() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    data::write_synthetic(d.join("toy"), 4, 64, 1).unwrap();

    let a = train_toy(d, "pretrain", "a.weights", &[]);
    assert_eq!(code(&a), 0, "{}", stderr(&a));
    let b = train_toy(d, "pretrain", "b.weights", &[]);
    assert_eq!(code(&b), 0);
    assert_eq!(std::fs::read(d.join("a.weights")).unwrap(), std::fs::read(d.join("b.weights")).unwrap());
    let log = std::fs::read_to_string(d.join("a.csv")).unwrap();
    assert_eq!(log, std::fs::read_to_string(d.join("b.csv")).unwrap());
    assert!(log.starts_with("step,epoch,lr,loss\n"));
    assert_eq!(log.lines().count(), 1 + 2);
    assert!(!log.contains('\r'));

    let scratch = train_toy(d, "e2e", "s.weights", &["--batch-size", "2"]);
    assert_eq!(code(&scratch), 0, "{}", stderr(&scratch));
    assert!(stderr(&scratch).contains("from scratch"), "{}", stderr(&scratch));

    let warm = train_toy(d, "e2e", "w.weights", &["--init", "a.weights"]);
    assert_eq!(code(&warm), 0, "{}", stderr(&warm));
    assert!(!stderr(&warm).contains("from scratch"));
}

#[test]
fn config_file_and_flags() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("run.cfg"), "# toy\nstage = pretrain\nepochs = 1\nbatch_size = 4\nlog = run.csv\n").unwrap();
    let o = svam(d, &["train", "--config", "run.cfg", "--synthetic", "4", "--out", "run.weights"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(std::fs::read_to_string(d.join("run.csv")).unwrap().lines().count(), 2);

    let o = svam(d, &["train", "--config", "run.cfg", "--synthetic", "4", "--epochs", "2", "--out", "run.weights"]);
    assert_eq!(code(&o), 0);
    assert_eq!(std::fs::read_to_string(d.join("run.csv")).unwrap().lines().count(), 3);

    std::fs::write(d.join("typo.cfg"), "stage = pretrain\nlamda_b = 0.3\n").unwrap();
    let o = svam(d, &["train", "--config", "typo.cfg", "--synthetic", "4"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("lamda_b"), "{}", stderr(&o));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();

    assert_eq!(code(&svam(d, &["frobnicate"])), 1);
    assert_eq!(code(&svam(d, &["train", "--synthetic", "2"])), 1);
    assert_eq!(code(&svam(d, &["train", "--stage", "pretrain", "--synthetic", "2", "--set", "width_scale=3"])), 1);
    assert_eq!(code(&svam(d, &["train", "--stage", "pretrain", "--data", "missing"])), 2);
    assert_eq!(code(&svam(d, &["infer", "--weights", "nope.weights", "x.png", "-o", "y.png"])), 2);
    assert_eq!(code(&svam(d, &["eval", "p", "g"])), 2);

    let nan = svam(d, &["train", "--stage", "pretrain", "--synthetic", "2", "--epochs", "3", "--lr", "1e30"]);
    assert_eq!(code(&nan), 3, "{}", stderr(&nan));
    assert!(stderr(&nan).contains("non-finite"));

    let mut threads = Command::new(env!("CARGO_BIN_EXE_svam"));
    let o = threads.current_dir(d).env("SVAM_THREADS", "0").arg("describe").output().unwrap();
    assert_eq!(code(&o), 1);

    assert_eq!(code(&svam(d, &["--help"])), 0);
}

#[test]
fn gradcheck_command() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let a = svam(d, &["gradcheck", "--seed", "3"]);
    assert_eq!(code(&a), 0, "{}{}", stdout(&a), stderr(&a));
    assert!(stdout(&a).contains("svam_e2e"));
    assert!(!stdout(&a).contains("FAIL"));
    let b = svam(d, &["gradcheck", "--seed", "3"]);
    assert_eq!(stdout(&a), stdout(&b));

    let bad = svam(d, &["gradcheck", "--corrupt", "upsample_x4"]);
    assert_eq!(code(&bad), 4);
    assert!(stderr(&bad).contains("upsample_x4"), "{}", stderr(&bad));

    assert_eq!(code(&svam(d, &["gradcheck", "--corrupt", "nope"])), 1);
}

#[test]
fn infer_then_eval() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    data::write_synthetic(d.join("toy"), 3, 64, 2).unwrap();
    let t = train_toy(d, "e2e", "m.weights", &["--epochs", "1"]);
    assert_eq!(code(&t), 0, "{}", stderr(&t));

    let o = svam(d, &["infer", "--weights", "m.weights", "--variant", "light", "toy/images", "-o", "light", "--contour"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(stdout(&o).lines().count(), 3);
    for stem in ["000", "001", "002"] {
        let map = image::open(d.join(format!("light/{stem}.png"))).unwrap();
        assert_eq!((map.width(), map.height()), (64, 64));
        assert!(d.join(format!("light/{stem}_contour.png")).exists());
    }
    let o = svam(d, &["infer", "--weights", "m.weights", "--variant", "full", "toy/images", "-o", "full"]);
    assert_eq!(code(&o), 0);
    let o = svam(d, &["infer", "--weights", "m.weights", "toy/images/000.png", "-o", "single.pgm"]);
    assert_eq!(code(&o), 0);
    assert_eq!(&std::fs::read(d.join("single.pgm")).unwrap()[..2], b"P5");

    let o = svam(d, &["eval", "full", "toy/masks", "--pr-csv", "out/pr.csv"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let lib = metrics::evaluate_dataset(d.join("full"), d.join("toy/masks")).unwrap();
    assert_eq!(stdout(&o).lines().next().unwrap(), lib.summary());
    let csv = std::fs::read_to_string(d.join("out/pr.csv")).unwrap();
    assert_eq!(csv.lines().count(), 257);
    assert_eq!(csv, lib.pr.to_csv());

    let o = svam(d, &["eval", "toy/masks", "toy/masks", "--pr-csv", "same.csv"]);
    assert_eq!(stdout(&o).lines().next().unwrap(), "Fmax=1.0000 Sm=1.0000 MAE=0.0000");
}

#[test]
fn roi_command() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let img = RgbImage::from_fn(512, 256, |x, y| image::Rgb([(x % 256) as u8, (y % 256) as u8, 90]));
    img.save(d.join("scene.png")).unwrap();
    let map = GrayImage::from_fn(256, 128, |x, y| Luma([if (50..200).contains(&x) && (20..100).contains(&y) { 255 } else { 0 }]));
    map.save(d.join("map.png")).unwrap();

    let o = svam(d, &["roi", "map.png", "scene.png", "--patch", "256", "--out", "patches"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let rows: Vec<String> = stdout(&o).lines().map(String::from).collect();
    assert_eq!(rows.len(), 2, "{rows:?}");
    assert!(rows[1].contains("512x256+0+0"), "{}", rows[1]);
    let manifest = std::fs::read_to_string(d.join("patches/roi_000/manifest.csv")).unwrap();
    assert_eq!(manifest, "index,x0,y0,width,height\n0,0,0,256,256\n1,256,0,256,256\n");
    assert!(d.join("patches/roi_000/patch_001.png").exists());

    GrayImage::new(64, 32).save(d.join("blank.png")).unwrap();
    let o = svam(d, &["roi", "blank.png", "scene.png"]);
    assert_eq!(code(&o), 0);
    assert_eq!(stdout(&o).trim(), "no salient regions");

    assert_eq!(code(&svam(d, &["roi", "missing.png", "scene.png"])), 2);
}

#[test]
fn describe_command() {
    let dir = tempfile::tempdir().unwrap();
    let o = svam(dir.path(), &["describe", "--input-size", "256", "--width-scale", "1"]);
    assert_eq!(code(&o), 0);
    let text = stdout(&o);
    assert!(text.contains("e5.conv3.w"), "{text}");
    assert!(text.contains("1x256x256x128"), "{text}");
}
