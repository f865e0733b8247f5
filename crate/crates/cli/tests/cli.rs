use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use lcm::io::{load_image, save_image};
use lcm::Tensor;

fn lcmkit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lcmkit"))
        .args(args)
        .env("LCMKIT_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = lcmkit(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str]) -> i32 {
    lcmkit(args).status.code().expect("exited normally")
}

fn output_dir(stdout: &str) -> PathBuf {
    let line = stdout.lines().find_map(|l| l.strip_prefix("output: ")).expect("output line");
    PathBuf::from(line)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Four 16×16 synthetic images with a manifest.
fn tiny_data(root: &Path) -> PathBuf {
    let dir = root.join("data");
    ok(&["synth-data", "--dir", s(&dir), "--count", "4", "--size", "16", "--seed", "3"]);
    dir
}

fn train_tiny(root: &Path, data: &Path, extra: &[&str]) -> PathBuf {
    let manifest = data.join("manifest.json");
    let runs = root.join("runs");
    let mut args = vec![
        "train",
        "--manifest",
        s(&manifest),
        "--preset",
        "tiny16",
        "--max-steps",
        "3",
        "--batch-size",
        "2",
        "--out",
        s(&runs),
    ];
    args.extend_from_slice(extra);
    output_dir(&ok(&args))
}

#[test]
fn prepare_data_lists_pngs_and_is_idempotent() {
    let tmp = tempfile::tempdir().unwrap();
    let src = tmp.path().join("src");
    std::fs::create_dir(&src).unwrap();
    for (i, name) in ["b.png", "a.png", "c.png"].iter().enumerate() {
        let img = Tensor::<f32>::full(&[1, 3, 6, 5], 0.2 * i as f32).unwrap();
        save_image(&img, &src.join(name)).unwrap();
    }
    std::fs::write(src.join("notes.txt"), "not an image").unwrap();
    let manifest = tmp.path().join("m.json");
    let out = ok(&["prepare-data", "--src", s(&src), "--manifest", s(&manifest), "--shape", "3,8,8"]);
    assert!(out.contains("3 entries (1 files skipped)"), "{out}");
    let first = std::fs::read(&manifest).unwrap();
    let m = lcm::io::DatasetManifest::load(&manifest).unwrap();
    assert_eq!(m.ids(), ["a", "b", "c"]);
    ok(&["prepare-data", "--src", s(&src), "--manifest", s(&manifest), "--shape", "3,8,8"]);
    assert_eq!(std::fs::read(&manifest).unwrap(), first);

    let empty = tmp.path().join("empty");
    std::fs::create_dir(&empty).unwrap();
    assert_eq!(code(&["prepare-data", "--src", s(&empty), "--manifest", s(&manifest)]), 1);
}

#[test]
fn zero_lr_training_is_a_no_op() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tiny_data(tmp.path());
    let dir = train_tiny(tmp.path(), &data, &["--lr-latent", "0", "--lr-generator", "0"]);
    let summary: toml::Table = std::fs::read_to_string(dir.join("summary.toml")).unwrap().parse().unwrap();
    assert_eq!(summary["initial_loss"], summary["final_loss"]);
    assert_eq!(summary["steps"].as_integer(), Some(3));
    assert!(dir.join("final.lcmk").is_file());
    assert!(dir.join("effective-config.toml").is_file());
}

#[test]
fn training_is_deterministic_and_rerunnable_from_its_echo() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tiny_data(tmp.path());
    let dir = train_tiny(tmp.path(), &data, &["--seed", "5"]);
    let loss = std::fs::read(dir.join("loss.csv")).unwrap();
    let ckpt = std::fs::read(dir.join("final.lcmk")).unwrap();
    std::fs::remove_dir_all(&dir).unwrap();

    let echo = tmp.path().join("echo.toml");
    let again = train_tiny(tmp.path(), &data, &["--seed", "5"]);
    assert_eq!(again, dir);
    assert_eq!(std::fs::read(again.join("loss.csv")).unwrap(), loss);
    assert_eq!(std::fs::read(again.join("final.lcmk")).unwrap(), ckpt);

    std::fs::copy(again.join("effective-config.toml"), &echo).unwrap();
    std::fs::remove_dir_all(&again).unwrap();
    let third = output_dir(&ok(&["train", "--config", s(&echo)]));
    assert_eq!(third, dir);
    assert_eq!(std::fs::read(third.join("final.lcmk")).unwrap(), ckpt);

    let other = train_tiny(tmp.path(), &data, &["--seed", "6"]);
    assert_ne!(other, dir);
}

#[test]
fn config_errors_exit_with_one() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.toml");
    std::fs::write(&cfg, "[train]\nlearning_rate = 0.1\n").unwrap();
    assert_eq!(code(&["train", "--config", s(&cfg)]), 1);
    assert_eq!(code(&["train", "--preset", "tiny16"]), 1);
}

#[test]
fn restore_fits_and_reports() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tiny_data(tmp.path());
    let dir = train_tiny(tmp.path(), &data, &[]);
    let ckpt = dir.join("final.lcmk");
    let runs = tmp.path().join("runs");
    let base = [
        "restore",
        "--checkpoint",
        s(&ckpt),
        "--input",
        s(&data),
        "--steps",
        "20",
        "--out",
        s(&runs),
    ];

    // Every pixel observed: the energy can only go down from its start.
    let mut args = base.to_vec();
    args.extend(["--mask", "random:0.0"]);
    let out = output_dir(&ok(&args));
    let summary = std::fs::read_to_string(out.join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 5);
    for id in ["synth00000", "synth00003"] {
        let trace = std::fs::read_to_string(out.join("traces").join(format!("{id}.csv"))).unwrap();
        let e: Vec<f64> = trace.lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
        assert_eq!(e.len(), 21);
        let best: f64 = summary
            .lines()
            .find(|l| l.starts_with(id))
            .unwrap()
            .split(',')
            .nth(2)
            .unwrap()
            .parse()
            .unwrap();
        assert!(best <= e[0]);
        let img = load_image::<f32>(&out.join("restored").join(format!("{id}.png")), 3, 16, 16).unwrap();
        assert!(img.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    // Worker count does not change results.
    let serial_dir = tmp.path().join("serial");
    let mut serial = base.to_vec();
    serial.extend(["--mask", "center:6", "--deterministic"]);
    let out_at = serial.iter().position(|a| *a == s(&runs)).unwrap();
    serial[out_at] = s(&serial_dir);
    let a = output_dir(&ok(&serial));
    let mut parallel = base.to_vec();
    parallel.extend(["--mask", "center:6"]);
    let b = output_dir(&ok(&parallel));
    assert_eq!(
        std::fs::read(a.join("summary.csv")).unwrap(),
        std::fs::read(b.join("summary.csv")).unwrap()
    );
    assert!(b.join("masks").join("synth00001.png").is_file());

    for bad in [["--task", "deblur"], ["--mask", "ring:3"], ["--mode", "glo"]] {
        let mut args = base.to_vec();
        args.extend(bad);
        assert_eq!(code(&args), 1, "{bad:?}");
    }
}

#[test]
fn divergence_exits_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tiny_data(tmp.path());
    let dir = train_tiny(tmp.path(), &data, &[]);
    let img = data.join("synth00000.png");
    let ckpt = dir.join("final.lcmk");
    let runs = tmp.path().join("runs");
    let args = [
        "restore",
        "--checkpoint",
        s(&ckpt),
        "--input",
        s(&img),
        "--mask",
        "center:6",
        "--mode",
        "zspace",
        "--lambda",
        "1",
        "--lr",
        "1.5",
        "--steps",
        "400",
        "--out",
        s(&runs),
    ];
    assert_eq!(code(&args), 2);
}

#[test]
fn eval_scores_directories() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tiny_data(tmp.path());
    let runs = tmp.path().join("runs");
    let out = output_dir(&ok(&["eval", "--restored", s(&data), "--truth", s(&data), "--out", s(&runs)]));
    let csv = std::fs::read_to_string(out.join("eval.csv")).unwrap();
    let mean = csv.lines().last().unwrap();
    assert_eq!(mean, "mean,,,0,0,,0");

    // One pair against a hand-written loop.
    let restored = tmp.path().join("restored");
    let truth = tmp.path().join("truth");
    std::fs::create_dir_all(&restored).unwrap();
    std::fs::create_dir_all(&truth).unwrap();
    std::fs::copy(data.join("synth00000.png"), restored.join("p.png")).unwrap();
    std::fs::copy(data.join("synth00001.png"), truth.join("p.png")).unwrap();
    let out = output_dir(&ok(&["eval", "--restored", s(&restored), "--truth", s(&truth), "--out", s(&runs)]));
    let csv = std::fs::read_to_string(out.join("eval.csv")).unwrap();
    let got: f64 = csv.lines().nth(1).unwrap().split(',').nth(3).unwrap().parse().unwrap();
    let a = load_image::<f64>(&restored.join("p.png"), 3, 16, 16).unwrap();
    let b = load_image::<f64>(&truth.join("p.png"), 3, 16, 16).unwrap();
    let mut sum = 0.0;
    for c in 0..3 {
        for y in 0..16 {
            for x in 0..16 {
                sum += (a.at(0, c, y, x) - b.at(0, c, y, x)).powi(2);
            }
        }
    }
    assert!((got - sum / 768.0).abs() < 1e-12, "{got}");

    std::fs::copy(data.join("synth00002.png"), truth.join("q.png")).unwrap();
    assert_eq!(code(&["eval", "--restored", s(&restored), "--truth", s(&truth), "--out", s(&runs)]), 1);
}

#[test]
fn gradcheck_exit_codes() {
    let quick = ["gradcheck", "--instances", "1", "--max-coords", "16"];
    assert_eq!(code(&quick), 0);
    let mut flipped = quick.to_vec();
    flipped.extend(["--inject-fault", "sign-flip"]);
    assert_eq!(code(&flipped), 1);
    let mut strict = quick.to_vec();
    strict.extend(["--tolerance", "0"]);
    assert_eq!(code(&strict), 1);
}

#[test]
fn compare_emits_one_row_per_variant() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tiny_data(tmp.path());
    let runs = tmp.path().join("runs");
    let manifest = data.join("manifest.json");
    let args = [
        "compare",
        "--manifest",
        s(&manifest),
        "--preset",
        "tiny16",
        "--max-steps",
        "2",
        "--batch-size",
        "2",
        "--variants",
        "lcm,glo-map,glo-vec:4,glo-vec:8",
        "--restore-images",
        "2",
        "--restore-steps",
        "3",
        "--mask",
        "center:4",
        "--out",
        s(&runs),
    ];
    let dir = output_dir(&ok(&args));
    let summary = std::fs::read_to_string(dir.join("summary.csv")).unwrap();
    let variants: Vec<&str> = summary.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(variants, ["lcm", "glo-map", "glo-vec:4", "glo-vec:8"]);
    let claims = std::fs::read_to_string(dir.join("claims.csv")).unwrap();
    assert_eq!(claims.lines().count(), 5);
    let restoration = std::fs::read_to_string(dir.join("restoration.csv")).unwrap();
    assert_eq!(restoration.lines().filter(|l| l.contains(",inpaint,")).count(), 4);
    assert_eq!(restoration.lines().filter(|l| l.starts_with("mean")).count(), 2);

    std::fs::remove_dir_all(&dir).unwrap();
    let again = output_dir(&ok(&args));
    assert_eq!(std::fs::read_to_string(again.join("summary.csv")).unwrap(), summary);
}
