use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn fvsrn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fvsrn"))
        .args(args)
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = fvsrn(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

struct Scratch(PathBuf);

impl Scratch {
    fn new(name: &str) -> Self {
        let dir = std::env::temp_dir().join(format!("fvsrn-cli-{name}-{}", std::process::id()));
        let _ = std::fs::remove_dir_all(&dir);
        std::fs::create_dir_all(&dir).unwrap();
        Self(dir)
    }

    fn path(&self, name: &str) -> String {
        self.0.join(name).to_str().unwrap().to_owned()
    }
}

impl Drop for Scratch {
    fn drop(&mut self) {
        let _ = std::fs::remove_dir_all(&self.0);
    }
}

fn small_config(dir: &Scratch) -> String {
    let path = dir.path("config.json");
    let cfg = serde_json::json!({
        "model": { "layers": 2, "channels": 16, "grid": { "resolution": 4, "channels": 4 } },
        "world": { "samples": 2048, "batch": 512 },
        "eval": { "views": 2, "resolution": 16 }
    });
    std::fs::write(&path, cfg.to_string()).unwrap();
    path
}

#[test]
fn identical_volumes_have_saturated_psnr() {
    let dir = Scratch::new("metrics");
    let v = dir.path("s.vraw");
    ok(&[
        "make-synthetic",
        "--kind",
        "sphere",
        "--res",
        "12",
        "--out",
        &v,
    ]);
    let line = ok(&["metrics", &v, &v]);
    assert_eq!(line.trim(), "psnr 99.000");
}

#[test]
fn usage_errors_exit_with_one() {
    assert_eq!(fvsrn(&[]).status.code(), Some(1));
    assert_eq!(fvsrn(&["render", "--width", "3"]).status.code(), Some(1));
    assert_eq!(
        fvsrn(&["make-synthetic", "--kind", "cube", "--out", "x"])
            .status
            .code(),
        Some(1)
    );
    assert_eq!(fvsrn(&["--help"]).status.code(), Some(0));
}

#[test]
fn runtime_errors_exit_with_two() {
    let out = fvsrn(&["metrics", "/nonexistent/a.vraw", "/nonexistent/b.vraw"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!out.stderr.is_empty());
}

#[test]
fn train_world_writes_checkpoint_and_manifest() {
    let dir = Scratch::new("train");
    let v = dir.path("g.vraw");
    ok(&[
        "make-synthetic",
        "--kind",
        "gaussians",
        "--res",
        "16",
        "--out",
        &v,
    ]);
    let out = dir.path("run");
    let cfg = small_config(&dir);
    ok(&[
        "--threads",
        "1",
        "train-world",
        "--volume",
        &v,
        "--config",
        &cfg,
        "--epochs",
        "3",
        "--out",
        &out,
    ]);
    let run = Path::new(&out);
    let manifest: Value =
        serde_json::from_slice(&std::fs::read(run.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["threads"], 1);
    let loss = std::fs::read_to_string(run.join("loss.csv")).unwrap();
    assert_eq!(loss.lines().count(), 4);
    assert!(std::fs::read_to_string(run.join("metrics.csv"))
        .unwrap()
        .starts_with("view,psnr,ssim"));
    let model = std::fs::read_dir(run)
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p.extension().is_some_and(|e| e == "fvsrn"))
        .expect("checkpoint");
    fvsrn::checkpoint::load(&model).unwrap();
}

#[test]
fn renders_are_bit_identical() {
    let dir = Scratch::new("render");
    let v = dir.path("g.vraw");
    ok(&[
        "make-synthetic",
        "--kind",
        "gaussians",
        "--res",
        "16",
        "--out",
        &v,
    ]);
    let model = dir.path("m.fvsrn");
    let cfg = small_config(&dir);
    ok(&[
        "--deterministic",
        "train-world",
        "--volume",
        &v,
        "--config",
        &cfg,
        "--epochs",
        "2",
        "--out",
        &model,
    ]);
    let render = |name: &str, threads: &str| {
        let img = dir.path(name);
        let args = [
            "--threads",
            threads,
            "render",
            "--model",
            &model,
            "--width",
            "20",
            "--height",
            "12",
            "--out",
            &img,
        ];
        ok(&args);
        std::fs::read(img).unwrap()
    };
    let a = render("a.pfm", "1");
    assert_eq!(a, render("b.pfm", "1"));
    assert_eq!(a, render("c.pfm", "2"));
}

#[test]
fn ablation_writes_one_row_per_config() {
    let dir = Scratch::new("ablate");
    let out = dir.path("abl");
    let args = [
        "ablate",
        "--res",
        "12",
        "--grid",
        "R=2,4",
        "--features",
        "F=2",
        "--layers",
        "l=2",
        "--channels",
        "c=16",
        "--fourier",
        "nerf,off",
        "--epochs",
        "1",
        "--views",
        "1",
        "--eval-res",
        "16",
        "--baseline",
        "--out",
        &out,
    ];
    ok(&args);
    let csv = std::fs::read_to_string(Path::new(&out).join("ablation.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "resolution,features,layers,channels,fourier,network_bytes,grid_bytes,total_bytes,final_loss,psnr,ssim"
    );
    let rows: Vec<_> = lines.collect();
    assert_eq!(rows.len(), 4);
    assert!(rows.iter().all(|r| r.split(',').count() == 11));
    assert!(Path::new(&out).join("baseline.csv").exists());
}

#[test]
fn benchmark_reports_both_evaluators() {
    let dir = Scratch::new("bench");
    let csv = dir.path("bench.csv");
    ok(&[
        "benchmark",
        "--batches",
        "256,1024",
        "--runs",
        "1",
        "--out",
        &csv,
    ]);
    let text = std::fs::read_to_string(csv).unwrap();
    assert_eq!(
        text.lines().next().unwrap(),
        "batch,evaluator,samples_per_sec"
    );
    assert_eq!(text.lines().count(), 1 + 2 * 2);
}
