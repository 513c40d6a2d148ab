use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use kani::io::{read_field, read_stations};

const TINY_MODEL: &str = "embed_dim = 6
hidden_dim = 5
out_dim = 7
reduce_dim = 4
mlp_width = 6
encoder_channels = 3 4 4 5
feature_channels = 4
batch_size = 4
";
const TRAINED: &str = "epochs = 2\nbase_lr = 3e-3\n";
// One epoch at zero learning rate keeps the zero-initialized head.
const UNTRAINED: &str = "epochs = 1\nbase_lr = 0\n";

fn kani(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kani")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = kani(args);
    assert!(
        out.status.success(),
        "kani {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

impl Fixture {
    /// 32×32 desk dataset with 16 samples and a tiny trained model.
    fn new(train: &str) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        std::fs::write(root.join("scenario.cfg"), "preset = desk\nseed = 2\nn_samples = 16\nn_stations = 12\n").unwrap();
        std::fs::write(root.join("run.cfg"), format!("{TINY_MODEL}{train}")).unwrap();
        let f = Fixture { _dir: dir, root };
        ok(&["gen", "--scenario", s(&f.p("scenario.cfg")), "--out", s(&f.p("data"))]);
        ok(&["train", "--data", s(&f.p("data")), "--config", s(&f.p("run.cfg")), "--out", s(&f.p("run"))]);
        f
    }

    fn p(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }
}

#[test]
fn train_writes_reports_and_checkpoints() {
    let f = Fixture::new(TRAINED);
    for name in ["best.ckpt", "final.ckpt", "model.cfg", "train_report.csv", "train_summary.json"] {
        assert!(f.p("run").join(name).exists(), "{name}");
    }
    let report = std::fs::read_to_string(f.p("run/train_report.csv")).unwrap();
    let mut lines = report.lines();
    assert_eq!(lines.next(), Some("epoch,lr,loss_total,loss_grid,loss_station,val_mse,val_mae"));
    assert_eq!(lines.count(), 2);
    let summary: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(f.p("run/train_summary.json")).unwrap()).unwrap();
    assert_eq!(summary["epochs"], 2);
    assert_eq!(summary["config_digest"].as_str().unwrap().len(), 64);
    assert!(summary["wall_time_s"].as_f64().unwrap() >= 0.0);
}

#[test]
fn correct_mode_is_the_identity_at_initialization() {
    let f = Fixture::new(UNTRAINED);
    let out = f.p("corrected.nfgrid");
    let input = f.p("data/fields/input_00000.nfgrid");
    ok(&["infer", "--data", s(&f.p("data")), "--checkpoint", s(&f.p("run/final.ckpt")), "--input", s(&input), "--mode", "correct", "--out", s(&out)]);
    let a = read_field(&input).unwrap();
    let b = read_field(&out).unwrap();
    let worst = a.values().iter().zip(b.values()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    assert!(worst <= 1e-9, "max |Δ| = {worst}");
}

#[test]
fn downscale_half_doubles_the_grid_and_stations_mode_keeps_ids() {
    let f = Fixture::new(TRAINED);
    let (data, ckpt) = (f.p("data"), f.p("run/final.ckpt"));
    ok(&["infer", "--data", s(&data), "--checkpoint", s(&ckpt), "--mode", "downscale", "--resolution", "half", "--out", s(&f.p("half.nfgrid"))]);
    let half = read_field(&f.p("half.nfgrid")).unwrap();
    assert_eq!((half.rows(), half.cols()), (64, 64));
    assert_eq!(half.resolution(), 0.125);

    ok(&["infer", "--data", s(&data), "--checkpoint", s(&ckpt), "--mode", "downscale", "--resolution", "0.5", "--res-channel", "native", "--out", s(&f.p("coarse.nfgrid"))]);
    assert_eq!(read_field(&f.p("coarse.nfgrid")).unwrap().rows(), 16);

    let obs = f.p("data/stations/obs_00003.csv");
    ok(&["infer", "--data", s(&data), "--checkpoint", s(&ckpt), "--mode", "stations", "--stations", s(&obs), "--out", s(&f.p("pred.csv"))]);
    let bbox = kani::dataset::Dataset::read_manifest(&data).unwrap().scenario.to_scenario().unwrap().bbox;
    let want = read_stations(&obs, &bbox).unwrap();
    let got = read_stations(&f.p("pred.csv"), &bbox).unwrap();
    let ids = |v: &kani_core::grid::StationSet| v.stations().iter().map(|s| s.id.clone()).collect::<Vec<_>>();
    assert_eq!(ids(&got), ids(&want));
}

#[test]
fn eval_and_sweep_are_deterministic() {
    let f = Fixture::new(TRAINED);
    let (data, ckpt) = (f.p("data"), f.p("run/final.ckpt"));
    ok(&["eval", "--data", s(&data), "--checkpoint", s(&ckpt), "--out", s(&f.p("e1"))]);
    ok(&["eval", "--data", s(&data), "--checkpoint", s(&ckpt), "--out", s(&f.p("e2"))]);
    for name in ["metrics.csv", "metrics.json"] {
        assert_eq!(std::fs::read(f.p("e1").join(name)).unwrap(), std::fs::read(f.p("e2").join(name)).unwrap());
    }
    let csv = std::fs::read_to_string(f.p("e1/metrics.csv")).unwrap();
    let methods: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(methods, ["linear", "nearest", "kani"]);

    ok(&["sweep", "--data", s(&data), "--checkpoint", s(&ckpt), "--out", s(&f.p("sw"))]);
    let sweep = std::fs::read_to_string(f.p("sw/sweep.csv")).unwrap();
    assert_eq!(sweep.lines().count(), 1 + 8);
    assert!(sweep.contains("kani,0.0625,"));
}

#[test]
fn ablate_trains_every_setting() {
    let f = Fixture::new(TRAINED);
    ok(&["ablate", "--data", s(&f.p("data")), "--config", s(&f.p("run.cfg")), "--out", s(&f.p("abl"))]);
    let csv = std::fs::read_to_string(f.p("abl/ablation.csv")).unwrap();
    let settings: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(settings, ["full", "no_date", "no_topo", "no_resolution"]);
}

#[test]
fn exit_codes() {
    let out = kani(&["train", "--bogus"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    assert_eq!(kani(&[]).status.code(), Some(1));
    assert_eq!(kani(&["--help"]).status.code(), Some(0));
    assert_eq!(kani(&["eval", "--data", "/nonexistent", "--out", "/tmp/x"]).status.code(), Some(1));

    let f = Fixture::new(UNTRAINED);
    let bad = f.p("nan.nfgrid");
    let mut bytes = std::fs::read(f.p("data/fields/input_00000.nfgrid")).unwrap();
    let n = bytes.len();
    bytes[n - 4..].copy_from_slice(&f32::INFINITY.to_le_bytes());
    std::fs::write(&bad, bytes).unwrap();
    let out = kani(&["infer", "--data", s(&f.p("data")), "--checkpoint", s(&f.p("run/final.ckpt")), "--input", s(&bad), "--out", s(&f.p("o.nfgrid"))]);
    assert_eq!(out.status.code(), Some(2));

    let out = kani(&["gradcheck"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
}
