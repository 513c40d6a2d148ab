use std::path::Path;

use kani::config::ScenarioConfig;
use kani::dataset::{generate_dataset, Dataset, Split};
use kani_core::grid::BBox;

fn small(seed: u64) -> ScenarioConfig {
    let mut c = ScenarioConfig::preset("terrain_bias", seed).unwrap();
    c.scenario.bbox = BBox::new(36.0, 40.0, -112.0, -108.0).unwrap();
    c.n_samples = 20;
    c.n_stations = 10;
    c
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().display().to_string(), std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn written_dataset_loads_back() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(4);
    let m = generate_dataset(&cfg, dir.path()).unwrap();
    assert_eq!(m.samples.len(), 20);
    assert_eq!(m.split.train[0], 0);
    assert_eq!(m.split.train[1], m.split.val[0]);
    assert_eq!(m.split.val[1], m.split.test[0]);
    assert_eq!(m.split.test[1], 20);
    assert!(m.samples.iter().all(|s| s.split == if s.index < m.split.val[0] { "train" } else if s.index < m.split.test[0] { "val" } else { "test" }));

    let disk = Dataset::load(dir.path()).unwrap();
    let mem = Dataset::generate(&cfg).unwrap();
    assert_eq!(disk.scenario, mem.scenario);
    assert_eq!(disk.split, mem.split);
    assert_eq!(disk.ctx.value_stats, mem.ctx.value_stats);
    assert_eq!(disk.ctx.elevation_stats, mem.ctx.elevation_stats);
    assert_eq!(disk.samples(Split::Test).len(), m.split.test[1] - m.split.test[0]);
    for (a, b) in disk.samples.iter().zip(&mem.samples) {
        assert_eq!(a.obs, b.obs);
        assert_eq!(a.input.time(), b.input.time());
        // Field payloads are stored as f32.
        for (x, y) in a.input.values().iter().zip(b.input.values()) {
            assert!((x - y).abs() <= 1e-6 * y.abs().max(1.0), "{x} vs {y}");
        }
    }
    assert_eq!(disk.dems.len(), 3);
    assert_eq!(disk.topography().field().rows(), 16);
    assert_eq!(disk.topography_at(0.0625).unwrap().field().rows(), 64);
    assert_eq!(disk.topography_at(0.2).unwrap().field().rows(), 20);
}

#[test]
fn generation_is_byte_deterministic() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    generate_dataset(&small(9), a.path()).unwrap();
    generate_dataset(&small(9), b.path()).unwrap();
    let fa = files(a.path());
    assert!(fa.iter().any(|(n, _)| n == "manifest.json"));
    assert_eq!(fa.len(), 3 + 3 * 20 + 2);
    assert_eq!(fa, files(b.path()));
}

#[test]
fn tampered_manifest_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    generate_dataset(&small(2), dir.path()).unwrap();
    let path = dir.path().join("manifest.json");
    let text = std::fs::read_to_string(&path).unwrap();
    std::fs::write(&path, text.replace("kani-dataset 1", "kani-dataset 7")).unwrap();
    assert!(matches!(Dataset::load(dir.path()), Err(kani::Error::BadVersion { .. })));
    std::fs::write(&path, "{").unwrap();
    assert!(matches!(Dataset::load(dir.path()), Err(kani::Error::Json(_))));
}
