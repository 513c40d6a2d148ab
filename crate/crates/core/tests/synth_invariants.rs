use kani_core::grid::make_coordinate_grid;
use kani_core::synth::{build_oracle, generate_sample, sample_stations, SyntheticDataset, SyntheticScenario, VariableMode};

#[test]
fn truth_is_resolution_free() {
    let sc = SyntheticScenario::desk(0);
    let oracle = build_oracle(&sc).unwrap();
    let coarse = oracle.truth_field(&make_coordinate_grid(sc.bbox, sc.resolution).unwrap(), 5).unwrap();
    let fine = oracle.truth_field(&make_coordinate_grid(sc.bbox, sc.resolution / 2.0).unwrap(), 5).unwrap();
    let mut worst: f64 = 0.0;
    for i in 0..coarse.rows() {
        for j in 0..coarse.cols() {
            let avg = (fine.get(2 * i, 2 * j)
                + fine.get(2 * i + 1, 2 * j)
                + fine.get(2 * i, 2 * j + 1)
                + fine.get(2 * i + 1, 2 * j + 1))
                / 4.0;
            worst = worst.max((avg - coarse.get(i, j)).abs());
        }
    }
    assert!(worst <= 0.05, "block average differs by {worst}");
}

#[test]
fn observations_are_unbiased() {
    let sc = SyntheticScenario::desk(1);
    let oracle = build_oracle(&sc).unwrap();
    let grid = make_coordinate_grid(sc.bbox, sc.resolution).unwrap();
    let sites = sample_stations(&oracle, 40, 1.0, sc.resolution).unwrap();
    let mut sum = 0.0;
    let mut n = 0usize;
    for t in 0..250 {
        let s = generate_sample(&oracle, &grid, &sites, t, t as u64).unwrap();
        for st in s.obs.stations() {
            sum += st.value - oracle.y_true(st.lat, st.lon, t);
            n += 1;
        }
    }
    assert!(n >= 10_000);
    let mean = sum / n as f64;
    assert!(mean.abs() <= 3.0 * sc.obs_noise_std / (n as f64).sqrt(), "mean noise {mean}");
}

#[test]
fn additive_error_is_time_invariant() {
    let sc = SyntheticScenario::desk(2);
    let oracle = build_oracle(&sc).unwrap();
    let grid = make_coordinate_grid(sc.bbox, sc.resolution).unwrap();
    let sites = sample_stations(&oracle, 5, 1.0, sc.resolution).unwrap();
    let a = generate_sample(&oracle, &grid, &sites, 3, 3).unwrap();
    let b = generate_sample(&oracle, &grid, &sites, 17, 17).unwrap();
    for k in 0..grid.len() {
        let ea = a.input.values()[k] - a.truth.values()[k];
        let eb = b.input.values()[k] - b.truth.values()[k];
        assert!((ea - eb).abs() <= 1e-10);
    }
}

#[test]
fn dataset_mean_error_is_mean_bias() {
    let sc = SyntheticScenario::desk(3);
    let ds = SyntheticDataset::generate(&sc, 10, 1.0, 20, (0.7, 0.1, 0.2)).unwrap();
    let (mut sum, mut n) = (0.0, 0usize);
    for s in &ds.samples {
        for (a, b) in s.input.values().iter().zip(s.truth.values()) {
            sum += a - b;
            n += 1;
        }
    }
    let grid = make_coordinate_grid(sc.bbox, sc.resolution).unwrap();
    let bias: f64 = grid.points().iter().map(|&(la, lo)| ds.oracle.bias(la, lo)).sum::<f64>() / grid.len() as f64;
    assert!((sum / n as f64 - bias).abs() <= 1e-6);
}

#[test]
fn gust_input_is_scaled_truth() {
    let sc = SyntheticScenario::gust(4);
    assert_eq!(sc.mode, VariableMode::MultiplicativeGust);
    let oracle = build_oracle(&sc).unwrap();
    let grid = make_coordinate_grid(sc.bbox, sc.resolution).unwrap();
    let sites = sample_stations(&oracle, 3, 1.0, sc.resolution).unwrap();
    let s = generate_sample(&oracle, &grid, &sites, 9, 9).unwrap();
    for (k, (la, lo)) in grid.points().into_iter().enumerate() {
        let g = 1.3 + 0.2 * oracle.slope(la, lo).tanh();
        assert!((s.input.values()[k] - g * s.truth.values()[k]).abs() <= 1e-9);
    }
}

#[test]
fn datasets_are_deterministic_with_train_only_stats() {
    let sc = SyntheticScenario::desk(5);
    let a = SyntheticDataset::generate(&sc, 8, 1.0, 100, (0.7, 0.1, 0.2)).unwrap();
    let b = SyntheticDataset::generate(&sc, 8, 1.0, 100, (0.7, 0.1, 0.2)).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.split, (70, 10, 20));
    assert_eq!(a.test()[0].input.time(), 80);
    let c = SyntheticDataset::generate(&sc, 8, 1.0, 70, (1.0, 0.0, 0.0)).unwrap();
    assert_eq!(a.value_stats, c.value_stats);
}
