#![allow(dead_code)]

use kani_core::grid::BBox;
use kani_core::model::{ModelConfig, QueryContext, Variant};
use kani_core::synth::{SyntheticDataset, SyntheticScenario};

/// 16×16 cells at 0.25°.
pub fn toy_scenario(seed: u64) -> SyntheticScenario {
    let mut sc = SyntheticScenario::desk(seed);
    sc.bbox = BBox::new(36.0, 40.0, -112.0, -108.0).unwrap();
    sc.n_bumps = 4;
    sc.smooth_bumps = 3;
    sc
}

pub fn toy_dataset(seed: u64, n_samples: usize) -> SyntheticDataset {
    SyntheticDataset::generate(&toy_scenario(seed), 12, 1.0, n_samples, (0.5, 0.25, 0.25)).unwrap()
}

pub fn toy_context(ds: &SyntheticDataset) -> QueryContext {
    QueryContext {
        bbox: ds.oracle.scenario.bbox,
        train_resolution: ds.oracle.scenario.resolution,
        value_stats: ds.value_stats.clone(),
        elevation_stats: ds.elevation_stats.clone(),
    }
}

pub fn toy_config(variant: Variant) -> ModelConfig {
    ModelConfig {
        variant,
        embed_dim: 6,
        hidden_dim: 5,
        out_dim: 7,
        reduce_dim: 4,
        kan_layers: 2,
        mlp_width: 6,
        encoder_channels: [3, 4, 4, 5],
        feature_channels: 4,
        grid_rows: 16,
        grid_cols: 16,
        ..ModelConfig::default()
    }
}
