use std::path::Path;

use kani::config::{model_to_text, RunConfig, ScenarioConfig};
use kani::io::keyvalue::KeyValues;
use kani::Error;
use kani_core::model::{ModelConfig, Variant};
use kani_core::synth::SyntheticScenario;
use kani_core::train::TrainConfig;

#[test]
fn run_config_survives_text_round_trip() {
    let mut c = RunConfig::default();
    c.model.variant = Variant::HyperMlp;
    c.model.embed_dim = 48;
    c.model.ablation.disable_topo = true;
    c.train.ablation.disable_topo = true;
    c.train.base_lr = 2.5e-4;
    c.train.milestones = vec![3, 7];
    c.init_seed = 11;
    let back = RunConfig::parse(&c.to_text(), Path::new("run.cfg")).unwrap();
    assert_eq!(back, c);
}

#[test]
fn defaults_are_the_desk_configuration() {
    let c = RunConfig::parse("", Path::new("empty.cfg")).unwrap();
    assert_eq!(c.model, ModelConfig::default());
    assert_eq!(c.train, TrainConfig::desk());
    assert_eq!(c.train.epochs, 60);
}

#[test]
fn epochs_rescale_milestones_unless_given() {
    let c = RunConfig::parse("epochs = 12\n", Path::new("a")).unwrap();
    assert_eq!(c.train.milestones, TrainConfig::scaled_milestones(12));
    let c = RunConfig::parse("epochs = 12\nmilestones = 5 9\n", Path::new("a")).unwrap();
    assert_eq!(c.train.milestones, vec![5, 9]);
}

#[test]
fn ablation_flags_reach_training() {
    let c = RunConfig::parse("disable_resolution = true\n", Path::new("a")).unwrap();
    assert!(c.model.ablation.disable_resolution);
    assert_eq!(c.train.ablation, c.model.ablation);
}

#[test]
fn bad_run_configs_are_rejected_with_line_numbers() {
    match RunConfig::parse("# comment\nembed_dim = 8\nwidth = 3\n", Path::new("a")) {
        Err(Error::Parse { line, msg, .. }) => {
            assert_eq!(line, 3);
            assert!(msg.contains("width"));
        }
        other => panic!("{other:?}"),
    }
    assert!(matches!(RunConfig::parse("embed_dim = 8\nembed_dim = 9\n", Path::new("a")), Err(Error::Parse { .. })));
    assert!(matches!(RunConfig::parse("embed_dim = eight\n", Path::new("a")), Err(Error::Parse { .. })));
    assert!(RunConfig::parse("variant = transformer\n", Path::new("a")).is_err());
    assert!(RunConfig::parse("encoder_channels = 1 2 3\n", Path::new("a")).is_err());
    assert!(RunConfig::parse("base_lr = -1\n", Path::new("a")).is_err());
}

#[test]
fn model_text_parses_back() {
    let m = ModelConfig { variant: Variant::PureMlp, mlp_width: 17, grid_rows: 48, grid_cols: 32, ..Default::default() };
    let back = RunConfig::parse(&model_to_text(&m), Path::new("model.cfg")).unwrap().model;
    assert_eq!(back, m);
}

#[test]
fn scenario_presets_and_overrides() {
    let c = ScenarioConfig::parse("preset = gust\nseed = 5\n", Path::new("s")).unwrap();
    assert_eq!(c.scenario, SyntheticScenario::gust(5));
    assert_eq!((c.n_samples, c.n_stations), (1408, 40));

    let c = ScenarioConfig::parse(
        "preset = terrain_bias\nn_samples = 50\nbbox = 30 34 -100 -96\nlapse_rate = -5.0\nbias_coeffs = 0.5 -1 0\n",
        Path::new("s"),
    )
    .unwrap();
    assert_eq!(c.n_samples, 50);
    assert_eq!(c.scenario.bbox.lat_max, 34.0);
    assert_eq!(c.scenario.lapse_rate, -5.0);
    assert_eq!(c.scenario.bias_coeffs, (0.5, -1.0, 0.0));
    assert_eq!(c.scenario.variable, "t2m");

    assert!(ScenarioConfig::parse("preset = tropics\n", Path::new("s")).is_err());
    assert!(ScenarioConfig::parse("split_fractions = 0.5 0.5\n", Path::new("s")).is_err());
}

#[test]
fn keyvalues_ignore_comments_and_blank_lines() {
    let mut kv = KeyValues::parse("\n# a\n  alpha = 3   # trailing\nlist = 1 2 3\n", Path::new("k")).unwrap();
    assert_eq!(kv.take::<u32>("alpha").unwrap(), Some(3));
    assert_eq!(kv.take_list::<u32>("list").unwrap(), Some(vec![1, 2, 3]));
    assert_eq!(kv.take::<u32>("missing").unwrap(), None);
    kv.finish().unwrap();
    assert!(KeyValues::parse("novalue\n", Path::new("k")).is_err());
}
