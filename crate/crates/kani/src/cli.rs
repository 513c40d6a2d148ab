//! `kani` subcommands. Exit codes: 0 success, 1 validation error, 2 numerical failure.

use std::collections::BTreeSet;
use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use kani_core::grid::{make_coordinate_grid, GriddedField, Station, StationSet};
use kani_core::model::{Ablation, GridResolution, Model, Query};
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::config::{model_to_text, read_model_config, RunConfig, ScenarioConfig};
use crate::dataset::{generate_dataset, Dataset, Split};
use crate::error::{Error, Result};
use crate::experiments::{
    ablation_csv, audit_text, compare_baselines, eval_samples, fit, gradient_audit, holdout_ids, metrics_csv,
    model_metrics, query_digest, resolution_sweep, sweep_csv, AblationRow,
};
use crate::io::{read_checkpoint, read_field, read_stations, write_bytes, write_checkpoint, write_field, write_stations};

#[derive(Parser, Debug)]
#[command(name = "kani", version, about = "Neural field bias correction and downscaling from station observations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset.
    Gen {
        /// Scenario file; defaults to the desk preset.
        #[arg(long)]
        scenario: Option<PathBuf>,
        #[arg(long)]
        preset: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model on a dataset.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the training seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 0.0)]
        holdout_frac: f64,
    },
    /// Run a trained model on one field.
    Infer {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Input field; defaults to the first test sample of the dataset.
        #[arg(long)]
        input: Option<PathBuf>,
        /// Station file for `--mode stations`; defaults to the sample's stations.
        #[arg(long)]
        stations: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Mode::Correct)]
        mode: Mode,
        /// full, half, quarter or a spacing in degrees.
        #[arg(long, default_value = "full")]
        resolution: String,
        /// Resolution channel of grid queries: zero (point values) or native.
        #[arg(long, value_enum, default_value_t = ResChannel::Zero)]
        res_channel: ResChannel,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score interpolation baselines and trained models at the stations.
    Eval {
        #[arg(long)]
        data: PathBuf,
        /// Repeatable; the method name is the checkpoint's variant.
        #[arg(long)]
        checkpoint: Vec<PathBuf>,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0.0)]
        holdout_frac: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Station error of reconstructions at r, r/2, r/4 and of direct queries.
    Sweep {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long, value_enum, default_value_t = ResChannel::Zero)]
        res_channel: ResChannel,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the full model and one model per disabled channel.
    Ablate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Finite-difference audit of every primitive and the full model.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Mode {
    Correct,
    Downscale,
    Stations,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum ResChannel {
    Zero,
    Native,
}

impl From<ResChannel> for GridResolution {
    fn from(r: ResChannel) -> Self {
        match r {
            ResChannel::Zero => GridResolution::Zero,
            ResChannel::Native => GridResolution::Native,
        }
    }
}

/// Parses `argv` (including the program name), runs the command and returns
/// the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn parse_resolution(s: &str, r: f64) -> Result<f64> {
    match s {
        "full" => Ok(r),
        "half" => Ok(r / 2.0),
        "quarter" => Ok(r / 4.0),
        other => other
            .parse::<f64>()
            .ok()
            .filter(|v| *v > 0.0)
            .ok_or_else(|| Error::Config(format!("bad resolution {other:?}"))),
    }
}

fn digest(parts: &[&[u8]]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p);
    }
    format!("{:x}", h.finalize())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    write_bytes(path, text.as_bytes())
}

fn load_model(checkpoint: &Path, config: Option<&Path>) -> Result<Model> {
    let cfg_path = match config {
        Some(p) => p.to_path_buf(),
        None => checkpoint.with_file_name("model.cfg"),
    };
    let cfg = read_model_config(&cfg_path)?;
    Ok(Model::from_params(cfg, read_checkpoint(checkpoint)?)?)
}

fn run_config(config: Option<&Path>) -> Result<RunConfig> {
    match config {
        Some(p) => RunConfig::read(p),
        None => Ok(RunConfig::default()),
    }
}

fn execute(cmd: Command) -> Result<()> {
    match cmd {
        Command::Gen { scenario, preset, seed, out } => {
            let mut cfg = match (&scenario, &preset) {
                (Some(p), None) => ScenarioConfig::read(p)?,
                (None, p) => ScenarioConfig::preset(p.as_deref().unwrap_or("desk"), 0)?,
                (Some(_), Some(_)) => return Err(Error::Config("use either --scenario or --preset".into())),
            };
            if let Some(s) = seed {
                cfg.scenario.seed = s;
            }
            let m = generate_dataset(&cfg, &out)?;
            println!(
                "wrote {} samples ({} train, {} val, {} test) to {}",
                m.samples.len(),
                m.split.train[1],
                m.split.val[1] - m.split.val[0],
                m.split.test[1] - m.split.test[0],
                out.display()
            );
            Ok(())
        }
        Command::Train { data, config, out, seed, holdout_frac } => {
            let ds = Dataset::load(&data)?;
            let mut run = run_config(config.as_deref())?;
            if let Some(s) = seed {
                run.train.seed = s;
            }
            let holdout = holdout_ids(&ds, holdout_frac, run.train.seed)?;
            let start = Instant::now();
            let outcome = fit(&ds, &run, &holdout, |r, _| {
                println!(
                    "epoch {:>3}  lr {:.2e}  loss {:.5} (grid {:.5}, station {:.5})  val mse {:.5}",
                    r.epoch, r.lr, r.loss_total, r.loss_grid, r.loss_station, r.val_mse
                );
            })?;
            let wall = start.elapsed().as_secs_f64();
            let mut csv = String::from("epoch,lr,loss_total,loss_grid,loss_station,val_mse,val_mae\n");
            for r in &outcome.records {
                csv.push_str(&format!(
                    "{},{},{},{},{},{},{}\n",
                    r.epoch, r.lr, r.loss_total, r.loss_grid, r.loss_station, r.val_mse, r.val_mae
                ));
            }
            write_text(&out.join("train_report.csv"), &csv)?;
            write_checkpoint(outcome.last.params(), &out.join("final.ckpt"))?;
            write_checkpoint(outcome.best.params(), &out.join("best.ckpt"))?;
            write_text(&out.join("model.cfg"), &model_to_text(outcome.last.config()))?;
            write_text(&out.join("run.cfg"), &run.to_text())?;
            let summary = json!({
                "variant": run.model.variant.name(),
                "epochs": run.train.epochs,
                "best_epoch": outcome.best_epoch,
                "best_val_mse": outcome.records[outcome.best_epoch].val_mse,
                "final_val_mse": outcome.records.last().map(|r| r.val_mse),
                "wall_time_s": wall,
                "final_checkpoint": "final.ckpt",
                "best_checkpoint": "best.ckpt",
                "holdout_stations": holdout,
                "config_digest": digest(&[run.to_text().as_bytes()]),
            });
            write_text(&out.join("train_summary.json"), &serde_json::to_string_pretty(&summary)?)?;
            Ok(())
        }
        Command::Infer { data, checkpoint, config, input, stations, mode, resolution, res_channel, out } => {
            let ds = Dataset::load(&data)?;
            let model = load_model(&checkpoint, config.as_deref())?;
            let sample = &ds.samples(Split::Test).first().or(ds.samples.first()).expect("non-empty dataset").clone();
            let field = match &input {
                Some(p) => read_field(p)?,
                None => sample.input.clone(),
            };
            let sem: GridResolution = res_channel.into();
            match mode {
                Mode::Correct => {
                    let v = model.forward(&ds.ctx, &field, ds.topography(), Query::Correct(sem))?;
                    write_field(&field.with_values(v)?, &out)?;
                }
                Mode::Downscale => {
                    let res = parse_resolution(&resolution, ds.scenario.resolution)?;
                    let grid = make_coordinate_grid(ds.ctx.bbox, res)?;
                    let topo = ds.topography_at(res)?;
                    let q = Query::Downscale { grid: &grid, topo: &topo, resolution: sem };
                    let v = model.forward(&ds.ctx, &field, ds.topography(), q)?;
                    write_field(&GriddedField::new(ds.ctx.bbox, res, field.variable(), field.time(), v)?, &out)?;
                }
                Mode::Stations => {
                    let obs = match &stations {
                        Some(p) => read_stations(p, &ds.ctx.bbox)?,
                        None => sample.obs.clone(),
                    };
                    let pts = obs.points();
                    let elev = obs.elevations();
                    let v = model.forward(&ds.ctx, &field, ds.topography(), Query::Points { points: &pts, elevations: &elev })?;
                    let rows: Vec<Station> = obs
                        .stations()
                        .iter()
                        .zip(v)
                        .map(|(s, value)| Station { value, time: field.time(), ..s.clone() })
                        .collect();
                    write_stations(&StationSet::new(rows, &ds.ctx.bbox)?, &out)?;
                }
            }
            Ok(())
        }
        Command::Eval { data, checkpoint, split, out, holdout_frac, seed } => {
            let ds = Dataset::load(&data)?;
            let split = Split::parse(&split)?;
            let models = checkpoint.iter().map(|c| load_model(c, None)).collect::<Result<Vec<_>>>()?;
            let named: Vec<(&str, &Model)> = models.iter().map(|m| (m.config().variant.name(), m)).collect();
            let holdout = holdout_ids(&ds, holdout_frac, seed)?;
            let only = (!holdout.is_empty()).then_some(&holdout);
            let rows = compare_baselines(&ds, &named, split, only)?;
            let csv = metrics_csv(&rows);
            write_text(&out.join("metrics.csv"), &csv)?;
            let configs: Vec<String> = models.iter().map(|m| model_to_text(m.config())).collect();
            let cfg_bytes: Vec<&[u8]> = configs.iter().map(|c| c.as_bytes()).collect();
            let summary = json!({
                "split": split.name(),
                "variable": ds.variable(),
                "seed": seed,
                "holdout_stations": holdout,
                "config_digest": digest(&cfg_bytes),
                "query_digest": query_digest(&eval_samples(&ds, split, only)?),
                "rows": rows.iter().map(|r| json!({
                    "method": r.method, "mse": r.mse, "mae": r.mae, "n": r.n,
                })).collect::<Vec<_>>(),
            });
            write_text(&out.join("metrics.json"), &serde_json::to_string_pretty(&summary)?)?;
            print!("{csv}");
            Ok(())
        }
        Command::Sweep { data, checkpoint, config, split, res_channel, out } => {
            let ds = Dataset::load(&data)?;
            let model = load_model(&checkpoint, config.as_deref())?;
            let split = Split::parse(&split)?;
            let (m, i) = resolution_sweep(&model, model.config().variant.name(), &ds, split, &[1, 2, 4], res_channel.into())?;
            let csv = sweep_csv(&[m, i]);
            write_text(&out.join("sweep.csv"), &csv)?;
            print!("{csv}");
            Ok(())
        }
        Command::Ablate { data, config, out, seed } => {
            let ds = Dataset::load(&data)?;
            let mut base = run_config(config.as_deref())?;
            if let Some(s) = seed {
                base.train.seed = s;
            }
            let settings = [
                ("full", Ablation::default()),
                ("no_date", Ablation { disable_date: true, ..Default::default() }),
                ("no_topo", Ablation { disable_topo: true, ..Default::default() }),
                ("no_resolution", Ablation { disable_resolution: true, ..Default::default() }),
            ];
            let test = eval_samples(&ds, Split::Test, None)?;
            let mut rows = Vec::new();
            for (name, ablation) in settings {
                let mut run = base.clone();
                run.model.ablation = ablation;
                run.train.ablation = ablation;
                let outcome = fit(&ds, &run, &BTreeSet::new(), |_, _| {})?;
                let m = model_metrics(&outcome.best, &ds, &test)?;
                println!("{name}: mse {:.5} mae {:.5}", m.mse, m.mae);
                rows.push(AblationRow { setting: name.into(), variable: ds.variable().into(), mse: m.mse, mae: m.mae, n: m.n });
            }
            write_text(&out.join("ablation.csv"), &ablation_csv(&rows))?;
            Ok(())
        }
        Command::Gradcheck { seed, out } => {
            let rows = gradient_audit(seed)?;
            let text = audit_text(&rows);
            print!("{text}");
            if let Some(p) = out {
                write_text(&p, &text)?;
            }
            match rows.iter().find(|r| !r.passed) {
                None => Ok(()),
                Some(r) => Err(Error::GradCheck(format!("{} max relative error {:.3e}", r.name, r.max_rel_err))),
            }
        }
    }
}
