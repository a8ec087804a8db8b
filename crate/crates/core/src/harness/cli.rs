use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use super::config::RunConfig;
use super::eval::{evaluate_policy, export_policy_field, mean_action_magnitude_near, GridSpec};
use super::export::{export_embeddings, export_generation_grid, reconstruction_mse_by_label};
use super::stats::estimate_transition_probability;
use crate::dataset::{generate_dataset, LabeledDataset};
use crate::dynamics::simulate;
use crate::error::{Error, Result};
use crate::landscape::Position;
use crate::rng::RngStream;
use crate::tpsrl::{train_td3, ActorCritic, TrainOptions};
use crate::vae::{train_vae, trajectories_tensor, VaeArch, VaeModel, VaeVariant};

#[derive(Debug, Parser)]
#[command(name = "transpath", version, about = "Transition-path sampling toolkit", arg_required_else_help = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// TOML configuration with dotted keys such as `sim.dt = 5e-3`.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Worker threads; results do not depend on this.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Unbiased trajectories as CSV `traj,step,x,y`, plus a transition estimate.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 1)]
        n: usize,
        /// Output CSV path.
        #[arg(long)]
        out: PathBuf,
        /// Integration steps; defaults to `sim.n_steps`.
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long, allow_hyphen_values = true)]
        x0: Option<f64>,
        #[arg(long, allow_hyphen_values = true)]
        y0: Option<f64>,
    },
    /// Generates and labels the trajectory database.
    MakeDataset {
        #[command(flatten)]
        common: Common,
        /// Output dataset directory.
        #[arg(long)]
        out: PathBuf,
        /// Overrides `dataset.n_traj`.
        #[arg(long)]
        n: Option<usize>,
    },
    /// Trains a VAE on a dataset directory.
    TrainVae {
        #[command(flatten)]
        common: Common,
        /// Dataset directory from `make-dataset`.
        #[arg(long)]
        dataset: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// `naive` or `wide`; overrides `vae.variant`.
        #[arg(long)]
        variant: Option<VaeVariant>,
        /// Overrides `vae.epochs`.
        #[arg(long)]
        epochs: Option<usize>,
        /// Trains on a random subset of this many trajectories; overrides `vae.subset`.
        #[arg(long)]
        subset: Option<usize>,
    },
    /// Decodes the 3x3 latent grid with a trained 2D VAE.
    VaeGenerate {
        #[command(flatten)]
        common: Common,
        /// Model directory from `train-vae`.
        #[arg(long)]
        model: PathBuf,
        /// Output CSV path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Trains the TD3 agent.
    TrainTd3 {
        #[command(flatten)]
        common: Common,
        /// Output directory for the log and checkpoint.
        #[arg(long)]
        out: PathBuf,
        /// Overrides `td3.n_games`.
        #[arg(long)]
        games: Option<usize>,
    },
    /// Deterministic-policy rollouts of a checkpoint, with a zero-force baseline.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Checkpoint directory from `train-td3`.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Overrides `eval.n_rollouts`.
        #[arg(long)]
        n: Option<usize>,
        /// JSON report path; printed to stdout otherwise.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Policy and critic over a grid as CSV `x,y,P_x,P_y,Q`.
    ExportField {
        #[command(flatten)]
        common: Common,
        /// Checkpoint directory from `train-td3`.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Output CSV path.
        #[arg(long)]
        out: PathBuf,
        /// Grid columns; overrides `eval.grid_nx`.
        #[arg(long)]
        nx: Option<usize>,
        /// Grid rows; overrides `eval.grid_ny`.
        #[arg(long)]
        ny: Option<usize>,
    },
    /// Posterior means of the test split as CSV.
    ExportEmbeddings {
        #[command(flatten)]
        common: Common,
        /// Model directory from `train-vae`.
        #[arg(long)]
        model: PathBuf,
        /// Dataset directory from `make-dataset`.
        #[arg(long)]
        dataset: PathBuf,
        /// Output CSV path.
        #[arg(long)]
        out: PathBuf,
    },
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::Simulate { common, .. }
            | Command::MakeDataset { common, .. }
            | Command::TrainVae { common, .. }
            | Command::VaeGenerate { common, .. }
            | Command::TrainTd3 { common, .. }
            | Command::Evaluate { common, .. }
            | Command::ExportField { common, .. }
            | Command::ExportEmbeddings { common, .. } => common,
        }
    }
}

fn resolve(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

/// Resolved config for a single-file output `f` goes to `f.config.toml`.
fn write_config_beside(cfg: &RunConfig, file: &Path) -> Result<()> {
    let mut name = file.as_os_str().to_owned();
    name.push(".config.toml");
    fs::write(PathBuf::from(name), cfg.to_toml_string())?;
    Ok(())
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn run(cmd: Command) -> Result<()> {
    let mut cfg = resolve(cmd.common())?;
    match cmd {
        Command::Simulate {
            n,
            out,
            steps,
            x0,
            y0,
            ..
        } => {
            if let Some(s) = steps {
                cfg.sim.n_steps = s;
            }
            cfg.dataset.q0 = Position::new(x0.unwrap_or(cfg.dataset.q0.x), y0.unwrap_or(cfg.dataset.q0.y));
            cfg.validate()?;
            let q0 = cfg.dataset.q0;
            let mut w = create(&out)?;
            writeln!(w, "traj,step,x,y")?;
            for i in 0..n {
                let mut rng = RngStream::new(cfg.seed, i as u64);
                let t = simulate(q0, &cfg.sim, &cfg.potential, None, &mut rng, false).unwrap_or_else(|b| b.partial);
                for (k, q) in t.positions.iter().enumerate() {
                    writeln!(w, "{i},{k},{},{}", q.x, q.y)?;
                }
            }
            w.flush()?;
            write_config_beside(&cfg, &out)?;
            if n > 0 {
                let est = estimate_transition_probability(n, q0, &cfg.sim, &cfg.potential, &cfg.wells, cfg.seed)?;
                println!(
                    "trajectories {n}, transitions {}, rate {:.6}, wilson95 [{:.6}, {:.6}]",
                    est.transitions, est.rate, est.interval.0, est.interval.1
                );
            }
        }
        Command::MakeDataset { out, n, .. } => {
            if let Some(n) = n {
                cfg.dataset.n_traj = n;
            }
            cfg.validate()?;
            let mut ds = generate_dataset(
                cfg.dataset.n_traj,
                cfg.dataset.q0,
                &cfg.dataset_sim(),
                &cfg.potential,
                &cfg.wells,
                cfg.seed,
                cfg.dataset.label_rule,
            )?;
            if cfg.dataset.train_fraction != crate::dataset::TRAIN_FRACTION {
                ds.resplit(cfg.dataset.train_fraction, cfg.seed, false)?;
            }
            ds.save(&out)?;
            cfg.write_resolved(&out)?;
            let h = ds.histogram();
            println!(
                "trajectories {}, top {}, bottom {}, none {}, transition fraction {:.4}, train {}, test {}",
                ds.len(),
                h["top"],
                h["bottom"],
                h["none"],
                ds.transition_fraction(),
                ds.train.len(),
                ds.test.len()
            );
        }
        Command::TrainVae {
            dataset,
            out,
            variant,
            epochs,
            subset,
            ..
        } => {
            if let Some(v) = variant {
                cfg.vae.variant = v;
            }
            if let Some(e) = epochs {
                cfg.vae.epochs = e;
            }
            if let Some(s) = subset {
                cfg.vae.subset = s;
            }
            cfg.validate()?;
            let mut ds = LabeledDataset::load(&dataset)?;
            if cfg.vae.transitions_only {
                ds = ds.transitions_only();
            }
            if cfg.vae.subset > 0 {
                ds = ds.subset(cfg.vae.subset, cfg.dataset.train_fraction, cfg.seed)?;
            }
            let mut model = VaeModel::new(VaeArch::standard(cfg.vae.variant), &mut RngStream::new(cfg.seed, 0))?;
            model.sigma_theta = cfg.vae.sigma_theta;
            model.kl_half = cfg.vae.kl_half;
            let x = trajectories_tensor(ds.train_view().iter().map(|t| &t.trajectory), model.arch.input_len)?;
            let mse_before = reconstruction_mse_by_label(&model, ds.test_view())?;
            fs::create_dir_all(&out)?;
            let mut log = create(&out.join("losses.csv"))?;
            writeln!(log, "epoch,loss")?;
            let mut io_err = None;
            let report = train_vae(&mut model, &x, &cfg.vae.hyper(), &mut RngStream::new(cfg.seed, 1), |e, l| {
                if let Err(err) = writeln!(log, "{},{l}", e + 1) {
                    io_err.get_or_insert(err);
                }
            })?;
            if let Some(e) = io_err {
                return Err(e.into());
            }
            log.flush()?;
            model.save(&out.join("model"))?;
            let mse_after = reconstruction_mse_by_label(&model, ds.test_view())?;
            cfg.write_resolved(&out)?;
            write_json(
                &out.join("report.json"),
                &json!({
                    "seed": cfg.seed,
                    "train": ds.train.len(),
                    "test": ds.test.len(),
                    "epoch_losses": report.epoch_losses,
                    "test_mse_before": mse_before,
                    "test_mse_after": mse_after,
                    "config": cfg,
                }),
            )?;
            println!(
                "epochs {}, final loss {:.6}, test mse {:.6} -> {:.6}",
                report.epoch_losses.len(),
                report.epoch_losses.last().copied().unwrap_or(f64::NAN),
                mse_before.get("all").copied().unwrap_or(f64::NAN),
                mse_after.get("all").copied().unwrap_or(f64::NAN)
            );
        }
        Command::VaeGenerate { model, out, .. } => {
            let m = VaeModel::load(&model)?;
            let mut w = create(&out)?;
            let rows = export_generation_grid(&m, &mut w)?;
            w.flush()?;
            write_config_beside(&cfg, &out)?;
            println!("rows {rows}");
        }
        Command::TrainTd3 { out, games, .. } => {
            if let Some(g) = games {
                cfg.td3.n_games = g;
            }
            cfg.validate()?;
            fs::create_dir_all(&out)?;
            cfg.write_resolved(&out)?;
            let mut log = create(&out.join("train_log.csv"))?;
            let ckpt = out.join("checkpoint");
            let mut progress = |rec: &crate::tpsrl::GameRecord, report: &crate::tpsrl::TrainReport| {
                if (rec.game + 1).is_multiple_of(500) {
                    eprintln!(
                        "game {} success(last 500) {:.3} random p {:.4}",
                        rec.game + 1,
                        report.rolling_success(500),
                        report.random_prob
                    );
                }
            };
            let (_, report) = train_td3(
                &cfg.env(),
                &cfg.td3,
                cfg.seed,
                TrainOptions {
                    log: Some(&mut log),
                    checkpoint_dir: Some(&ckpt),
                    on_game: Some(&mut progress),
                },
            )?;
            println!(
                "games {}, updates {}, success(last 100) {:.3}",
                report.games.len(),
                report.updates,
                report.rolling_success(100)
            );
        }
        Command::Evaluate { checkpoint, n, out, .. } => {
            if let Some(n) = n {
                cfg.eval.n_rollouts = n;
            }
            cfg.validate()?;
            let report = evaluate_policy(&checkpoint, &cfg.env(), cfg.eval.n_rollouts, cfg.seed)?;
            let value = json!({ "report": report, "run_config": cfg });
            match out {
                Some(p) => {
                    write_json(&p, &value)?;
                    write_config_beside(&cfg, &p)?;
                    println!(
                        "success {}/{} ({:.4}), B reached {}",
                        report.policy.success_count,
                        report.n_rollouts,
                        report.policy.success_rate,
                        report.policy.success_count_b
                    );
                }
                None => println!("{}", serde_json::to_string_pretty(&value)?),
            }
        }
        Command::ExportField {
            checkpoint, out, nx, ny, ..
        } => {
            if let Some(v) = nx {
                cfg.eval.grid_nx = v;
            }
            if let Some(v) = ny {
                cfg.eval.grid_ny = v;
            }
            cfg.validate()?;
            let (ac, _) = ActorCritic::load(&checkpoint)?;
            let grid = GridSpec {
                x_range: (cfg.eval.grid_x_min, cfg.eval.grid_x_max),
                y_range: (cfg.eval.grid_y_min, cfg.eval.grid_y_max),
                nx: cfg.eval.grid_nx,
                ny: cfg.eval.grid_ny,
            };
            let mut w = create(&out)?;
            let rows = export_policy_field(&ac, &grid, &mut w)?;
            w.flush()?;
            write_config_beside(&cfg, &out)?;
            let near = |c| mean_action_magnitude_near(&rows, c, 0.3);
            println!(
                "rows {}, mean |P| near A {}, near B {}",
                rows.len(),
                near(cfg.wells.center_a).map_or("n/a".into(), |v| format!("{v:.4}")),
                near(cfg.wells.center_b).map_or("n/a".into(), |v| format!("{v:.4}"))
            );
        }
        Command::ExportEmbeddings { model, dataset, out, .. } => {
            let m = VaeModel::load(&model)?;
            let ds = LabeledDataset::load(&dataset)?;
            let mut w = create(&out)?;
            let rows = export_embeddings(&m, ds.test_view(), &mut w)?;
            w.flush()?;
            write_config_beside(&cfg, &out)?;
            println!("rows {rows}");
        }
    }
    Ok(())
}

/// Parses `argv` (program name first) and runs the command. Returns the
/// process exit code: 0 on success, 2 on usage errors, 1 on runtime errors.
pub fn cli_dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let threads = cli.command.common().threads;
    let result = match threads {
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(|| run(cli.command)),
            Err(e) => Err(Error::InvalidArgument(format!("thread pool: {e}"))),
        },
        None => run(cli.command),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}
