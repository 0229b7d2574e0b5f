//! `prp` — experiment runner for the modulated random projection library.
//!
//! Verbs: `run`, `report`, `export-curves`, `reconstruct`, `range-test`,
//! `fetch-data`. Experiments can be configured from a TOML file (see
//! `--config`); command-line flags override file values, which override the
//! registry defaults.

use clap::{Parser, Subcommand};
use prp_core::experiments::{
    default_data_dir, export_curves, load_checkpoint, lookup, prepare_data, reconstruct_samples,
    registry, report, report_csv, run_experiment, DatasetSpec, ExperimentSpec, RunResult,
};
use prp_core::models::{build_architecture, ModelKind};
use prp_core::projections::InitScheme;
use prp_core::rng::derive_subseed;
use prp_core::training::lr_range_test;
use std::path::PathBuf;
use std::process::ExitCode;
use std::str::FromStr;

#[derive(Parser)]
#[command(name = "prp", about = "Train and compare modulated random projection models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Debug, Default)]
struct RunFlags {
    /// Experiment name from the registry (see `prp run --list`).
    #[arg(long)]
    experiment: Option<String>,
    /// Comma-separated model kinds: prp, dense, lowrank.
    #[arg(long, value_delimiter = ',')]
    models: Option<Vec<String>>,
    /// Comma-separated training seeds.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Dataset directory (default: $PRP_DATA_DIR or ./data).
    #[arg(long)]
    data_dir: Option<PathBuf>,
    /// Output directory for run results (default: ./runs).
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Fixed learning rate; skips the range test.
    #[arg(long)]
    lr: Option<f64>,
    /// Override the registry epoch count.
    #[arg(long)]
    epochs: Option<usize>,
    /// Projection init: gaussian | ternary | ternary-achlioptas | orthogonal.
    #[arg(long)]
    init_scheme: Option<String>,
    /// Cap the number of training samples.
    #[arg(long)]
    subset: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment: LR range test per model kind, then multi-seed training.
    Run {
        /// TOML config file holding the same fields as the flags.
        #[arg(long)]
        config: Option<PathBuf>,
        /// List registered experiments and exit.
        #[arg(long)]
        list: bool,
        #[command(flatten)]
        flags: RunFlags,
    },
    /// Render comparison tables from completed run results.
    Report {
        /// Directory holding run results (default: ./runs).
        #[arg(long, default_value = "runs")]
        dir: PathBuf,
        /// Emit CSV instead of aligned text.
        #[arg(long)]
        csv: bool,
    },
    /// Write one seed's (epoch, train_loss, test_loss) curve as CSV.
    ExportCurves {
        /// Path to a result.json file.
        #[arg(long)]
        result: PathBuf,
        /// Which seed's curves (index into the result's seed list).
        #[arg(long, default_value_t = 0)]
        seed_index: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render an original-vs-reconstruction image grid from checkpoints.
    Reconstruct {
        /// Autoencoder checkpoint files, one column per model.
        #[arg(long, required = true, value_delimiter = ',')]
        checkpoints: Vec<PathBuf>,
        #[arg(long)]
        data_dir: Option<PathBuf>,
        /// Number of sample rows.
        #[arg(long, default_value_t = 8)]
        n: usize,
        /// Output PGM path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run only the learning-rate range test and print the sweep.
    RangeTest {
        #[arg(long)]
        experiment: String,
        #[arg(long, default_value = "prp")]
        model: String,
        #[arg(long)]
        data_dir: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Check that the IDX dataset files an experiment needs are present.
    FetchData {
        #[arg(long)]
        data_dir: Option<PathBuf>,
        #[arg(long, default_value = "mnist_mlp")]
        experiment: String,
    },
}

fn parse_models(names: &[String]) -> Result<Vec<ModelKind>, prp_core::Error> {
    names.iter().map(|s| ModelKind::from_str(s)).collect()
}

/// File config -> spec, then flags override.
fn build_spec(config: Option<&PathBuf>, flags: &RunFlags) -> Result<ExperimentSpec, String> {
    let mut spec = match config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| format!("cannot read {}: {e}", path.display()))?;
            toml::from_str::<ExperimentSpec>(&text)
                .map_err(|e| format!("bad config {}: {e}", path.display()))?
        }
        None => {
            let name = flags
                .experiment
                .as_deref()
                .ok_or("either --config or --experiment is required")?;
            ExperimentSpec::new(name)
        }
    };
    if let Some(name) = &flags.experiment {
        spec.experiment = name.clone();
    }
    if let Some(models) = &flags.models {
        spec.models = parse_models(models).map_err(|e| e.to_string())?;
    }
    if let Some(seeds) = &flags.seeds {
        spec.seeds = seeds.clone();
    }
    if let Some(d) = &flags.data_dir {
        spec.data_dir = Some(d.clone());
    }
    if let Some(d) = &flags.out_dir {
        spec.out_dir = Some(d.clone());
    }
    if let Some(lr) = flags.lr {
        spec.lr = Some(lr);
    }
    if let Some(e) = flags.epochs {
        spec.epochs = Some(e);
    }
    if let Some(s) = &flags.init_scheme {
        spec.init_scheme = Some(InitScheme::from_str(s).map_err(|e| e.to_string())?);
    }
    if let Some(n) = flags.subset {
        spec.train_subset = Some(n);
    }
    Ok(spec)
}

fn summarize(result: &RunResult) {
    println!(
        "{} / {}: {} params, lr {:.3e}, {} seed(s)",
        result.experiment.name,
        result.model.as_str(),
        result.param_count,
        result.chosen_lr,
        result.seeds.len()
    );
    for (name, agg) in &result.aggregates {
        if agg.single_run {
            println!("  {name}: {:.6}", agg.mean);
        } else {
            println!("  {name}: {:.6} ± {:.6}", agg.mean, agg.std);
        }
    }
}

fn real_main() -> Result<(), String> {
    let cli = Cli::parse();
    match cli.command {
        Command::Run { config, list, flags } => {
            if list {
                for def in registry() {
                    println!(
                        "{:16} arch={:12} epochs={:5} batch={:?} gamma={}",
                        def.name, def.arch, def.epochs, def.batch, def.gamma
                    );
                }
                return Ok(());
            }
            let spec = build_spec(config.as_ref(), &flags)?;
            let results = run_experiment(&spec).map_err(|e| e.to_string())?;
            for r in &results {
                summarize(r);
            }
            Ok(())
        }
        Command::Report { dir, csv } => {
            if csv {
                print!("{}", report_csv(&dir).map_err(|e| e.to_string())?);
            } else {
                let (text, warnings) = report(&dir).map_err(|e| e.to_string())?;
                print!("{text}");
                for w in warnings {
                    eprintln!("warning: {w}");
                }
            }
            Ok(())
        }
        Command::ExportCurves {
            result,
            seed_index,
            out,
        } => {
            let text = std::fs::read_to_string(&result)
                .map_err(|e| format!("cannot read {}: {e}", result.display()))?;
            let parsed: RunResult =
                serde_json::from_str(&text).map_err(|e| format!("bad result file: {e}"))?;
            export_curves(&parsed, seed_index, &out).map_err(|e| e.to_string())?;
            println!("wrote {}", out.display());
            Ok(())
        }
        Command::Reconstruct {
            checkpoints,
            data_dir,
            n,
            out,
        } => {
            let data_dir = data_dir.unwrap_or_else(default_data_dir);
            let def = lookup("autoencoder").map_err(|e| e.to_string())?;
            let data = prepare_data(&def, &data_dir).map_err(|e| e.to_string())?;
            let eval = data.test.as_ref().unwrap_or(&data.train);
            let mut models = Vec::new();
            for path in &checkpoints {
                models.push(load_checkpoint(path).map_err(|e| e.to_string())?);
            }
            let mses = reconstruct_samples(&mut models, eval, n, &out).map_err(|e| e.to_string())?;
            for (path, mse) in checkpoints.iter().zip(&mses) {
                println!("{}: test MSE {:.6}", path.display(), mse);
            }
            println!("wrote {}", out.display());
            Ok(())
        }
        Command::RangeTest {
            experiment,
            model,
            data_dir,
            seed,
        } => {
            let def = lookup(&experiment).map_err(|e| e.to_string())?;
            let kind = ModelKind::from_str(&model).map_err(|e| e.to_string())?;
            let data_dir = data_dir.unwrap_or_else(default_data_dir);
            let data = prepare_data(&def, &data_dir).map_err(|e| e.to_string())?;
            let sweep_seed = derive_subseed(seed, 10_000);
            let sweep = lr_range_test(
                || build_architecture(&def.arch, kind, sweep_seed, def.scheme),
                &data.train,
                def.loss,
                def.batch,
                def.lr_min,
                def.lr_max,
                def.sweep_steps,
                sweep_seed,
            )
            .map_err(|e| e.to_string())?;
            println!("lr,smoothed_loss");
            for (lr, loss) in &sweep.curve {
                println!("{lr:.6e},{loss:.6e}");
            }
            println!("chosen lr: {:.6e}", sweep.chosen_lr);
            Ok(())
        }
        Command::FetchData {
            data_dir,
            experiment,
        } => {
            let data_dir = data_dir.unwrap_or_else(default_data_dir);
            let def = lookup(&experiment).map_err(|e| e.to_string())?;
            let DatasetSpec::Idx {
                train_images,
                train_labels,
                test_images,
                test_labels,
            } = &def.dataset
            else {
                println!("{experiment} is synthetic; nothing to fetch");
                return Ok(());
            };
            let mut missing = Vec::new();
            for rel in [train_images, train_labels, test_images, test_labels] {
                let path = data_dir.join(rel);
                match load_idx_header(&path) {
                    Ok(n) => println!("ok      {} ({n} records)", path.display()),
                    Err(e) => {
                        println!("missing {} ({e})", path.display());
                        missing.push(rel.clone());
                    }
                }
            }
            if missing.is_empty() {
                Ok(())
            } else {
                Err(format!(
                    "{} file(s) missing; this build has no downloader — place the standard \
                     IDX files under {} (see README for sources)",
                    missing.len(),
                    data_dir.display()
                ))
            }
        }
    }
}

/// Record count of an IDX file, or an error describing what is wrong.
fn load_idx_header(path: &std::path::Path) -> Result<usize, String> {
    if path.to_string_lossy().contains("images") {
        prp_core::data::read_idx_images(path)
            .map(|(n, _, _, _)| n)
            .map_err(|e| e.to_string())
    } else {
        prp_core::data::read_idx_labels(path)
            .map(|l| l.len())
            .map_err(|e| e.to_string())
    }
}

fn main() -> ExitCode {
    match real_main() {
        Ok(()) => ExitCode::SUCCESS,
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
