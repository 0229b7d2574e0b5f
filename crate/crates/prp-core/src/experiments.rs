//! Config-driven experiment runner: a registry of benchmark protocols,
//! two-stage execution (learning-rate range test, then multi-seed training),
//! machine-readable run results, comparison reports, loss-curve export,
//! checkpoints, and autoencoder reconstruction grids.

use crate::data::{
    gen_checkerboard, gen_circles, gen_linear, gen_polynomial, gen_xor, load_idx,
    standardize_regression, BatchSize, Dataset, Standardization, Targets, TaskKind,
    GENERATOR_CONSTANTS,
};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::metrics::{
    accuracy, argmax_classes, binary_classes, bit_efficiency_score, macro_f1, mse,
    regression_metrics, MetricReport,
};
use crate::models::{build_architecture, ModelKind, Sequential};
use crate::projections::{InitScheme, ProjectionDescriptor};
use crate::rng::derive_subseed;
use crate::training::{
    aggregate, evaluate_loss, lr_range_test, predict, train, Aggregate, Loss, TrainConfig,
    TrainRecord,
};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

/// Environment variable that overrides the default dataset directory.
pub const DATA_DIR_ENV: &str = "PRP_DATA_DIR";

/// Seed for synthetic dataset generation. Fixed so every model kind and
/// every training seed sees the identical dataset; run seeds only vary
/// initialization and batch order.
pub const SYNTH_DATA_SEED: u64 = 7;

/// Where a registry entry gets its data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "source")]
pub enum DatasetSpec {
    Synthetic {
        generator: String,
        n: usize,
        data_seed: u64,
    },
    /// IDX file quadruple, relative to the data directory.
    Idx {
        train_images: String,
        train_labels: String,
        test_images: String,
        test_labels: String,
    },
}

/// A fully-resolved experiment protocol: everything stage 2 needs except
/// the model kind and seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentDef {
    pub name: String,
    /// Architecture registry key (see `models::architecture_dims`).
    pub arch: String,
    pub task: TaskKind,
    pub dataset: DatasetSpec,
    pub epochs: usize,
    pub batch: BatchSize,
    pub gamma: f64,
    pub loss: Loss,
    /// Projection init for PRP models.
    pub scheme: InitScheme,
    pub lr_min: f64,
    pub lr_max: f64,
    pub sweep_steps: usize,
    /// Optional cap on training samples (reduced profiles).
    pub train_subset: Option<usize>,
}

fn synthetic(name: &str, generator: &str, n: usize, epochs: usize, loss: Loss) -> ExperimentDef {
    ExperimentDef {
        name: name.into(),
        arch: name.trim_end_matches("_ci").into(),
        task: if loss == Loss::Mse {
            TaskKind::Regression
        } else {
            TaskKind::Binary
        },
        dataset: DatasetSpec::Synthetic {
            generator: generator.into(),
            n,
            data_seed: SYNTH_DATA_SEED,
        },
        epochs,
        batch: BatchSize::FullBatch,
        gamma: 0.9999,
        loss,
        scheme: InitScheme::Gaussian,
        lr_min: 1e-4,
        lr_max: 10.0,
        sweep_steps: 100,
        train_subset: None,
    }
}

fn mnist_files(prefix: &str) -> DatasetSpec {
    DatasetSpec::Idx {
        train_images: format!("{prefix}/train-images-idx3-ubyte"),
        train_labels: format!("{prefix}/train-labels-idx1-ubyte"),
        test_images: format!("{prefix}/t10k-images-idx3-ubyte"),
        test_labels: format!("{prefix}/t10k-labels-idx1-ubyte"),
    }
}

/// The experiment registry. Epochs, decay, and batch regimes follow the
/// published protocol: full-batch with gamma = 0.9999 for synthetic tasks
/// (100 epochs linear, 3000 XOR/circles/checkerboard, 4000 polynomial);
/// batch 256 with gamma = 0.95 otherwise (10 epochs MNIST, 20 epochs
/// Fashion-MNIST and the autoencoder). `_ci` entries are reduced smoke
/// profiles for fast test runs.
pub fn registry() -> Vec<ExperimentDef> {
    let mut defs = vec![
        synthetic("linear", "linear", 200, 100, Loss::BceWithLogits),
        synthetic("xor", "xor", 400, 3000, Loss::BceWithLogits),
        synthetic("circles", "circles", 400, 3000, Loss::BceWithLogits),
        synthetic("checkerboard", "checkerboard", 800, 3000, Loss::BceWithLogits),
        synthetic("polynomial", "polynomial", 400, 4000, Loss::Mse),
    ];
    let mnist = ExperimentDef {
        name: "mnist_mlp".into(),
        arch: "mnist_mlp".into(),
        task: TaskKind::Multiclass,
        dataset: mnist_files("mnist"),
        epochs: 10,
        batch: BatchSize::Fixed(256),
        gamma: 0.95,
        loss: Loss::CrossEntropy,
        scheme: InitScheme::Gaussian,
        lr_min: 1e-4,
        lr_max: 10.0,
        sweep_steps: 100,
        train_subset: None,
    };
    defs.push(mnist.clone());
    defs.push(ExperimentDef {
        name: "mnist_mlp_ci".into(),
        epochs: 2,
        // Same flop budget per epoch as the full profile's 256, but 4x the
        // optimizer steps — 80 steps is too few for the 92% ci threshold.
        batch: BatchSize::Fixed(64),
        train_subset: Some(10_000),
        ..mnist.clone()
    });
    defs.push(ExperimentDef {
        name: "fmnist_mlp".into(),
        arch: "fmnist_mlp".into(),
        dataset: mnist_files("fashion-mnist"),
        epochs: 20,
        ..mnist.clone()
    });
    let autoencoder = ExperimentDef {
        name: "autoencoder".into(),
        arch: "autoencoder".into(),
        task: TaskKind::Reconstruction,
        dataset: mnist_files("mnist"),
        epochs: 20,
        batch: BatchSize::Fixed(256),
        gamma: 0.95,
        loss: Loss::Mse,
        scheme: InitScheme::Orthogonal,
        lr_min: 1e-4,
        lr_max: 10.0,
        sweep_steps: 100,
        train_subset: None,
    };
    defs.push(autoencoder.clone());
    defs.push(ExperimentDef {
        name: "autoencoder_ci".into(),
        epochs: 10,
        train_subset: Some(10_000),
        ..autoencoder
    });
    defs
}

pub fn lookup(name: &str) -> Result<ExperimentDef> {
    registry()
        .into_iter()
        .find(|d| d.name == name)
        .ok_or_else(|| Error::UnknownArchitecture(name.to_string()))
}

fn default_models() -> Vec<ModelKind> {
    vec![ModelKind::Prp, ModelKind::Dense]
}

fn default_seeds() -> Vec<u64> {
    vec![0, 1, 2]
}

/// User-facing experiment request; unset fields resolve from the registry.
/// Deserializes from a config file where only `experiment` is required.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub experiment: String,
    #[serde(default = "default_models")]
    pub models: Vec<ModelKind>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub data_dir: Option<PathBuf>,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    /// Skip the range test and use this rate.
    #[serde(default)]
    pub lr: Option<f64>,
    #[serde(default)]
    pub epochs: Option<usize>,
    #[serde(default)]
    pub init_scheme: Option<InitScheme>,
    #[serde(default)]
    pub train_subset: Option<usize>,
}

impl ExperimentSpec {
    pub fn new(experiment: &str) -> ExperimentSpec {
        ExperimentSpec {
            experiment: experiment.into(),
            models: vec![ModelKind::Prp, ModelKind::Dense],
            seeds: vec![0, 1, 2],
            data_dir: None,
            out_dir: None,
            lr: None,
            epochs: None,
            init_scheme: None,
            train_subset: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::InvalidConfig("seed list is empty".into()));
        }
        if self.models.is_empty() {
            return Err(Error::InvalidConfig("model list is empty".into()));
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            return Err(Error::InvalidConfig("duplicate seeds".into()));
        }
        Ok(())
    }

    /// Registry defaults with this spec's overrides applied.
    pub fn resolve(&self) -> Result<ExperimentDef> {
        self.validate()?;
        let mut def = lookup(&self.experiment)?;
        if let Some(e) = self.epochs {
            def.epochs = e;
        }
        if let Some(s) = self.init_scheme {
            def.scheme = s;
        }
        if let Some(n) = self.train_subset {
            def.train_subset = Some(n);
        }
        Ok(def)
    }
}

/// Default dataset directory: `$PRP_DATA_DIR` if set, else `data/`.
pub fn default_data_dir() -> PathBuf {
    std::env::var_os(DATA_DIR_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("data"))
}

/// Materialized data for one experiment.
pub struct PreparedData {
    pub train: Dataset,
    pub test: Option<Dataset>,
    /// Regression only: raw-scale targets and the standardization applied
    /// to the training view, for reporting metrics on the original scale.
    pub raw_targets: Option<(Matrix, Standardization)>,
    pub d_in: usize,
    pub n_train: usize,
}

/// Build the train/test data a definition asks for.
pub fn prepare_data(def: &ExperimentDef, data_dir: &Path) -> Result<PreparedData> {
    let (mut train, mut test, raw_targets) = match &def.dataset {
        DatasetSpec::Synthetic {
            generator,
            n,
            data_seed,
        } => {
            let raw = match generator.as_str() {
                "linear" => gen_linear(*n, *data_seed),
                "xor" => gen_xor(*n, *data_seed),
                "circles" => gen_circles(*n, *data_seed),
                "checkerboard" => gen_checkerboard(*n, *data_seed),
                "polynomial" => gen_polynomial(*n, *data_seed),
                other => {
                    return Err(Error::InvalidConfig(format!("unknown generator '{other}'")))
                }
            };
            if def.task == TaskKind::Regression {
                let raw_t = match &raw.targets {
                    Targets::Values(m) => m.clone(),
                    _ => unreachable!("regression targets are values"),
                };
                let (std_view, stats) = standardize_regression(&raw)?;
                (std_view, None, Some((raw_t, stats)))
            } else {
                (raw, None, None)
            }
        }
        DatasetSpec::Idx {
            train_images,
            train_labels,
            test_images,
            test_labels,
        } => {
            let train = load_idx(&data_dir.join(train_images), &data_dir.join(train_labels))?;
            let test = load_idx(&data_dir.join(test_images), &data_dir.join(test_labels))?;
            (train, Some(test), None)
        }
    };
    if let Some(cap) = def.train_subset {
        train = train.truncate(cap)?;
    }
    if def.task == TaskKind::Reconstruction {
        train = train.to_reconstruction();
        test = test.map(|t| t.to_reconstruction());
    }
    Ok(PreparedData {
        d_in: train.inputs.cols(),
        n_train: train.len(),
        train,
        test,
        raw_targets,
    })
}

/// One seed's outcome inside a RunResult.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SeedRun {
    pub seed: u64,
    pub metrics: MetricReport,
    pub train_loss_final: f64,
    pub test_loss_final: Option<f64>,
    pub best_test_loss: Option<f64>,
    pub curves: TrainRecord,
    pub projection_descriptors: Vec<ProjectionDescriptor>,
}

/// Self-contained record of one (experiment, model kind) execution across
/// seeds. Re-running from the echoed definition reproduces every number.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunResult {
    pub experiment: ExperimentDef,
    pub generator_constants: crate::data::GeneratorConstants,
    pub model: ModelKind,
    pub seeds: Vec<u64>,
    pub param_count: usize,
    pub chosen_lr: f64,
    /// (lr, smoothed loss) pairs from stage 1; empty when lr was forced.
    pub lr_sweep: Vec<(f64, f64)>,
    pub per_seed: Vec<SeedRun>,
    /// Metric name -> mean/std across seeds.
    pub aggregates: BTreeMap<String, Aggregate>,
    pub duration_secs: f64,
}

impl RunResult {
    /// JSON with the wall-clock field zeroed: the portion of the record
    /// that must be bit-identical across repeated runs.
    pub fn deterministic_json(&self) -> Result<String> {
        let mut clone = self.clone();
        clone.duration_secs = 0.0;
        Ok(serde_json::to_string_pretty(&clone)?)
    }
}

fn classification_truth(targets: &Targets) -> Vec<usize> {
    match targets {
        Targets::Classes(c) => c.clone(),
        Targets::Values(m) => m.data().iter().map(|&v| (v > 0.5) as usize).collect(),
    }
}

/// Task-appropriate metrics for a trained model, evaluated on the test
/// split when one exists, else on the training data.
pub fn evaluate_metrics(
    model: &mut Sequential,
    def: &ExperimentDef,
    data: &PreparedData,
) -> Result<MetricReport> {
    let eval = data.test.as_ref().unwrap_or(&data.train);
    let pred = predict(model, &eval.inputs)?;
    match def.task {
        TaskKind::Binary | TaskKind::Multiclass => {
            let (classes, n_classes) = if def.task == TaskKind::Binary {
                (binary_classes(&pred), 2)
            } else {
                (argmax_classes(&pred), pred.cols())
            };
            let truth = classification_truth(&eval.targets);
            let acc = accuracy(&classes, &truth)?;
            let f1 = macro_f1(&classes, &truth, n_classes)?;
            let bes = bit_efficiency_score(
                acc,
                1.0 / n_classes as f64,
                data.n_train,
                data.d_in,
                model.param_count(),
            )
            .ok();
            Ok(MetricReport::Classification {
                accuracy: acc,
                macro_f1: f1,
                bit_efficiency: bes,
            })
        }
        TaskKind::Regression => {
            let (raw_t, stats) = data
                .raw_targets
                .as_ref()
                .ok_or_else(|| Error::InvalidConfig("regression needs raw targets".into()))?;
            let mut raw_pred = pred;
            for v in raw_pred.data_mut() {
                *v = *v * stats.y_std + stats.y_mean;
            }
            let m = regression_metrics(&raw_pred, raw_t)?;
            Ok(MetricReport::Regression {
                mse: m.mse,
                mae: m.mae,
                r2: m.r2,
            })
        }
        TaskKind::Reconstruction => {
            let t = match &eval.targets {
                Targets::Values(m) => m,
                _ => return Err(Error::InvalidConfig("reconstruction needs values".into())),
            };
            Ok(MetricReport::Reconstruction {
                mse: mse(&pred, t)?,
            })
        }
    }
}

fn metric_entries(report: &MetricReport) -> Vec<(&'static str, f64)> {
    match report {
        MetricReport::Classification {
            accuracy,
            macro_f1,
            bit_efficiency,
        } => {
            let mut v = vec![("accuracy", *accuracy), ("macro_f1", *macro_f1)];
            if let Some(b) = bit_efficiency {
                v.push(("bit_efficiency", *b));
            }
            v
        }
        MetricReport::Regression { mse, mae, r2 } => {
            vec![("mse", *mse), ("mae", *mae), ("r2", *r2)]
        }
        MetricReport::Reconstruction { mse } => vec![("mse", *mse)],
    }
}

/// Run one model kind through both stages: a learning-rate range test on
/// the first seed's initialization, then full training per seed at the
/// chosen rate.
pub fn run_model(
    def: &ExperimentDef,
    model_kind: ModelKind,
    seeds: &[u64],
    data: &PreparedData,
    forced_lr: Option<f64>,
) -> Result<RunResult> {
    let start = Instant::now();
    let scheme = def.scheme;
    let arch = def.arch.clone();

    let (chosen_lr, lr_sweep) = match forced_lr {
        Some(lr) => (lr, Vec::new()),
        None => {
            let sweep_seed = derive_subseed(seeds[0], 10_000);
            let sweep = lr_range_test(
                || build_architecture(&arch, model_kind, sweep_seed, scheme),
                &data.train,
                def.loss,
                def.batch,
                def.lr_min,
                def.lr_max,
                def.sweep_steps,
                sweep_seed,
            )?;
            (sweep.chosen_lr, sweep.curve)
        }
    };

    let mut per_seed = Vec::with_capacity(seeds.len());
    let mut param_count = 0;
    for &seed in seeds {
        let mut model = build_architecture(&arch, model_kind, seed, scheme)?;
        param_count = model.param_count();
        let cfg = TrainConfig {
            epochs: def.epochs,
            batch_size: def.batch,
            lr0: chosen_lr,
            gamma: def.gamma,
            loss: def.loss,
            seed,
            eval_every_epoch: true,
        };
        let curves = train(&mut model, &data.train, data.test.as_ref(), &cfg)?;
        let metrics = evaluate_metrics(&mut model, def, data)?;
        let train_loss_final = curves.train_loss_per_epoch.last().copied().unwrap_or(f64::NAN);
        let test_loss_final = curves.test_loss_per_epoch.last().copied();
        let best_test_loss = curves
            .test_loss_per_epoch
            .iter()
            .copied()
            .fold(None, |acc: Option<f64>, v| {
                Some(acc.map_or(v, |a| a.min(v)))
            });
        per_seed.push(SeedRun {
            seed,
            metrics,
            train_loss_final,
            test_loss_final,
            best_test_loss,
            curves,
            projection_descriptors: model.projection_descriptors(),
        });
    }

    let mut aggregates = BTreeMap::new();
    let mut columns: BTreeMap<&'static str, Vec<f64>> = BTreeMap::new();
    for run in &per_seed {
        for (name, value) in metric_entries(&run.metrics) {
            columns.entry(name).or_default().push(value);
        }
        columns
            .entry("train_loss")
            .or_default()
            .push(run.train_loss_final);
        if let Some(v) = run.test_loss_final {
            columns.entry("test_loss_final").or_default().push(v);
        }
        if let Some(v) = run.best_test_loss {
            columns.entry("best_test_loss").or_default().push(v);
        }
    }
    for (name, values) in columns {
        aggregates.insert(name.to_string(), aggregate(&values));
    }

    Ok(RunResult {
        experiment: def.clone(),
        generator_constants: GENERATOR_CONSTANTS,
        model: model_kind,
        seeds: seeds.to_vec(),
        param_count,
        chosen_lr,
        lr_sweep,
        per_seed,
        aggregates,
        duration_secs: start.elapsed().as_secs_f64(),
    })
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Run directory for one (definition, model, seeds) triple, named by a
/// content hash so reruns of the same spec land in the same place.
pub fn run_dir(out_dir: &Path, def: &ExperimentDef, model: ModelKind, seeds: &[u64]) -> PathBuf {
    let key = serde_json::to_string(&(def, model, seeds)).expect("serializable spec");
    out_dir
        .join(&def.name)
        .join(format!("{}-{:016x}", model.as_str(), fnv1a64(key.as_bytes())))
}

/// Next free file name in `dir`: `result.json`, then `result-2.json`, ...
/// Existing files are never overwritten.
fn append_only_path(dir: &Path, stem: &str, ext: &str) -> PathBuf {
    let first = dir.join(format!("{stem}.{ext}"));
    if !first.exists() {
        return first;
    }
    for i in 2.. {
        let p = dir.join(format!("{stem}-{i}.{ext}"));
        if !p.exists() {
            return p;
        }
    }
    unreachable!()
}

/// Execute an experiment spec across its model kinds. Each model writes a
/// `result.json` (and per-seed checkpoints) into its content-hash run
/// directory. A model kind that fails is recorded and does not abort the
/// others.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<Vec<RunResult>> {
    let def = spec.resolve()?;
    let data_dir = spec.data_dir.clone().unwrap_or_else(default_data_dir);
    let out_dir = spec.out_dir.clone().unwrap_or_else(|| PathBuf::from("runs"));
    let data = prepare_data(&def, &data_dir)?;

    let mut results = Vec::new();
    let mut first_err: Option<Error> = None;
    for &model in &spec.models {
        match run_model(&def, model, &spec.seeds, &data, spec.lr) {
            Ok(result) => {
                let dir = run_dir(&out_dir, &def, model, &spec.seeds);
                std::fs::create_dir_all(&dir)?;
                let path = append_only_path(&dir, "result", "json");
                std::fs::write(&path, serde_json::to_string_pretty(&result)?)?;
                results.push(result);
            }
            Err(e) => {
                if first_err.is_none() {
                    first_err = Some(e);
                }
            }
        }
    }
    if results.is_empty() {
        if let Some(e) = first_err {
            return Err(e);
        }
    }
    Ok(results)
}

/// Serialized model state: learnable parameters plus projection
/// descriptors. The fixed matrices are regenerated from their descriptors
/// on load and verified by checksum, never stored.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub arch: String,
    pub model: ModelKind,
    pub scheme: InitScheme,
    pub master_seed: u64,
    pub projection_descriptors: Vec<ProjectionDescriptor>,
    pub params: Vec<Vec<f64>>,
}

pub fn save_checkpoint(
    model: &Sequential,
    arch: &str,
    kind: ModelKind,
    scheme: InitScheme,
    master_seed: u64,
    path: &Path,
) -> Result<()> {
    let ckpt = Checkpoint {
        arch: arch.to_string(),
        model: kind,
        scheme,
        master_seed,
        projection_descriptors: model.projection_descriptors(),
        params: model.param_slices().iter().map(|s| s.to_vec()).collect(),
    };
    std::fs::write(path, serde_json::to_string(&ckpt)?)?;
    Ok(())
}

/// Rebuild a model from a checkpoint: reconstruct the architecture from
/// (arch, kind, seed, scheme), verify every regenerated projection matches
/// the stored descriptor bit-for-bit via checksum, then restore parameters.
pub fn load_checkpoint(path: &Path) -> Result<Sequential> {
    let ckpt: Checkpoint = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    let mut model = build_architecture(&ckpt.arch, ckpt.model, ckpt.master_seed, ckpt.scheme)?;
    let rebuilt = model.projection_descriptors();
    if rebuilt.len() != ckpt.projection_descriptors.len() {
        return Err(Error::InvalidConfig(format!(
            "checkpoint has {} projection descriptors, architecture has {}",
            ckpt.projection_descriptors.len(),
            rebuilt.len()
        )));
    }
    for (stored, regen) in ckpt.projection_descriptors.iter().zip(&rebuilt) {
        if stored.checksum != regen.checksum {
            return Err(Error::ChecksumMismatch {
                stored: stored.checksum,
                regenerated: regen.checksum,
            });
        }
    }
    let mut slices = model.param_slices_mut();
    if slices.len() != ckpt.params.len() {
        return Err(Error::InvalidConfig(format!(
            "checkpoint has {} parameter tensors, architecture has {}",
            ckpt.params.len(),
            slices.len()
        )));
    }
    for (slice, stored) in slices.iter_mut().zip(&ckpt.params) {
        if slice.len() != stored.len() {
            return Err(Error::BadDataLen {
                len: stored.len(),
                rows: 1,
                cols: slice.len(),
            });
        }
        slice.copy_from_slice(stored);
    }
    Ok(model)
}

/// Write (epoch, train_loss, test_loss) rows as CSV. Test loss renders
/// empty when the run had no test split.
pub fn export_curves(result: &RunResult, seed_index: usize, path: &Path) -> Result<()> {
    let run = result
        .per_seed
        .get(seed_index)
        .ok_or(Error::EmptyInput("export_curves"))?;
    let mut out = String::from("epoch,train_loss,test_loss\n");
    for (epoch, train) in run.curves.train_loss_per_epoch.iter().enumerate() {
        let test = run
            .curves
            .test_loss_per_epoch
            .get(epoch)
            .map(|v| format!("{v:.17e}"))
            .unwrap_or_default();
        out.push_str(&format!("{epoch},{train:.17e},{test}\n"));
    }
    std::fs::write(path, out)?;
    Ok(())
}

fn fmt_aggregate(a: Option<&Aggregate>, scale: f64, decimals: usize) -> String {
    match a {
        None => "--".into(),
        Some(a) if a.single_run => format!("{:.*}", decimals, a.mean * scale),
        Some(a) => format!(
            "{:.*} ± {:.*}",
            decimals,
            a.mean * scale,
            decimals,
            a.std * scale
        ),
    }
}

/// Render comparison tables (one per experiment) from every readable
/// `result*.json` under `dir`. Returns the text report plus warnings for
/// files that were skipped as corrupt.
pub fn report(dir: &Path) -> Result<(String, Vec<String>)> {
    let mut results: Vec<RunResult> = Vec::new();
    let mut warnings = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        let entries = std::fs::read_dir(&d)?;
        for entry in entries {
            let path = entry?.path();
            if path.is_dir() {
                stack.push(path);
            } else if path
                .file_name()
                .map(|n| {
                    let n = n.to_string_lossy();
                    n.starts_with("result") && n.ends_with(".json")
                })
                .unwrap_or(false)
            {
                match std::fs::read_to_string(&path)
                    .map_err(Error::from)
                    .and_then(|s| Ok(serde_json::from_str::<RunResult>(&s)?))
                {
                    Ok(r) => results.push(r),
                    Err(e) => warnings.push(format!("skipping {}: {e}", path.display())),
                }
            }
        }
    }
    if results.is_empty() {
        return Err(Error::EmptyInput("report"));
    }
    results.sort_by(|a, b| {
        (&a.experiment.name, a.model.as_str()).cmp(&(&b.experiment.name, b.model.as_str()))
    });

    let mut out = String::new();
    let mut by_exp: BTreeMap<String, Vec<&RunResult>> = BTreeMap::new();
    for r in &results {
        by_exp.entry(r.experiment.name.clone()).or_default().push(r);
    }
    for (exp, runs) in &by_exp {
        out.push_str(&format!("## {exp}\n"));
        let task = runs[0].experiment.task;
        let metric_rows: &[(&str, &str, f64, usize)] = match task {
            TaskKind::Binary | TaskKind::Multiclass => &[
                ("Accuracy (%)", "accuracy", 100.0, 2),
                ("Macro-F1", "macro_f1", 1.0, 3),
                ("BES", "bit_efficiency", 1.0, 2),
            ],
            TaskKind::Regression => &[
                ("MSE", "mse", 1.0, 4),
                ("MAE", "mae", 1.0, 4),
                ("R^2", "r2", 1.0, 5),
            ],
            TaskKind::Reconstruction => &[("Test MSE", "mse", 1.0, 4)],
        };
        let mut header = vec!["Metric".to_string()];
        header.extend(runs.iter().map(|r| r.model.as_str().to_string()));
        let mut rows: Vec<Vec<String>> = vec![header];
        let mut params = vec!["Parameters".to_string()];
        params.extend(runs.iter().map(|r| r.param_count.to_string()));
        rows.push(params);
        for (label, key, scale, decimals) in metric_rows {
            let mut row = vec![label.to_string()];
            row.extend(
                runs.iter()
                    .map(|r| fmt_aggregate(r.aggregates.get(*key), *scale, *decimals)),
            );
            rows.push(row);
        }
        for (label, key) in [
            ("Train Loss", "train_loss"),
            ("Test Loss (Final)", "test_loss_final"),
            ("Best Test Loss", "best_test_loss"),
        ] {
            let mut row = vec![label.to_string()];
            row.extend(
                runs.iter()
                    .map(|r| fmt_aggregate(r.aggregates.get(key), 1.0, 4)),
            );
            rows.push(row);
        }
        let widths: Vec<usize> = (0..rows[0].len())
            .map(|c| rows.iter().map(|r| r[c].len()).max().unwrap())
            .collect();
        for row in &rows {
            let line: Vec<String> = row
                .iter()
                .zip(&widths)
                .map(|(cell, w)| format!("{cell:<w$}"))
                .collect();
            out.push_str(&line.join("  "));
            out.push('\n');
        }
        if runs.iter().any(|r| r.seeds.len() == 1) {
            out.push_str("Note: evaluated in a single run (no std across seeds).\n");
        }
        out.push('\n');
    }
    Ok((out, warnings))
}

/// CSV version of the report: one row per (experiment, model, metric).
pub fn report_csv(dir: &Path) -> Result<String> {
    let mut results: Vec<RunResult> = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d)? {
            let path = entry?.path();
            if path.is_dir() {
                stack.push(path);
            } else if path.extension().map(|e| e == "json").unwrap_or(false) {
                if let Ok(r) = std::fs::read_to_string(&path)
                    .map_err(Error::from)
                    .and_then(|s| Ok(serde_json::from_str::<RunResult>(&s)?))
                {
                    results.push(r);
                }
            }
        }
    }
    if results.is_empty() {
        return Err(Error::EmptyInput("report_csv"));
    }
    results.sort_by(|a, b| {
        (&a.experiment.name, a.model.as_str()).cmp(&(&b.experiment.name, b.model.as_str()))
    });
    let mut out = String::from("experiment,model,params,metric,mean,std,n\n");
    for r in &results {
        for (key, a) in &r.aggregates {
            out.push_str(&format!(
                "{},{},{},{},{:.17e},{:.17e},{}\n",
                r.experiment.name,
                r.model.as_str(),
                r.param_count,
                key,
                a.mean,
                a.std,
                a.n
            ));
        }
    }
    Ok(out)
}

/// Tile a grid of 28x28 images: first column originals, then one column of
/// reconstructions per model. Values are de-normalized to [0, 255].
///
/// `originals` holds normalized inputs in [-1, 1]; each entry of `recons`
/// holds the matching model outputs in [0, 1]. Returns (width, height,
/// pixels) row-major.
pub fn reconstruction_grid(
    originals: &Matrix,
    recons: &[Matrix],
    side: usize,
) -> Result<(usize, usize, Vec<u8>)> {
    let n = originals.rows();
    if n == 0 {
        return Err(Error::EmptyInput("reconstruction_grid"));
    }
    let d = side * side;
    if originals.cols() != d || recons.iter().any(|r| r.shape() != (n, d)) {
        return Err(Error::DimMismatch {
            op: "reconstruction_grid",
            lhs: format!("{} columns", originals.cols()),
            rhs: format!("{side}x{side} tiles"),
        });
    }
    let cols = 1 + recons.len();
    let (w, h) = (cols * side, n * side);
    let mut pixels = vec![0u8; w * h];
    let mut blit = |tile_row: usize, tile_col: usize, values: &[f64], denorm: bool| {
        for py in 0..side {
            for px in 0..side {
                let v = values[py * side + px];
                let unit = if denorm { v * 0.5 + 0.5 } else { v };
                let byte = (unit.clamp(0.0, 1.0) * 255.0).round() as u8;
                pixels[(tile_row * side + py) * w + tile_col * side + px] = byte;
            }
        }
    };
    for i in 0..n {
        blit(i, 0, originals.row(i), true);
        for (j, r) in recons.iter().enumerate() {
            blit(i, 1 + j, r.row(i), false);
        }
    }
    Ok((w, h, pixels))
}

/// Binary PGM (P5) writer.
pub fn write_pgm(path: &Path, width: usize, height: usize, pixels: &[u8]) -> Result<()> {
    if pixels.len() != width * height {
        return Err(Error::BadDataLen {
            len: pixels.len(),
            rows: height,
            cols: width,
        });
    }
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    std::fs::write(path, out)?;
    Ok(())
}

/// Run trained autoencoders over the first `n` samples and write the
/// original/reconstruction grid as a PGM. Returns each model's MSE over
/// the full evaluation set.
pub fn reconstruct_samples(
    models: &mut [Sequential],
    data: &Dataset,
    n: usize,
    path: &Path,
) -> Result<Vec<f64>> {
    if models.is_empty() {
        return Err(Error::EmptyInput("reconstruct_samples"));
    }
    let n = n.min(data.len());
    let head = data.inputs_slice(0, n)?;
    let mut recons = Vec::with_capacity(models.len());
    let mut mses = Vec::with_capacity(models.len());
    for model in models.iter_mut() {
        recons.push(predict(model, &head)?);
        mses.push(evaluate_loss(model, data, Loss::Mse)?);
    }
    let side = (data.inputs.cols() as f64).sqrt() as usize;
    let (w, h, pixels) = reconstruction_grid(&head, &recons, side)?;
    write_pgm(path, w, h, pixels.as_slice())?;
    Ok(mses)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// The registry must encode the published protocol constants verbatim.
    #[test]
    fn registry_matches_protocol_constants() {
        let expect: &[(&str, usize, f64, BatchSize)] = &[
            ("linear", 100, 0.9999, BatchSize::FullBatch),
            ("xor", 3000, 0.9999, BatchSize::FullBatch),
            ("circles", 3000, 0.9999, BatchSize::FullBatch),
            ("checkerboard", 3000, 0.9999, BatchSize::FullBatch),
            ("polynomial", 4000, 0.9999, BatchSize::FullBatch),
            ("mnist_mlp", 10, 0.95, BatchSize::Fixed(256)),
            ("fmnist_mlp", 20, 0.95, BatchSize::Fixed(256)),
            ("autoencoder", 20, 0.95, BatchSize::Fixed(256)),
        ];
        for &(name, epochs, gamma, batch) in expect {
            let def = lookup(name).unwrap();
            assert_eq!(def.epochs, epochs, "{name}");
            assert_eq!(def.gamma, gamma, "{name}");
            assert_eq!(def.batch, batch, "{name}");
        }
        // Range-test bounds default to 1e-4 .. 10.
        for def in registry() {
            assert_eq!((def.lr_min, def.lr_max), (1e-4, 10.0), "{}", def.name);
        }
        // The autoencoder is the one orthogonally-initialized protocol.
        assert_eq!(lookup("autoencoder").unwrap().scheme, InitScheme::Orthogonal);
        assert_eq!(lookup("mnist_mlp").unwrap().scheme, InitScheme::Gaussian);
    }

    #[test]
    fn dataset_sizes_match_protocol() {
        for (name, n) in [("linear", 200), ("xor", 400), ("checkerboard", 800)] {
            match lookup(name).unwrap().dataset {
                DatasetSpec::Synthetic { n: got, .. } => assert_eq!(got, n, "{name}"),
                _ => panic!("{name} should be synthetic"),
            }
        }
    }

    #[test]
    fn spec_validation() {
        let mut spec = ExperimentSpec::new("linear");
        spec.seeds.clear();
        assert!(matches!(spec.resolve(), Err(Error::InvalidConfig(_))));

        let mut spec = ExperimentSpec::new("linear");
        spec.seeds = vec![1, 1];
        assert!(spec.validate().is_err());

        assert!(ExperimentSpec::new("no_such_experiment").resolve().is_err());

        let mut spec = ExperimentSpec::new("xor");
        spec.epochs = Some(7);
        spec.init_scheme = Some(InitScheme::Orthogonal);
        let def = spec.resolve().unwrap();
        assert_eq!(def.epochs, 7);
        assert_eq!(def.scheme, InitScheme::Orthogonal);
    }

    #[test]
    fn run_dir_is_content_addressed() {
        let def = lookup("linear").unwrap();
        let a = run_dir(Path::new("out"), &def, ModelKind::Prp, &[0, 1, 2]);
        let b = run_dir(Path::new("out"), &def, ModelKind::Prp, &[0, 1, 2]);
        assert_eq!(a, b);
        let c = run_dir(Path::new("out"), &def, ModelKind::Prp, &[0, 1]);
        assert_ne!(a, c);
        let d = run_dir(Path::new("out"), &def, ModelKind::Dense, &[0, 1, 2]);
        assert_ne!(a, d);
    }

    #[test]
    fn tiny_run_end_to_end() {
        let mut spec = ExperimentSpec::new("linear");
        spec.models = vec![ModelKind::Prp, ModelKind::Dense];
        spec.seeds = vec![0];
        spec.epochs = Some(5);
        spec.lr = Some(0.05);
        let tmp = std::env::temp_dir().join("prp_exp_tiny");
        let _ = std::fs::remove_dir_all(&tmp);
        spec.out_dir = Some(tmp.clone());
        let results = run_experiment(&spec).unwrap();
        assert_eq!(results.len(), 2);
        for r in &results {
            assert_eq!(r.chosen_lr, 0.05);
            assert!(r.lr_sweep.is_empty());
            assert_eq!(r.per_seed.len(), 1);
            assert_eq!(r.per_seed[0].curves.train_loss_per_epoch.len(), 5);
            assert!(r.aggregates["accuracy"].single_run);
        }
        assert_eq!(results[0].param_count, 4);
        assert_eq!(results[1].param_count, 3);

        // Files land in content-hash directories and are append-only.
        let (text, warnings) = report(&tmp).unwrap();
        assert!(warnings.is_empty());
        assert!(text.contains("## linear"));
        assert!(text.contains("single run"));
        run_experiment(&spec).unwrap();
        let def = spec.resolve().unwrap();
        let dir = run_dir(&tmp, &def, ModelKind::Prp, &spec.seeds);
        assert!(dir.join("result.json").exists());
        assert!(dir.join("result-2.json").exists());
    }

    #[test]
    fn repeat_runs_are_bit_identical() {
        let def = lookup("linear").unwrap();
        let data = prepare_data(&def, Path::new("unused")).unwrap();
        let mut def = def;
        def.epochs = 5;
        let a = run_model(&def, ModelKind::Prp, &[0, 1], &data, Some(0.05)).unwrap();
        let b = run_model(&def, ModelKind::Prp, &[0, 1], &data, Some(0.05)).unwrap();
        assert_eq!(
            a.deterministic_json().unwrap(),
            b.deterministic_json().unwrap()
        );
    }

    #[test]
    fn report_empty_dir_errors() {
        let tmp = std::env::temp_dir().join("prp_exp_empty");
        let _ = std::fs::remove_dir_all(&tmp);
        std::fs::create_dir_all(&tmp).unwrap();
        assert!(matches!(report(&tmp), Err(Error::EmptyInput("report"))));
    }

    #[test]
    fn report_skips_corrupt_files() {
        let mut spec = ExperimentSpec::new("linear");
        spec.seeds = vec![0];
        spec.epochs = Some(2);
        spec.lr = Some(0.05);
        spec.models = vec![ModelKind::Prp];
        let tmp = std::env::temp_dir().join("prp_exp_corrupt");
        let _ = std::fs::remove_dir_all(&tmp);
        spec.out_dir = Some(tmp.clone());
        run_experiment(&spec).unwrap();
        std::fs::write(tmp.join("linear").join("result-bad.json"), "{not json").unwrap();
        let (text, warnings) = report(&tmp).unwrap();
        assert!(text.contains("## linear"));
        assert_eq!(warnings.len(), 1);
        assert!(warnings[0].contains("result-bad.json"));
    }

    #[test]
    fn export_curves_round_trip() {
        let def = ExperimentDef {
            epochs: 10,
            ..lookup("linear").unwrap()
        };
        let data = prepare_data(&def, Path::new("unused")).unwrap();
        let result = run_model(&def, ModelKind::Dense, &[0], &data, Some(0.05)).unwrap();
        let tmp = std::env::temp_dir().join("prp_curves.csv");
        export_curves(&result, 0, &tmp).unwrap();
        let text = std::fs::read_to_string(&tmp).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "epoch,train_loss,test_loss");
        assert_eq!(lines.len(), 11); // header + one row per epoch
        for (epoch, line) in lines[1..].iter().enumerate() {
            let fields: Vec<&str> = line.split(',').collect();
            assert_eq!(fields[0].parse::<usize>().unwrap(), epoch);
            let parsed: f64 = fields[1].parse().unwrap();
            assert_eq!(parsed, result.per_seed[0].curves.train_loss_per_epoch[epoch]);
            assert!(fields[2].is_empty()); // no test split
        }
    }

    #[test]
    fn checkpoint_round_trip_restores_outputs_exactly() {
        let def = ExperimentDef {
            epochs: 3,
            ..lookup("xor").unwrap()
        };
        let data = prepare_data(&def, Path::new("unused")).unwrap();
        let mut model = build_architecture("xor", ModelKind::Prp, 0, InitScheme::Gaussian).unwrap();
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: BatchSize::FullBatch,
            lr0: 0.05,
            gamma: 0.9999,
            loss: Loss::BceWithLogits,
            seed: 0,
            eval_every_epoch: false,
        };
        train(&mut model, &data.train, None, &cfg).unwrap();
        let before = predict(&mut model, &data.train.inputs).unwrap();

        let tmp = std::env::temp_dir().join("prp_ckpt.json");
        save_checkpoint(&model, "xor", ModelKind::Prp, InitScheme::Gaussian, 0, &tmp).unwrap();
        let mut restored = load_checkpoint(&tmp).unwrap();
        let after = predict(&mut restored, &data.train.inputs).unwrap();
        assert!(before.max_abs_diff(&after) <= 1e-15);
    }

    #[test]
    fn checkpoint_detects_foreign_projection() {
        let model = build_architecture("xor", ModelKind::Prp, 0, InitScheme::Gaussian).unwrap();
        let tmp = std::env::temp_dir().join("prp_ckpt_bad.json");
        // Claim the parameters came from a different master seed: the
        // regenerated projections will not match the stored checksums.
        save_checkpoint(&model, "xor", ModelKind::Prp, InitScheme::Gaussian, 1, &tmp).unwrap();
        assert!(matches!(
            load_checkpoint(&tmp),
            Err(Error::ChecksumMismatch { .. })
        ));
    }

    #[test]
    fn reconstruction_grid_identity_stub_is_byte_exact() {
        // 4 "images" of 2x2; reconstructions equal the [0,1]-scale originals.
        let mut originals = Matrix::zeros(4, 4);
        for (i, v) in originals.data_mut().iter_mut().enumerate() {
            *v = (i as f64 * 17.0 % 256.0) / 255.0 * 2.0 - 1.0;
        }
        let mut identity = originals.clone();
        for v in identity.data_mut() {
            *v = *v * 0.5 + 0.5;
        }
        let (w, h, pixels) = reconstruction_grid(&originals, &[identity], 2).unwrap();
        assert_eq!((w, h), (2 * 2, 4 * 2)); // 1 + n_models columns, n rows
        for row in 0..h {
            for col in 0..2 {
                let orig = pixels[row * w + col];
                let recon = pixels[row * w + 2 + col];
                assert_eq!(orig, recon);
            }
        }
    }

    #[test]
    fn reconstruction_grid_layout_contract() {
        let originals = Matrix::zeros(3, 784);
        let recons = vec![Matrix::zeros(3, 784), Matrix::zeros(3, 784)];
        let (w, h, pixels) = reconstruction_grid(&originals, &recons, 28).unwrap();
        assert_eq!(w, 28 * 3); // originals + two model columns
        assert_eq!(h, 28 * 3); // three sample rows
        assert_eq!(pixels.len(), w * h);
    }
}
