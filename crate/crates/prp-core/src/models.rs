//! Layer composition: activations, sequential networks, the architecture
//! registry, and the tied-projection autoencoder.

use crate::error::{Error, Result};
use crate::layers::{DenseLayer, GradientSet, ModulationInit, PrpLayer};
use crate::linalg::Matrix;
use crate::projections::{init_gaussian, init_orthogonal, ProjectionDescriptor};
use crate::rng::derive_subseed;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    ReLU,
    Sigmoid,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(&self, x: f64) -> f64 {
        match self {
            Activation::ReLU => x.max(0.0),
            Activation::Sigmoid => 1.0 / (1.0 + (-x).exp()),
            Activation::Identity => x,
        }
    }

    /// Derivative given the pre-activation `x` and output `y`.
    /// The ReLU subgradient at 0 is fixed at 0.
    #[inline]
    pub fn derivative(&self, x: f64, y: f64) -> f64 {
        match self {
            Activation::ReLU => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Identity => 1.0,
        }
    }
}

/// Which layer family a model is built from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Prp,
    Dense,
    LowRankDense,
}

impl std::str::FromStr for ModelKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<ModelKind> {
        match s {
            "prp" => Ok(ModelKind::Prp),
            "dense" | "standard" | "fc" => Ok(ModelKind::Dense),
            "lowrank" | "low_rank" | "low-rank" => Ok(ModelKind::LowRankDense),
            other => Err(Error::InvalidConfig(format!(
                "unknown model kind '{other}' (expected prp|dense|lowrank)"
            ))),
        }
    }
}

impl ModelKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ModelKind::Prp => "prp",
            ModelKind::Dense => "dense",
            ModelKind::LowRankDense => "lowrank",
        }
    }
}

pub enum LayerKind {
    Prp(PrpLayer),
    Dense(DenseLayer),
}

impl LayerKind {
    pub fn d_in(&self) -> usize {
        match self {
            LayerKind::Prp(l) => l.d_in(),
            LayerKind::Dense(l) => l.d_in(),
        }
    }

    pub fn d_out(&self) -> usize {
        match self {
            LayerKind::Prp(l) => l.d_out(),
            LayerKind::Dense(l) => l.d_out(),
        }
    }

    pub fn param_count(&self) -> usize {
        match self {
            LayerKind::Prp(l) => l.param_count(),
            LayerKind::Dense(l) => l.param_count(),
        }
    }

    pub fn param_slices(&self) -> Vec<&[f64]> {
        match self {
            LayerKind::Prp(l) => l.param_slices(),
            LayerKind::Dense(l) => l.param_slices(),
        }
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        match self {
            LayerKind::Prp(l) => l.param_slices_mut(),
            LayerKind::Dense(l) => l.param_slices_mut(),
        }
    }

    fn forward_batch(&mut self, x: &Matrix) -> Result<Matrix> {
        match self {
            LayerKind::Prp(l) => l.forward_batch(x),
            LayerKind::Dense(l) => l.forward_batch(x),
        }
    }

    fn backward_batch(&mut self, dy: &Matrix) -> Result<(GradientSet, Matrix)> {
        match self {
            LayerKind::Prp(l) => l.backward_batch(dy),
            LayerKind::Dense(l) => l.backward_batch(dy),
        }
    }
}

struct StageCache {
    preact: Matrix,
    output: Matrix,
}

pub struct Stage {
    pub layer: LayerKind,
    pub activation: Activation,
    cache: Option<StageCache>,
}

/// Ordered stages of (layer, activation); layer kinds may mix.
pub struct Sequential {
    stages: Vec<Stage>,
}

impl Sequential {
    pub fn new(stages: Vec<(LayerKind, Activation)>) -> Result<Sequential> {
        for pair in stages.windows(2) {
            let (a, b) = (&pair[0].0, &pair[1].0);
            if a.d_out() != b.d_in() {
                return Err(Error::DimMismatch {
                    op: "sequential",
                    lhs: format!("stage output {}", a.d_out()),
                    rhs: format!("next stage input {}", b.d_in()),
                });
            }
        }
        Ok(Sequential {
            stages: stages
                .into_iter()
                .map(|(layer, activation)| Stage {
                    layer,
                    activation,
                    cache: None,
                })
                .collect(),
        })
    }

    pub fn stages(&self) -> &[Stage] {
        &self.stages
    }

    pub fn n_stages(&self) -> usize {
        self.stages.len()
    }

    pub fn d_in(&self) -> usize {
        self.stages.first().map_or(0, |s| s.layer.d_in())
    }

    pub fn d_out(&self) -> usize {
        self.stages.last().map_or(0, |s| s.layer.d_out())
    }

    pub fn param_count(&self) -> usize {
        self.stages.iter().map(|s| s.layer.param_count()).sum()
    }

    /// Descriptors for every fixed projection, in stage order.
    pub fn projection_descriptors(&self) -> Vec<ProjectionDescriptor> {
        self.stages
            .iter()
            .filter_map(|s| match &s.layer {
                LayerKind::Prp(l) => Some(l.projection().descriptor()),
                LayerKind::Dense(_) => None,
            })
            .collect()
    }

    pub fn forward_batch(&mut self, x: &Matrix) -> Result<Matrix> {
        let mut cur = x.clone();
        for stage in &mut self.stages {
            let preact = stage.layer.forward_batch(&cur)?;
            let mut output = preact.clone();
            if stage.activation != Activation::Identity {
                for v in output.data_mut() {
                    *v = stage.activation.apply(*v);
                }
            }
            cur = output.clone();
            stage.cache = Some(StageCache { preact, output });
        }
        Ok(cur)
    }

    /// Backpropagate `dloss_dy` through every stage; returns per-stage
    /// gradients in stage order.
    pub fn backward_batch(&mut self, dloss_dy: &Matrix) -> Result<Vec<GradientSet>> {
        let mut grads = vec![None; self.stages.len()];
        let mut upstream = dloss_dy.clone();
        for (idx, stage) in self.stages.iter_mut().enumerate().rev() {
            let cache = stage.cache.as_ref().ok_or(Error::BackwardBeforeForward)?;
            let mut dpre = upstream;
            if stage.activation != Activation::Identity {
                for i in 0..dpre.rows() {
                    let drow = dpre.row_mut(i);
                    let prow = cache.preact.row(i);
                    let orow = cache.output.row(i);
                    for j in 0..drow.len() {
                        drow[j] *= stage.activation.derivative(prow[j], orow[j]);
                    }
                }
            }
            let (g, dx) = stage.layer.backward_batch(&dpre)?;
            grads[idx] = Some(g);
            upstream = dx;
        }
        Ok(grads.into_iter().map(Option::unwrap).collect())
    }

    /// Flat mutable views of every trainable parameter, stage order.
    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        self.stages
            .iter_mut()
            .flat_map(|s| s.layer.param_slices_mut())
            .collect()
    }

    pub fn param_slices(&self) -> Vec<&[f64]> {
        self.stages
            .iter()
            .flat_map(|s| s.layer.param_slices())
            .collect()
    }

    /// Names aligned with `param_slices`, e.g. `stage1.alpha`.
    pub fn param_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for (i, s) in self.stages.iter().enumerate() {
            match &s.layer {
                LayerKind::Prp(_) => {
                    names.push(format!("stage{i}.alpha"));
                    names.push(format!("stage{i}.w"));
                    names.push(format!("stage{i}.b"));
                }
                LayerKind::Dense(_) => {
                    names.push(format!("stage{i}.weight"));
                    names.push(format!("stage{i}.b"));
                }
            }
        }
        names
    }
}

/// Registered architecture names and their layer widths.
///
/// `checkerboard` and `circles` are distinct datasets that share the same
/// 2 -> 16 -> 1 model.
pub fn architecture_dims(name: &str, kind: ModelKind) -> Result<Vec<usize>> {
    let dims: Vec<usize> = match (name, kind) {
        ("linear", _) => vec![2, 1],
        ("xor" | "circles" | "checkerboard", _) => vec![2, 16, 1],
        ("polynomial", _) => vec![1, 64, 64, 1],
        ("mnist_mlp" | "fmnist_mlp", ModelKind::LowRankDense) => vec![784, 4, 256, 10],
        ("mnist_mlp" | "fmnist_mlp", _) => vec![784, 512, 256, 10],
        ("autoencoder", ModelKind::LowRankDense) => vec![784, 10, 256, 10, 784],
        ("autoencoder", _) => vec![784, 512, 512, 512, 784],
        (other, _) => return Err(Error::UnknownArchitecture(other.to_string())),
    };
    Ok(dims)
}

/// Activations per stage for a registered architecture: ReLU on hidden
/// stages, Identity output for classifiers/regressors (losses take logits),
/// Sigmoid output for the autoencoder.
fn stage_activations(name: &str, n_stages: usize) -> Vec<Activation> {
    let output = if name == "autoencoder" {
        Activation::Sigmoid
    } else {
        Activation::Identity
    };
    (0..n_stages)
        .map(|i| {
            if i + 1 == n_stages {
                output
            } else {
                Activation::ReLU
            }
        })
        .collect()
}

/// Build a feed-forward model with explicit widths. PRP projections use the
/// Gaussian scheme by default; per-layer seeds derive from `master_seed`.
pub fn build_mlp(
    dims: &[usize],
    activations: &[Activation],
    kind: ModelKind,
    master_seed: u64,
    scheme: crate::projections::InitScheme,
) -> Result<Sequential> {
    if dims.len() < 2 || activations.len() != dims.len() - 1 {
        return Err(Error::InvalidConfig(format!(
            "need n+1 dims for n activations, got {} dims / {} activations",
            dims.len(),
            activations.len()
        )));
    }
    let mut stages = Vec::new();
    for (i, pair) in dims.windows(2).enumerate() {
        let (d_in, d_out) = (pair[0], pair[1]);
        let seed = derive_subseed(master_seed, i);
        let layer = match kind {
            ModelKind::Dense | ModelKind::LowRankDense => {
                LayerKind::Dense(DenseLayer::new(d_in, d_out, seed))
            }
            ModelKind::Prp => {
                let proj = match scheme {
                    crate::projections::InitScheme::Gaussian => init_gaussian(d_in, d_out, seed)?,
                    crate::projections::InitScheme::SparseTernary => {
                        crate::projections::init_sparse_ternary(d_in, d_out, seed)?
                    }
                    crate::projections::InitScheme::SparseTernaryAchlioptas => {
                        crate::projections::init_sparse_ternary_achlioptas(d_in, d_out, seed)?
                    }
                    crate::projections::InitScheme::Orthogonal => {
                        init_orthogonal(d_in, d_out, seed)?
                    }
                };
                LayerKind::Prp(PrpLayer::new(Arc::new(proj), ModulationInit::Ones))
            }
        };
        stages.push((layer, activations[i]));
    }
    Sequential::new(stages)
}

/// Build a registered architecture by name.
pub fn build_architecture(
    name: &str,
    kind: ModelKind,
    master_seed: u64,
    scheme: crate::projections::InitScheme,
) -> Result<Sequential> {
    if name == "autoencoder" && kind == ModelKind::Prp {
        return build_tied_autoencoder(master_seed);
    }
    let dims = architecture_dims(name, kind)?;
    let acts = stage_activations(name, dims.len() - 1);
    build_mlp(&dims, &acts, kind, master_seed, scheme)
}

/// Symmetric autoencoder whose decoder applies the transposes of the
/// encoder's fixed matrices: encoder 784 -> 512 -> 512 with orthogonal P1,
/// P2, decoder 512 -> 512 -> 784 sharing P2, P1 in transposed orientation.
/// Only the decoder's own alpha/w/b are new parameters.
pub fn build_tied_autoencoder(master_seed: u64) -> Result<Sequential> {
    let p1 = Arc::new(init_orthogonal(784, 512, derive_subseed(master_seed, 0))?);
    let p2 = Arc::new(init_orthogonal(512, 512, derive_subseed(master_seed, 1))?);
    let stages = vec![
        (
            LayerKind::Prp(PrpLayer::new(p1.clone(), ModulationInit::Ones)),
            Activation::ReLU,
        ),
        (
            LayerKind::Prp(PrpLayer::new(p2.clone(), ModulationInit::Ones)),
            Activation::ReLU,
        ),
        (
            LayerKind::Prp(PrpLayer::with_orientation(p2, true, ModulationInit::Ones)),
            Activation::ReLU,
        ),
        (
            LayerKind::Prp(PrpLayer::with_orientation(p1, true, ModulationInit::Ones)),
            Activation::Sigmoid,
        ),
    ];
    Sequential::new(stages)
}
