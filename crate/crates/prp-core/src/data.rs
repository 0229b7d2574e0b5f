//! Synthetic dataset generators, IDX-format image loading, preprocessing,
//! and mini-batch iteration.
//!
//! The synthetic distributions (margins, radii, noise level, polynomial) are
//! this library's own constructions; all constants live in
//! [`GeneratorConstants`] and are echoed into result files for provenance.

use crate::error::{Error, IdxErrorKind, Result};
use crate::linalg::Matrix;
use crate::rng::{derive_subseed, SeededRng};
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

/// Every constant the synthetic generators use.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GeneratorConstants {
    /// Minimum distance to a decision boundary before a point is resampled.
    pub margin: f64,
    /// Inner-disk radius bound for the circles task.
    pub circles_inner: f64,
    /// Annulus lower bound for the circles task.
    pub circles_outer_lo: f64,
    /// Checkerboard domain half-width.
    pub checkerboard_halfwidth: f64,
    /// Polynomial regression: y = x^3 - 2x + 1 + N(0, noise_sigma^2), x in [-3, 3].
    pub poly_coeffs: [f64; 4],
    pub poly_x_halfwidth: f64,
    pub noise_sigma: f64,
}

pub const GENERATOR_CONSTANTS: GeneratorConstants = GeneratorConstants {
    margin: 0.05,
    circles_inner: 0.5,
    circles_outer_lo: 0.6,
    checkerboard_halfwidth: 2.0,
    // x^3 - 2x + 1 as [c0, c1, c2, c3]
    poly_coeffs: [1.0, -2.0, 0.0, 1.0],
    poly_x_halfwidth: 3.0,
    noise_sigma: 0.3,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Binary,
    Multiclass,
    Regression,
    Reconstruction,
}

/// Targets: class indices for multiclass, real-valued matrices otherwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Targets {
    Classes(Vec<usize>),
    Values(Matrix),
}

impl Targets {
    pub fn len(&self) -> usize {
        match self {
            Targets::Classes(c) => c.len(),
            Targets::Values(m) => m.rows(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn select(&self, idx: &[usize]) -> Targets {
        match self {
            Targets::Classes(c) => Targets::Classes(idx.iter().map(|&i| c[i]).collect()),
            Targets::Values(m) => {
                let mut out = Matrix::zeros(idx.len(), m.cols());
                for (r, &i) in idx.iter().enumerate() {
                    out.row_mut(r).copy_from_slice(m.row(i));
                }
                Targets::Values(out)
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub name: String,
    pub inputs: Matrix,
    pub targets: Targets,
    pub task: TaskKind,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.inputs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn inputs_select(&self, idx: &[usize]) -> Result<Matrix> {
        let mut out = Matrix::zeros(idx.len(), self.inputs.cols());
        for (r, &i) in idx.iter().enumerate() {
            out.row_mut(r).copy_from_slice(self.inputs.row(i));
        }
        Ok(out)
    }

    pub fn targets_select(&self, idx: &[usize]) -> Result<Targets> {
        Ok(self.targets.select(idx))
    }

    pub fn inputs_slice(&self, start: usize, end: usize) -> Result<Matrix> {
        let cols = self.inputs.cols();
        Matrix::from_vec(
            end - start,
            cols,
            self.inputs.data()[start * cols..end * cols].to_vec(),
        )
    }

    pub fn targets_slice(&self, start: usize, end: usize) -> Result<Targets> {
        Ok(match &self.targets {
            Targets::Classes(c) => Targets::Classes(c[start..end].to_vec()),
            Targets::Values(m) => {
                let cols = m.cols();
                Targets::Values(Matrix::from_vec(
                    end - start,
                    cols,
                    m.data()[start * cols..end * cols].to_vec(),
                )?)
            }
        })
    }

    /// Derive a reconstruction task: targets are the inputs mapped back to
    /// [0, 1], matching a Sigmoid output layer. Inputs stay normalized.
    pub fn to_reconstruction(&self) -> Dataset {
        let mut t = self.inputs.clone();
        for v in t.data_mut() {
            *v = *v * 0.5 + 0.5;
        }
        Dataset {
            name: format!("{}_recon", self.name),
            inputs: self.inputs.clone(),
            targets: Targets::Values(t),
            task: TaskKind::Reconstruction,
        }
    }

    /// Keep only the first `n` samples.
    pub fn truncate(&self, n: usize) -> Result<Dataset> {
        let n = n.min(self.len());
        Ok(Dataset {
            name: self.name.clone(),
            inputs: self.inputs_slice(0, n)?,
            targets: self.targets_slice(0, n)?,
            task: self.task,
        })
    }
}

fn binary_targets(labels: &[usize]) -> Targets {
    Targets::Values(
        Matrix::from_vec(labels.len(), 1, labels.iter().map(|&c| c as f64).collect()).unwrap(),
    )
}

/// Linearly separable 2-d points: labels from a seeded hyperplane through
/// the origin; points closer than the margin to the boundary are resampled.
pub fn gen_linear(n: usize, seed: u64) -> Dataset {
    let mut rng = SeededRng::new(seed);
    let theta = rng.uniform(0.0, std::f64::consts::TAU);
    let (nx, ny) = (theta.cos(), theta.sin());
    let mut inputs = Vec::with_capacity(2 * n);
    let mut labels = Vec::with_capacity(n);
    while labels.len() < n {
        let x = rng.uniform(-1.0, 1.0);
        let y = rng.uniform(-1.0, 1.0);
        let d = nx * x + ny * y;
        if d.abs() < GENERATOR_CONSTANTS.margin {
            continue;
        }
        inputs.push(x);
        inputs.push(y);
        labels.push(if d > 0.0 { 1 } else { 0 });
    }
    Dataset {
        name: "linear".into(),
        inputs: Matrix::from_vec(n, 2, inputs).unwrap(),
        targets: binary_targets(&labels),
        task: TaskKind::Binary,
    }
}

/// Quadrant-parity XOR: class 1 iff sign(x0) != sign(x1); points within the
/// margin of an axis are resampled.
pub fn gen_xor(n: usize, seed: u64) -> Dataset {
    let mut rng = SeededRng::new(seed);
    let mut inputs = Vec::with_capacity(2 * n);
    let mut labels = Vec::with_capacity(n);
    while labels.len() < n {
        let x = rng.uniform(-1.0, 1.0);
        let y = rng.uniform(-1.0, 1.0);
        if x.abs() < GENERATOR_CONSTANTS.margin || y.abs() < GENERATOR_CONSTANTS.margin {
            continue;
        }
        inputs.push(x);
        inputs.push(y);
        labels.push(if (x > 0.0) != (y > 0.0) { 1 } else { 0 });
    }
    Dataset {
        name: "xor".into(),
        inputs: Matrix::from_vec(n, 2, inputs).unwrap(),
        targets: binary_targets(&labels),
        task: TaskKind::Binary,
    }
}

/// Concentric circles: inner disk (radius < 0.5) is class 0, annulus
/// (radius in (0.6, 1.0]) is class 1, angles uniform.
pub fn gen_circles(n: usize, seed: u64) -> Dataset {
    let mut rng = SeededRng::new(seed);
    let mut inputs = Vec::with_capacity(2 * n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let outer = rng.next_f64() < 0.5;
        let r = if outer {
            1.0 - (1.0 - GENERATOR_CONSTANTS.circles_outer_lo) * rng.next_f64()
        } else {
            GENERATOR_CONSTANTS.circles_inner * rng.next_f64()
        };
        let theta = rng.uniform(0.0, std::f64::consts::TAU);
        inputs.push(r * theta.cos());
        inputs.push(r * theta.sin());
        labels.push(if outer { 1 } else { 0 });
    }
    Dataset {
        name: "circles".into(),
        inputs: Matrix::from_vec(n, 2, inputs).unwrap(),
        targets: binary_targets(&labels),
        task: TaskKind::Binary,
    }
}

/// Unit checkerboard on [-2, 2]^2: label is the parity of
/// floor(x0) + floor(x1); points near cell boundaries are resampled.
pub fn gen_checkerboard(n: usize, seed: u64) -> Dataset {
    let mut rng = SeededRng::new(seed);
    let hw = GENERATOR_CONSTANTS.checkerboard_halfwidth;
    let margin = GENERATOR_CONSTANTS.margin;
    let near_grid = |v: f64| {
        let frac = v - v.floor();
        frac < margin || frac > 1.0 - margin
    };
    let mut inputs = Vec::with_capacity(2 * n);
    let mut labels = Vec::with_capacity(n);
    while labels.len() < n {
        let x = rng.uniform(-hw, hw);
        let y = rng.uniform(-hw, hw);
        if near_grid(x) || near_grid(y) {
            continue;
        }
        let parity = ((x.floor() + y.floor()) as i64).rem_euclid(2);
        inputs.push(x);
        inputs.push(y);
        labels.push(parity as usize);
    }
    Dataset {
        name: "checkerboard".into(),
        inputs: Matrix::from_vec(n, 2, inputs).unwrap(),
        targets: binary_targets(&labels),
        task: TaskKind::Binary,
    }
}

/// Standardization statistics for the polynomial task.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Standardization {
    pub x_mean: f64,
    pub x_std: f64,
    pub y_mean: f64,
    pub y_std: f64,
}

/// Noisy cubic: x uniform on [-3, 3], y = x^3 - 2x + 1 + N(0, 0.3^2).
/// Returned unstandardized; see [`standardize_regression`].
pub fn gen_polynomial(n: usize, seed: u64) -> Dataset {
    let mut rng = SeededRng::new(seed);
    let hw = GENERATOR_CONSTANTS.poly_x_halfwidth;
    let [c0, c1, c2, c3] = GENERATOR_CONSTANTS.poly_coeffs;
    let mut xs = Vec::with_capacity(n);
    let mut ys = Vec::with_capacity(n);
    for _ in 0..n {
        let x = rng.uniform(-hw, hw);
        let noise = GENERATOR_CONSTANTS.noise_sigma * rng.standard_normal();
        xs.push(x);
        ys.push(c0 + c1 * x + c2 * x * x + c3 * x * x * x + noise);
    }
    Dataset {
        name: "polynomial".into(),
        inputs: Matrix::from_vec(n, 1, xs).unwrap(),
        targets: Targets::Values(Matrix::from_vec(n, 1, ys).unwrap()),
        task: TaskKind::Regression,
    }
}

/// Zero-mean unit-variance view of a regression dataset (inputs and targets
/// both standardized). Training runs on this view; metrics can be mapped
/// back with the returned statistics.
pub fn standardize_regression(data: &Dataset) -> Result<(Dataset, Standardization)> {
    let t = match &data.targets {
        Targets::Values(m) => m,
        _ => {
            return Err(Error::InvalidConfig(
                "standardize_regression requires real-valued targets".into(),
            ))
        }
    };
    let stats = |v: &[f64]| {
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / v.len() as f64;
        (mean, var.sqrt())
    };
    let (x_mean, x_std) = stats(data.inputs.data());
    let (y_mean, y_std) = stats(t.data());
    let mut inputs = data.inputs.clone();
    for v in inputs.data_mut() {
        *v = (*v - x_mean) / x_std;
    }
    let mut targets = t.clone();
    for v in targets.data_mut() {
        *v = (*v - y_mean) / y_std;
    }
    Ok((
        Dataset {
            name: format!("{}_std", data.name),
            inputs,
            targets: Targets::Values(targets),
            task: TaskKind::Regression,
        },
        Standardization {
            x_mean,
            x_std,
            y_mean,
            y_std,
        },
    ))
}

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

fn read_u32_be(buf: &[u8], at: usize) -> u32 {
    u32::from_be_bytes([buf[at], buf[at + 1], buf[at + 2], buf[at + 3]])
}

/// Raw IDX image payload: (count, rows, cols, pixel bytes).
pub fn read_idx_images(path: &Path) -> Result<(usize, usize, usize, Vec<u8>)> {
    let mut buf = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut buf)?;
    let err = |kind| Error::Idx {
        path: path.display().to_string(),
        kind,
    };
    if buf.len() < 16 {
        return Err(err(IdxErrorKind::Truncated {
            expected: 16,
            found: buf.len(),
        }));
    }
    let magic = read_u32_be(&buf, 0);
    if magic != IDX_IMAGES_MAGIC {
        return Err(err(IdxErrorKind::BadMagic {
            found: magic,
            expected: IDX_IMAGES_MAGIC,
        }));
    }
    let n = read_u32_be(&buf, 4) as usize;
    let rows = read_u32_be(&buf, 8) as usize;
    let cols = read_u32_be(&buf, 12) as usize;
    let expected = n * rows * cols;
    if buf.len() - 16 < expected {
        return Err(err(IdxErrorKind::Truncated {
            expected,
            found: buf.len() - 16,
        }));
    }
    Ok((n, rows, cols, buf[16..16 + expected].to_vec()))
}

/// Raw IDX label payload.
pub fn read_idx_labels(path: &Path) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut buf)?;
    let err = |kind| Error::Idx {
        path: path.display().to_string(),
        kind,
    };
    if buf.len() < 8 {
        return Err(err(IdxErrorKind::Truncated {
            expected: 8,
            found: buf.len(),
        }));
    }
    let magic = read_u32_be(&buf, 0);
    if magic != IDX_LABELS_MAGIC {
        return Err(err(IdxErrorKind::BadMagic {
            found: magic,
            expected: IDX_LABELS_MAGIC,
        }));
    }
    let n = read_u32_be(&buf, 4) as usize;
    if buf.len() - 8 < n {
        return Err(err(IdxErrorKind::Truncated {
            expected: n,
            found: buf.len() - 8,
        }));
    }
    Ok(buf[8..8 + n].to_vec())
}

/// Write an IDX image file (big-endian header, raw bytes).
pub fn write_idx_images(path: &Path, rows: usize, cols: usize, pixels: &[u8]) -> Result<()> {
    let n = pixels.len() / (rows * cols);
    let mut f = std::fs::File::create(path)?;
    f.write_all(&IDX_IMAGES_MAGIC.to_be_bytes())?;
    f.write_all(&(n as u32).to_be_bytes())?;
    f.write_all(&(rows as u32).to_be_bytes())?;
    f.write_all(&(cols as u32).to_be_bytes())?;
    f.write_all(pixels)?;
    Ok(())
}

/// Write an IDX label file.
pub fn write_idx_labels(path: &Path, labels: &[u8]) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&IDX_LABELS_MAGIC.to_be_bytes())?;
    f.write_all(&(labels.len() as u32).to_be_bytes())?;
    f.write_all(labels)?;
    Ok(())
}

/// Load an IDX image/label pair as a flattened, normalized dataset:
/// pixels are scaled to [0, 1] and then mapped through (v - 0.5) / 0.5.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let (n, rows, cols, pixels) = read_idx_images(images_path)?;
    let labels = read_idx_labels(labels_path)?;
    if labels.len() != n {
        return Err(Error::Idx {
            path: labels_path.display().to_string(),
            kind: IdxErrorKind::CountMismatch {
                images: n,
                labels: labels.len(),
            },
        });
    }
    let d = rows * cols;
    let data: Vec<f64> = pixels
        .iter()
        .map(|&p| (p as f64 / 255.0 - 0.5) / 0.5)
        .collect();
    Ok(Dataset {
        name: images_path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "idx".into()),
        inputs: Matrix::from_vec(n, d, data)?,
        targets: Targets::Classes(labels.iter().map(|&l| l as usize).collect()),
        task: TaskKind::Multiclass,
    })
}

/// Batch regime: the whole dataset per step, or fixed-size mini-batches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BatchSize {
    FullBatch,
    Fixed(usize),
}

/// Index batches for one epoch: a seeded permutation per (seed, epoch),
/// chunked; the last partial batch is kept. Full-batch skips shuffling.
pub fn batch_iter(n: usize, batch_size: BatchSize, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    match batch_size {
        BatchSize::FullBatch => vec![(0..n).collect()],
        BatchSize::Fixed(b) => {
            let b = b.max(1);
            let mut rng = SeededRng::new(derive_subseed(seed, epoch));
            let perm = rng.permutation(n);
            perm.chunks(b).map(|c| c.to_vec()).collect()
        }
    }
}
