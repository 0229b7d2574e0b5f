//! Fixed, non-trainable projection matrices: construction under the three
//! initialization schemes, seed-based regeneration, and distance-distortion
//! statistics.
//!
//! A `ProjectionMatrix` is a pure function of `(scheme, seed, d_in, d_out)`:
//! entries are drawn row-major from a fresh `SeededRng(seed)`, so it never
//! needs to be serialized — a small descriptor suffices.

use crate::error::{Error, Result};
use crate::linalg::{qr_orthonormal_columns, Matrix, Vector};
use crate::rng::SeededRng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitScheme {
    /// Entries i.i.d. N(0, 1/d_in).
    Gaussian,
    /// Entries in {-sqrt(3/d_in), 0, +sqrt(3/d_in)}, probability 1/3 each.
    /// Note the entry variance is 2/d_in under this literal rule.
    SparseTernary,
    /// Ternary with probabilities (1/6, 2/3, 1/6), restoring entry variance
    /// 1/d_in. Not used by the default experiment configs.
    SparseTernaryAchlioptas,
    /// Orthonormal columns extracted from a Gaussian draw via QR.
    Orthogonal,
}

impl std::str::FromStr for InitScheme {
    type Err = Error;
    fn from_str(s: &str) -> Result<InitScheme> {
        match s {
            "gaussian" => Ok(InitScheme::Gaussian),
            "ternary" | "sparse_ternary" => Ok(InitScheme::SparseTernary),
            "ternary-achlioptas" | "sparse_ternary_achlioptas" => {
                Ok(InitScheme::SparseTernaryAchlioptas)
            }
            "orthogonal" => Ok(InitScheme::Orthogonal),
            other => Err(Error::InvalidConfig(format!(
                "unknown init scheme '{other}' (expected gaussian|ternary|ternary-achlioptas|orthogonal)"
            ))),
        }
    }
}

/// Fixed projection matrix with recorded provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionMatrix {
    p: Matrix,
    scheme: InitScheme,
    seed: u64,
    d_in: usize,
    d_out: usize,
}

/// What gets serialized in result files and checkpoints instead of P itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionDescriptor {
    pub scheme: InitScheme,
    pub seed: u64,
    pub d_in: usize,
    pub d_out: usize,
    pub checksum: u64,
}

impl ProjectionMatrix {
    pub fn matrix(&self) -> &Matrix {
        &self.p
    }

    pub fn scheme(&self) -> InitScheme {
        self.scheme
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn d_in(&self) -> usize {
        self.d_in
    }

    pub fn d_out(&self) -> usize {
        self.d_out
    }

    /// FNV-1a over the little-endian bytes of the entries in row-major order.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xCBF29CE484222325;
        for v in self.p.data() {
            for b in v.to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x100000001B3);
            }
        }
        h
    }

    /// Expected value of ||P^T x||^2 / ||x||^2 under this scheme: entry
    /// variance times d_out. Distance-distortion statistics are measured
    /// relative to this ratio, since the layer-oriented scales (variance
    /// 1/d_in rather than the embedding-oriented 1/d_out) change norms by a
    /// known constant factor.
    pub fn expected_energy_ratio(&self) -> f64 {
        let (d_in, d_out) = (self.d_in as f64, self.d_out as f64);
        match self.scheme {
            InitScheme::Gaussian | InitScheme::SparseTernaryAchlioptas => d_out / d_in,
            InitScheme::SparseTernary => 2.0 * d_out / d_in,
            InitScheme::Orthogonal => 1.0,
        }
    }

    pub fn descriptor(&self) -> ProjectionDescriptor {
        ProjectionDescriptor {
            scheme: self.scheme,
            seed: self.seed,
            d_in: self.d_in,
            d_out: self.d_out,
            checksum: self.checksum(),
        }
    }
}

fn check_dims(d_in: usize, d_out: usize) -> Result<()> {
    if d_in == 0 || d_out == 0 {
        return Err(Error::ZeroDim {
            rows: d_in,
            cols: d_out,
        });
    }
    Ok(())
}

/// P_ij ~ N(0, 1/d_in), drawn row-major.
pub fn init_gaussian(d_in: usize, d_out: usize, seed: u64) -> Result<ProjectionMatrix> {
    check_dims(d_in, d_out)?;
    let mut rng = SeededRng::new(seed);
    let scale = (1.0 / d_in as f64).sqrt();
    let normals = rng.standard_normal_vec(d_in * d_out);
    let data: Vec<f64> = normals.as_slice().iter().map(|z| z * scale).collect();
    Ok(ProjectionMatrix {
        p: Matrix::from_vec(d_in, d_out, data)?,
        scheme: InitScheme::Gaussian,
        seed,
        d_in,
        d_out,
    })
}

fn init_ternary_impl(
    d_in: usize,
    d_out: usize,
    seed: u64,
    scheme: InitScheme,
) -> Result<ProjectionMatrix> {
    check_dims(d_in, d_out)?;
    let mut rng = SeededRng::new(seed);
    let mag = (3.0 / d_in as f64).sqrt();
    // Literal rule: thirds. Achlioptas: (1/6, 2/3, 1/6).
    let (lo, hi) = match scheme {
        InitScheme::SparseTernary => (1.0 / 3.0, 2.0 / 3.0),
        InitScheme::SparseTernaryAchlioptas => (1.0 / 6.0, 5.0 / 6.0),
        _ => unreachable!(),
    };
    let mut data = Vec::with_capacity(d_in * d_out);
    for _ in 0..d_in * d_out {
        let u = rng.next_f64();
        data.push(if u < lo {
            -mag
        } else if u < hi {
            0.0
        } else {
            mag
        });
    }
    Ok(ProjectionMatrix {
        p: Matrix::from_vec(d_in, d_out, data)?,
        scheme,
        seed,
        d_in,
        d_out,
    })
}

/// Entries in {-sqrt(3/d_in), 0, +sqrt(3/d_in)} with probability 1/3 each.
pub fn init_sparse_ternary(d_in: usize, d_out: usize, seed: u64) -> Result<ProjectionMatrix> {
    init_ternary_impl(d_in, d_out, seed, InitScheme::SparseTernary)
}

/// Ternary variant with probabilities (1/6, 2/3, 1/6); entry variance 1/d_in.
pub fn init_sparse_ternary_achlioptas(
    d_in: usize,
    d_out: usize,
    seed: u64,
) -> Result<ProjectionMatrix> {
    init_ternary_impl(d_in, d_out, seed, InitScheme::SparseTernaryAchlioptas)
}

/// Orthonormal columns: QR of a seeded Gaussian draw. Requires d_out <= d_in.
pub fn init_orthogonal(d_in: usize, d_out: usize, seed: u64) -> Result<ProjectionMatrix> {
    check_dims(d_in, d_out)?;
    if d_out > d_in {
        return Err(Error::OrthogonalShape { d_in, d_out });
    }
    let mut rng = SeededRng::new(seed);
    let g = Matrix::from_vec(
        d_in,
        d_out,
        rng.standard_normal_vec(d_in * d_out).as_slice().to_vec(),
    )?;
    let q = qr_orthonormal_columns(&g)?;
    Ok(ProjectionMatrix {
        p: q,
        scheme: InitScheme::Orthogonal,
        seed,
        d_in,
        d_out,
    })
}

/// Rebuild P from its provenance; bit-identical to the original construction.
pub fn regenerate(
    scheme: InitScheme,
    seed: u64,
    d_in: usize,
    d_out: usize,
) -> Result<ProjectionMatrix> {
    match scheme {
        InitScheme::Gaussian => init_gaussian(d_in, d_out, seed),
        InitScheme::SparseTernary => init_sparse_ternary(d_in, d_out, seed),
        InitScheme::SparseTernaryAchlioptas => init_sparse_ternary_achlioptas(d_in, d_out, seed),
        InitScheme::Orthogonal => init_orthogonal(d_in, d_out, seed),
    }
}

/// Regenerate from a descriptor, verifying dims and checksum.
pub fn regenerate_from_descriptor(desc: &ProjectionDescriptor) -> Result<ProjectionMatrix> {
    let p = regenerate(desc.scheme, desc.seed, desc.d_in, desc.d_out)?;
    if p.d_in != desc.d_in || p.d_out != desc.d_out {
        return Err(Error::DescriptorDims {
            d_in: p.d_in,
            d_out: p.d_out,
            meta_in: desc.d_in,
            meta_out: desc.d_out,
        });
    }
    let checksum = p.checksum();
    if checksum != desc.checksum {
        return Err(Error::ChecksumMismatch {
            stored: desc.checksum,
            regenerated: checksum,
        });
    }
    Ok(p)
}

/// Empirical squared-distance distortion of `x -> P^T x` over sampled pairs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DistortionStats {
    pub max: f64,
    pub mean: f64,
    /// Pairs skipped because the two points coincide.
    pub skipped_pairs: usize,
    pub evaluated_pairs: usize,
}

/// Sample `pairs` random point pairs and measure
/// | ||P^T(u-v)||^2 / (r * ||u-v||^2) - 1 | where r is the scheme's
/// expected energy ratio (see `expected_energy_ratio`). Zero-distance pairs
/// are skipped and counted, not treated as errors.
pub fn jl_distortion_stats(
    p: &ProjectionMatrix,
    points: &[Vector],
    pairs: usize,
    seed: u64,
) -> Result<DistortionStats> {
    if points.iter().any(|pt| pt.len() != p.d_in) {
        return Err(Error::DimMismatch {
            op: "jl_distortion_stats",
            lhs: format!("d_in {}", p.d_in),
            rhs: "point of different length".into(),
        });
    }
    if pairs == 0 || points.len() < 2 {
        return Err(Error::EmptyInput("jl_distortion_stats"));
    }
    let mut rng = SeededRng::new(seed);
    let mut max: f64 = 0.0;
    let mut sum = 0.0;
    let mut skipped = 0usize;
    let mut evaluated = 0usize;
    for _ in 0..pairs {
        let i = rng.next_below(points.len());
        let mut j = rng.next_below(points.len() - 1);
        if j >= i {
            j += 1;
        }
        let diff = Vector::from_vec(
            points[i]
                .as_slice()
                .iter()
                .zip(points[j].as_slice())
                .map(|(a, b)| a - b)
                .collect(),
        );
        let orig = diff.as_slice().iter().map(|v| v * v).sum::<f64>();
        if orig == 0.0 {
            skipped += 1;
            continue;
        }
        let proj = crate::linalg::matvec_transposed(p.matrix(), &diff)?;
        let mapped = proj.as_slice().iter().map(|v| v * v).sum::<f64>();
        let d = (mapped / (p.expected_energy_ratio() * orig) - 1.0).abs();
        max = max.max(d);
        sum += d;
        evaluated += 1;
    }
    Ok(DistortionStats {
        max,
        mean: if evaluated > 0 { sum / evaluated as f64 } else { 0.0 },
        skipped_pairs: skipped,
        evaluated_pairs: evaluated,
    })
}

/// Test support: wrap an explicit matrix as a `ProjectionMatrix`. The
/// descriptor of such a matrix is meaningless; regeneration will not
/// reproduce it.
#[doc(hidden)]
pub mod testing {
    use super::*;

    pub fn from_matrix(p: Matrix, seed: u64) -> ProjectionMatrix {
        let (d_in, d_out) = p.shape();
        ProjectionMatrix {
            p,
            scheme: InitScheme::Gaussian,
            seed,
            d_in,
            d_out,
        }
    }
}
