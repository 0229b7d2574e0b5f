//! Trainable layers: the modulated-random-projection layer and the dense
//! baseline, with hand-derived reverse-mode gradients.
//!
//! The projection layer computes `y = (P^T (x . alpha)) . w + b` where `P` is
//! fixed and only `alpha`, `w`, `b` train, so a (d_in -> d_out) map costs
//! `d_in + 2*d_out` trainable parameters instead of `d_in*d_out + d_out`.
//!
//! Batch inputs are `(batch x d_in)` matrices processed row-wise; upstream
//! loss gradients carry the batch-mean scaling, so parameter gradients here
//! are plain sums over the batch.

use crate::error::{Error, Result};
use crate::linalg::{Matrix, Vector};
use crate::projections::ProjectionMatrix;
use crate::rng::SeededRng;
use std::sync::Arc;

/// Initialization for the modulation parameters (alpha, w, b).
#[derive(Debug, Clone, Copy)]
pub enum ModulationInit {
    /// alpha = w = ones, b = zeros: the initial map is exactly the raw
    /// projection, so the isometry/distance guarantees of P hold at step 0.
    Ones,
    /// Ones/zeros plus N(0, 0.01) noise drawn from the given seed.
    Perturbed { seed: u64 },
}

/// alpha, w, b for a (d_in -> d_out) projection layer.
pub fn init_modulation(d_in: usize, d_out: usize, init: ModulationInit) -> (Vector, Vector, Vector) {
    let mut alpha = Vector::ones(d_in);
    let mut w = Vector::ones(d_out);
    let mut b = Vector::zeros(d_out);
    if let ModulationInit::Perturbed { seed } = init {
        let mut rng = SeededRng::new(seed);
        let noise = rng.standard_normal_vec(d_in + 2 * d_out);
        let ns = noise.as_slice();
        for i in 0..d_in {
            alpha[i] += 0.1 * ns[i];
        }
        for j in 0..d_out {
            w[j] += 0.1 * ns[d_in + j];
            b[j] += 0.1 * ns[d_in + d_out + j];
        }
    }
    (alpha, w, b)
}

/// Gradients mirroring a layer's trainable parameters.
#[derive(Debug, Clone)]
pub enum GradientSet {
    Prp {
        alpha: Vector,
        w: Vector,
        b: Vector,
    },
    Dense {
        weight: Matrix,
        b: Vector,
    },
}

impl GradientSet {
    /// Flat view in the same order as `Layer::param_slices`.
    pub fn slices(&self) -> Vec<&[f64]> {
        match self {
            GradientSet::Prp { alpha, w, b } => {
                vec![alpha.as_slice(), w.as_slice(), b.as_slice()]
            }
            GradientSet::Dense { weight, b } => vec![weight.data(), b.as_slice()],
        }
    }
}

struct PrpCache {
    x: Matrix,
    z: Matrix,
}

/// Fixed random projection with learnable element-wise modulation.
///
/// When `transposed` is set the layer applies `P` instead of `P^T`, mapping
/// `proj.d_out -> proj.d_in`; tied autoencoder decoders use this to share the
/// encoder's matrices without copying them.
pub struct PrpLayer {
    proj: Arc<ProjectionMatrix>,
    transposed: bool,
    alpha: Vector,
    w: Vector,
    b: Vector,
    cache: Option<PrpCache>,
}

impl PrpLayer {
    pub fn new(proj: Arc<ProjectionMatrix>, init: ModulationInit) -> PrpLayer {
        Self::with_orientation(proj, false, init)
    }

    pub fn with_orientation(
        proj: Arc<ProjectionMatrix>,
        transposed: bool,
        init: ModulationInit,
    ) -> PrpLayer {
        let (d_in, d_out) = if transposed {
            (proj.d_out(), proj.d_in())
        } else {
            (proj.d_in(), proj.d_out())
        };
        let (alpha, w, b) = init_modulation(d_in, d_out, init);
        PrpLayer {
            proj,
            transposed,
            alpha,
            w,
            b,
            cache: None,
        }
    }

    pub fn d_in(&self) -> usize {
        self.alpha.len()
    }

    pub fn d_out(&self) -> usize {
        self.w.len()
    }

    pub fn projection(&self) -> &Arc<ProjectionMatrix> {
        &self.proj
    }

    pub fn is_transposed(&self) -> bool {
        self.transposed
    }

    pub fn alpha(&self) -> &Vector {
        &self.alpha
    }

    pub fn w(&self) -> &Vector {
        &self.w
    }

    pub fn b(&self) -> &Vector {
        &self.b
    }

    /// Trainable parameters only; P is excluded.
    pub fn param_count(&self) -> usize {
        self.d_in() + 2 * self.d_out()
    }

    pub fn param_slices(&self) -> Vec<&[f64]> {
        vec![self.alpha.as_slice(), self.w.as_slice(), self.b.as_slice()]
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            self.alpha.as_mut_slice(),
            self.w.as_mut_slice(),
            self.b.as_mut_slice(),
        ]
    }

    pub fn set_params(&mut self, alpha: Vector, w: Vector, b: Vector) -> Result<()> {
        if alpha.len() != self.d_in() || w.len() != self.d_out() || b.len() != self.d_out() {
            return Err(Error::DimMismatch {
                op: "set_params",
                lhs: format!("({}, {})", self.d_in(), self.d_out()),
                rhs: format!("({}, {}/{})", alpha.len(), w.len(), b.len()),
            });
        }
        self.alpha = alpha;
        self.w = w;
        self.b = b;
        Ok(())
    }

    /// z-row = u-row applied through the projection in this orientation.
    fn project_batch(&self, u: &Matrix) -> Result<Matrix> {
        if self.transposed {
            // rows * P^T where the layer maps d_out(proj) -> d_in(proj)
            u.matmul_transb(self.proj.matrix())
        } else {
            u.matmul(self.proj.matrix())
        }
    }

    /// The reverse map used in backward: du-row = dz-row through P's other side.
    fn project_back_batch(&self, dz: &Matrix) -> Result<Matrix> {
        if self.transposed {
            dz.matmul(self.proj.matrix())
        } else {
            dz.matmul_transb(self.proj.matrix())
        }
    }

    pub fn forward_batch(&mut self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.d_in() {
            return Err(Error::DimMismatch {
                op: "prp_forward",
                lhs: format!("layer d_in {}", self.d_in()),
                rhs: format!("input cols {}", x.cols()),
            });
        }
        let mut u = x.clone();
        for i in 0..u.rows() {
            let row = u.row_mut(i);
            for (v, a) in row.iter_mut().zip(self.alpha.as_slice()) {
                *v *= a;
            }
        }
        let z = self.project_batch(&u)?;
        let mut y = z.clone();
        for i in 0..y.rows() {
            let row = y.row_mut(i);
            for ((v, w), b) in row.iter_mut().zip(self.w.as_slice()).zip(self.b.as_slice()) {
                *v = *v * w + b;
            }
        }
        self.cache = Some(PrpCache { x: x.clone(), z });
        Ok(y)
    }

    pub fn forward(&mut self, x: &Vector) -> Result<Vector> {
        let xm = Matrix::from_vec(1, x.len(), x.as_slice().to_vec())?;
        let y = self.forward_batch(&xm)?;
        Ok(Vector::from_vec(y.row(0).to_vec()))
    }

    pub fn backward_batch(&mut self, dy: &Matrix) -> Result<(GradientSet, Matrix)> {
        let cache = self.cache.as_ref().ok_or(Error::BackwardBeforeForward)?;
        if dy.cols() != self.d_out() || dy.rows() != cache.x.rows() {
            return Err(Error::DimMismatch {
                op: "prp_backward",
                lhs: format!("{}x{}", cache.x.rows(), self.d_out()),
                rhs: format!("{}x{}", dy.rows(), dy.cols()),
            });
        }
        let batch = dy.rows();
        let mut db = Vector::zeros(self.d_out());
        let mut dw = Vector::zeros(self.d_out());
        let mut dz = Matrix::zeros(batch, self.d_out());
        for i in 0..batch {
            let dy_row = dy.row(i);
            let z_row = cache.z.row(i);
            let dz_row = dz.row_mut(i);
            for j in 0..self.d_out() {
                db[j] += dy_row[j];
                dw[j] += dy_row[j] * z_row[j];
                dz_row[j] = dy_row[j] * self.w[j];
            }
        }
        let du = self.project_back_batch(&dz)?;
        let mut dalpha = Vector::zeros(self.d_in());
        let mut dx = Matrix::zeros(batch, self.d_in());
        for i in 0..batch {
            let du_row = du.row(i);
            let x_row = cache.x.row(i);
            let dx_row = dx.row_mut(i);
            for k in 0..self.d_in() {
                dalpha[k] += du_row[k] * x_row[k];
                dx_row[k] = du_row[k] * self.alpha[k];
            }
        }
        Ok((
            GradientSet::Prp {
                alpha: dalpha,
                w: dw,
                b: db,
            },
            dx,
        ))
    }

    pub fn backward(&mut self, dy: &Vector) -> Result<(GradientSet, Vector)> {
        let dym = Matrix::from_vec(1, dy.len(), dy.as_slice().to_vec())?;
        let (grads, dx) = self.backward_batch(&dym)?;
        Ok((grads, Vector::from_vec(dx.row(0).to_vec())))
    }

    /// The equivalent linear operator diag(w) * P^T * diag(alpha), d_out x d_in.
    pub fn effective_matrix(&self) -> Matrix {
        let mut m = Matrix::zeros(self.d_out(), self.d_in());
        let p = self.proj.matrix();
        for j in 0..self.d_out() {
            for k in 0..self.d_in() {
                let p_kj = if self.transposed {
                    p.get(j, k)
                } else {
                    p.get(k, j)
                };
                m.set(j, k, self.w[j] * p_kj * self.alpha[k]);
            }
        }
        m
    }
}

struct DenseCache {
    x: Matrix,
}

/// Standard fully connected layer, `y = W x + b`, weight shape d_out x d_in.
pub struct DenseLayer {
    weight: Matrix,
    b: Vector,
    cache: Option<DenseCache>,
}

impl DenseLayer {
    /// Kaiming-uniform style init: U(-s, s) with s = sqrt(1/d_in), matching
    /// the usual default for linear layers.
    pub fn new(d_in: usize, d_out: usize, seed: u64) -> DenseLayer {
        let mut rng = SeededRng::new(seed);
        let s = (1.0 / d_in as f64).sqrt();
        let mut weight = Matrix::zeros(d_out, d_in);
        for v in weight.data_mut() {
            *v = rng.uniform(-s, s);
        }
        let mut b = Vector::zeros(d_out);
        for v in b.as_mut_slice() {
            *v = rng.uniform(-s, s);
        }
        DenseLayer {
            weight,
            b,
            cache: None,
        }
    }

    pub fn from_parts(weight: Matrix, b: Vector) -> DenseLayer {
        DenseLayer {
            weight,
            b,
            cache: None,
        }
    }

    pub fn d_in(&self) -> usize {
        self.weight.cols()
    }

    pub fn d_out(&self) -> usize {
        self.weight.rows()
    }

    pub fn weight(&self) -> &Matrix {
        &self.weight
    }

    pub fn b(&self) -> &Vector {
        &self.b
    }

    pub fn param_count(&self) -> usize {
        self.d_in() * self.d_out() + self.d_out()
    }

    pub fn param_slices(&self) -> Vec<&[f64]> {
        vec![self.weight.data(), self.b.as_slice()]
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        vec![self.weight.data_mut(), self.b.as_mut_slice()]
    }

    pub fn forward_batch(&mut self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.d_in() {
            return Err(Error::DimMismatch {
                op: "dense_forward",
                lhs: format!("layer d_in {}", self.d_in()),
                rhs: format!("input cols {}", x.cols()),
            });
        }
        let mut y = x.matmul_transb(&self.weight)?;
        for i in 0..y.rows() {
            let row = y.row_mut(i);
            for (v, b) in row.iter_mut().zip(self.b.as_slice()) {
                *v += b;
            }
        }
        self.cache = Some(DenseCache { x: x.clone() });
        Ok(y)
    }

    pub fn forward(&mut self, x: &Vector) -> Result<Vector> {
        let xm = Matrix::from_vec(1, x.len(), x.as_slice().to_vec())?;
        let y = self.forward_batch(&xm)?;
        Ok(Vector::from_vec(y.row(0).to_vec()))
    }

    pub fn backward_batch(&mut self, dy: &Matrix) -> Result<(GradientSet, Matrix)> {
        let cache = self.cache.as_ref().ok_or(Error::BackwardBeforeForward)?;
        if dy.cols() != self.d_out() || dy.rows() != cache.x.rows() {
            return Err(Error::DimMismatch {
                op: "dense_backward",
                lhs: format!("{}x{}", cache.x.rows(), self.d_out()),
                rhs: format!("{}x{}", dy.rows(), dy.cols()),
            });
        }
        let dweight = dy.matmul_transa(&cache.x)?;
        let mut db = Vector::zeros(self.d_out());
        for i in 0..dy.rows() {
            for (acc, v) in db.as_mut_slice().iter_mut().zip(dy.row(i)) {
                *acc += v;
            }
        }
        let dx = dy.matmul(&self.weight)?;
        Ok((
            GradientSet::Dense {
                weight: dweight,
                b: db,
            },
            dx,
        ))
    }

    pub fn backward(&mut self, dy: &Vector) -> Result<(GradientSet, Vector)> {
        let dym = Matrix::from_vec(1, dy.len(), dy.as_slice().to_vec())?;
        let (grads, dx) = self.backward_batch(&dym)?;
        Ok((grads, Vector::from_vec(dx.row(0).to_vec())))
    }
}
