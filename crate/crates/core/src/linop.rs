//! Matrix-free linear operators and the factored precision `Q = F^t F`.
//!
//! All vectors are flattened in row-major order. Operators are immutable
//! after construction and can be shared between chains.

use alloc::format;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{Cholesky, DMatrix, DVector, DVectorView, DVectorViewMut, Dyn};

use crate::error::{check_len, Error, Result};
use crate::rng::RngStream;
use crate::vecops;

/// A linear map `R^in_dim -> R^out_dim` together with its adjoint.
pub trait LinearOperator: Send + Sync {
    fn in_dim(&self) -> usize;
    fn out_dim(&self) -> usize;

    /// Writes `M x` into `out`. Slice lengths are not checked.
    fn apply_into(&self, x: &[f64], out: &mut [f64]);

    /// Writes `M^t y` into `out`. Slice lengths are not checked.
    fn apply_transpose_into(&self, y: &[f64], out: &mut [f64]);

    /// Writes `M^t M x` into `out`.
    fn gram_into(&self, x: &[f64], out: &mut [f64]) {
        let mut tmp = vec![0.0; self.out_dim()];
        self.apply_into(x, &mut tmp);
        self.apply_transpose_into(&tmp, out);
    }

    fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len(self.in_dim(), x.len())?;
        let mut out = vec![0.0; self.out_dim()];
        self.apply_into(x, &mut out);
        Ok(out)
    }

    fn apply_transpose(&self, y: &[f64]) -> Result<Vec<f64>> {
        check_len(self.out_dim(), y.len())?;
        let mut out = vec![0.0; self.in_dim()];
        self.apply_transpose_into(y, &mut out);
        Ok(out)
    }
}

pub type SharedOperator = Arc<dyn LinearOperator>;

/// Plain dense matrix, optionally carrying its precomputed Gram matrix.
#[derive(Debug, Clone)]
pub struct DenseOperator {
    matrix: DMatrix<f64>,
    gram: Option<DMatrix<f64>>,
}

pub fn dense_operator(matrix: DMatrix<f64>) -> Result<DenseOperator> {
    if matrix.nrows() == 0 || matrix.ncols() == 0 {
        return Err(Error::config("dense operator needs at least one row and column"));
    }
    if !vecops::all_finite(matrix.as_slice()) {
        return Err(Error::NonFinite("dense operator entries"));
    }
    Ok(DenseOperator { matrix, gram: None })
}

impl DenseOperator {
    /// Stores `M^t M` so Gram products cost one matrix-vector product.
    pub fn with_cached_gram(mut self) -> Self {
        self.gram = Some(self.matrix.tr_mul(&self.matrix));
        self
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }
}

impl LinearOperator for DenseOperator {
    fn in_dim(&self) -> usize {
        self.matrix.ncols()
    }

    fn out_dim(&self) -> usize {
        self.matrix.nrows()
    }

    fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        let xv = DVectorView::from_slice(x, self.matrix.ncols());
        let mut ov = DVectorViewMut::from_slice(out, self.matrix.nrows());
        ov.gemv(1.0, &self.matrix, &xv, 0.0);
    }

    fn apply_transpose_into(&self, y: &[f64], out: &mut [f64]) {
        let yv = DVectorView::from_slice(y, self.matrix.nrows());
        let mut ov = DVectorViewMut::from_slice(out, self.matrix.ncols());
        ov.gemv_tr(1.0, &self.matrix, &yv, 0.0);
    }

    fn gram_into(&self, x: &[f64], out: &mut [f64]) {
        match &self.gram {
            Some(g) => {
                let n = g.nrows();
                let xv = DVectorView::from_slice(x, n);
                let mut ov = DVectorViewMut::from_slice(out, n);
                ov.gemv(1.0, g, &xv, 0.0);
            }
            None => {
                let mut tmp = vec![0.0; self.out_dim()];
                self.apply_into(x, &mut tmp);
                self.apply_transpose_into(&tmp, out);
            }
        }
    }
}

/// Sub-sampling of a `rows x cols` image on one `factor x factor` sub-lattice.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecimationOperator {
    rows: usize,
    cols: usize,
    factor: usize,
    offset: (usize, usize),
}

pub fn decimation_operator(
    image_dims: (usize, usize),
    factor: usize,
    offset: (usize, usize),
) -> Result<DecimationOperator> {
    let (rows, cols) = image_dims;
    if rows == 0 || cols == 0 {
        return Err(Error::config("decimation needs a non-empty image"));
    }
    if factor == 0 || rows % factor != 0 || cols % factor != 0 {
        return Err(Error::config(format!(
            "decimation factor {factor} must divide image dims {rows}x{cols}"
        )));
    }
    if offset.0 >= factor || offset.1 >= factor {
        return Err(Error::config(format!(
            "decimation offset {offset:?} out of range for factor {factor}"
        )));
    }
    Ok(DecimationOperator {
        rows,
        cols,
        factor,
        offset,
    })
}

impl DecimationOperator {
    pub fn low_res_dims(&self) -> (usize, usize) {
        (self.rows / self.factor, self.cols / self.factor)
    }

    pub fn offset(&self) -> (usize, usize) {
        self.offset
    }

    /// Flat high-resolution index of every selected pixel, in output order.
    pub fn selected_indices(&self) -> impl Iterator<Item = usize> + '_ {
        let (lr, lc) = self.low_res_dims();
        (0..lr).flat_map(move |i| {
            (0..lc).map(move |j| {
                (i * self.factor + self.offset.0) * self.cols + j * self.factor + self.offset.1
            })
        })
    }
}

impl LinearOperator for DecimationOperator {
    fn in_dim(&self) -> usize {
        self.rows * self.cols
    }

    fn out_dim(&self) -> usize {
        let (lr, lc) = self.low_res_dims();
        lr * lc
    }

    fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        for (o, idx) in out.iter_mut().zip(self.selected_indices()) {
            *o = x[idx];
        }
    }

    fn apply_transpose_into(&self, y: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        for (v, idx) in y.iter().zip(self.selected_indices()) {
            out[idx] = *v;
        }
    }

    fn gram_into(&self, x: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        for idx in self.selected_indices() {
            out[idx] = x[idx];
        }
    }
}

struct StackBlock {
    weight: f64,
    root: f64,
    op: SharedOperator,
    offset: usize,
}

/// `F = [sqrt(w_1) F_1; sqrt(w_2) F_2; ...]`, so that `F^t F = sum w_i F_i^t F_i`.
pub struct StackedFactor {
    blocks: Vec<StackBlock>,
    in_dim: usize,
    out_dim: usize,
}

pub fn stacked_factor(ops: Vec<(f64, SharedOperator)>) -> Result<StackedFactor> {
    let in_dim = match ops.first() {
        Some((_, op)) => op.in_dim(),
        None => return Err(Error::config("stacked factor needs at least one operator")),
    };
    let mut blocks = Vec::with_capacity(ops.len());
    let mut offset = 0;
    for (weight, op) in ops {
        if !(weight > 0.0) || !weight.is_finite() {
            return Err(Error::config(format!(
                "stacked factor weights must be positive and finite, got {weight}"
            )));
        }
        if op.in_dim() != in_dim {
            return Err(Error::config(format!(
                "stacked operators must share in_dim {in_dim}, found {}",
                op.in_dim()
            )));
        }
        let out = op.out_dim();
        blocks.push(StackBlock {
            weight,
            root: libm::sqrt(weight),
            op,
            offset,
        });
        offset += out;
    }
    Ok(StackedFactor {
        blocks,
        in_dim,
        out_dim: offset,
    })
}

impl StackedFactor {
    pub fn weights(&self) -> impl Iterator<Item = f64> + '_ {
        self.blocks.iter().map(|b| b.weight)
    }
}

impl LinearOperator for StackedFactor {
    fn in_dim(&self) -> usize {
        self.in_dim
    }

    fn out_dim(&self) -> usize {
        self.out_dim
    }

    fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        for b in &self.blocks {
            let seg = &mut out[b.offset..b.offset + b.op.out_dim()];
            b.op.apply_into(x, seg);
            vecops::scale(b.root, seg);
        }
    }

    fn apply_transpose_into(&self, y: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        let mut tmp = vec![0.0; self.in_dim];
        for b in &self.blocks {
            b.op.apply_transpose_into(&y[b.offset..b.offset + b.op.out_dim()], &mut tmp);
            vecops::axpy(b.root, &tmp, out);
        }
    }

    fn gram_into(&self, x: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        let mut tmp = vec![0.0; self.in_dim];
        for b in &self.blocks {
            b.op.gram_into(x, &mut tmp);
            vecops::axpy(b.weight, &tmp, out);
        }
    }
}

/// Precision matrix held through a factor: `Q = F^t F` with `F: R^N -> R^N'`.
#[derive(Clone)]
pub struct FactoredPrecision {
    factor: SharedOperator,
}

impl FactoredPrecision {
    pub fn new(factor: SharedOperator) -> Self {
        FactoredPrecision { factor }
    }

    pub fn from_operator<T: LinearOperator + 'static>(factor: T) -> Self {
        FactoredPrecision {
            factor: Arc::new(factor),
        }
    }

    pub fn dim(&self) -> usize {
        self.factor.in_dim()
    }

    /// `N'`, the length of the perturbation `omega` in `eta = Q mu + F^t omega`.
    pub fn factor_dim(&self) -> usize {
        self.factor.out_dim()
    }

    pub fn factor(&self) -> &SharedOperator {
        &self.factor
    }

    /// `out = Q x`, unchecked lengths.
    pub fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        self.factor.gram_into(x, out);
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len(self.dim(), x.len())?;
        let mut out = vec![0.0; self.dim()];
        self.apply_into(x, &mut out);
        Ok(out)
    }

    /// Assembles `Q` column by column. Oracle use only: costs `N` products.
    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.dim();
        let mut q = DMatrix::zeros(n, n);
        let mut e = vec![0.0; n];
        let mut col = vec![0.0; n];
        for j in 0..n {
            e[j] = 1.0;
            self.apply_into(&e, &mut col);
            q.column_mut(j).copy_from_slice(&col);
            e[j] = 0.0;
        }
        q
    }
}

/// Dense copy of a small target, used by exact samplers and test oracles.
#[derive(Debug, Clone)]
pub struct DenseMirror {
    precision: DMatrix<f64>,
    mean: DVector<f64>,
    cholesky: Cholesky<f64, Dyn>,
}

impl DenseMirror {
    pub fn new(precision: DMatrix<f64>, mean: DVector<f64>) -> Result<Self> {
        if !precision.is_square() || precision.nrows() != mean.len() {
            return Err(Error::Shape {
                expected: mean.len(),
                found: precision.nrows(),
            });
        }
        let cholesky = Cholesky::new(precision.clone())
            .ok_or_else(|| Error::config("dense precision is not positive definite"))?;
        Ok(DenseMirror {
            precision,
            mean,
            cholesky,
        })
    }

    pub fn precision(&self) -> &DMatrix<f64> {
        &self.precision
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    /// Lower factor `L` with `Q = L L^t`.
    pub fn cholesky_lower(&self) -> DMatrix<f64> {
        self.cholesky.l()
    }

    pub fn solve(&self, b: &[f64]) -> DVector<f64> {
        self.cholesky.solve(&DVector::from_column_slice(b))
    }

    pub fn covariance(&self) -> DMatrix<f64> {
        self.cholesky.inverse()
    }
}

/// `N(mu, Q^-1)` given by its factored precision and potential `Q mu`.
#[derive(Clone)]
pub struct GaussianTarget {
    precision: FactoredPrecision,
    potential: Vec<f64>,
    mirror: Option<Arc<DenseMirror>>,
}

const MIRROR_TOLERANCE: f64 = 1e-10;

impl GaussianTarget {
    pub fn new(precision: FactoredPrecision, potential: Vec<f64>) -> Result<Self> {
        check_len(precision.dim(), potential.len())?;
        if !vecops::all_finite(&potential) {
            return Err(Error::NonFinite("potential vector"));
        }
        Ok(GaussianTarget {
            precision,
            potential,
            mirror: None,
        })
    }

    /// Builds the target from its mean, computing the potential `Q mu`.
    pub fn from_mean(precision: FactoredPrecision, mean: &[f64]) -> Result<Self> {
        let potential = precision.apply(mean)?;
        Self::new(precision, potential)
    }

    /// Attaches a dense copy after checking it agrees with the factored form.
    pub fn with_dense_mirror(mut self, q: DMatrix<f64>, mean: DVector<f64>) -> Result<Self> {
        let n = self.dim();
        check_len(n, q.nrows())?;
        let mirror = DenseMirror::new(q, mean)?;

        let qmu = mirror.precision() * mirror.mean();
        if relative_error(qmu.as_slice(), &self.potential) > MIRROR_TOLERANCE {
            return Err(Error::config("dense mirror: Q mu does not match the potential"));
        }
        let mut probe_stream = RngStream::new(0x6d69_7272_6f72);
        for _ in 0..3 {
            let v = probe_stream.standard_normal_vector(n)?;
            let fast = self.precision.apply(&v)?;
            let dense = mirror.precision() * DVector::from_column_slice(&v);
            if relative_error(&fast, dense.as_slice()) > MIRROR_TOLERANCE {
                return Err(Error::config(
                    "dense mirror: precision products disagree with the factored form",
                ));
            }
        }
        self.mirror = Some(Arc::new(mirror));
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.precision.dim()
    }

    pub fn precision(&self) -> &FactoredPrecision {
        &self.precision
    }

    pub fn potential(&self) -> &[f64] {
        &self.potential
    }

    pub fn dense_mirror(&self) -> Option<&DenseMirror> {
        self.mirror.as_deref()
    }
}

/// `||a - b|| / ||b||`, or `||a||` when `b` is zero.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>();
    let nb = vecops::norm2(b);
    if nb == 0.0 {
        libm::sqrt(diff)
    } else {
        libm::sqrt(diff) / nb
    }
}
