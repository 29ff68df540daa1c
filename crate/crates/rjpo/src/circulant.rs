//! 2-D circular convolution through the FFT.
//!
//! Images are row-major `rows x cols`. The forward FFT is unscaled and the
//! inverse is scaled by `1 / (rows * cols)`.

use std::sync::Arc;

use num_complex::Complex64;
use rjpo_core::linop::LinearOperator;
use rjpo_core::{Error, Result};
use rustfft::{Fft, FftPlanner};

/// Forward and inverse plans for one image size.
#[derive(Clone)]
pub struct Fft2 {
    rows: usize,
    cols: usize,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Fft2 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Fft2").field("rows", &self.rows).field("cols", &self.cols).finish()
    }
}

fn transpose(src: &[Complex64], dst: &mut [Complex64], rows: usize, cols: usize) {
    for i in 0..rows {
        for j in 0..cols {
            dst[j * rows + i] = src[i * cols + j];
        }
    }
}

impl Fft2 {
    pub fn new(rows: usize, cols: usize) -> Self {
        let mut planner = FftPlanner::new();
        Fft2 {
            rows,
            cols,
            row_fwd: planner.plan_fft_forward(cols),
            row_inv: planner.plan_fft_inverse(cols),
            col_fwd: planner.plan_fft_forward(rows),
            col_inv: planner.plan_fft_inverse(rows),
        }
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Spectrum of a real image, returned in column-major (transposed) order:
    /// entry `(k, l)` sits at index `l * rows + k`.
    pub fn forward_transposed(&self, x: &[f64]) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        let mut t = vec![Complex64::new(0.0, 0.0); self.len()];
        self.row_fwd.process(&mut buf);
        transpose(&buf, &mut t, self.rows, self.cols);
        self.col_fwd.process(&mut t);
        t
    }

    /// Inverse of [`Fft2::forward_transposed`], keeping the real part.
    pub fn inverse_transposed_into(&self, mut spectrum: Vec<Complex64>, out: &mut [f64]) {
        self.col_inv.process(&mut spectrum);
        let mut buf = vec![Complex64::new(0.0, 0.0); self.len()];
        transpose(&spectrum, &mut buf, self.cols, self.rows);
        self.row_inv.process(&mut buf);
        let scale = 1.0 / self.len() as f64;
        for (o, v) in out.iter_mut().zip(&buf) {
            *o = v.re * scale;
        }
    }

    /// `out = IFFT(m .* FFT(x))` with `m` in transposed layout.
    pub fn filter(&self, x: &[f64], multiplier: &[Complex64], out: &mut [f64]) {
        let mut s = self.forward_transposed(x);
        for (v, m) in s.iter_mut().zip(multiplier) {
            *v *= m;
        }
        self.inverse_transposed_into(s, out);
    }
}

/// Circular convolution by a fixed kernel.
#[derive(Clone, Debug)]
pub struct CirculantOperator {
    rows: usize,
    cols: usize,
    fft: Fft2,
    transfer: Vec<Complex64>,
    transfer_conj: Vec<Complex64>,
    power: Vec<Complex64>,
}

/// Kernel `kernel` (`kernel_dims`, row-major) with its entry `(0, 0)` at the
/// convolution origin; entries wrap around the image.
pub fn circulant_operator(
    kernel: &[f64],
    kernel_dims: (usize, usize),
    image_dims: (usize, usize),
) -> Result<CirculantOperator> {
    circulant_with_center(kernel, kernel_dims, (0, 0), image_dims)
}

/// As [`circulant_operator`], but entry `center` of the kernel is the origin.
pub fn circulant_with_center(
    kernel: &[f64],
    kernel_dims: (usize, usize),
    center: (usize, usize),
    image_dims: (usize, usize),
) -> Result<CirculantOperator> {
    let (kr, kc) = kernel_dims;
    let (rows, cols) = image_dims;
    if rows == 0 || cols == 0 || kr == 0 || kc == 0 {
        return Err(Error::config("circulant operator needs non-empty kernel and image"));
    }
    if kernel.len() != kr * kc {
        return Err(Error::Shape {
            expected: kr * kc,
            found: kernel.len(),
        });
    }
    if kr > rows || kc > cols {
        return Err(Error::config(format!(
            "kernel {kr}x{kc} is larger than the image {rows}x{cols}"
        )));
    }
    if center.0 >= kr || center.1 >= kc {
        return Err(Error::config(format!("kernel center {center:?} outside {kr}x{kc}")));
    }
    if kernel.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("convolution kernel"));
    }
    let mut embedded = vec![0.0; rows * cols];
    for i in 0..kr {
        for j in 0..kc {
            let r = (i + rows - center.0) % rows;
            let c = (j + cols - center.1) % cols;
            embedded[r * cols + c] += kernel[i * kc + j];
        }
    }
    let fft = Fft2::new(rows, cols);
    let transfer = fft.forward_transposed(&embedded);
    let transfer_conj = transfer.iter().map(|v| v.conj()).collect();
    let power = transfer.iter().map(|v| Complex64::new(v.norm_sqr(), 0.0)).collect();
    Ok(CirculantOperator {
        rows,
        cols,
        fft,
        transfer,
        transfer_conj,
        power,
    })
}

impl CirculantOperator {
    pub fn image_dims(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    /// Transfer function in transposed layout (see [`Fft2::forward_transposed`]).
    pub fn transfer(&self) -> &[Complex64] {
        &self.transfer
    }

    pub fn fft(&self) -> &Fft2 {
        &self.fft
    }
}

impl LinearOperator for CirculantOperator {
    fn in_dim(&self) -> usize {
        self.rows * self.cols
    }

    fn out_dim(&self) -> usize {
        self.rows * self.cols
    }

    fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        self.fft.filter(x, &self.transfer, out);
    }

    fn apply_transpose_into(&self, y: &[f64], out: &mut [f64]) {
        self.fft.filter(y, &self.transfer_conj, out);
    }

    fn gram_into(&self, x: &[f64], out: &mut [f64]) {
        self.fft.filter(x, &self.power, out);
    }
}

/// Direct O(N * K) circular convolution, used as a test oracle.
pub fn naive_circular_convolution(
    x: &[f64],
    image_dims: (usize, usize),
    kernel: &[f64],
    kernel_dims: (usize, usize),
) -> Vec<f64> {
    let (rows, cols) = image_dims;
    let (kr, kc) = kernel_dims;
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            let mut acc = 0.0;
            for i in 0..kr {
                for j in 0..kc {
                    let sr = (r + rows * kr - i) % rows;
                    let sc = (c + cols * kc - j) % cols;
                    acc += kernel[i * kc + j] * x[sr * cols + sc];
                }
            }
            out[r * cols + c] = acc;
        }
    }
    out
}
