//! Dense activation volumes and the small set of spatial operators the
//! style statistics are assembled from.
//!
//! An [`ActivationVolume`] stores a `K x X x Y` feature volume in
//! channel-major order, so the slice for channel `k` doubles as row `k` of
//! the `K x (X*Y)` linearized matrix used by the Gram products. All math is
//! `f64`.

use std::fmt;

use crate::parallel;

/// Errors raised by shape-checked tensor operations.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TensorError {
    /// Inner dimensions of a matrix product disagree.
    DimensionMismatch {
        left: (usize, usize),
        right: (usize, usize),
    },
    /// Data buffer length does not match `channels * width * height`.
    DataLength { expected: usize, got: usize },
    /// Upsampling factor of zero.
    ZeroFactor,
    /// Spatial size not divisible by the requested block factor.
    NotDivisible {
        width: usize,
        height: usize,
        fx: usize,
        fy: usize,
    },
    /// A non-finite entry appeared where the volume invariant forbids it.
    NonFinite { index: usize },
}

impl fmt::Display for TensorError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TensorError::DimensionMismatch { left, right } => write!(
                f,
                "matrix dimension mismatch: {}x{} * {}x{}",
                left.0, left.1, right.0, right.1
            ),
            TensorError::DataLength { expected, got } => {
                write!(f, "volume data length {got}, expected {expected}")
            }
            TensorError::ZeroFactor => write!(f, "upsampling factor must be >= 1"),
            TensorError::NotDivisible {
                width,
                height,
                fx,
                fy,
            } => write!(
                f,
                "spatial size {width}x{height} not divisible by block {fx}x{fy}"
            ),
            TensorError::NonFinite { index } => {
                write!(f, "non-finite entry at flat index {index}")
            }
        }
    }
}

impl std::error::Error for TensorError {}

/// A dense `K x X x Y` feature volume in channel-major order.
///
/// Index `(k, x, y)` lives at `(k * width + x) * height + y`, which makes
/// each channel a contiguous run of `width * height` values.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationVolume {
    channels: usize,
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl ActivationVolume {
    pub fn new(
        channels: usize,
        width: usize,
        height: usize,
        data: Vec<f64>,
    ) -> Result<Self, TensorError> {
        let expected = channels * width * height;
        if data.len() != expected {
            return Err(TensorError::DataLength {
                expected,
                got: data.len(),
            });
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(TensorError::NonFinite { index });
        }
        Ok(Self {
            channels,
            width,
            height,
            data,
        })
    }

    pub fn zeros(channels: usize, width: usize, height: usize) -> Self {
        Self {
            channels,
            width,
            height,
            data: vec![0.0; channels * width * height],
        }
    }

    /// Constant-filled volume; `value` must be finite.
    pub fn filled(channels: usize, width: usize, height: usize, value: f64) -> Self {
        assert!(value.is_finite());
        Self {
            channels,
            width,
            height,
            data: vec![value; channels * width * height],
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Spatial positions per channel.
    pub fn positions(&self) -> usize {
        self.width * self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn index(&self, k: usize, x: usize, y: usize) -> usize {
        (k * self.width + x) * self.height + y
    }

    #[inline]
    pub fn get(&self, k: usize, x: usize, y: usize) -> f64 {
        self.data[self.index(k, x, y)]
    }

    #[inline]
    pub fn set(&mut self, k: usize, x: usize, y: usize, value: f64) {
        let i = self.index(k, x, y);
        self.data[i] = value;
    }

    /// Contiguous slice holding channel `k`.
    pub fn channel(&self, k: usize) -> &[f64] {
        let m = self.positions();
        &self.data[k * m..(k + 1) * m]
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.channels == other.channels && self.width == other.width && self.height == other.height
    }

    /// View the volume as a `channels x positions` matrix without copying.
    pub fn as_matrix(&self) -> Matrix {
        Matrix {
            rows: self.channels,
            cols: self.positions(),
            data: self.data.clone(),
        }
    }

    /// Entrywise shift by a constant.
    pub fn shifted(&self, s: f64) -> Self {
        if s == 0.0 {
            return self.clone();
        }
        let mut out = self.clone();
        for v in &mut out.data {
            *v += s;
        }
        out
    }

    pub fn scale(&mut self, factor: f64) {
        for v in &mut self.data {
            *v *= factor;
        }
    }

    /// `self += other`, shapes must agree.
    pub fn accumulate(&mut self, other: &Self) {
        assert!(self.same_shape(other));
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += *b;
        }
    }

    pub fn dot(&self, other: &Self) -> f64 {
        assert!(self.same_shape(other));
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }
}

/// Dense row-major matrix of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, TensorError> {
        if data.len() != rows * cols {
            return Err(TensorError::DataLength {
                expected: rows * cols,
                got: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, value: f64) {
        self.data[r * self.cols + c] = value;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn transposed(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }
}

/// Standard matrix product `A * B`.
pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix, TensorError> {
    if a.cols != b.rows {
        return Err(TensorError::DimensionMismatch {
            left: (a.rows, a.cols),
            right: (b.rows, b.cols),
        });
    }
    let mut out = Matrix::zeros(a.rows, b.cols);
    let cols = b.cols;
    parallel::for_each_chunk_mut(&mut out.data, cols, a.cols, |r, out_row| {
        let a_row = a.row(r);
        for (m, &a_val) in a_row.iter().enumerate() {
            if a_val == 0.0 {
                continue;
            }
            let b_row = b.row(m);
            for c in 0..cols {
                out_row[c] += a_val * b_row[c];
            }
        }
    });
    Ok(out)
}

/// Product `A * B^T`; both operands are read row-wise, which is the layout
/// the Gram statistics produce.
pub fn matmul_bt(a: &Matrix, b: &Matrix) -> Result<Matrix, TensorError> {
    if a.cols != b.cols {
        return Err(TensorError::DimensionMismatch {
            left: (a.rows, a.cols),
            right: (b.cols, b.rows),
        });
    }
    let mut out = Matrix::zeros(a.rows, b.rows);
    let cols = b.rows;
    parallel::for_each_chunk_mut(&mut out.data, cols, a.cols, |r, out_row| {
        let a_row = a.row(r);
        for (c, out_val) in out_row.iter_mut().enumerate() {
            *out_val = dot(a_row, b.row(c));
        }
    });
    Ok(out)
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = 0.0;
    for i in 0..a.len() {
        acc += a[i] * b[i];
    }
    acc
}

/// Nearest-neighbor upsampling by integer factors `(fx, fy)`.
///
/// `out(k, x, y) = f(k, x / fx, y / fy)`.
pub fn nearest_upsample(
    f: &ActivationVolume,
    fx: usize,
    fy: usize,
) -> Result<ActivationVolume, TensorError> {
    if fx == 0 || fy == 0 {
        return Err(TensorError::ZeroFactor);
    }
    if fx == 1 && fy == 1 {
        return Ok(f.clone());
    }
    let (k_n, w, h) = (f.channels, f.width, f.height);
    let (ow, oh) = (w * fx, h * fy);
    let mut out = ActivationVolume::zeros(k_n, ow, oh);
    parallel::for_each_chunk_mut(&mut out.data, ow * oh, 1, |k, chunk| {
        let src = f.channel(k);
        for x in 0..ow {
            let sx = x / fx;
            for y in 0..oh {
                chunk[x * oh + y] = src[sx * h + y / fy];
            }
        }
    });
    Ok(out)
}

/// Sum over `fx x fy` blocks; the adjoint of [`nearest_upsample`], i.e.
/// `<up(a), b> == <a, block_sum_downsample(b)>` for all shapes that match.
pub fn block_sum_downsample(
    f: &ActivationVolume,
    fx: usize,
    fy: usize,
) -> Result<ActivationVolume, TensorError> {
    if fx == 0 || fy == 0 {
        return Err(TensorError::ZeroFactor);
    }
    if !f.width.is_multiple_of(fx) || !f.height.is_multiple_of(fy) {
        return Err(TensorError::NotDivisible {
            width: f.width,
            height: f.height,
            fx,
            fy,
        });
    }
    if fx == 1 && fy == 1 {
        return Ok(f.clone());
    }
    let (k_n, h) = (f.channels, f.height);
    let (ow, oh) = (f.width / fx, f.height / fy);
    let mut out = ActivationVolume::zeros(k_n, ow, oh);
    parallel::for_each_chunk_mut(&mut out.data, ow * oh, fx * fy, |k, chunk| {
        let src = f.channel(k);
        for x in 0..ow {
            for y in 0..oh {
                let mut acc = 0.0;
                for bx in 0..fx {
                    let sx = x * fx + bx;
                    for by in 0..fy {
                        acc += src[sx * h + (y * fy + by)];
                    }
                }
                chunk[x * oh + y] = acc;
            }
        }
    });
    Ok(out)
}

/// 3x3 box blur with zero padding: every output cell is one ninth of the
/// sum of its 3x3 neighborhood. Zero padding keeps the operator symmetric,
/// so it is its own adjoint.
pub fn box_blur(f: &ActivationVolume) -> ActivationVolume {
    let (k_n, w, h) = (f.channels, f.width, f.height);
    let mut out = ActivationVolume::zeros(k_n, w, h);
    parallel::for_each_chunk_mut(&mut out.data, w * h, 9, |k, chunk| {
        let src = f.channel(k);
        for x in 0..w {
            for y in 0..h {
                let mut acc = 0.0;
                for dx in -1i64..=1 {
                    let sx = x as i64 + dx;
                    if sx < 0 || sx >= w as i64 {
                        continue;
                    }
                    for dy in -1i64..=1 {
                        let sy = y as i64 + dy;
                        if sy < 0 || sy >= h as i64 {
                            continue;
                        }
                        acc += src[sx as usize * h + sy as usize];
                    }
                }
                chunk[x * h + y] = acc / 9.0;
            }
        }
    });
    out
}

/// Apply [`box_blur`] `count` times.
pub fn box_blur_n(f: &ActivationVolume, count: usize) -> ActivationVolume {
    let mut out = f.clone();
    for _ in 0..count {
        out = box_blur(&out);
    }
    out
}

/// Shift the spatial grid by `(dx, dy)` with zero padding:
/// `out(k, x, y) = f(k, x + dx, y + dy)` where in bounds, else 0.
///
/// The adjoint of a shift by `(dx, dy)` is the shift by `(-dx, -dy)`.
pub fn spatial_shift(f: &ActivationVolume, dx: i64, dy: i64) -> ActivationVolume {
    if dx == 0 && dy == 0 {
        return f.clone();
    }
    let (k_n, w, h) = (f.channels, f.width, f.height);
    let mut out = ActivationVolume::zeros(k_n, w, h);
    parallel::for_each_chunk_mut(&mut out.data, w * h, 1, |k, chunk| {
        let src = f.channel(k);
        for x in 0..w {
            let sx = x as i64 + dx;
            if sx < 0 || sx >= w as i64 {
                continue;
            }
            for y in 0..h {
                let sy = y as i64 + dy;
                if sy < 0 || sy >= h as i64 {
                    continue;
                }
                chunk[x * h + y] = src[sx as usize * h + sy as usize];
            }
        }
    });
    out
}
