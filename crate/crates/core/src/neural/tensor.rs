use super::NeuralError;

/// Dense row-major array of `f64`.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self, NeuralError> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(NeuralError::shape(
                "tensor",
                format!("shape {shape:?} needs {expected} values, got {}", data.len()),
            ));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(rows * cols, data.len(), "matrix {rows}x{cols}");
        Self {
            shape: vec![rows, cols],
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rows(&self) -> usize {
        self.shape.first().copied().unwrap_or(1)
    }

    /// Row width of a matrix (product of trailing dims).
    pub fn cols(&self) -> usize {
        self.shape.iter().skip(1).product()
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        let c = self.cols();
        &mut self.data[r * c..(r + 1) * c]
    }

    pub fn fill(&mut self, v: f64) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape, other.shape);
        axpy(1.0, &other.data, &mut self.data);
    }

    pub fn norm_sq(&self) -> f64 {
        dot(&self.data, &self.data)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    /// Horizontal concatenation of two matrices with equal row counts.
    pub fn hcat(a: &Tensor, b: &Tensor) -> Tensor {
        assert_eq!(a.rows(), b.rows());
        let (ca, cb) = (a.cols(), b.cols());
        let mut data = Vec::with_capacity(a.rows() * (ca + cb));
        for r in 0..a.rows() {
            data.extend_from_slice(a.row(r));
            data.extend_from_slice(b.row(r));
        }
        Tensor::matrix(a.rows(), ca + cb, data)
    }

    /// Splits columns at `at`: inverse of [`Tensor::hcat`].
    pub fn hsplit(&self, at: usize) -> (Tensor, Tensor) {
        let c = self.cols();
        assert!(at <= c);
        let mut left = Vec::with_capacity(self.rows() * at);
        let mut right = Vec::with_capacity(self.rows() * (c - at));
        for r in 0..self.rows() {
            let row = self.row(r);
            left.extend_from_slice(&row[..at]);
            right.extend_from_slice(&row[at..]);
        }
        (
            Tensor::matrix(self.rows(), at, left),
            Tensor::matrix(self.rows(), c - at, right),
        )
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for (x, y) in ra.iter().zip(rb) {
        s += x * y;
    }
    s
}

#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// `y = x w^T` for `x: rows x k`, `w: n x k`.
pub fn matmul_nt(x: &[f64], rows: usize, k: usize, w: &[f64], n: usize) -> Vec<f64> {
    let mut y = vec![0.0; rows * n];
    for r in 0..rows {
        let xr = &x[r * k..(r + 1) * k];
        let yr = &mut y[r * n..(r + 1) * n];
        for (j, yj) in yr.iter_mut().enumerate() {
            *yj = dot(xr, &w[j * k..(j + 1) * k]);
        }
    }
    y
}

/// `dw += dy^T x` for `dy: rows x n`, `x: rows x k`, `dw: n x k`.
pub fn accumulate_tn(dy: &[f64], x: &[f64], rows: usize, n: usize, k: usize, dw: &mut [f64]) {
    for r in 0..rows {
        let xr = &x[r * k..(r + 1) * k];
        for j in 0..n {
            let g = dy[r * n + j];
            if g != 0.0 {
                axpy(g, xr, &mut dw[j * k..(j + 1) * k]);
            }
        }
    }
}

/// `dx = dy w` for `dy: rows x n`, `w: n x k`.
pub fn matmul_nn(dy: &[f64], rows: usize, n: usize, w: &[f64], k: usize) -> Vec<f64> {
    let mut dx = vec![0.0; rows * k];
    for r in 0..rows {
        let dxr = &mut dx[r * k..(r + 1) * k];
        for j in 0..n {
            let g = dy[r * n + j];
            if g != 0.0 {
                axpy(g, &w[j * k..(j + 1) * k], dxr);
            }
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernels_agree_with_naive_loops() {
        let (rows, k, n) = (3, 5, 4);
        let x: Vec<f64> = (0..rows * k).map(|i| (i as f64 * 0.37).sin()).collect();
        let w: Vec<f64> = (0..n * k).map(|i| (i as f64 * 0.11).cos()).collect();
        let y = matmul_nt(&x, rows, k, &w, n);
        for r in 0..rows {
            for j in 0..n {
                let naive: f64 = (0..k).map(|t| x[r * k + t] * w[j * k + t]).sum();
                assert!((y[r * n + j] - naive).abs() < 1e-12);
            }
        }
        let dy: Vec<f64> = (0..rows * n).map(|i| i as f64 - 3.0).collect();
        let mut dw = vec![0.0; n * k];
        accumulate_tn(&dy, &x, rows, n, k, &mut dw);
        let dx = matmul_nn(&dy, rows, n, &w, k);
        for j in 0..n {
            for t in 0..k {
                let naive: f64 = (0..rows).map(|r| dy[r * n + j] * x[r * k + t]).sum();
                assert!((dw[j * k + t] - naive).abs() < 1e-12);
            }
        }
        for r in 0..rows {
            for t in 0..k {
                let naive: f64 = (0..n).map(|j| dy[r * n + j] * w[j * k + t]).sum();
                assert!((dx[r * k + t] - naive).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn hcat_hsplit_inverse() {
        let a = Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]);
        let b = Tensor::matrix(2, 1, vec![5.0, 6.0]);
        let c = Tensor::hcat(&a, &b);
        assert_eq!(c.data(), &[1.0, 2.0, 5.0, 3.0, 4.0, 6.0]);
        let (l, r) = c.hsplit(2);
        assert_eq!((l, r), (a, b));
        assert!(Tensor::from_vec(&[2, 2], vec![0.0; 3]).is_err());
    }
}
