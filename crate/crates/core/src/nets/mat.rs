//! Row-major matrix storage and the three affine kernels every trainable map
//! needs: forward, gradient w.r.t. inputs, gradient w.r.t. weights.
//!
//! Weights for a layer with `fan_in` inputs and `fan_out` outputs are stored
//! as a `fan_out x fan_in` row-major block so both the forward dot products
//! and the backward axpy sweeps run over contiguous memory.

/// Dense row-major matrix of f64. Rows are samples, columns are features.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Wraps an existing buffer; `data.len()` must equal `rows * cols`.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix buffer size mismatch");
        Mat { rows, cols, data }
    }

    pub fn from_row(row: &[f64]) -> Self {
        Mat::from_vec(1, row.len(), row.to_vec())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Stacks rows of `parts` vertically; all parts must share a width.
    pub fn vstack(parts: &[&Mat]) -> Self {
        assert!(!parts.is_empty());
        let cols = parts[0].cols;
        let rows = parts.iter().map(|p| p.rows).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for p in parts {
            assert_eq!(p.cols, cols, "vstack width mismatch");
            data.extend_from_slice(&p.data);
        }
        Mat { rows, cols, data }
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// `out[b] = x[b] * W^T + bias` for a `fan_out x fan_in` weight block.
pub fn affine_forward(x: &Mat, w: &[f64], bias: &[f64], out: &mut Mat) {
    let fan_in = x.cols();
    let fan_out = bias.len();
    debug_assert_eq!(w.len(), fan_in * fan_out);
    debug_assert_eq!(out.rows(), x.rows());
    debug_assert_eq!(out.cols(), fan_out);
    for b in 0..x.rows() {
        let xr = x.row(b);
        let or = out.row_mut(b);
        for o in 0..fan_out {
            or[o] = dot(xr, &w[o * fan_in..(o + 1) * fan_in]) + bias[o];
        }
    }
}

/// `dx[b] = d_pre[b] * W`; overwrites `dx`.
pub fn affine_grad_input(d_pre: &Mat, w: &[f64], fan_in: usize, dx: &mut Mat) {
    let fan_out = d_pre.cols();
    debug_assert_eq!(dx.cols(), fan_in);
    debug_assert_eq!(dx.rows(), d_pre.rows());
    for b in 0..d_pre.rows() {
        let dr = d_pre.row(b);
        let xr = dx.row_mut(b);
        xr.fill(0.0);
        for o in 0..fan_out {
            axpy(dr[o], &w[o * fan_in..(o + 1) * fan_in], xr);
        }
    }
}

/// Accumulates `dW += d_pre^T * x` and `db += colsum(d_pre)`.
pub fn affine_grad_params(d_pre: &Mat, x: &Mat, dw: &mut [f64], db: &mut [f64]) {
    let fan_in = x.cols();
    let fan_out = d_pre.cols();
    debug_assert_eq!(dw.len(), fan_in * fan_out);
    debug_assert_eq!(db.len(), fan_out);
    for b in 0..d_pre.rows() {
        let dr = d_pre.row(b);
        let xr = x.row(b);
        for o in 0..fan_out {
            axpy(dr[o], xr, &mut dw[o * fan_in..(o + 1) * fan_in]);
            db[o] += dr[o];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn affine_forward_matches_hand_computation() {
        // W = [[1, 2], [0, -1]], b = [0.5, 0], x = [3, 4]
        let x = Mat::from_row(&[3.0, 4.0]);
        let w = [1.0, 2.0, 0.0, -1.0];
        let bias = [0.5, 0.0];
        let mut out = Mat::zeros(1, 2);
        affine_forward(&x, &w, &bias, &mut out);
        assert_eq!(out.row(0), &[11.5, -4.0]);
    }

    #[test]
    fn input_gradient_is_dy_times_w() {
        let d = Mat::from_row(&[1.0, -2.0]);
        let w = [1.0, 2.0, 0.0, -1.0];
        let mut dx = Mat::zeros(1, 2);
        affine_grad_input(&d, &w, 2, &mut dx);
        // dy*W = 1*[1,2] + (-2)*[0,-1] = [1, 4]
        assert_eq!(dx.row(0), &[1.0, 4.0]);
    }

    #[test]
    fn param_gradients_accumulate() {
        let d = Mat::from_row(&[1.0, -1.0]);
        let x = Mat::from_row(&[2.0, 3.0]);
        let mut dw = vec![0.0; 4];
        let mut db = vec![0.0; 2];
        affine_grad_params(&d, &x, &mut dw, &mut db);
        affine_grad_params(&d, &x, &mut dw, &mut db);
        assert_eq!(dw, vec![4.0, 6.0, -4.0, -6.0]);
        assert_eq!(db, vec![2.0, -2.0]);
    }

    #[test]
    fn vstack_concatenates_rows() {
        let a = Mat::from_row(&[1.0, 2.0]);
        let b = Mat::from_vec(2, 2, vec![3.0, 4.0, 5.0, 6.0]);
        let s = Mat::vstack(&[&a, &b]);
        assert_eq!(s.rows(), 3);
        assert_eq!(s.row(2), &[5.0, 6.0]);
    }
}
