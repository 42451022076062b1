//! Smooth parts of the training objectives: the squared hinge loss, the
//! optional ridge term, and the multi-task similarity penalty
//! `lambda_s * sum_t ||w_t - mean(w)||^2`.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::data::{TaskCollection, TrialSet};
use crate::error::{check_dim, Error, Result};

/// Dot product with four independent accumulators, summed in a fixed order.
#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for k in 0..chunks {
        let i = 4 * k;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut tail = 0.0;
    for i in 4 * chunks..a.len() {
        tail += a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

fn contiguous<'a>(w: &'a ArrayView1<f64>, buf: &'a mut Vec<f64>) -> &'a [f64] {
    match w.as_slice() {
        Some(s) => s,
        None => {
            buf.extend(w.iter().copied());
            buf
        }
    }
}

/// Squared hinge loss `sum_i max(0, 1 - y_i (x_i . w + b))^2`.
pub fn sq_hinge_value(w: ArrayView1<f64>, b: f64, data: &TrialSet) -> Result<f64> {
    check_dim(data.dim(), w.len())?;
    let mut buf = Vec::new();
    let w = contiguous(&w, &mut buf);
    let labels = data.labels();
    let mut loss = 0.0;
    for i in 0..data.n() {
        let slack = 1.0 - labels[i] * (dot(data.row(i), w) + b);
        if slack > 0.0 {
            loss += slack * slack;
        }
    }
    Ok(loss)
}

/// Gradient of the squared hinge loss with respect to `w` and `b`.
pub fn sq_hinge_grad(w: ArrayView1<f64>, b: f64, data: &TrialSet) -> Result<(Array1<f64>, f64)> {
    let (_, gw, gb) = sq_hinge_value_grad(w, b, data)?;
    Ok((gw, gb))
}

/// Loss value and gradient from a single pass over the trials.
pub fn sq_hinge_value_grad(w: ArrayView1<f64>, b: f64, data: &TrialSet) -> Result<(f64, Array1<f64>, f64)> {
    check_dim(data.dim(), w.len())?;
    let mut grad = Array1::zeros(data.dim());
    let (loss, gb) = accumulate_sq_hinge(w, b, data, grad.as_slice_mut().expect("owned"));
    Ok((loss, grad, gb))
}

/// Adds the loss gradient into `grad_w` and returns `(loss, grad_b)`.
pub(crate) fn accumulate_sq_hinge(w: ArrayView1<f64>, b: f64, data: &TrialSet, grad_w: &mut [f64]) -> (f64, f64) {
    let mut buf = Vec::new();
    let w = contiguous(&w, &mut buf);
    let labels = data.labels();
    let mut loss = 0.0;
    let mut grad_b = 0.0;
    for i in 0..data.n() {
        let row = data.row(i);
        let y = labels[i];
        let slack = 1.0 - y * (dot(row, w) + b);
        if slack > 0.0 {
            loss += slack * slack;
            let coef = -2.0 * y * slack;
            axpy(coef, row, grad_w);
            grad_b += coef;
        }
    }
    (loss, grad_b)
}

/// `2 * sum_i ||x_i||^2`: gradient Lipschitz bound of the loss in `w` alone.
pub fn lipschitz_loss_weights(data: &TrialSet) -> f64 {
    2.0 * (0..data.n()).map(|i| {
        let row = data.row(i);
        dot(row, row)
    }).sum::<f64>()
}

/// Gradient Lipschitz bound of the loss in `(w, b)` jointly, treating the
/// bias as a constant-one feature: `2 * sum_i (||x_i||^2 + 1)`.
pub fn lipschitz_loss(data: &TrialSet) -> f64 {
    lipschitz_loss_weights(data) + 2.0 * data.n() as f64
}

/// `lambda_s * sum_t ||w_t - mean_t(w_t)||^2` for the rows of `weights` (m x d).
pub fn similarity_value(weights: ArrayView2<f64>, lambda_s: f64) -> Result<f64> {
    if weights.nrows() == 0 {
        return Err(Error::invalid("m", "at least one task is required"));
    }
    let mean = weights.mean_axis(Axis(0)).expect("m >= 1");
    let mut total = 0.0;
    for row in weights.rows() {
        total += row.iter().zip(mean.iter()).map(|(a, m)| (a - m) * (a - m)).sum::<f64>();
    }
    Ok(lambda_s * total)
}

/// Gradient of [`similarity_value`]: row `t` is `2 lambda_s (w_t - mean)`.
pub fn similarity_grad(weights: ArrayView2<f64>, lambda_s: f64) -> Result<Array2<f64>> {
    if weights.nrows() == 0 {
        return Err(Error::invalid("m", "at least one task is required"));
    }
    let mean = weights.mean_axis(Axis(0)).expect("m >= 1");
    let mut grad = weights.to_owned();
    for mut row in grad.rows_mut() {
        row -= &mean;
        row *= 2.0 * lambda_s;
    }
    Ok(grad)
}

/// Bound on the gradient Lipschitz constant of the multi-task smooth part:
/// the loss Hessian is block diagonal over tasks, and the similarity Hessian
/// `2 lambda_s M` has `||M|| <= 2`.
pub fn lipschitz_mtl(tasks: &TaskCollection, lambda_s: f64) -> f64 {
    let loss = tasks
        .tasks()
        .iter()
        .map(lipschitz_loss)
        .fold(0.0, f64::max);
    loss + 4.0 * lambda_s
}

/// Single-task smooth part: squared hinge loss plus `l2 / 2 * ||w||^2`.
#[derive(Clone, Copy, Debug)]
pub struct SingleTaskSmooth<'a> {
    pub data: &'a TrialSet,
    pub l2: f64,
}

impl<'a> SingleTaskSmooth<'a> {
    pub fn new(data: &'a TrialSet, l2: f64) -> Self {
        SingleTaskSmooth { data, l2 }
    }

    pub fn value(&self, w: ArrayView1<f64>, b: f64) -> Result<f64> {
        let loss = sq_hinge_value(w, b, self.data)?;
        Ok(loss + self.ridge(w))
    }

    pub fn value_grad(&self, w: ArrayView1<f64>, b: f64) -> Result<(f64, Array1<f64>, f64)> {
        let (loss, mut gw, gb) = sq_hinge_value_grad(w, b, self.data)?;
        if self.l2 > 0.0 {
            gw.scaled_add(self.l2, &w);
        }
        Ok((loss + self.ridge(w), gw, gb))
    }

    fn ridge(&self, w: ArrayView1<f64>) -> f64 {
        if self.l2 > 0.0 {
            0.5 * self.l2 * w.dot(&w)
        } else {
            0.0
        }
    }

    pub fn lipschitz(&self) -> f64 {
        lipschitz_loss(self.data) + self.l2
    }
}

/// Multi-task smooth part over task-stacked weights `[w_1; ...; w_m]`.
#[derive(Clone, Copy, Debug)]
pub struct MultiTaskSmooth<'a> {
    pub tasks: &'a TaskCollection,
    pub lambda_s: f64,
}

impl<'a> MultiTaskSmooth<'a> {
    pub fn new(tasks: &'a TaskCollection, lambda_s: f64) -> Self {
        MultiTaskSmooth { tasks, lambda_s }
    }

    fn check(&self, stacked: &ArrayView1<f64>, biases: &[f64]) -> Result<()> {
        check_dim(self.tasks.m() * self.tasks.dim(), stacked.len())?;
        check_dim(self.tasks.m(), biases.len())
    }

    fn as_matrix<'b>(&self, stacked: &'b ArrayView1<'b, f64>) -> ArrayView2<'b, f64> {
        stacked
            .view()
            .into_shape_with_order((self.tasks.m(), self.tasks.dim()))
            .expect("stacked weights are contiguous")
    }

    pub fn value(&self, stacked: ArrayView1<f64>, biases: &[f64]) -> Result<f64> {
        self.check(&stacked, biases)?;
        let d = self.tasks.dim();
        let mut total = 0.0;
        for (t, task) in self.tasks.tasks().iter().enumerate() {
            total += sq_hinge_value(stacked.slice(ndarray::s![t * d..(t + 1) * d]), biases[t], task)?;
        }
        if self.lambda_s > 0.0 {
            let owned = stacked.to_owned();
            let view = owned.view();
            total += similarity_value(self.as_matrix(&view), self.lambda_s)?;
        }
        Ok(total)
    }

    /// Value, gradient in stacked weights, and per-task bias gradients.
    pub fn value_grad(&self, stacked: ArrayView1<f64>, biases: &[f64]) -> Result<(f64, Array1<f64>, Vec<f64>)> {
        self.check(&stacked, biases)?;
        let d = self.tasks.dim();
        let mut grad = Array1::zeros(stacked.len());
        let mut grad_b = Vec::with_capacity(self.tasks.m());
        let mut total = 0.0;
        {
            let g = grad.as_slice_mut().expect("owned");
            for (t, task) in self.tasks.tasks().iter().enumerate() {
                let (loss, gb) = accumulate_sq_hinge(
                    stacked.slice(ndarray::s![t * d..(t + 1) * d]),
                    biases[t],
                    task,
                    &mut g[t * d..(t + 1) * d],
                );
                total += loss;
                grad_b.push(gb);
            }
        }
        if self.lambda_s > 0.0 {
            let owned = stacked.to_owned();
            let view = owned.view();
            let matrix = self.as_matrix(&view);
            total += similarity_value(matrix, self.lambda_s)?;
            let sg = similarity_grad(matrix, self.lambda_s)?;
            grad += &sg.into_shape_with_order(stacked.len()).expect("contiguous");
        }
        Ok((total, grad, grad_b))
    }

    pub fn lipschitz(&self) -> f64 {
        lipschitz_mtl(self.tasks, self.lambda_s)
    }
}
