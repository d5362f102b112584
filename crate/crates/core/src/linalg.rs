//! Small dense kernels with a fixed summation order.

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::exec::{self, Execution};

/// `a · b`, parallel over output rows. Each output row accumulates
/// `a[i, l] * b[l, ..]` for `l` ascending, so the result does not depend on
/// the execution mode.
pub fn matmul(exec: Execution, a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    let (n, inner) = a.dim();
    let (inner_b, m) = b.dim();
    if inner != inner_b {
        return Err(Error::DimensionMismatch(format!("cannot multiply {n}x{inner} by {inner_b}x{m}")));
    }
    let a = a.as_standard_layout();
    let b = b.as_standard_layout();
    let a = a.as_slice().expect("standard layout");
    let b = b.as_slice().expect("standard layout");
    let mut out = vec![0.0; n * m];
    exec::fill_rows(exec, &mut out, m, |i, row| {
        let a_row = &a[i * inner..(i + 1) * inner];
        for (l, &coef) in a_row.iter().enumerate() {
            if coef == 0.0 {
                continue;
            }
            let b_row = &b[l * m..(l + 1) * m];
            for (o, &v) in row.iter_mut().zip(b_row) {
                *o += coef * v;
            }
        }
    });
    Ok(Array2::from_shape_vec((n, m), out).expect("shape matches buffer"))
}

/// Solves `a · x = b` by Gaussian elimination with partial pivoting.
pub fn solve(mut a: Array2<f64>, mut b: Array2<f64>) -> Result<Array2<f64>> {
    let n = a.nrows();
    if a.ncols() != n || b.nrows() != n {
        return Err(Error::DimensionMismatch(format!(
            "solve needs square a and matching b, got {:?} and {:?}",
            a.dim(),
            b.dim()
        )));
    }
    let scale = a.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[[i, col]].abs().total_cmp(&a[[j, col]].abs()))
            .expect("nonempty range");
        if !(a[[pivot, col]].abs() > scale * 1e-14) {
            return Err(Error::SingularSystem(col));
        }
        if pivot != col {
            for j in 0..n {
                a.swap([pivot, j], [col, j]);
            }
            for j in 0..b.ncols() {
                b.swap([pivot, j], [col, j]);
            }
        }
        let p = a[[col, col]];
        for i in col + 1..n {
            let factor = a[[i, col]] / p;
            if factor == 0.0 {
                continue;
            }
            for j in col..n {
                a[[i, j]] -= factor * a[[col, j]];
            }
            for j in 0..b.ncols() {
                b[[i, j]] -= factor * b[[col, j]];
            }
        }
    }
    for col in (0..n).rev() {
        let p = a[[col, col]];
        for j in 0..b.ncols() {
            let mut acc = b[[col, j]];
            for k in col + 1..n {
                acc -= a[[col, k]] * b[[k, j]];
            }
            b[[col, j]] = acc / p;
        }
    }
    if b.iter().any(|v| !v.is_finite()) {
        return Err(Error::SingularSystem(n));
    }
    Ok(b)
}

pub fn frobenius_diff(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

pub fn max_abs_diff(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> f64 {
    a.iter().zip(b.iter()).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}
