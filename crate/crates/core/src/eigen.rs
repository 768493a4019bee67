//! Cyclic Jacobi eigensolver for dense real symmetric matrices.

use ndarray::Array2;

use crate::error::{Error, Result};

/// Symmetry tolerance accepted on input.
pub const SYMMETRY_TOL: f64 = 1e-12;
/// Sweeps stop once the off-diagonal Frobenius norm drops below this.
pub const OFF_DIAGONAL_TOL: f64 = 1e-12;
const MAX_SWEEPS: usize = 100;

/// Eigen-decomposition with ascending eigenvalues; column `k` of `vectors`
/// belongs to `values[k]`.
#[derive(Clone, Debug)]
pub struct SymmetricEigen {
    pub values: Vec<f64>,
    pub vectors: Array2<f64>,
}

pub fn check_symmetric(a: &Array2<f64>) -> Result<()> {
    let (r, c) = a.dim();
    if r != c {
        return Err(Error::InvalidArgument(format!("matrix is {r}x{c}, expected square")));
    }
    for i in 0..r {
        for j in i + 1..r {
            let diff = (a[[i, j]] - a[[j, i]]).abs();
            if diff > SYMMETRY_TOL || diff.is_nan() {
                return Err(Error::NotSymmetric { row: i, col: j, diff });
            }
        }
    }
    Ok(())
}

fn off_norm(a: &Array2<f64>) -> f64 {
    let n = a.nrows();
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                s += a[[i, j]] * a[[i, j]];
            }
        }
    }
    s.sqrt()
}

fn rotate(a: &mut Array2<f64>, v: Option<&mut Array2<f64>>, p: usize, q: usize) {
    let apq = a[[p, q]];
    if apq == 0.0 {
        return;
    }
    let n = a.nrows();
    let theta = (a[[q, q]] - a[[p, p]]) / (2.0 * apq);
    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
    let t = if theta == 0.0 { 1.0 } else { t };
    let c = 1.0 / (t * t + 1.0).sqrt();
    let s = t * c;

    let app = a[[p, p]];
    let aqq = a[[q, q]];
    a[[p, p]] = app - t * apq;
    a[[q, q]] = aqq + t * apq;
    a[[p, q]] = 0.0;
    a[[q, p]] = 0.0;
    for k in 0..n {
        if k == p || k == q {
            continue;
        }
        let akp = a[[k, p]];
        let akq = a[[k, q]];
        let nkp = c * akp - s * akq;
        let nkq = s * akp + c * akq;
        a[[k, p]] = nkp;
        a[[p, k]] = nkp;
        a[[k, q]] = nkq;
        a[[q, k]] = nkq;
    }
    if let Some(v) = v {
        for k in 0..n {
            let vkp = v[[k, p]];
            let vkq = v[[k, q]];
            v[[k, p]] = c * vkp - s * vkq;
            v[[k, q]] = s * vkp + c * vkq;
        }
    }
}

fn run(a: &Array2<f64>, want_vectors: bool) -> Result<(Vec<f64>, Option<Array2<f64>>)> {
    check_symmetric(a)?;
    let n = a.nrows();
    let mut work = a.clone();
    let mut vecs = want_vectors.then(|| Array2::eye(n));
    for _ in 0..MAX_SWEEPS {
        if off_norm(&work) < OFF_DIAGONAL_TOL {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                rotate(&mut work, vecs.as_mut(), p, q);
            }
        }
    }
    let diag: Vec<f64> = (0..n).map(|i| work[[i, i]]).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| diag[x].total_cmp(&diag[y]));
    let values = order.iter().map(|&i| diag[i]).collect();
    let vecs = vecs.map(|v| {
        let mut sorted = Array2::zeros((n, n));
        for (dst, &src) in order.iter().enumerate() {
            sorted.column_mut(dst).assign(&v.column(src));
        }
        sorted
    });
    Ok((values, vecs))
}

/// Ascending eigenvalues of a symmetric matrix.
pub fn eigenvalues(a: &Array2<f64>) -> Result<Vec<f64>> {
    Ok(run(a, false)?.0)
}

pub fn eigen(a: &Array2<f64>) -> Result<SymmetricEigen> {
    let (values, vectors) = run(a, true)?;
    Ok(SymmetricEigen { values, vectors: vectors.expect("vectors requested") })
}
