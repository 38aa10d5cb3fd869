//! Small dense linear-algebra helpers: exact rational elimination and a few
//! subspace utilities on top of nalgebra.

use nalgebra::{DMatrix, DVector};
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Zero};

pub type Mat = DMatrix<f64>;
pub type Vector = DVector<f64>;

pub fn to_rational(rows: &[Vec<u64>]) -> Vec<Vec<BigRational>> {
    rows.iter()
        .map(|r| r.iter().map(|&x| BigRational::from_integer(BigInt::from(x))).collect())
        .collect()
}

/// Determinant over the rationals by fraction-exact Gaussian elimination.
pub fn rational_det(rows: &[Vec<u64>]) -> BigRational {
    let n = rows.len();
    if rows.iter().any(|r| r.len() != n) {
        return BigRational::zero();
    }
    let mut a = to_rational(rows);
    let mut det = BigRational::one();
    for col in 0..n {
        let Some(p) = (col..n).find(|&r| !a[r][col].is_zero()) else {
            return BigRational::zero();
        };
        if p != col {
            a.swap(p, col);
            det = -det;
        }
        let pivot = a[col][col].clone();
        det *= &pivot;
        for r in col + 1..n {
            if a[r][col].is_zero() {
                continue;
            }
            let factor = &a[r][col] / &pivot;
            for c in col..n {
                let sub = &factor * &a[col][c];
                a[r][c] -= sub;
            }
        }
    }
    det
}

/// Inverse over the rationals, `None` if singular.
pub fn rational_inverse(a: &[Vec<BigRational>]) -> Option<Vec<Vec<BigRational>>> {
    let n = a.len();
    let mut m: Vec<Vec<BigRational>> = a
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let mut r = row.clone();
            r.extend((0..n).map(|j| if i == j { BigRational::one() } else { BigRational::zero() }));
            r
        })
        .collect();
    for col in 0..n {
        let p = (col..n).find(|&r| !m[r][col].is_zero())?;
        m.swap(p, col);
        let pivot = m[col][col].clone();
        for x in m[col].iter_mut() {
            *x /= &pivot;
        }
        for r in 0..n {
            if r == col || m[r][col].is_zero() {
                continue;
            }
            let factor = m[r][col].clone();
            for c in 0..2 * n {
                let sub = &factor * &m[col][c];
                m[r][c] -= sub;
            }
        }
    }
    Some(m.into_iter().map(|r| r[n..].to_vec()).collect())
}

pub fn rational_mul(a: &[Vec<BigRational>], b: &[Vec<BigRational>]) -> Vec<Vec<BigRational>> {
    let inner = b.len();
    let cols = b.first().map_or(0, |r| r.len());
    a.iter()
        .map(|row| {
            (0..cols)
                .map(|j| {
                    (0..inner).fold(BigRational::zero(), |acc, k| acc + &row[k] * &b[k][j])
                })
                .collect()
        })
        .collect()
}

/// Thin QR with nonnegative diagonal in `R`.
pub fn qr_positive(a: &Mat) -> (Mat, Mat) {
    let qr = a.clone().qr();
    let mut q = qr.q();
    let mut r = qr.r();
    for i in 0..r.nrows().min(q.ncols()) {
        if r[(i, i)] < 0.0 {
            for j in 0..r.ncols() {
                r[(i, j)] = -r[(i, j)];
            }
            for k in 0..q.nrows() {
                q[(k, i)] = -q[(k, i)];
            }
        }
    }
    (q, r)
}

/// Orthonormal basis for the column span of `a` (assumed full column rank).
pub fn orthonormalize(a: &Mat) -> Mat {
    if a.ncols() == 0 {
        return a.clone();
    }
    qr_positive(a).0
}

/// Orthonormal basis of the orthogonal complement of the span of the
/// orthonormal columns of `q`.
pub fn complement(q: &Mat) -> Mat {
    let m = q.nrows();
    let d = q.ncols();
    if d == 0 {
        return Mat::identity(m, m);
    }
    let proj = Mat::identity(m, m) - q * q.transpose();
    let svd = proj.svd(true, false);
    let u = svd.u.expect("left singular vectors");
    let mut idx: Vec<usize> = (0..svd.singular_values.len()).collect();
    idx.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let cols: Vec<Vector> = idx.iter().take(m - d).map(|&i| u.column(i).into_owned()).collect();
    if cols.is_empty() {
        Mat::zeros(m, 0)
    } else {
        Mat::from_columns(&cols)
    }
}

/// Distance of `v` from the span of the orthonormal columns of `q`,
/// relative to `|v|`.
pub fn relative_residual(q: &Mat, v: &Vector) -> f64 {
    let n = v.norm();
    if n == 0.0 {
        return 0.0;
    }
    if q.ncols() == 0 {
        return 1.0;
    }
    (v - q * (q.transpose() * v)).norm() / n
}

/// Sine of the largest principal angle between two subspaces with
/// orthonormal bases of equal dimension.
pub fn subspace_distance(a: &Mat, b: &Mat) -> f64 {
    if a.ncols() == 0 {
        return 0.0;
    }
    let m = a.nrows();
    let pb = Mat::identity(m, m) - b * b.transpose();
    (pb * a).svd(false, false).singular_values.max()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Least-squares slope and intercept of `y` against `x`.
pub fn fit_line(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let slope = if sxx == 0.0 { 0.0 } else { sxy / sxx };
    (slope, my - slope * mx)
}
