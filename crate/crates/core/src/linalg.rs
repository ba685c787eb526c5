//! Dense symmetric matrices and a cyclic Jacobi eigenvalue solver.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Maximum number of full Jacobi sweeps before giving up.
pub const MAX_SWEEPS: usize = 100;
/// Eigenvalues below `-PSD_TOL` mark a matrix as not positive semi-definite.
pub const PSD_TOL: f64 = 1e-8;
const SYMMETRY_TOL: f64 = 1e-9;
const OFF_DIAGONAL_TOL: f64 = 1e-10;

/// Square matrix stored row-major; symmetry is checked on construction.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix<T> {
    n: usize,
    data: Vec<T>,
}

impl<T: Scalar> SymMatrix<T> {
    /// Build from row-major data, checking squareness and symmetry.
    pub fn new(n: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != n * n {
            return Err(Error::invalid(format!(
                "expected {} entries for a {n}x{n} matrix, got {}",
                n * n,
                data.len()
            )));
        }
        let m = SymMatrix { n, data };
        let scale = m.max_abs().max(T::one());
        let tol = T::lit(SYMMETRY_TOL) * scale;
        for i in 0..n {
            for j in (i + 1)..n {
                let d = (m.get(i, j) - m.get(j, i)).abs();
                if !(d <= tol) {
                    return Err(Error::invalid(format!(
                        "matrix not symmetric at ({i},{j}): |a_ij - a_ji| = {d}"
                    )));
                }
            }
        }
        Ok(m)
    }

    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = vec![T::zero(); n * n];
        for i in 0..n {
            for j in i..n {
                let v = f(i, j);
                data[i * n + j] = v;
                data[j * n + i] = v;
            }
        }
        SymMatrix { n, data }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(n, |i, j| if i == j { T::one() } else { T::zero() })
    }

    pub fn diagonal(d: &[T]) -> Self {
        Self::from_fn(d.len(), |i, j| if i == j { d[i] } else { T::zero() })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn trace(&self) -> T {
        (0..self.n).map(|i| self.get(i, i)).sum()
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }

    pub fn scaled(&self, s: T) -> Self {
        SymMatrix {
            n: self.n,
            data: self.data.iter().map(|&v| v * s).collect(),
        }
    }

    /// Principal submatrix on `idx` (in the given order).
    pub fn submatrix(&self, idx: &[usize]) -> Self {
        Self::from_fn(idx.len(), |a, b| self.get(idx[a], idx[b]))
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }
}

/// All eigenvalues of a symmetric matrix, sorted descending.
///
/// Cyclic Jacobi rotations until the largest off-diagonal magnitude falls
/// below `1e-10` (scaled by the matrix magnitude), at most [`MAX_SWEEPS`] sweeps.
pub fn symmetric_eigenvalues<T: Scalar>(m: &SymMatrix<T>) -> Result<Vec<T>> {
    let n = m.n;
    let mut a = m.data.clone();
    let scale = m.max_abs().max(T::one());
    let tol = T::lit(OFF_DIAGONAL_TOL).max(T::epsilon() * T::lit(16.0)) * scale;
    let idx = |i: usize, j: usize| i * n + j;

    let off_max = |a: &[T]| {
        let mut mx = T::zero();
        for i in 0..n {
            for j in (i + 1)..n {
                mx = mx.max(a[idx(i, j)].abs());
            }
        }
        mx
    };

    let mut converged = off_max(&a) < tol;
    let mut sweep = 0;
    while !converged && sweep < MAX_SWEEPS {
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[idx(p, q)];
                if apq.abs() < T::min_positive_value() {
                    continue;
                }
                let app = a[idx(p, p)];
                let aqq = a[idx(q, q)];
                let theta = (aqq - app) / (T::lit(2.0) * apq);
                let t = {
                    let denom = theta.abs() + (theta * theta + T::one()).sqrt();
                    let t = T::one() / denom;
                    if theta < T::zero() {
                        -t
                    } else {
                        t
                    }
                };
                let c = T::one() / (t * t + T::one()).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[idx(k, p)];
                    let akq = a[idx(k, q)];
                    a[idx(k, p)] = c * akp - s * akq;
                    a[idx(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[idx(p, k)];
                    let aqk = a[idx(q, k)];
                    a[idx(p, k)] = c * apk - s * aqk;
                    a[idx(q, k)] = s * apk + c * aqk;
                }
                a[idx(p, q)] = T::zero();
                a[idx(q, p)] = T::zero();
            }
        }
        sweep += 1;
        converged = off_max(&a) < tol;
    }
    if !converged {
        return Err(Error::Numeric(format!(
            "Jacobi iteration did not converge after {MAX_SWEEPS} sweeps"
        )));
    }
    let mut ev: Vec<T> = (0..n).map(|i| a[idx(i, i)]).collect();
    ev.sort_by(|x, y| y.partial_cmp(x).unwrap_or(std::cmp::Ordering::Equal));
    Ok(ev)
}

/// Eigenvalues of a positive semi-definite matrix, descending, with tiny
/// negative values clamped to zero; errors if any is below `-1e-8`.
pub fn psd_eigenvalues<T: Scalar>(m: &SymMatrix<T>) -> Result<Vec<T>> {
    let mut ev = symmetric_eigenvalues(m)?;
    let floor = -T::lit(PSD_TOL);
    if let Some(&neg) = ev.iter().find(|&&v| v < floor) {
        return Err(Error::Numeric(format!(
            "matrix is not positive semi-definite (eigenvalue {neg})"
        )));
    }
    for v in &mut ev {
        if *v < T::zero() {
            *v = T::zero();
        }
    }
    Ok(ev)
}
