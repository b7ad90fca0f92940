//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector, Schur};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type CMatrix = DMatrix<Complex64>;
pub type CVector = DVector<Complex64>;

const SCHUR_MAX_ITER: usize = 10_000;

pub fn to_complex(m: &DMatrix<f64>) -> CMatrix {
    m.map(|x| Complex64::new(x, 0.0))
}

/// Eigenvalues of a complex matrix, sorted by decreasing modulus.
pub fn eigenvalues(m: &CMatrix) -> Result<Vec<Complex64>> {
    let schur = Schur::try_new(m.clone(), f64::EPSILON, SCHUR_MAX_ITER)
        .ok_or_else(|| Error::SingularSystem("Schur iteration did not converge".into()))?;
    let ev = schur
        .eigenvalues()
        .ok_or_else(|| Error::SingularSystem("Schur form has no eigenvalues".into()))?;
    let mut out: Vec<Complex64> = ev.iter().copied().collect();
    sort_by_modulus(&mut out);
    Ok(out)
}

pub fn eigenvalues_real(m: &DMatrix<f64>) -> Result<Vec<Complex64>> {
    eigenvalues(&to_complex(m))
}

pub fn sort_by_modulus(values: &mut [Complex64]) {
    values.sort_by(|a, b| b.norm().total_cmp(&a.norm()).then(b.re.total_cmp(&a.re)));
}

/// Unit vector spanning the (numerical) kernel of `m`, taken from the
/// right singular vector of the smallest singular value.
pub fn null_vector(m: &CMatrix) -> Result<CVector> {
    let svd = m.clone().svd(false, true);
    let v_t = svd
        .v_t
        .ok_or_else(|| Error::SingularSystem("SVD did not produce V".into()))?;
    let (idx, _) = svd
        .singular_values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .ok_or_else(|| Error::SingularSystem("empty matrix".into()))?;
    Ok(v_t.row(idx).adjoint())
}

/// Ratio of largest to smallest singular value.
pub fn condition_number(m: &CMatrix) -> f64 {
    let sv = m.singular_values();
    let max = sv.iter().cloned().fold(0.0, f64::max);
    let min = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

pub fn solve(m: &CMatrix, rhs: &CVector) -> Result<CVector> {
    m.clone()
        .lu()
        .solve(rhs)
        .ok_or_else(|| Error::SingularSystem("LU solve failed".into()))
}

pub fn solve_real(m: &DMatrix<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    m.clone()
        .lu()
        .solve(rhs)
        .ok_or_else(|| Error::SingularSystem("LU solve failed".into()))
}

/// `m^n` by repeated squaring.
pub fn mat_pow(m: &CMatrix, mut n: u64) -> CMatrix {
    let dim = m.nrows();
    let mut result = CMatrix::identity(dim, dim);
    let mut base = m.clone();
    while n > 0 {
        if n & 1 == 1 {
            result = &result * &base;
        }
        n >>= 1;
        if n > 0 {
            base = &base * &base;
        }
    }
    result
}

pub fn mat_pow_real(m: &DMatrix<f64>, mut n: u64) -> DMatrix<f64> {
    let dim = m.nrows();
    let mut result = DMatrix::identity(dim, dim);
    let mut base = m.clone();
    while n > 0 {
        if n & 1 == 1 {
            result = &result * &base;
        }
        n >>= 1;
        if n > 0 {
            base = &base * &base;
        }
    }
    result
}

/// Row vector times matrix, `(row^T m)^T`, without conjugation.
pub fn row_times(row: &CVector, m: &CMatrix) -> CVector {
    m.transpose() * row
}

/// Bilinear pairing `sum_i a_i b_i` (no conjugation).
pub fn pair(a: &CVector, b: &CVector) -> Complex64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

pub fn sup_norm(v: &CVector) -> f64 {
    v.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

pub fn mat_sup_norm(m: &CMatrix) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}
