//! Small dense-matrix helpers shared across the crate, plus a serde
//! representation for matrices (row-major with explicit dimensions).

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// Row-major serialized form of a dense matrix.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MatrixJson {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl From<&DMatrix<f64>> for MatrixJson {
    fn from(m: &DMatrix<f64>) -> Self {
        let mut data = Vec::with_capacity(m.nrows() * m.ncols());
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                data.push(m[(i, j)]);
            }
        }
        MatrixJson { rows: m.nrows(), cols: m.ncols(), data }
    }
}

impl From<&MatrixJson> for DMatrix<f64> {
    fn from(m: &MatrixJson) -> Self {
        DMatrix::from_row_slice(m.rows, m.cols, &m.data)
    }
}

/// serde adapter: `#[serde(with = "crate::mats::serde_matrix")]` on a
/// `DMatrix<f64>` field.
pub mod serde_matrix {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        MatrixJson::from(m).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let j = MatrixJson::deserialize(d)?;
        if j.data.len() != j.rows * j.cols {
            return Err(serde::de::Error::custom("matrix data length mismatch"));
        }
        Ok(DMatrix::from(&j))
    }
}

/// Largest eigenvalue of a symmetric matrix.
pub fn max_eig_sym(m: &DMatrix<f64>) -> f64 {
    symmetric_eigenvalues(m).iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eig_sym(m: &DMatrix<f64>) -> f64 {
    symmetric_eigenvalues(m).iter().copied().fold(f64::INFINITY, f64::min)
}

/// Eigenvalues of a symmetric matrix (symmetrized before the solve so
/// round-off asymmetry cannot leak into a general eigensolver).
pub fn symmetric_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let sym = symmetrize(m);
    sym.symmetric_eigenvalues().iter().copied().collect()
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub fn frob(m: &DMatrix<f64>) -> f64 {
    m.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Condition number of a symmetric positive definite matrix.
pub fn cond_sym(m: &DMatrix<f64>) -> f64 {
    let eigs = symmetric_eigenvalues(m);
    let max = eigs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = eigs.iter().copied().fold(f64::INFINITY, f64::min);
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Spectral abscissa (largest real part of any eigenvalue) of a general
/// square matrix.
pub fn spectral_abscissa(m: &DMatrix<f64>) -> f64 {
    m.clone()
        .complex_eigenvalues()
        .iter()
        .map(|c| c.re)
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Largest eigenvalue modulus of a general square matrix.
pub fn complex_eig_max_modulus(m: &DMatrix<f64>) -> f64 {
    m.clone()
        .complex_eigenvalues()
        .iter()
        .map(|c| c.norm())
        .fold(0.0, f64::max)
}

/// Block-diagonal direct sum of dense blocks.
pub fn block_diag(blocks: &[DMatrix<f64>]) -> DMatrix<f64> {
    let n: usize = blocks.iter().map(|b| b.nrows()).sum();
    let m: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(n, m);
    let (mut r, mut c) = (0, 0);
    for b in blocks {
        out.view_mut((r, c), (b.nrows(), b.ncols())).copy_from(b);
        r += b.nrows();
        c += b.ncols();
    }
    out
}

/// Quadratic form xᵀ M x.
pub fn quad_form(m: &DMatrix<f64>, x: &DVector<f64>) -> f64 {
    (x.transpose() * m * x)[(0, 0)]
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    #[test]
    fn matrix_json_round_trip() {
        let m = dmatrix![1.0, 2.0, 3.0; 4.0, 5.0, 6.0];
        let j = serde_json::to_string(&MatrixJson::from(&m)).unwrap();
        let back: MatrixJson = serde_json::from_str(&j).unwrap();
        assert_eq!(DMatrix::from(&back), m);
    }

    #[test]
    fn block_diag_spectrum_is_union_of_blocks() {
        let a = dmatrix![2.0, 0.0; 0.0, 3.0];
        let b = dmatrix![5.0];
        let bd = block_diag(&[a, b]);
        let mut eigs = symmetric_eigenvalues(&bd);
        eigs.sort_by(f64::total_cmp);
        assert_eq!(eigs, vec![2.0, 3.0, 5.0]);
    }
}
