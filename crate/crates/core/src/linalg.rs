//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{Error, Result};

/// Eigenvalues below this are treated as a genuinely indefinite matrix.
pub const NEGATIVE_EIGEN_TOLERANCE: f64 = 1e-8;

/// Default floor on the smallest eigenvalue of a covariance that must be inverted.
pub const DEFAULT_INVERTIBILITY_FLOOR: f64 = 1e-10;

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub fn is_symmetric(m: &DMatrix<f64>, tol: f64) -> bool {
    if !m.is_square() {
        return false;
    }
    let scale = m.amax().max(1.0);
    (m - m.transpose()).amax() <= tol * scale
}

pub fn sym_eigen(m: &DMatrix<f64>) -> SymmetricEigen<f64, Dyn> {
    SymmetricEigen::new(symmetrize(m))
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return f64::INFINITY;
    }
    sym_eigen(m).eigenvalues.min()
}

/// Principal square root of a symmetric PSD matrix via eigendecomposition.
///
/// Eigenvalues in `[-1e-8, 0]` are clamped to zero; anything more negative is an error.
pub fn psd_sqrt(m: &DMatrix<f64>, context: &'static str) -> Result<DMatrix<f64>> {
    let eig = sym_eigen(m);
    let min = eig.eigenvalues.min();
    if min < -NEGATIVE_EIGEN_TOLERANCE {
        return Err(Error::Indefinite {
            min_eigenvalue: min,
            context,
        });
    }
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    let v = &eig.eigenvectors;
    Ok(v * DMatrix::from_diagonal(&roots) * v.transpose())
}

pub fn check_psd(m: &DMatrix<f64>, context: &'static str) -> Result<()> {
    let min = min_eigenvalue(m);
    if min < -NEGATIVE_EIGEN_TOLERANCE || !min.is_finite() {
        return Err(Error::Indefinite {
            min_eigenvalue: min,
            context,
        });
    }
    Ok(())
}

/// Cholesky factor of a symmetric positive definite matrix whose smallest eigenvalue exceeds `floor`.
pub fn spd_cholesky(m: &DMatrix<f64>, floor: f64, context: &str) -> Result<Cholesky<f64, Dyn>> {
    let min = min_eigenvalue(m);
    if !(min > floor) {
        return Err(Error::Singular(format!(
            "{context}: smallest eigenvalue {min:e} does not exceed floor {floor:e}"
        )));
    }
    Cholesky::new(symmetrize(m))
        .ok_or_else(|| Error::Singular(format!("{context}: cholesky factorization failed")))
}

pub fn log_det_cholesky(chol: &Cholesky<f64, Dyn>) -> f64 {
    2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>()
}

pub fn quad_form(m: &DMatrix<f64>, v: &DVector<f64>) -> f64 {
    v.dot(&(m * v))
}

pub fn is_finite(m: &DMatrix<f64>) -> bool {
    m.iter().all(|x| x.is_finite())
}


/// Serde adapter writing a matrix as a list of rows.
pub mod serde_rows {
    use nalgebra::DMatrix;
    use serde::de::Error as _;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<Vec<f64>> = m.row_iter().map(|r| r.iter().copied().collect()).collect();
        rows.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        let ncols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != ncols) {
            return Err(D::Error::custom("matrix rows have different lengths"));
        }
        Ok(DMatrix::from_row_iterator(rows.len(), ncols, rows.into_iter().flatten()))
    }
}

/// Serde adapter writing a vector as a plain list.
pub mod serde_vec {
    use nalgebra::DVector;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &DVector<f64>, s: S) -> Result<S::Ok, S::Error> {
        v.as_slice().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DVector<f64>, D::Error> {
        Ok(DVector::from_vec(Vec::<f64>::deserialize(d)?))
    }
}
