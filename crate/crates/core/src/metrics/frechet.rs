use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Diagonal jitter added to both covariances when round-off makes the
/// product under the square root indefinite.
pub const SQRT_EPS: f64 = 1e-6;

/// Squared Fréchet distance between two Gaussians,
/// `|μ₁−μ₂|² + Tr(C₁ + C₂ − 2(C₁C₂)^½)`, clamped at 0.
pub fn frechet_distance(mu1: &DVector<f64>, cov1: &DMatrix<f64>, mu2: &DVector<f64>, cov2: &DMatrix<f64>) -> Result<f64> {
    let n = mu1.len();
    for (name, m) in [("cov1", cov1), ("cov2", cov2)] {
        if m.nrows() != n || m.ncols() != n {
            return Err(Error::ShapeMismatch(format!(
                "{name} is {}x{} but the mean has {n} entries",
                m.nrows(),
                m.ncols()
            )));
        }
        let scale = m.amax().max(1.0);
        if (m - m.transpose()).amax() > 1e-6 * scale {
            return Err(Error::InvalidArgument(format!("{name} is not symmetric")));
        }
    }
    if mu2.len() != n {
        return Err(Error::ShapeMismatch(format!("means have {n} and {} entries", mu2.len())));
    }
    let mut tr_sqrt = trace_sqrt_product(cov1, cov2);
    if tr_sqrt.is_none() {
        let jitter = DMatrix::identity(n, n) * SQRT_EPS;
        tr_sqrt = trace_sqrt_product(&(cov1 + &jitter), &(cov2 + &jitter));
    }
    let tr_sqrt = tr_sqrt.unwrap_or_else(|| clamped_trace_sqrt(cov1, cov2));
    let d2 = (mu1 - mu2).norm_squared() + cov1.trace() + cov2.trace() - 2.0 * tr_sqrt;
    Ok(d2.max(0.0))
}

/// Eigenvalues of `√C₁ C₂ √C₁`, which share the spectrum of `C₁C₂` but are
/// computed from a symmetric matrix.
fn product_spectrum(cov1: &DMatrix<f64>, cov2: &DMatrix<f64>) -> DVector<f64> {
    let e = SymmetricEigen::new(cov1.clone());
    let roots = e.eigenvalues.map(|v| v.max(0.0).sqrt());
    let s = &e.eigenvectors * DMatrix::from_diagonal(&roots) * e.eigenvectors.transpose();
    let m = &s * cov2 * &s;
    SymmetricEigen::new((&m + m.transpose()) * 0.5).eigenvalues
}

/// `Tr (C₁C₂)^½`, or `None` if the product has negative eigenvalues.
fn trace_sqrt_product(cov1: &DMatrix<f64>, cov2: &DMatrix<f64>) -> Option<f64> {
    let ev = product_spectrum(cov1, cov2);
    ev.iter().all(|&v| v >= 0.0).then(|| ev.iter().map(|v| v.sqrt()).sum())
}

fn clamped_trace_sqrt(cov1: &DMatrix<f64>, cov2: &DMatrix<f64>) -> f64 {
    product_spectrum(cov1, cov2).iter().map(|v| v.max(0.0).sqrt()).sum()
}
