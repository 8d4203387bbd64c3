//! Dense linear-algebra helpers on top of `nalgebra`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Relative singular-value cutoff used for pseudo-inverses.
pub const PINV_TOLERANCE: f64 = 1e-10;

/// Least-squares solution of `design * b = y` via Householder QR.
///
/// Returns `None` when the design is numerically rank deficient.
pub fn least_squares(design: &DMatrix<f64>, y: &DVector<f64>) -> Option<DVector<f64>> {
    let p = design.ncols();
    if design.nrows() < p || p == 0 {
        return None;
    }
    let qr = design.clone().qr();
    let r = qr.r();
    let scale = (0..p).map(|i| r[(i, i)].abs()).fold(0.0, f64::max);
    if scale == 0.0 || (0..p).any(|i| r[(i, i)].abs() <= 1e-10 * scale) {
        return None;
    }
    let qty = qr.q().transpose() * y;
    r.solve_upper_triangular(&qty)
}

/// Matrix `W` with `x' pinv(cov) x == |W x|^2` for symmetric PSD `cov`.
///
/// Eigen-directions with eigenvalue at or below `PINV_TOLERANCE` times the
/// largest are dropped, which is exactly the Moore-Penrose pseudo-inverse.
pub fn whitening(cov: &DMatrix<f64>) -> DMatrix<f64> {
    let k = cov.nrows();
    if k == 0 {
        return DMatrix::zeros(0, 0);
    }
    let eig = SymmetricEigen::new(cov.clone());
    let max = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
    let keep: Vec<usize> = (0..k)
        .filter(|&i| max > 0.0 && eig.eigenvalues[i] > PINV_TOLERANCE * max)
        .collect();
    let mut w = DMatrix::zeros(keep.len(), k);
    for (row, &i) in keep.iter().enumerate() {
        let s = eig.eigenvalues[i].sqrt();
        for c in 0..k {
            w[(row, c)] = eig.eigenvectors[(c, i)] / s;
        }
    }
    w
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn whitening_reproduces_pinv_quadratic_form() {
        let cov = DMatrix::from_row_slice(3, 3, &[4.0, 2.0, 2.0, 2.0, 2.0, 2.0, 2.0, 2.0, 2.0]);
        let pinv = cov.clone().pseudo_inverse(1e-12).unwrap();
        let w = whitening(&cov);
        let x = DVector::from_vec(vec![1.0, -0.5, 2.0]);
        let direct = (x.transpose() * &pinv * &x)[(0, 0)];
        let via_w = (&w * &x).norm_squared();
        assert!((direct - via_w).abs() < 1e-9, "{direct} vs {via_w}");
    }

    #[test]
    fn rank_deficient_design_is_rejected() {
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 1.0, 2.0, 1.0, 2.0]);
        let y = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        assert!(least_squares(&x, &y).is_none());
    }
}
