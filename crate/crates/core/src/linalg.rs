//! Small complex vector helpers shared by the operators and solvers.

use num_complex::Complex64;

/// Complex inner product <a, b> = sum conj(a_i) * b_i.
pub fn dot(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| x.conj() * y)
        .fold(Complex64::new(0.0, 0.0), |acc, v| acc + v)
}

/// Euclidean norm.
pub fn nrm2(a: &[Complex64]) -> f64 {
    a.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
}

/// y += alpha * x
pub fn axpy(alpha: Complex64, x: &[Complex64], y: &mut [Complex64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x.iter()) {
        *yi += alpha * xi;
    }
}

/// x *= alpha
pub fn scale(alpha: Complex64, x: &mut [Complex64]) {
    for xi in x.iter_mut() {
        *xi *= alpha;
    }
}

/// Relative error ||a - b|| / ||b||; plain ||a - b|| if b is zero.
pub fn rel_err(a: &[Complex64], b: &[Complex64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let num = a
        .iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).norm_sqr())
        .sum::<f64>()
        .sqrt();
    let den = nrm2(b);
    if den == 0.0 {
        num
    } else {
        num / den
    }
}

pub fn all_finite(a: &[Complex64]) -> bool {
    a.iter().all(|v| v.re.is_finite() && v.im.is_finite())
}
