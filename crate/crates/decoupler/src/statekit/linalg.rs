//! Small dense complex linear algebra helpers.
//!
//! Registers in this crate are at most [`MAX_QUBITS`](super::MAX_QUBITS) wide,
//! so every matrix fits comfortably in memory and plain loops are fast enough.
//! Nothing here links an external LAPACK.

use ndarray::{Array1, Array2};
use num_complex::Complex64;

pub type C64 = Complex64;

/// Conjugate transpose.
pub fn adjoint(m: &Array2<C64>) -> Array2<C64> {
    let (r, c) = m.dim();
    Array2::from_shape_fn((c, r), |(i, j)| m[[j, i]].conj())
}

/// Kronecker product, row-major convention: `out[i1*r2+i2, j1*c2+j2] = a[i1,j1] * b[i2,j2]`.
pub fn kron(a: &Array2<C64>, b: &Array2<C64>) -> Array2<C64> {
    let (ar, ac) = a.dim();
    let (br, bc) = b.dim();
    let mut out = Array2::zeros((ar * br, ac * bc));
    for i1 in 0..ar {
        for j1 in 0..ac {
            let f = a[[i1, j1]];
            if f == C64::ZERO {
                continue;
            }
            for i2 in 0..br {
                for j2 in 0..bc {
                    out[[i1 * br + i2, j1 * bc + j2]] = f * b[[i2, j2]];
                }
            }
        }
    }
    out
}

/// Kronecker product of vectors.
pub fn kron_vec(a: &Array1<C64>, b: &Array1<C64>) -> Array1<C64> {
    let (la, lb) = (a.len(), b.len());
    let mut out = Array1::zeros(la * lb);
    for i in 0..la {
        for j in 0..lb {
            out[i * lb + j] = a[i] * b[j];
        }
    }
    out
}

/// Max elementwise absolute difference between two matrices of equal shape.
pub fn max_abs_diff(a: &Array2<C64>, b: &Array2<C64>) -> f64 {
    debug_assert_eq!(a.dim(), b.dim());
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).norm())
        .fold(0.0, f64::max)
}

/// Largest absolute entry of `m^dag m - I`; zero for an exact unitary.
pub fn unitarity_defect(m: &Array2<C64>) -> f64 {
    let (r, c) = m.dim();
    if r != c {
        return f64::INFINITY;
    }
    let mut worst = 0.0f64;
    for i in 0..c {
        for j in 0..c {
            let mut s = C64::ZERO;
            for k in 0..r {
                s += m[[k, i]].conj() * m[[k, j]];
            }
            if i == j {
                s -= 1.0;
            }
            worst = worst.max(s.norm());
        }
    }
    worst
}

/// QR of a square complex matrix by modified Gram-Schmidt, followed by the
/// R-diagonal phase correction `Q <- Q diag(r_jj / |r_jj|)`. Gram-Schmidt
/// already leaves the diagonal of R real and positive, so the correction is
/// the identity here, but applying it keeps the construction valid for any
/// QR routine. Columns of a Gaussian input are independent almost surely.
pub fn qr_haar(mut a: Array2<C64>) -> Array2<C64> {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "qr_haar needs a square matrix");
    let mut r_diag = vec![C64::ZERO; n];
    for j in 0..n {
        for k in 0..j {
            // project column j off the already-orthonormal column k
            let mut dot = C64::ZERO;
            for i in 0..n {
                dot += a[[i, k]].conj() * a[[i, j]];
            }
            for i in 0..n {
                let sub = dot * a[[i, k]];
                a[[i, j]] -= sub;
            }
        }
        let norm = a.column(j).iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
        assert!(norm > 0.0, "rank-deficient input to qr_haar");
        r_diag[j] = C64::new(norm, 0.0);
        for i in 0..n {
            a[[i, j]] /= norm;
        }
    }
    for j in 0..n {
        let phase = r_diag[j] / r_diag[j].norm();
        for i in 0..n {
            a[[i, j]] *= phase;
        }
    }
    a
}

/// Eigenvalues of a Hermitian matrix by cyclic complex Jacobi rotations.
/// Intended for validation and tests, not hot paths.
pub fn hermitian_eigenvalues(m: &Array2<C64>) -> Vec<f64> {
    let n = m.nrows();
    assert_eq!(n, m.ncols());
    let mut a = m.clone();
    let off = |a: &Array2<C64>| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    s += a[[i, j]].norm_sqr();
                }
            }
        }
        s
    };
    for _sweep in 0..100 {
        if off(&a) < 1e-24 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[[p, q]];
                if apq.norm() < 1e-300 {
                    continue;
                }
                // diagonalize the 2x2 Hermitian block [[app, apq], [apq*, aqq]]
                let app = a[[p, p]].re;
                let aqq = a[[q, q]].re;
                let phase = apq / apq.norm();
                let theta = 0.5 * (2.0 * apq.norm()).atan2(app - aqq);
                let (c, s) = (theta.cos(), theta.sin());
                // rotation: p' = c*p + s*phase*q ; q' = -s*conj(phase)*p + c*q
                for i in 0..n {
                    let aip = a[[i, p]];
                    let aiq = a[[i, q]];
                    a[[i, p]] = aip * c + aiq * phase.conj() * s;
                    a[[i, q]] = -aip * phase * s + aiq * c;
                }
                for i in 0..n {
                    let api = a[[p, i]];
                    let aqi = a[[q, i]];
                    a[[p, i]] = api * c + aqi * phase * s;
                    a[[q, i]] = -api * phase.conj() * s + aqi * c;
                }
            }
        }
    }
    (0..n).map(|i| a[[i, i]].re).collect()
}
