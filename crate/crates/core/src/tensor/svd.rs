use super::{Result, Tensor, TensorError};

pub const JACOBI_MAX_SWEEPS: usize = 50;

/// Singular values of a matrix, in descending order.
///
/// Forms the smaller Gram matrix (`mᵀm` or `mmᵀ`), diagonalizes it with
/// cyclic Jacobi rotations and takes square roots of the eigenvalues,
/// clamping tiny negative round-off to zero.
pub fn singular_values(m: &Tensor) -> Result<Vec<f64>> {
    if m.rank() != 2 {
        return Err(TensorError::Shape {
            op: "singular_values",
            detail: format!("expected a matrix, got shape {:?}", m.shape()),
        });
    }
    if !m.is_finite() {
        return Err(TensorError::NonFinite { op: "singular_values" });
    }
    let (rows, cols) = m.dims2()?;
    let a = m.data();
    let n = rows.min(cols);
    let mut gram = vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            let v: f64 = if rows >= cols {
                (0..rows).map(|k| a[k * cols + i] * a[k * cols + j]).sum()
            } else {
                (0..cols).map(|k| a[i * cols + k] * a[j * cols + k]).sum()
            };
            gram[i * n + j] = v;
            gram[j * n + i] = v;
        }
    }
    let mut eig = symmetric_eigenvalues(&mut gram, n)?;
    eig.sort_by(|x, y| y.total_cmp(x));
    Ok(eig.into_iter().map(|l| l.max(0.0).sqrt()).collect())
}

/// Cyclic Jacobi eigenvalue iteration on a dense symmetric `n×n` matrix.
fn symmetric_eigenvalues(a: &mut [f64], n: usize) -> Result<Vec<f64>> {
    let total: f64 = a.iter().map(|v| v * v).sum();
    if total == 0.0 {
        return Ok(vec![0.0; n]);
    }
    let tol = f64::EPSILON * f64::EPSILON * total;
    for _ in 0..JACOBI_MAX_SWEEPS {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i * n + j] * a[i * n + j])
            .sum();
        if off <= tol {
            return Ok((0..n).map(|i| a[i * n + i]).collect());
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
            }
        }
    }
    Err(TensorError::NoConvergence(JACOBI_MAX_SWEEPS))
}
