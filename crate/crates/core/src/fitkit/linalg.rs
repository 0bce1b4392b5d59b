//! Dense symmetric positive-definite helpers for the small normal matrices
//! the fits produce (at most a handful of parameters).

/// Relative pivot floor below which a Jacobi-scaled matrix is treated as singular.
const PIVOT_FLOOR: f64 = 1e-14;

/// In-place Cholesky factorisation of a row-major `n x n` matrix.
/// Returns `None` when the matrix is not numerically positive definite.
fn cholesky(a: &mut [f64], n: usize) -> Option<()> {
    for j in 0..n {
        let mut d = a[j * n + j];
        for k in 0..j {
            d -= a[j * n + k] * a[j * n + k];
        }
        if !(d > PIVOT_FLOOR) || !d.is_finite() {
            return None;
        }
        let d = d.sqrt();
        a[j * n + j] = d;
        for i in (j + 1)..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= a[i * n + k] * a[j * n + k];
            }
            a[i * n + j] = s / d;
        }
    }
    Some(())
}

fn forward_back(l: &[f64], n: usize, b: &mut [f64]) {
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i * n + k] * b[k];
        }
        b[i] = s / l[i * n + i];
    }
    for i in (0..n).rev() {
        let mut s = b[i];
        for k in (i + 1)..n {
            s -= l[k * n + i] * b[k];
        }
        b[i] = s / l[i * n + i];
    }
}

/// Symmetric scaling `D^-1/2 A D^-1/2` so the pivot test is scale free.
fn jacobi_scale(a: &[f64], n: usize) -> Option<(Vec<f64>, Vec<f64>)> {
    let mut scale = vec![0.0; n];
    for i in 0..n {
        let d = a[i * n + i];
        if !(d > 0.0) || !d.is_finite() {
            return None;
        }
        scale[i] = 1.0 / d.sqrt();
    }
    let mut s = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            s[i * n + j] = a[i * n + j] * scale[i] * scale[j];
        }
    }
    Some((s, scale))
}

/// Solve `A x = b` for symmetric positive-definite `A`.
pub fn solve_spd(a: &[f64], n: usize, b: &[f64]) -> Option<Vec<f64>> {
    let (mut s, scale) = jacobi_scale(a, n)?;
    cholesky(&mut s, n)?;
    let mut x: Vec<f64> = b.iter().zip(&scale).map(|(bi, si)| bi * si).collect();
    forward_back(&s, n, &mut x);
    for (xi, si) in x.iter_mut().zip(&scale) {
        *xi *= si;
    }
    Some(x)
}

/// Inverse of a symmetric positive-definite matrix.
pub fn invert_spd(a: &[f64], n: usize) -> Option<Vec<f64>> {
    let (mut s, scale) = jacobi_scale(a, n)?;
    cholesky(&mut s, n)?;
    let mut inv = vec![0.0; n * n];
    for col in 0..n {
        let mut e = vec![0.0; n];
        e[col] = 1.0;
        forward_back(&s, n, &mut e);
        for row in 0..n {
            inv[row * n + col] = e[row] * scale[row] * scale[col];
        }
    }
    Some(inv)
}
