use crate::error::{Error, Result};

/// Thomas algorithm for `lower[i] x[i-1] + diag[i] x[i] + upper[i] x[i+1] = rhs[i]`.
///
/// `lower[0]` and `upper[n-1]` are ignored. No pivoting: intended for the
/// diagonally dominant systems produced by the radial Hessian.
pub fn solve_tridiagonal(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &[f64]) -> Result<Vec<f64>> {
    let n = diag.len();
    if lower.len() != n || upper.len() != n || rhs.len() != n {
        return Err(Error::invalid("tridiagonal bands have mismatched lengths"));
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    let mut denom = diag[0];
    if denom == 0.0 || !denom.is_finite() {
        return Err(Error::invalid("singular tridiagonal pivot at row 0"));
    }
    c[0] = upper[0] / denom;
    d[0] = rhs[0] / denom;
    for i in 1..n {
        denom = diag[i] - lower[i] * c[i - 1];
        if denom == 0.0 || !denom.is_finite() {
            return Err(Error::invalid(format!("singular tridiagonal pivot at row {i}")));
        }
        c[i] = if i + 1 < n { upper[i] / denom } else { 0.0 };
        d[i] = (rhs[i] - lower[i] * d[i - 1]) / denom;
    }
    for i in (0..n - 1).rev() {
        d[i] -= c[i] * d[i + 1];
    }
    Ok(d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn solves_dominant_systems(
            n in 1usize..40,
            seed in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0, 0.1f64..1.0, -5.0f64..5.0), 40)
        ) {
            let lower: Vec<f64> = seed[..n].iter().map(|s| s.0).collect();
            let upper: Vec<f64> = seed[..n].iter().map(|s| s.1).collect();
            let diag: Vec<f64> = seed[..n].iter().map(|s| s.0.abs() + s.1.abs() + s.2).collect();
            let rhs: Vec<f64> = seed[..n].iter().map(|s| s.3).collect();
            let x = solve_tridiagonal(&lower, &diag, &upper, &rhs).unwrap();
            for i in 0..n {
                let mut v = diag[i] * x[i];
                if i > 0 { v += lower[i] * x[i - 1]; }
                if i + 1 < n { v += upper[i] * x[i + 1]; }
                prop_assert!((v - rhs[i]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn rejects_bad_input() {
        assert!(solve_tridiagonal(&[0.0], &[0.0], &[0.0], &[1.0]).is_err());
        assert!(solve_tridiagonal(&[0.0], &[1.0, 1.0], &[0.0], &[1.0]).is_err());
    }
}
