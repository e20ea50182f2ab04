//! Scalar root finding, finite-difference derivatives, and small dense
//! spectra shared by the analysis routines.

use nalgebra::{Complex, DMatrix, DVector};

use crate::error::{Error, Result};

/// Safeguarded Newton iteration on a sign-changing bracket: Newton steps are
/// taken while they stay inside the bracket, otherwise the bracket is
/// bisected. Converges to `|f| <= residual_tol`.
pub fn bracketed_newton(
    f: &dyn Fn(f64) -> f64,
    df: Option<&dyn Fn(f64) -> f64>,
    mut lo: f64,
    mut hi: f64,
    residual_tol: f64,
) -> Result<f64> {
    let mut f_lo = f(lo);
    let f_hi = f(hi);
    if f_lo == 0.0 {
        return Ok(lo);
    }
    if f_hi == 0.0 {
        return Ok(hi);
    }
    if f_lo.signum() == f_hi.signum() {
        return Err(Error::Numerical(format!(
            "no sign change on bracket [{lo}, {hi}]: f = ({f_lo}, {f_hi})"
        )));
    }
    let mut x = 0.5 * (lo + hi);
    for _ in 0..200 {
        let fx = f(x);
        if fx.abs() <= residual_tol {
            return Ok(x);
        }
        // Shrink the bracket.
        if fx.signum() == f_lo.signum() {
            lo = x;
            f_lo = fx;
        } else {
            hi = x;
        }
        let mut next = None;
        if let Some(df) = df {
            let d = df(x);
            if d != 0.0 {
                let cand = x - fx / d;
                if cand > lo && cand < hi {
                    next = Some(cand);
                }
            }
        }
        x = next.unwrap_or(0.5 * (lo + hi));
        if hi - lo <= f64::EPSILON * (1.0 + x.abs()) {
            let fx = f(x);
            if fx.abs() <= residual_tol * 10.0 {
                return Ok(x);
            }
            return Err(Error::Numerical(format!(
                "bracket collapsed at x = {x} with residual {fx}"
            )));
        }
    }
    Err(Error::Numerical("root iteration did not converge".into()))
}

/// One-sided derivative at 0 of `g` (defined for arguments `>= 0`, with
/// `g(0)` supplied), Richardson-extrapolated over `h, h/2, h/4`.
pub fn one_sided_derivative(
    g: &dyn Fn(f64) -> Result<f64>,
    g0: f64,
    h: f64,
) -> Result<f64> {
    let quot = |h: f64| -> Result<f64> { Ok((g(h)? - g0) / h) };
    let d0 = quot(h)?;
    let d1 = quot(h / 2.0)?;
    let d2 = quot(h / 4.0)?;
    let n1a = 2.0 * d1 - d0;
    let n1b = 2.0 * d2 - d1;
    Ok((4.0 * n1b - n1a) / 3.0)
}

/// Central-difference Jacobian with one Richardson refinement
/// (`(4 J_{h/2} - J_h) / 3`).
pub fn central_jacobian(
    f: &dyn Fn(&[f64]) -> Result<Vec<f64>>,
    z: &[f64],
    h: f64,
) -> Result<DMatrix<f64>> {
    let dim_in = z.len();
    let probe = f(z)?;
    let dim_out = probe.len();
    let column = |j: usize, h: f64| -> Result<Vec<f64>> {
        let mut zp = z.to_vec();
        let mut zm = z.to_vec();
        zp[j] += h;
        zm[j] -= h;
        let fp = f(&zp)?;
        let fm = f(&zm)?;
        Ok(fp
            .iter()
            .zip(&fm)
            .map(|(p, m)| (p - m) / (2.0 * h))
            .collect())
    };
    let mut jac = DMatrix::zeros(dim_out, dim_in);
    for j in 0..dim_in {
        let c1 = column(j, h)?;
        let c2 = column(j, h / 2.0)?;
        for i in 0..dim_out {
            jac[(i, j)] = (4.0 * c2[i] - c1[i]) / 3.0;
        }
    }
    Ok(jac)
}

/// Complex eigenvalues of a real square matrix.
pub fn spectrum(m: &DMatrix<f64>) -> Vec<Complex<f64>> {
    m.clone().complex_eigenvalues().iter().copied().collect()
}

/// Largest eigenvalue modulus.
pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    spectrum(m).iter().map(|c| c.norm()).fold(0.0, f64::max)
}

/// Solve the dense linear system `a x = b`.
pub fn solve_linear(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    a.clone()
        .lu()
        .solve(b)
        .ok_or_else(|| Error::Numerical("singular linear system in Newton step".into()))
}

/// Least-squares slope of `log(y)` against `log(x)`.
pub fn loglog_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let (mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0);
    for &(x, y) in points {
        let (lx, ly) = (x.ln(), y.ln());
        sx += lx;
        sy += ly;
        sxx += lx * lx;
        sxy += lx * ly;
    }
    (n * sxy - sx * sy) / (n * sxx - sx * sx)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn newton_bisection_finds_cubic_root() {
        let f = |x: f64| x * x * x - 2.0;
        let df = |x: f64| 3.0 * x * x;
        let root = bracketed_newton(&f, Some(&df), 0.0, 2.0, 1e-14).unwrap();
        assert!((root - 2.0f64.powf(1.0 / 3.0)).abs() < 1e-12);
    }

    #[test]
    fn no_bracket_is_an_error() {
        let f = |x: f64| x * x + 1.0;
        assert!(bracketed_newton(&f, None, -1.0, 1.0, 1e-12).is_err());
    }

    #[test]
    fn one_sided_derivative_is_high_order() {
        let g = |h: f64| -> Result<f64> { Ok((2.0 * h).exp()) };
        let d = one_sided_derivative(&g, 1.0, 1e-3).unwrap();
        assert!((d - 2.0).abs() < 1e-9, "{d}");
    }

    #[test]
    fn jacobian_of_quadratic_map() {
        let f = |z: &[f64]| -> Result<Vec<f64>> {
            Ok(vec![z[0] * z[0] + z[1], 3.0 * z[0] * z[1]])
        };
        let j = central_jacobian(&f, &[1.0, 2.0], 1e-5).unwrap();
        assert!((j[(0, 0)] - 2.0).abs() < 1e-9);
        assert!((j[(0, 1)] - 1.0).abs() < 1e-9);
        assert!((j[(1, 0)] - 6.0).abs() < 1e-9);
        assert!((j[(1, 1)] - 3.0).abs() < 1e-9);
    }

    #[test]
    fn spectral_radius_of_rotation_scaled() {
        let m = DMatrix::from_row_slice(2, 2, &[0.0, -0.5, 0.5, 0.0]);
        assert!((spectral_radius(&m) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn loglog_slope_of_power_law() {
        let pts: Vec<(f64, f64)> = [1e-3, 1e-4, 1e-5]
            .iter()
            .map(|&x| (x, 3.0 * x))
            .collect();
        assert!((loglog_slope(&pts) - 1.0).abs() < 1e-12);
    }
}
