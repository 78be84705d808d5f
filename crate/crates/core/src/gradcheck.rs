//! Central finite differences for checking analytic gradients.

/// Central-difference estimate of `∂f/∂x[i]` for each index in `indices`.
pub fn central_differences<F>(x: &mut [f64], indices: &[usize], h: f64, mut f: F) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    indices
        .iter()
        .map(|&i| {
            let orig = x[i];
            x[i] = orig + h;
            let up = f(x);
            x[i] = orig - h;
            let down = f(x);
            x[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `|a − n| / max(|a|, |n|, floor)`; the floor keeps near-zero entries from
/// reporting round-off as relative error.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

pub fn max_relative_error(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| relative_error(a, n, floor))
        .fold(0.0, f64::max)
}

/// Floor used throughout the test suites for `h = 1e-5` in double precision.
pub const DEFAULT_FLOOR: f64 = 1e-5;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_derivative() {
        let mut x = vec![1.5, -2.0];
        let g = central_differences(&mut x, &[0, 1], 1e-5, |x| x[0] * x[0] + 3.0 * x[1]);
        assert!((g[0] - 3.0).abs() < 1e-8);
        assert!((g[1] - 3.0).abs() < 1e-8);
        assert_eq!(x, vec![1.5, -2.0]);
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(1e-9, 0.0, 1e-5), 1e-4);
        assert_eq!(relative_error(2.0, 1.0, 1e-5), 0.5);
    }
}
