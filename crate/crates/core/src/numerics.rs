//! Small deterministic numerics toolkit: bracketed root finding, golden
//! section search, cumulative quadrature and compensated summation. All
//! routines are allocation-light and have fixed iteration budgets so the
//! solvers built on top behave identically run to run.

use crate::error::{CoreError, Result};

/// Golden-section maximum of `f` on [lo, hi]. Returns (argmax, max).
/// Assumes the bracket contains a single interior maximum; on a plateau the
/// search drifts to the left edge of the plateau because ties keep the left
/// subinterval. Near a smooth maximum the argument is only determined to
/// about sqrt(machine epsilon) times its scale, however small `xtol` is;
/// the maximum value itself is hit to full precision.
pub fn golden_max<F: Fn(f64) -> f64>(f: F, lo: f64, hi: f64, xtol: f64) -> (f64, f64) {
    const INVPHI: f64 = 0.618_033_988_749_894_9;
    let (mut a, mut b) = (lo, hi);
    let mut c = b - INVPHI * (b - a);
    let mut d = a + INVPHI * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while b - a > xtol {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INVPHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INVPHI * (b - a);
            fd = f(d);
        }
    }
    let mid = 0.5 * (a + b);
    (mid, f(mid))
}

/// Bisection to a relative interval tolerance. `fa` and `fb` must bracket a
/// sign change; the returned point is the midpoint of the final interval.
pub fn bisect<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, fa: f64, fb: f64, rtol: f64) -> Result<f64> {
    if fa == 0.0 {
        return Ok(a);
    }
    if fb == 0.0 {
        return Ok(b);
    }
    if fa.signum() == fb.signum() {
        return Err(CoreError::bracket(format!(
            "no sign change on [{a}, {b}]: f = ({fa}, {fb})"
        )));
    }
    let (mut a, mut b, mut fa) = (a, b, fa);
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if b - a <= rtol * m.abs().max(1.0) {
            return Ok(m);
        }
        let fm = f(m);
        if fm == 0.0 {
            return Ok(m);
        }
        if fm.signum() == fa.signum() {
            a = m;
            fa = fm;
        } else {
            b = m;
        }
    }
    Ok(0.5 * (a + b))
}

/// Scan [lo, hi] on `n` uniform points for the first sign change of `f` and
/// polish it by bisection. Errors if the function never changes sign.
pub fn scan_root<F: Fn(f64) -> f64>(f: F, lo: f64, hi: f64, n: usize, rtol: f64) -> Result<f64> {
    let mut xa = lo;
    let mut fa = f(lo);
    for k in 1..=n {
        let xb = lo + (hi - lo) * k as f64 / n as f64;
        let fb = f(xb);
        if fa == 0.0 {
            return Ok(xa);
        }
        if fa.signum() != fb.signum() {
            return bisect(&f, xa, xb, fa, fb, rtol);
        }
        xa = xb;
        fa = fb;
    }
    Err(CoreError::bracket(format!(
        "no sign change of the scanned function on [{lo}, {hi}]"
    )))
}

/// Cumulative integral of samples on a uniform grid, one value per node,
/// starting at zero. Each cell is integrated with the cubic through the
/// four nearest nodes, so the rule is exact for cubics and fourth-order
/// accurate overall.
pub fn cumulative_quad(h: f64, f: &[f64]) -> Vec<f64> {
    let n = f.len();
    assert!(n >= 4, "cumulative quadrature needs at least 4 nodes");
    let mut out = Vec::with_capacity(n);
    out.push(0.0);
    let mut acc = h * (9.0 * f[0] + 19.0 * f[1] - 5.0 * f[2] + f[3]) / 24.0;
    out.push(acc);
    for k in 1..n - 2 {
        acc += h * (-f[k - 1] + 13.0 * f[k] + 13.0 * f[k + 1] - f[k + 2]) / 24.0;
        out.push(acc);
    }
    acc += h * (f[n - 4] - 5.0 * f[n - 3] + 19.0 * f[n - 2] + 9.0 * f[n - 1]) / 24.0;
    out.push(acc);
    out
}

/// Neumaier compensated sum; immune to cancellation between large partial
/// sums and small terms.
pub fn compensated_sum(values: &[f64]) -> f64 {
    let mut sum = 0.0_f64;
    let mut comp = 0.0_f64;
    for &v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

pub fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    assert!(n >= 2);
    let h = (b - a) / (n - 1) as f64;
    (0..n).map(|k| a + h * k as f64).collect()
}

/// Fourth-order first derivative on a uniform grid: five-point central in
/// the interior, five-point one-sided at the edges.
pub fn grid_derivative(h: f64, f: &[f64]) -> Vec<f64> {
    let n = f.len();
    assert!(n >= 5, "grid derivative needs at least 5 nodes");
    let mut out = vec![0.0; n];
    out[0] = (-25.0 * f[0] + 48.0 * f[1] - 36.0 * f[2] + 16.0 * f[3] - 3.0 * f[4]) / (12.0 * h);
    out[1] = (-3.0 * f[0] - 10.0 * f[1] + 18.0 * f[2] - 6.0 * f[3] + f[4]) / (12.0 * h);
    for k in 2..n - 2 {
        out[k] = (f[k - 2] - 8.0 * f[k - 1] + 8.0 * f[k + 1] - f[k + 2]) / (12.0 * h);
    }
    out[n - 2] =
        (3.0 * f[n - 1] + 10.0 * f[n - 2] - 18.0 * f[n - 3] + 6.0 * f[n - 4] - f[n - 5])
            / (12.0 * h);
    out[n - 1] = (25.0 * f[n - 1] - 48.0 * f[n - 2] + 36.0 * f[n - 3] - 16.0 * f[n - 4]
        + 3.0 * f[n - 5])
        / (12.0 * h);
    out
}

/// Second derivative on a uniform grid: fourth-order central stencils in
/// the interior, second-order one-sided at the two nodes on each edge.
pub fn grid_second(h: f64, f: &[f64]) -> Vec<f64> {
    let n = f.len();
    assert!(n >= 6, "grid second derivative needs at least 6 nodes");
    let h2 = h * h;
    let mut out = vec![0.0; n];
    let forward = |a: usize| (2.0 * f[a] - 5.0 * f[a + 1] + 4.0 * f[a + 2] - f[a + 3]) / h2;
    let backward = |a: usize| (2.0 * f[a] - 5.0 * f[a - 1] + 4.0 * f[a - 2] - f[a - 3]) / h2;
    out[0] = forward(0);
    out[1] = forward(1);
    for k in 2..n - 2 {
        out[k] = (-f[k - 2] + 16.0 * f[k - 1] - 30.0 * f[k] + 16.0 * f[k + 1] - f[k + 2])
            / (12.0 * h2);
    }
    out[n - 2] = backward(n - 2);
    out[n - 1] = backward(n - 1);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn golden_finds_quadratic_peak() {
        let (x, v) = golden_max(|y| -(y - 1.7) * (y - 1.7) + 3.0, 0.0, 5.0, 1e-12);
        // the argument saturates at the sqrt(eps) plateau of the quadratic
        assert!((x - 1.7).abs() < 1e-7);
        assert!((v - 3.0).abs() < 1e-14);
    }

    #[test]
    fn scan_root_polishes_cosine_zero() {
        let r = scan_root(|x| x.cos(), 0.0, 3.0, 50, 1e-13).unwrap();
        assert!((r - std::f64::consts::FRAC_PI_2).abs() < 1e-11);
    }

    #[test]
    fn scan_root_reports_missing_bracket() {
        assert!(scan_root(|x| 1.0 + x * x, 0.0, 2.0, 20, 1e-12).is_err());
    }

    #[test]
    fn cumulative_quad_is_exact_on_cubics() {
        let h = 0.1;
        let f: Vec<f64> = (0..51).map(|k| {
            let x = h * k as f64;
            4.0 * x * x * x + 3.0 * x * x - 2.0 * x + 1.0
        }).collect();
        let cum = cumulative_quad(h, &f);
        for (k, &v) in cum.iter().enumerate() {
            let x = h * k as f64;
            let exact = x * x * x * x + x * x * x - x * x + x;
            assert!((v - exact).abs() < 1e-11, "node {k}: {v} vs {exact}");
        }
    }

    #[test]
    fn grid_derivative_is_fourth_order() {
        let h = 0.01;
        let f: Vec<f64> = (0..101).map(|k| (h * k as f64).sin()).collect();
        let d = grid_derivative(h, &f);
        for (k, &v) in d.iter().enumerate() {
            let exact = (h * k as f64).cos();
            assert!((v - exact).abs() < 5e-9, "node {k}: {v} vs {exact}");
        }
    }

    #[test]
    fn grid_second_matches_in_the_interior() {
        let h = 0.01;
        let f: Vec<f64> = (0..101).map(|k| (h * k as f64).sin()).collect();
        let d2 = grid_second(h, &f);
        for (k, &v) in d2.iter().enumerate() {
            let exact = -(h * k as f64).sin();
            let tol = if (2..99).contains(&k) { 1e-8 } else { 1e-3 };
            assert!((v - exact).abs() < tol, "node {k}: {v} vs {exact}");
        }
    }

    #[test]
    fn compensated_sum_handles_cancellation() {
        let vals = vec![1e16, 1.0, -1e16, 1.0];
        assert_eq!(compensated_sum(&vals), 2.0);
    }
}
