//! Scalar bracketing search used by the solvers: golden-section
//! maximization/minimization and monotone bisection.

const INV_PHI: f64 = 0.618_033_988_749_894_8;

/// Result of a one-dimensional search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalarOptimum {
    pub x: f64,
    pub value: f64,
    pub iterations: usize,
}

/// Golden-section minimization of `f` on `[lo, hi]`.
///
/// Stops once the bracket is narrower than `tol` or after `max_iter`
/// iterations. The endpoints are evaluated as well, so a minimum sitting
/// on the boundary is returned exactly.
pub fn golden_min<F>(mut f: F, lo: f64, hi: f64, tol: f64, max_iter: usize) -> ScalarOptimum
where
    F: FnMut(f64) -> f64,
{
    let (mut a, mut b) = if lo <= hi { (lo, hi) } else { (hi, lo) };
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    let mut iterations = 0;
    while (b - a).abs() > tol && iterations < max_iter {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
        iterations += 1;
    }
    let mid = 0.5 * (a + b);
    let mut best = ScalarOptimum {
        x: mid,
        value: f(mid),
        iterations,
    };
    for (x, v) in [(c, fc), (d, fd), (lo, f(lo)), (hi, f(hi))] {
        if v < best.value {
            best = ScalarOptimum {
                x,
                value: v,
                iterations,
            };
        }
    }
    best
}

/// Golden-section maximization; see [`golden_min`].
pub fn golden_max<F>(mut f: F, lo: f64, hi: f64, tol: f64, max_iter: usize) -> ScalarOptimum
where
    F: FnMut(f64) -> f64,
{
    let opt = golden_min(|x| -f(x), lo, hi, tol, max_iter);
    ScalarOptimum {
        value: -opt.value,
        ..opt
    }
}

/// Bisection for the root of a nonincreasing function `g` on `[lo, hi]`
/// with `g(lo) >= 0 >= g(hi)`. Returns the midpoint of the final bracket.
pub fn bisect_decreasing<F>(mut g: F, mut lo: f64, mut hi: f64, rel_tol: f64, max_iter: usize) -> f64
where
    F: FnMut(f64) -> f64,
{
    for _ in 0..max_iter {
        let mid = 0.5 * (lo + hi);
        if g(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if (hi - lo).abs() <= rel_tol * hi.abs().max(lo.abs()).max(f64::MIN_POSITIVE) {
            break;
        }
    }
    0.5 * (lo + hi)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn golden_finds_parabola_vertex() {
        let opt = golden_min(|x| (x - 0.3).powi(2), 0.0, 1.0, 1e-10, 200);
        assert!((opt.x - 0.3).abs() < 1e-8);
    }

    #[test]
    fn golden_returns_boundary_optimum() {
        let opt = golden_max(|x| x, 0.001, 1.0, 1e-8, 200);
        assert_eq!(opt.x, 1.0);
    }

    #[test]
    fn bisection_solves_cubic() {
        let r = bisect_decreasing(|x| 8.0 - x * x * x, 0.0, 10.0, 1e-14, 200);
        assert!((r - 2.0).abs() < 1e-12);
    }
}
