//! Adaptive Simpson quadrature for the smooth one-dimensional tail integrals.

/// `∫_a^b g` to relative accuracy `rel` (absolute floor `1e-300`).
pub fn adaptive_simpson(g: &impl Fn(f64) -> f64, a: f64, b: f64, rel: f64) -> f64 {
    if b <= a {
        return 0.0;
    }
    let (fa, fm, fb) = (g(a), g(0.5 * (a + b)), g(b));
    let whole = simpson(a, b, fa, fm, fb);
    // coarse magnitude for the absolute stopping test
    let scale = whole.abs().max(1e-300);
    recurse(g, a, b, fa, fm, fb, whole, rel * scale, 50)
}

fn simpson(a: f64, b: f64, fa: f64, fm: f64, fb: f64) -> f64 {
    (b - a) / 6.0 * (fa + 4.0 * fm + fb)
}

#[allow(clippy::too_many_arguments)]
fn recurse(
    g: &impl Fn(f64) -> f64,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    eps: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (g(lm), g(rm));
    let left = simpson(a, m, fa, flm, fm);
    let right = simpson(m, b, fm, frm, fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * eps {
        left + right + delta / 15.0
    } else {
        recurse(g, a, m, fa, flm, fm, left, 0.5 * eps, depth - 1)
            + recurse(g, m, b, fm, frm, fb, right, 0.5 * eps, depth - 1)
    }
}

/// `∫_a^∞ g` for an integrand that is eventually decreasing to zero.
///
/// Integrates over doubling panels until a panel adds less than `rel/100`
/// of the running total and the integrand has started to decay.
pub fn integrate_to_infinity(g: &impl Fn(f64) -> f64, a: f64, rel: f64) -> f64 {
    let mut total = 0.0;
    let mut lo = a;
    let mut width = 1.0;
    for _ in 0..200 {
        let hi = lo + width;
        let piece = adaptive_simpson(g, lo, hi, rel * 0.1);
        total += piece;
        let decaying = g(hi) <= g(lo);
        if decaying && piece.abs() <= 0.01 * rel * total.abs() {
            break;
        }
        if decaying && total == 0.0 && g(hi) == 0.0 {
            break;
        }
        lo = hi;
        width = (width * 2.0).min(64.0);
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_and_exponential() {
        let v = adaptive_simpson(&|x: f64| x * x * x, 0.0, 2.0, 1e-12);
        assert!((v - 4.0).abs() < 1e-12);
        let v = integrate_to_infinity(&|x: f64| (-x).exp(), 1.0, 1e-10);
        assert!((v - (-1.0f64).exp()).abs() < 1e-10);
        // ∫_0^∞ e^{-x²} = √π / 2
        let v = integrate_to_infinity(&|x: f64| (-x * x).exp(), 0.0, 1e-10);
        assert!((v - std::f64::consts::PI.sqrt() / 2.0).abs() < 1e-9);
    }

    #[test]
    fn underflowed_tail_is_zero() {
        let v = integrate_to_infinity(&|x: f64| (-x * x * x).exp(), 50.0, 1e-6);
        assert_eq!(v, 0.0);
    }
}
