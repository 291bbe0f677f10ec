//! The λ → ∞ side: uniform tail bounds, the energy `-d ∫ f ln f`, λ-sweeps
//! and the defect of a truncated solution in the untruncated equation.

use serde::{Deserialize, Serialize};

use crate::cavity::{nodes_for_step, solve_truncated, CavityParams, FixedPointResult};
use crate::error::{invalid, Result};
use crate::grid_fn::{check_d, GridFunction, KernelWeights};
use crate::quad::integrate_to_infinity;

const TAIL_REL_TOL: f64 = 1e-6;

/// `exp(-x^d / e)`: bounds `f_λ(x)`, `1 - f_λ(-x)` and `f_λ(-x) ln(1/f_λ(-x))`
/// for every λ (including λ = ∞) and `x >= 0`.
pub fn tail_bound(x: f64, d: f64) -> Result<f64> {
    check_d(d)?;
    if !(x >= 0.0) || !x.is_finite() {
        return Err(invalid(format!("tail bound needs finite x >= 0, got {x}")));
    }
    Ok(bound(x, d))
}

/// `(1 + x^d/e) exp(-x^d/e)`: bounds `f_λ(x) ln(1/f_λ(x))` for `x >= 0`.
pub fn entropy_tail_bound(x: f64, d: f64) -> Result<f64> {
    let b = tail_bound(x, d)?;
    Ok((1.0 + x.powf(d) / std::f64::consts::E) * b)
}

fn bound(x: f64, d: f64) -> f64 {
    (-x.powf(d) / std::f64::consts::E).exp()
}

/// `u ln(1/u)`, continuously extended by 0 at `u ∈ {0, 1}`.
pub fn entropy(u: f64) -> f64 {
    if u <= 0.0 || u >= 1.0 {
        0.0
    } else {
        -u * u.ln()
    }
}

/// Smallest slack of each uniform bound over the non-negative nodes of `f`
/// (negative slack means the bound is violated by that amount).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundSlack {
    /// `exp(-x^d/e) - f(x)`
    pub right_tail: f64,
    /// `exp(-x^d/e) - (1 - f(-x))`
    pub left_tail: f64,
    /// `exp(-x^d/e) - f(-x) ln(1/f(-x))`
    pub left_entropy: f64,
    /// `(1 + x^d/e) exp(-x^d/e) - f(x) ln(1/f(x))`
    pub right_entropy: f64,
}

impl BoundSlack {
    pub fn min(&self) -> f64 {
        self.right_tail
            .min(self.left_tail)
            .min(self.left_entropy)
            .min(self.right_entropy)
    }
}

pub fn uniform_bound_slack(f: &GridFunction, d: f64) -> Result<BoundSlack> {
    check_d(d)?;
    let mut s = BoundSlack {
        right_tail: f64::INFINITY,
        left_tail: f64::INFINITY,
        left_entropy: f64::INFINITY,
        right_entropy: f64::INFINITY,
    };
    for (x, &fx) in f.nodes().zip(f.values()) {
        if x < 0.0 {
            continue;
        }
        let b = bound(x, d);
        let b4 = (1.0 + x.powf(d) / std::f64::consts::E) * b;
        let fm = f.eval_unchecked(-x);
        s.right_tail = s.right_tail.min(b - fx);
        s.left_tail = s.left_tail.min(b - (1.0 - fm));
        s.left_entropy = s.left_entropy.min(b - entropy(fm));
        s.right_entropy = s.right_entropy.min(b4 - entropy(fx));
    }
    Ok(s)
}

/// `-d ∫ f ln f` over the grid window, with a bound on what lies outside it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyValue {
    /// Truncation level; `None` marks an extrapolated limit.
    pub lambda: Option<f64>,
    pub value: f64,
    /// `d ∫_{|x|>λ}` of the uniform entropy bounds.
    pub tail_remainder_bound: f64,
    /// `|Simpson - trapezoid|` on the same grid.
    pub quadrature_error: f64,
}

/// Composite Simpson on each grid segment, the midpoint taken from the
/// linear interpolant.
pub fn energy(f: &GridFunction, d: f64) -> Result<EnergyValue> {
    check_d(d)?;
    let h = f.step();
    let v = f.values();
    let mut simpson = 0.0;
    let mut trapezoid = 0.0;
    for w in v.windows(2) {
        let (a, b) = (entropy(w[0]), entropy(w[1]));
        let mid = entropy(0.5 * (w[0] + w[1]));
        simpson += h / 6.0 * (a + 4.0 * mid + b);
        trapezoid += 0.5 * h * (a + b);
    }
    Ok(EnergyValue {
        lambda: Some(f.lambda()),
        value: d * simpson,
        tail_remainder_bound: energy_tail_bound(f.lambda(), d),
        quadrature_error: d * (simpson - trapezoid).abs(),
    })
}

/// `d ∫_λ^∞ [(1 + x^d/e) e^{-x^d/e} + e^{-x^d/e}] dx`.
pub fn energy_tail_bound(lambda: f64, d: f64) -> f64 {
    let g = |x: f64| {
        let b = bound(x, d);
        (2.0 + x.powf(d) / std::f64::consts::E) * b
    };
    d * integrate_to_infinity(&g, lambda, TAIL_REL_TOL)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub lambda: f64,
    pub energy: EnergyValue,
    pub f_at_0: f64,
    pub iterations: usize,
    /// Certified envelope gap.
    pub gap: f64,
    pub residual: f64,
    /// Envelope closed to `tol`.
    pub converged: bool,
    /// Fixed-point residual at most `tol`.
    pub solved: bool,
}

/// Limit read off the largest λ: `value ± (last increment + tail bound)`.
///
/// The increment part is heuristic (no convergence rate is known).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LimitEstimate {
    pub value: f64,
    pub error_bar: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub d: f64,
    pub grid_step: f64,
    pub rows: Vec<SweepRow>,
    /// Sup distance of the last two solutions on `[-λ_min, λ_min]`.
    pub cauchy_delta: Option<f64>,
    /// Indices `i` where `energy(i+1) < energy(i) - slack`.
    pub monotonicity_violations: Vec<usize>,
    pub limit: Option<LimitEstimate>,
    #[serde(skip)]
    pub solutions: Vec<FixedPointResult>,
}

impl SweepReport {
    pub fn energies_monotone(&self) -> bool {
        self.monotonicity_violations.is_empty()
    }

    /// CSV with columns `lambda,energy,tail_bound,f_at_0,iterations,gap,converged`.
    pub fn to_csv_string(&self) -> String {
        let mut s = String::from("lambda,energy,tail_bound,f_at_0,iterations,gap,converged\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{:.16e},{:.16e},{:.16e},{:.16e},{},{:.16e},{}\n",
                r.lambda,
                r.energy.value,
                r.energy.tail_remainder_bound,
                r.f_at_0,
                r.iterations,
                r.gap,
                r.converged
            ));
        }
        s
    }
}

/// Slack allowed between consecutive computed energies before a decrease
/// counts as a violation of monotonicity in λ.
pub fn monotonicity_slack(d: f64, lo: &SweepRow, hi: &SweepRow) -> f64 {
    let acc = |r: &SweepRow| if r.converged { r.gap } else { r.residual };
    d * (acc(lo) + acc(hi)) * (2.0 * hi.lambda)
        + 2.0 * lo.energy.quadrature_error.max(hi.energy.quadrature_error)
}

/// Solves at each λ on a common grid step and assembles the report.
pub fn lambda_sweep(
    d: f64,
    lambdas: &[f64],
    grid_step: f64,
    tol: f64,
    max_iter: usize,
) -> Result<SweepReport> {
    check_d(d)?;
    if lambdas.is_empty() {
        return Err(invalid("sweep needs at least one λ"));
    }
    if lambdas.iter().any(|&l| !(l.is_finite() && l > 0.0)) {
        return Err(invalid("every λ must be positive"));
    }
    if lambdas.windows(2).any(|w| w[1] <= w[0]) {
        return Err(invalid("λ values must be strictly increasing"));
    }
    let params = lambdas
        .iter()
        .map(|&l| CavityParams::new(d, l, nodes_for_step(l, grid_step)?, tol, max_iter))
        .collect::<Result<Vec<_>>>()?;

    #[cfg(feature = "parallel")]
    let solutions = {
        use rayon::prelude::*;
        params
            .par_iter()
            .map(solve_truncated)
            .collect::<Result<Vec<_>>>()?
    };
    #[cfg(not(feature = "parallel"))]
    let solutions = params
        .iter()
        .map(solve_truncated)
        .collect::<Result<Vec<_>>>()?;

    let rows = solutions
        .iter()
        .zip(lambdas)
        .map(|(s, &lambda)| {
            Ok(SweepRow {
                lambda,
                energy: energy(&s.f, d)?,
                f_at_0: s.f.eval_unchecked(0.0),
                iterations: s.iterations,
                gap: s.envelope.gap,
                residual: s.residual,
                converged: s.converged,
                solved: s.solved,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let monotonicity_violations = rows
        .windows(2)
        .enumerate()
        .filter(|(_, w)| w[0].solved && w[1].solved)
        .filter(|(_, w)| {
            w[1].energy.value < w[0].energy.value - monotonicity_slack(d, &w[0], &w[1])
        })
        .map(|(i, _)| i)
        .collect();

    let cauchy_delta = match solutions.as_slice() {
        [.., prev, last] => Some(window_distance(&prev.f, &last.f, lambdas[0])),
        _ => None,
    };

    let limit = rows.last().map(|last| {
        let increment = match rows.as_slice() {
            [.., prev, last] => (last.energy.value - prev.energy.value).abs(),
            _ => f64::NAN,
        };
        LimitEstimate {
            value: last.energy.value,
            error_bar: increment + last.energy.tail_remainder_bound,
        }
    });

    Ok(SweepReport {
        d,
        grid_step,
        rows,
        cauchy_delta,
        monotonicity_violations,
        limit,
        solutions,
    })
}

/// `max |a(x) - b(x)|` over the nodes of `b` inside `[-w, w]`.
pub fn window_distance(a: &GridFunction, b: &GridFunction, w: f64) -> f64 {
    b.nodes()
        .zip(b.values())
        .filter(|(x, _)| x.abs() <= w)
        .map(|(x, &v)| (a.eval_unchecked(x) - v).abs())
        .fold(0.0, f64::max)
}

/// Defect of `f` in the untruncated equation on `[-λ/2, λ/2]`.
///
/// The integral beyond λ is unknown but lies between 0 and the one obtained
/// from the uniform bound `exp(-y^d/e)`; the larger of the two defects is
/// returned.
pub fn untruncated_residual(f: &GridFunction, d: f64) -> Result<f64> {
    check_d(d)?;
    let lambda = f.lambda();
    let weights = KernelWeights::for_grid(f, d)?;
    let mut worst: f64 = 0.0;
    for (j, x) in f.nodes().enumerate() {
        if x.abs() > 0.5 * lambda {
            continue;
        }
        let inside = weights.at_node(f.values(), j);
        let outside = integrate_to_infinity(
            &|y: f64| (x + y).powf(d - 1.0) * bound(y, d),
            lambda,
            TAIL_REL_TOL,
        );
        let fx = f.values()[j];
        let without = (fx - (-d * inside).exp()).abs();
        let with = (fx - (-d * (inside + outside)).exp()).abs();
        worst = worst.max(without).max(with);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{E, PI};

    fn logistic(x: f64) -> f64 {
        1.0 / (1.0 + x.exp())
    }

    #[test]
    fn tail_bound_examples() {
        assert_eq!(tail_bound(0.0, 2.0).unwrap(), 1.0);
        assert!((tail_bound(E, 1.0).unwrap() - (-1.0f64).exp()).abs() < 1e-15);
        assert!(tail_bound(-0.1, 2.0).is_err());
        assert!(tail_bound(1.0, 0.9).is_err());
        assert_eq!(entropy_tail_bound(0.0, 2.0).unwrap(), 1.0);
    }

    #[test]
    fn energy_examples() {
        let f = GridFunction::from_fn(30.0, 12_001, logistic).unwrap();
        let e = energy(&f, 1.0).unwrap();
        assert!((e.value - PI * PI / 6.0).abs() < 1e-5, "{}", e.value);

        let ones = GridFunction::constant(3.0, 31, 1.0).unwrap();
        assert_eq!(energy(&ones, 2.0).unwrap().value, 0.0);

        let half = GridFunction::constant(1.0, 11, 0.5).unwrap();
        let v = energy(&half, 2.0).unwrap().value;
        assert!((v - 2.0 * 2f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn energy_tail_bound_matches_closed_form_at_d1() {
        // d = 1: ∫_λ^∞ (2 + x/e) e^{-x/e} dx = e^{-λ/e} (3e + λ)
        for lambda in [1.0, 4.0, 12.0] {
            let exact = (-lambda / E).exp() * (3.0 * E + lambda);
            let got = energy_tail_bound(lambda, 1.0);
            assert!(
                (got - exact).abs() <= 1e-6 * exact,
                "λ={lambda}: {got} vs {exact}"
            );
        }
    }

    #[test]
    fn untruncated_residual_examples() {
        let zero = GridFunction::constant(4.0, 81, 0.0).unwrap();
        assert_eq!(untruncated_residual(&zero, 2.0).unwrap(), 1.0);
        let f = GridFunction::from_fn(30.0, 6001, logistic).unwrap();
        let r = untruncated_residual(&f, 1.0).unwrap();
        assert!(r <= 1e-4, "{r}");
    }

    #[test]
    fn logistic_satisfies_uniform_bounds() {
        let f = GridFunction::from_fn(20.0, 4001, logistic).unwrap();
        assert!(uniform_bound_slack(&f, 1.0).unwrap().min() >= 0.0);
    }

    #[test]
    fn singleton_sweep_has_no_cauchy_delta() {
        let r = lambda_sweep(2.0, &[2.0], 0.02, 1e-9, 2000).unwrap();
        assert_eq!(r.rows.len(), 1);
        assert!(r.cauchy_delta.is_none());
        assert!(r.energies_monotone());
        assert!(r.to_csv_string().lines().count() == 2);
    }

    #[test]
    fn sweep_rejects_unordered_lambdas() {
        assert!(lambda_sweep(2.0, &[3.0, 2.0], 0.02, 1e-9, 10).is_err());
        assert!(lambda_sweep(2.0, &[], 0.02, 1e-9, 10).is_err());
    }
}
