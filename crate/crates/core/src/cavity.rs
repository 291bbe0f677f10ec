//! The truncated cavity operator
//! `(Tf)(x) = exp(-d ∫_{-x}^{λ} (x+y)^(d-1) f(y) dy)` and the alternating
//! sandwich iteration from the zero function.
//!
//! `T` reverses order on non-increasing functions, so the even iterates
//! `T^{2n} 0` increase, the odd iterates `T^{2n+1} 0` decrease, and the
//! discrete fixed point always lies between them. The envelope width is the
//! certificate.
//!
//! The envelope closes geometrically only while the spectral radius of `|DT|`
//! at the fixed point is clearly below one. That radius tends to one very
//! fast as λ grows (shifted copies of the untruncated solution are exact
//! 2-cycles), so the reported function is computed by an averaged iteration
//! run alongside the envelope and clamped into it.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, numerical, Result};
use crate::grid_fn::{check_d, GridFunction, KernelWeights};

/// Parameters of one truncated solve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CavityParams {
    pub d: f64,
    pub lambda: f64,
    /// Number of grid nodes on `[-λ, λ]`.
    pub m: usize,
    /// Target for the certified envelope gap.
    pub tol: f64,
    pub max_iter: usize,
}

impl CavityParams {
    pub const DEFAULT_TOL: f64 = 1e-8;
    pub const DEFAULT_MAX_ITER: usize = 10_000;
    pub const DEFAULT_GRID_STEP: f64 = 0.01;

    pub fn new(d: f64, lambda: f64, m: usize, tol: f64, max_iter: usize) -> Result<Self> {
        let p = Self {
            d,
            lambda,
            m,
            tol,
            max_iter,
        };
        p.validate()?;
        Ok(p)
    }

    /// Default tolerance and iteration cap, with `m` chosen so that `h <= 0.01`.
    pub fn with_defaults(d: f64, lambda: f64) -> Result<Self> {
        Self::new(
            d,
            lambda,
            nodes_for_step(lambda, Self::DEFAULT_GRID_STEP)?,
            Self::DEFAULT_TOL,
            Self::DEFAULT_MAX_ITER,
        )
    }

    /// Grid with step at most `h` (exactly `h` when `2λ/h` is an integer).
    pub fn with_grid_step(d: f64, lambda: f64, h: f64, tol: f64, max_iter: usize) -> Result<Self> {
        Self::new(d, lambda, nodes_for_step(lambda, h)?, tol, max_iter)
    }

    pub fn validate(&self) -> Result<()> {
        check_d(self.d)?;
        if !(self.lambda.is_finite() && self.lambda > 0.0) {
            return Err(invalid(format!("λ must be positive, got {}", self.lambda)));
        }
        if self.m < 2 {
            return Err(invalid(format!(
                "grid needs at least 2 nodes, got {}",
                self.m
            )));
        }
        if !(self.tol.is_finite() && self.tol > 0.0) {
            return Err(invalid(format!("tol must be positive, got {}", self.tol)));
        }
        if self.max_iter < 1 {
            return Err(invalid("max_iter must be at least 1"));
        }
        Ok(())
    }

    pub fn step(&self) -> f64 {
        2.0 * self.lambda / (self.m - 1) as f64
    }
}

/// Smallest node count whose step does not exceed `h`.
pub fn nodes_for_step(lambda: f64, h: f64) -> Result<usize> {
    if !(h.is_finite() && h > 0.0) {
        return Err(invalid(format!("grid step must be positive, got {h}")));
    }
    if !(lambda.is_finite() && lambda > 0.0) {
        return Err(invalid(format!("λ must be positive, got {lambda}")));
    }
    let segments = 2.0 * lambda / h;
    // absorb rounding in e.g. 2·15/0.01
    let segments = if (segments - segments.round()).abs() < 1e-9 * segments {
        segments.round()
    } else {
        segments.ceil()
    };
    Ok(segments.max(1.0) as usize + 1)
}

/// Two-sided bracket of the fixed point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub lower: GridFunction,
    pub upper: GridFunction,
    /// `max_j (upper_j - lower_j)`.
    pub gap: f64,
}

impl Envelope {
    fn new(lower: GridFunction, upper: GridFunction) -> Self {
        let gap = lower
            .values()
            .iter()
            .zip(upper.values())
            .map(|(l, u)| u - l)
            .fold(0.0, f64::max);
        Self { lower, upper, gap }
    }

    pub fn midpoint(&self) -> GridFunction {
        let values = self
            .lower
            .values()
            .iter()
            .zip(self.upper.values())
            .map(|(l, u)| 0.5 * (l + u))
            .collect();
        GridFunction::new(self.lower.lambda(), values)
            .expect("average of two monotone [0,1] functions")
    }

    /// Whether `f` lies inside the bracket at every node.
    pub fn contains(&self, f: &GridFunction) -> bool {
        self.lower.le(f) && f.le(&self.upper)
    }
}

/// Counts of sandwich-property failures beyond one ulp, accumulated over a solve.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SandwichViolations {
    /// `lower_k > upper_k` at some node.
    pub order: usize,
    /// `lower_{k+1} < lower_k` at some node.
    pub lower_decrease: usize,
    /// `upper_{k+1} > upper_k` at some node.
    pub upper_increase: usize,
    /// `gap_{k+1} > gap_k`.
    pub gap_increase: usize,
}

impl SandwichViolations {
    pub fn total(&self) -> usize {
        self.order + self.lower_decrease + self.upper_increase + self.gap_increase
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedPointResult {
    /// Reported solution: the envelope midpoint when certified, otherwise
    /// the averaged iterate clamped into the envelope.
    pub f: GridFunction,
    pub envelope: Envelope,
    /// Number of loop passes (one envelope update and/or one averaged step each).
    pub iterations: usize,
    /// Certified: `envelope.gap <= tol`.
    pub converged: bool,
    /// `max_j |f(x_j) - (Tf)(x_j)|` for the reported `f`.
    pub residual: f64,
    /// `residual <= tol`.
    pub solved: bool,
    /// Gap after every envelope update, starting with the initial bracket.
    pub gap_history: Vec<f64>,
    pub violations: SandwichViolations,
}

impl FixedPointResult {
    /// Best available accuracy indicator for `f`: the certified gap when the
    /// envelope closed, the fixed-point residual otherwise.
    pub fn accuracy(&self) -> f64 {
        if self.converged {
            self.envelope.gap
        } else {
            self.residual
        }
    }
}

/// Which constant function starts the iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Start {
    /// `0`: even iterates are lower bounds.
    Zero,
    /// `1`: even iterates are upper bounds.
    One,
}

/// `T` bound to a grid and exponent.
#[derive(Debug, Clone)]
pub struct CavityOperator {
    weights: KernelWeights,
}

impl CavityOperator {
    pub fn new(lambda: f64, m: usize, d: f64) -> Result<Self> {
        Ok(Self {
            weights: KernelWeights::new(lambda, m, d)?,
        })
    }

    pub fn d(&self) -> f64 {
        self.weights.d()
    }

    pub fn apply(&self, f: &GridFunction) -> Result<GridFunction> {
        if !self.weights.matches(f) {
            return Err(invalid("operator was built for a different grid"));
        }
        let d = self.weights.d();
        let values = self
            .weights
            .all_nodes_unchecked(f.values())
            .into_iter()
            .map(|k| (-d * k).exp())
            .collect();
        monotone_from_computed(f.lambda(), values)
    }
}

/// Wraps operator output, absorbing rounding-level increases.
fn monotone_from_computed(lambda: f64, mut values: Vec<f64>) -> Result<GridFunction> {
    const SLACK: f64 = 1e-12;
    for j in 0..values.len() {
        let v = values[j];
        if v.is_nan() {
            return Err(numerical(format!("NaN in operator output at node {j}")));
        }
        let mut v = v.clamp(0.0, 1.0);
        if j > 0 && v > values[j - 1] {
            if v - values[j - 1] > SLACK {
                return Err(numerical(format!(
                    "operator output increases by {:e} at node {j}",
                    v - values[j - 1]
                )));
            }
            v = values[j - 1];
        }
        values[j] = v;
    }
    GridFunction::new(lambda, values)
}

/// One application of `T`.
#[allow(non_snake_case)]
pub fn apply_T(f: &GridFunction, d: f64) -> Result<GridFunction> {
    CavityOperator::new(f.lambda(), f.len(), d)?.apply(f)
}

/// Checks order reversal on a concrete pair: `f <= g ⇒ Tf >= Tg`.
///
/// Pairs that are not ordered satisfy the implication vacuously.
pub fn antitone_check(f: &GridFunction, g: &GridFunction, d: f64) -> Result<bool> {
    f.ensure_same_grid(g)?;
    let op = CavityOperator::new(f.lambda(), f.len(), d)?;
    let (tf, tg) = (op.apply(f)?, op.apply(g)?);
    let mut ok = true;
    if f.le(g) {
        ok &= tg.le(&tf);
    }
    if g.le(f) {
        ok &= tf.le(&tg);
    }
    Ok(ok)
}

/// `max_j |f(x_j) - (Tf)(x_j)|`.
pub fn residual(f: &GridFunction, d: f64) -> Result<f64> {
    let tf = apply_T(f, d)?;
    f.sup_distance(&tf)
}

/// Solves the truncated equation from the zero function.
pub fn solve_truncated(params: &CavityParams) -> Result<FixedPointResult> {
    solve_truncated_from(params, Start::Zero)
}

pub fn solve_truncated_from(params: &CavityParams, start: Start) -> Result<FixedPointResult> {
    params.validate()?;
    let op = CavityOperator::new(params.lambda, params.m, params.d)?;
    solve_with_operator(&op, params, start)
}

pub(crate) fn solve_with_operator(
    op: &CavityOperator,
    params: &CavityParams,
    start: Start,
) -> Result<FixedPointResult> {
    let constant = |c| GridFunction::constant(params.lambda, params.m, c);
    let (mut lower, mut upper) = match start {
        Start::Zero => {
            let lower = constant(0.0)?;
            let upper = op.apply(&lower)?;
            (lower, upper)
        }
        Start::One => {
            let upper = constant(1.0)?;
            let lower = op.apply(&upper)?;
            (lower, upper)
        }
    };
    let mut violations = SandwichViolations::default();
    let mut env = Envelope::new(lower.clone(), upper.clone());
    if !env.lower.le_ulp(&env.upper) {
        violations.order += 1;
    }
    let mut gap_history = vec![env.gap];

    let mut avg = Averaged::new(match start {
        Start::Zero => constant(0.0)?,
        Start::One => constant(1.0)?,
    });
    let mut iterations = 0;

    while iterations < params.max_iter {
        let certify = env.gap > params.tol
            && !(avg.residual <= params.tol
                && sandwich_stalled(&gap_history, params.tol, params.max_iter - iterations));
        let refine = avg.residual > params.tol;
        if !certify && !refine {
            break;
        }
        if certify {
            let (next_lower, next_upper) = match start {
                Start::Zero => {
                    let l = op.apply(&upper)?;
                    let u = op.apply(&l)?;
                    (l, u)
                }
                Start::One => {
                    let u = op.apply(&lower)?;
                    let l = op.apply(&u)?;
                    (l, u)
                }
            };
            if !lower.le_ulp(&next_lower) {
                violations.lower_decrease += 1;
            }
            if !next_upper.le_ulp(&upper) {
                violations.upper_increase += 1;
            }
            if !next_lower.le_ulp(&next_upper) {
                violations.order += 1;
            }
            let next = Envelope::new(next_lower.clone(), next_upper.clone());
            if next.gap > env.gap && next.gap - env.gap > ulp(env.gap) {
                violations.gap_increase += 1;
            }
            lower = next_lower;
            upper = next_upper;
            env = next;
            gap_history.push(env.gap);
        }
        if refine {
            avg.step(op)?;
        }
        iterations += 1;
    }

    let converged = env.gap <= params.tol;
    let f = if converged {
        env.midpoint()
    } else {
        clamp_into(&avg.current, &env)?
    };
    let residual = f.sup_distance(&op.apply(&f)?)?;
    Ok(FixedPointResult {
        f,
        converged,
        residual,
        solved: residual <= params.tol,
        envelope: env,
        iterations,
        gap_history,
        violations,
    })
}

/// Krasnoselskii–Mann iteration `f <- (1-α) f + α Tf`.
///
/// `T` has an eigenvalue close to `-1` at its fixed point (shifted copies of
/// the solution nearly form 2-cycles), so the plain iteration and the
/// sandwich barely move along that direction while the average damps it.
struct Averaged {
    current: GridFunction,
    residual: f64,
    alpha: f64,
    best: f64,
    since_best: usize,
}

impl Averaged {
    fn new(start: GridFunction) -> Self {
        Self {
            current: start,
            residual: f64::INFINITY,
            alpha: 0.5,
            best: f64::INFINITY,
            since_best: 0,
        }
    }

    fn step(&mut self, op: &CavityOperator) -> Result<()> {
        let tf = op.apply(&self.current)?;
        self.residual = self.current.sup_distance(&tf)?;
        if self.residual < self.best {
            self.best = self.residual;
            self.since_best = 0;
        } else {
            self.since_best += 1;
            if self.since_best >= 50 {
                self.alpha *= 0.5;
                self.since_best = 0;
            }
        }
        let a = self.alpha;
        let values = self
            .current
            .values()
            .iter()
            .zip(tf.values())
            .map(|(f, t)| (1.0 - a) * f + a * t)
            .collect();
        self.current = GridFunction::new(self.current.lambda(), values)?;
        Ok(())
    }
}

/// Whether the envelope, at its recent geometric rate, cannot reach `tol`
/// within `budget` more updates.
fn sandwich_stalled(gaps: &[f64], tol: f64, budget: usize) -> bool {
    const WINDOW: usize = 20;
    if gaps.len() <= WINDOW {
        return false;
    }
    let now = gaps[gaps.len() - 1];
    let then = gaps[gaps.len() - 1 - WINDOW];
    if now <= 0.0 || then <= 0.0 {
        return false;
    }
    let rate = (now / then).powf(1.0 / WINDOW as f64);
    if rate >= 1.0 - 1e-12 {
        return true;
    }
    (tol / now).ln() / rate.ln() > budget as f64
}

fn clamp_into(f: &GridFunction, env: &Envelope) -> Result<GridFunction> {
    let values = f
        .values()
        .iter()
        .zip(env.lower.values().iter().zip(env.upper.values()))
        .map(|(&v, (&l, &u))| v.min(u).max(l))
        .collect();
    GridFunction::new(f.lambda(), values)
}

/// Plain (uncertified) iteration `T^n f` from an arbitrary start.
pub fn iterate(f: &GridFunction, d: f64, n: usize) -> Result<GridFunction> {
    let op = CavityOperator::new(f.lambda(), f.len(), d)?;
    let mut cur = f.clone();
    for _ in 0..n {
        cur = op.apply(&cur)?;
    }
    Ok(cur)
}

fn ulp(x: f64) -> f64 {
    x.abs().next_up() - x.abs()
}

impl GridFunction {
    /// `self <= other` at every node, allowing one ulp.
    pub(crate) fn le_ulp(&self, other: &GridFunction) -> bool {
        self.values()
            .iter()
            .zip(other.values())
            .all(|(&a, &b)| a <= b || a - b <= ulp(b))
    }
}
