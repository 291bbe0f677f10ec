//! Monotone `[0,1]`-valued functions sampled on a uniform grid over `[-λ, λ]`,
//! and exact quadrature of the power-law kernel `(x+y)^(d-1)` against their
//! piecewise-linear interpolants.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Non-increasing function `[-λ, λ] -> [0, 1]` stored at the uniform nodes
/// `x_j = -λ + j·h`, `h = 2λ/(m-1)`.
///
/// Off the grid it is extended by `1` for `x <= -λ` and `0` for `x > λ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridFunction {
    lambda: f64,
    values: Vec<f64>,
}

impl GridFunction {
    pub fn new(lambda: f64, values: Vec<f64>) -> Result<Self> {
        check_grid(lambda, values.len())?;
        for (j, &v) in values.iter().enumerate() {
            if !(0.0..=1.0).contains(&v) {
                return Err(invalid(format!("value {v} at node {j} outside [0, 1]")));
            }
        }
        if let Some(j) = values.windows(2).position(|w| w[1] > w[0]) {
            return Err(invalid(format!(
                "values increase between nodes {j} and {} ({} -> {})",
                j + 1,
                values[j],
                values[j + 1]
            )));
        }
        Ok(Self { lambda, values })
    }

    pub fn constant(lambda: f64, m: usize, c: f64) -> Result<Self> {
        Self::new(lambda, vec![c; m])
    }

    /// Samples `f` at the nodes. Fails if the samples are not a valid member
    /// of the class (monotone, `[0,1]`-valued).
    pub fn from_fn(lambda: f64, m: usize, f: impl Fn(f64) -> f64) -> Result<Self> {
        check_grid(lambda, m)?;
        let values = (0..m).map(|j| f(node(lambda, m, j))).collect();
        Self::new(lambda, values)
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn step(&self) -> f64 {
        2.0 * self.lambda / (self.values.len() - 1) as f64
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn node(&self, j: usize) -> f64 {
        node(self.lambda, self.values.len(), j)
    }

    pub fn nodes(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.values.len()).map(move |j| self.node(j))
    }

    pub fn same_grid(&self, other: &GridFunction) -> bool {
        self.lambda == other.lambda && self.values.len() == other.values.len()
    }

    pub(crate) fn ensure_same_grid(&self, other: &GridFunction) -> Result<()> {
        if self.same_grid(other) {
            Ok(())
        } else {
            Err(invalid(format!(
                "grid mismatch: (λ={}, m={}) vs (λ={}, m={})",
                self.lambda,
                self.len(),
                other.lambda,
                other.len()
            )))
        }
    }

    /// Node-wise `self <= other`.
    pub fn le(&self, other: &GridFunction) -> bool {
        self.values.iter().zip(&other.values).all(|(a, b)| a <= b)
    }

    /// Sup-norm distance over the nodes of two functions on the same grid.
    pub fn sup_distance(&self, other: &GridFunction) -> Result<f64> {
        self.ensure_same_grid(other)?;
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    /// Evaluates the extended function at `x`.
    pub fn eval(&self, x: f64) -> Result<f64> {
        if !x.is_finite() {
            return Err(invalid(format!("evaluation point {x} is not finite")));
        }
        Ok(self.eval_unchecked(x))
    }

    pub(crate) fn eval_unchecked(&self, x: f64) -> f64 {
        let m = self.values.len();
        if x <= -self.lambda {
            1.0
        } else if x > self.lambda {
            0.0
        } else if x == self.lambda {
            self.values[m - 1]
        } else {
            let (k, t) = self.locate(x);
            self.values[k] + t * (self.values[k + 1] - self.values[k])
        }
    }

    /// Segment index `k` with `x ∈ [x_k, x_{k+1}]` and the local coordinate `t ∈ [0,1]`.
    fn locate(&self, x: f64) -> (usize, f64) {
        let m = self.values.len();
        let s = (x + self.lambda) / self.step();
        let k = (s.floor().max(0.0) as usize).min(m - 2);
        (k, (s - k as f64).clamp(0.0, 1.0))
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = String::with_capacity(48 * self.values.len() + 4);
        out.push_str("x,f\n");
        for (j, v) in self.values.iter().enumerate() {
            let _ = writeln!(out, "{:.16e},{:.16e}", self.node(j), v);
        }
        out
    }

    /// Parses the `x,f` CSV written by [`GridFunction::to_csv_string`].
    ///
    /// The grid is reconstructed from the first node (`-λ`); the remaining
    /// abscissae are only checked for uniform spacing.
    pub fn from_csv_str(s: &str) -> Result<Self> {
        let mut lines = s.lines().filter(|l| !l.trim().is_empty());
        match lines.next() {
            Some(h) if h.trim() == "x,f" => {}
            other => {
                return Err(Error::Parse(format!(
                    "expected header \"x,f\", found {:?}",
                    other.unwrap_or("")
                )))
            }
        }
        let mut xs = Vec::new();
        let mut fs = Vec::new();
        for (i, line) in lines.enumerate() {
            let (x, f) = line
                .split_once(',')
                .ok_or_else(|| Error::Parse(format!("row {}: expected two columns", i + 1)))?;
            let parse = |s: &str| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Parse(format!("row {}: {e}", i + 1)))
            };
            xs.push(parse(x)?);
            fs.push(parse(f)?);
        }
        if xs.len() < 2 {
            return Err(Error::Parse("need at least two rows".into()));
        }
        let lambda = -xs[0];
        check_grid(lambda, xs.len())?;
        let g = Self::new(lambda, fs)?;
        let slack = 1e-9 * lambda.max(1.0);
        if let Some(j) = (0..xs.len()).find(|&j| (xs[j] - g.node(j)).abs() > slack) {
            return Err(Error::Parse(format!(
                "abscissa {} at row {} is off the uniform grid (expected {})",
                xs[j],
                j + 1,
                g.node(j)
            )));
        }
        Ok(g)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_csv_string())?;
        Ok(())
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_csv_str(&std::fs::read_to_string(path)?)
    }
}

fn check_grid(lambda: f64, m: usize) -> Result<()> {
    if !(lambda.is_finite() && lambda > 0.0) {
        return Err(invalid(format!(
            "λ must be positive and finite, got {lambda}"
        )));
    }
    if m < 2 {
        return Err(invalid(format!("grid needs at least 2 nodes, got {m}")));
    }
    let h = 2.0 * lambda / (m - 1) as f64;
    if !(h.is_finite() && h > 0.0) {
        return Err(invalid(format!("degenerate grid step {h}")));
    }
    Ok(())
}

pub(crate) fn node(lambda: f64, m: usize, j: usize) -> f64 {
    if j + 1 == m {
        lambda
    } else {
        -lambda + j as f64 * (2.0 * lambda / (m - 1) as f64)
    }
}

/// Pseudo-dimension exponent of the kernel `(x+y)^(d-1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    d: f64,
}

impl KernelParams {
    pub fn new(d: f64) -> Result<Self> {
        check_d(d)?;
        Ok(Self { d })
    }

    pub fn d(&self) -> f64 {
        self.d
    }
}

pub(crate) fn check_d(d: f64) -> Result<()> {
    if d.is_finite() && d >= 1.0 {
        Ok(())
    } else {
        Err(invalid(format!(
            "pseudo-dimension must be finite and >= 1, got {d}"
        )))
    }
}

/// `(u0 + t)^p - u0^p` without cancellation for `t << u0`.
fn pow_diff(u0: f64, t: f64, p: f64) -> f64 {
    if u0 <= 0.0 {
        t.powf(p)
    } else {
        u0.powf(p) * (p * (t / u0).ln_1p()).exp_m1()
    }
}

/// `∫_{u0}^{u0+t} u^(d-1) (a + b (u - u0)) du` with `u0 >= 0`, `t >= 0`.
pub(crate) fn segment_integral_u(u0: f64, t: f64, a: f64, b: f64, d: f64) -> f64 {
    let u0 = u0.max(0.0);
    let t = t.max(0.0);
    if t == 0.0 {
        return 0.0;
    }
    let a_part = pow_diff(u0, t, d) / d;
    if b == 0.0 {
        return a * a_part;
    }
    let b_part = pow_diff(u0, t, d + 1.0) / (d + 1.0) - u0 * a_part;
    a * a_part + b * b_part
}

/// `∫_{y0}^{y1} (x+y)^(d-1) (a + b (y - y0)) dy` in closed form.
///
/// Requires `y0 <= y1` and `x + y0 >= 0` (up to rounding).
pub fn segment_integral(x: f64, y0: f64, y1: f64, a: f64, b: f64, d: f64) -> Result<f64> {
    check_d(d)?;
    if ![x, y0, y1, a, b].iter().all(|v| v.is_finite()) {
        return Err(invalid("segment_integral arguments must be finite"));
    }
    if y0 > y1 {
        return Err(invalid(format!("segment reversed: y0 = {y0} > y1 = {y1}")));
    }
    let u0 = x + y0;
    if u0 < -1e-12 * (1.0 + x.abs().max(y0.abs())) {
        return Err(invalid(format!(
            "kernel argument x + y0 = {u0} is negative"
        )));
    }
    Ok(segment_integral_u(u0, y1 - y0, a, b, d))
}

/// `∫_{-x}^{λ} (x+y)^(d-1) f̂(y) dy` for the piecewise-linear interpolant `f̂`
/// (without the leading factor `d`). The kernel zero `y = -x` is always a
/// segment endpoint.
pub fn kernel_integral(f: &GridFunction, x: f64, d: f64) -> Result<f64> {
    check_d(d)?;
    let lambda = f.lambda;
    if !x.is_finite() || x < -lambda || x > lambda {
        return Err(invalid(format!("x = {x} outside [-{lambda}, {lambda}]")));
    }
    Ok(kernel_integral_unchecked(f, x, d))
}

pub(crate) fn kernel_integral_unchecked(f: &GridFunction, x: f64, d: f64) -> f64 {
    let lambda = f.lambda;
    let m = f.len();
    let h = f.step();
    let lower = -x;
    if lower >= lambda {
        return 0.0;
    }
    let vals = &f.values;
    let (k, t) = f.locate(lower);
    let slope = |j: usize| (vals[j + 1] - vals[j]) / h;

    // partial first segment [-x, x_{k+1}]
    let a = vals[k] + t * (vals[k + 1] - vals[k]);
    let mut total = segment_integral_u(0.0, (1.0 - t) * h, a, slope(k), d);
    for j in k + 1..m - 1 {
        let u0 = x + f.node(j);
        total += segment_integral_u(u0, h, vals[j], slope(j), d);
    }
    total
}

/// Precomputed hat-function moments of the kernel for a fixed grid and `d`.
///
/// When `x` is a grid node, `-x` is also a node and every segment maps to
/// `u ∈ [n h, (n+1) h]` for an integer offset `n`, so the kernel integral at
/// every node is a discrete correlation against these weights.
#[derive(Debug, Clone)]
pub struct KernelWeights {
    d: f64,
    lambda: f64,
    m: usize,
    /// `∫ u^(d-1) (1 - s/h)` over `[n h, (n+1) h]`, `s = u - n h`.
    left: Vec<f64>,
    /// `∫ u^(d-1) s/h` over the same segment.
    right: Vec<f64>,
}

impl KernelWeights {
    pub fn new(lambda: f64, m: usize, d: f64) -> Result<Self> {
        check_d(d)?;
        check_grid(lambda, m)?;
        let h = 2.0 * lambda / (m - 1) as f64;
        let (left, right) = (0..m - 1)
            .map(|n| {
                let u0 = n as f64 * h;
                let whole = segment_integral_u(u0, h, 1.0, 0.0, d);
                let right = segment_integral_u(u0, h, 0.0, 1.0 / h, d);
                (whole - right, right)
            })
            .unzip();
        Ok(Self {
            d,
            lambda,
            m,
            left,
            right,
        })
    }

    pub fn for_grid(f: &GridFunction, d: f64) -> Result<Self> {
        Self::new(f.lambda, f.len(), d)
    }

    pub fn d(&self) -> f64 {
        self.d
    }

    pub fn matches(&self, f: &GridFunction) -> bool {
        self.lambda == f.lambda && self.m == f.len()
    }

    /// Kernel integral at node `j` (equal to `kernel_integral(f, x_j, d)`).
    pub fn at_node(&self, values: &[f64], j: usize) -> f64 {
        let shift = self.m - 1 - j;
        let lo = &values[shift..];
        let hi = &values[shift + 1..];
        let mut acc = 0.0;
        for n in 0..j {
            acc += lo[n] * self.left[n] + hi[n] * self.right[n];
        }
        acc
    }

    /// Kernel integrals at every node.
    pub fn all_nodes(&self, f: &GridFunction) -> Result<Vec<f64>> {
        if !self.matches(f) {
            return Err(invalid("kernel weights were built for a different grid"));
        }
        Ok(self.all_nodes_unchecked(&f.values))
    }

    pub(crate) fn all_nodes_unchecked(&self, values: &[f64]) -> Vec<f64> {
        #[cfg(feature = "parallel")]
        {
            use rayon::prelude::*;
            if self.m >= 512 {
                return (0..self.m)
                    .into_par_iter()
                    .map(|j| self.at_node(values, j))
                    .collect();
            }
        }
        (0..self.m).map(|j| self.at_node(values, j)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_node() -> GridFunction {
        GridFunction::new(1.0, vec![0.8, 0.4]).unwrap()
    }

    #[test]
    fn eval_extension_rule() {
        let f = two_node();
        assert_eq!(f.eval(-1.0 - 5.0).unwrap(), 1.0);
        assert_eq!(f.eval(1.0 + 0.001).unwrap(), 0.0);
        assert!((f.eval(0.0).unwrap() - 0.6).abs() < 1e-15);
        // x = λ keeps the stored value
        assert_eq!(f.eval(1.0).unwrap(), 0.4);
        assert!(f.eval(f64::NAN).is_err());
        assert!(f.eval(f64::INFINITY).is_err());
    }

    #[test]
    fn construction_rejects_invalid() {
        assert!(GridFunction::new(1.0, vec![0.5]).is_err());
        assert!(GridFunction::new(0.0, vec![1.0, 0.5]).is_err());
        assert!(GridFunction::new(1.0, vec![1.0, 1.5]).is_err());
        assert!(GridFunction::new(1.0, vec![0.2, 0.3]).is_err());
        assert!(GridFunction::new(1.0, vec![0.5, f64::NAN]).is_err());
        assert!(GridFunction::new(1.0, vec![0.5, 0.5]).is_ok());
    }

    #[test]
    fn segment_integral_examples() {
        let v = segment_integral(0.0, 0.0, 1.0, 1.0, 0.0, 2.0).unwrap();
        assert!((v - 0.5).abs() < 1e-15);
        let v = segment_integral(0.0, 0.0, 1.0, 0.0, 1.0, 1.0).unwrap();
        assert!((v - 0.5).abs() < 1e-15);
        let v = segment_integral(1.0, 0.0, 1.0, 1.0, -1.0, 2.0).unwrap();
        assert!((v - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn segment_integral_errors() {
        assert!(segment_integral(0.0, 1.0, 0.0, 1.0, 0.0, 2.0).is_err());
        assert!(segment_integral(-1.0, 0.5, 1.0, 1.0, 0.0, 2.0).is_err());
        assert!(segment_integral(0.0, 0.0, 1.0, 1.0, 0.0, 0.5).is_err());
    }

    #[test]
    fn kernel_integral_examples() {
        let lambda = 3.0;
        let ones = GridFunction::constant(lambda, 61, 1.0).unwrap();
        let zeros = GridFunction::constant(lambda, 61, 0.0).unwrap();
        for d in [1.0, 1.5, 2.0, 3.0] {
            for x in [-3.0, -1.234, 0.0, 0.7, 3.0] {
                let exact = (x + lambda).powf(d) / d;
                let got = kernel_integral(&ones, x, d).unwrap();
                assert!((got - exact).abs() <= 1e-12 * exact.max(1.0), "d={d} x={x}");
                assert_eq!(kernel_integral(&zeros, x, d).unwrap(), 0.0);
            }
            assert_eq!(kernel_integral(&ones, -lambda, d).unwrap(), 0.0);
        }
        assert!(kernel_integral(&ones, 3.5, 2.0).is_err());
    }

    #[test]
    fn kernel_integral_exact_for_affine() {
        // f(y) = α + β y; with U = x + λ the integral is
        // (α - β x) U^d / d + β U^(d+1) / (d+1).
        let lambda = 5.0;
        let (alpha, beta) = (0.5, -0.09);
        let f = GridFunction::from_fn(lambda, 201, |y| alpha + beta * y).unwrap();
        for d in [1.0, 1.5, 2.0, 3.0] {
            for x in [-4.99, -2.5, -0.013, 0.0, 1.7, 4.2, 5.0] {
                let u = x + lambda;
                let exact = (alpha - beta * x) * u.powf(d) / d + beta * u.powf(d + 1.0) / (d + 1.0);
                let got = kernel_integral(&f, x, d).unwrap();
                let rel = (got - exact).abs() / exact.abs();
                assert!(rel <= 1e-12, "d={d} x={x}: {got} vs {exact} (rel {rel:e})");
            }
        }
    }

    #[test]
    fn weights_agree_with_segment_route() {
        let f = GridFunction::from_fn(4.0, 161, |x| 1.0 / (1.0 + x.exp())).unwrap();
        for d in [1.0, 1.5, 2.0, 3.0] {
            let w = KernelWeights::for_grid(&f, d).unwrap();
            let fast = w.all_nodes(&f).unwrap();
            for (j, x) in f.nodes().enumerate() {
                let slow = kernel_integral(&f, x, d).unwrap();
                assert!(
                    (fast[j] - slow).abs() <= 1e-12 * slow.max(1.0),
                    "d={d} j={j}: {} vs {slow}",
                    fast[j]
                );
            }
        }
    }

    #[test]
    fn refinement_is_second_order() {
        let lambda = 6.0;
        let logistic = |x: f64| 1.0 / (1.0 + x.exp());
        for d in [1.5, 2.0] {
            let at = |m: usize| {
                let f = GridFunction::from_fn(lambda, m, logistic).unwrap();
                kernel_integral(&f, 0.3, d).unwrap()
            };
            let (a, b, c) = (at(61), at(121), at(241));
            let ratio = (c - b) / (b - a);
            assert!((ratio - 0.25).abs() < 0.05, "d={d} ratio={ratio}");
        }
    }

    #[test]
    fn csv_round_trip_is_value_identical() {
        let f = GridFunction::from_fn(2.5, 37, |x| 1.0 / (1.0 + (1.3 * x).exp())).unwrap();
        let back = GridFunction::from_csv_str(&f.to_csv_string()).unwrap();
        assert_eq!(back, f);
        assert!(f.to_csv_string().starts_with("x,f\n"));
    }

    #[test]
    fn csv_rejects_garbage() {
        assert!(GridFunction::from_csv_str("a,b\n1,2\n").is_err());
        assert!(GridFunction::from_csv_str("x,f\n-1,1\n").is_err());
        assert!(GridFunction::from_csv_str("x,f\n-1,1\n0.3,0.5\n1,0.2\n").is_err());
    }
}
