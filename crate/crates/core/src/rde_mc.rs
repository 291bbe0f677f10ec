//! Population dynamics for the recursive distributional equation
//! `Z = min_i (ξ_i - Z_i)`, where `{ξ_i}` is a Poisson process of intensity
//! `d x^(d-1) dx` on `[0, ∞)` and the `Z_i` are iid copies of `Z`.
//!
//! The survival function `P(Z > x)` of a fixed point solves the cavity
//! equation, which makes the population an independent check on the
//! deterministic solver.

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, numerical, Result};
use crate::grid_fn::{check_d, GridFunction};
use crate::rng::stream;
use crate::stats::{dkw_epsilon, sorted_copy, survival_at};

/// Window doublings allowed within a single update.
pub const MAX_DOUBLINGS: u32 = 10;

/// How a sweep builds the next generation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    /// Every member is redrawn against the previous generation.
    #[default]
    Synchronous,
    /// Every member is kept with probability 1/2 and redrawn otherwise, so
    /// the new law is the average of the old law and its image. Plain
    /// replacement has a neutral shift mode (`Z - t` maps to `Z + t` in law)
    /// and settles on a shifted 2-cycle; averaging removes it.
    Averaged,
}

impl Scheme {
    pub fn name(self) -> &'static str {
        match self {
            Scheme::Synchronous => "synchronous",
            Scheme::Averaged => "averaged",
        }
    }
}

impl std::str::FromStr for Scheme {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "synchronous" => Ok(Scheme::Synchronous),
            "averaged" => Ok(Scheme::Averaged),
            other => Err(invalid(format!("unknown population scheme {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationState {
    pub d: f64,
    pub samples: Vec<f64>,
    #[serde(default)]
    pub scheme: Scheme,
    /// Poisson window used for the most recent sweep.
    pub xi_max: f64,
    pub seed: u64,
    pub sweeps_done: usize,
    /// Updates whose window had to be extended.
    pub overflow_count: u64,
    pub updates: u64,
}

impl PopulationState {
    /// Population of `size` zeros.
    pub fn new(d: f64, size: usize, seed: u64) -> Result<Self> {
        check_d(d)?;
        if size == 0 {
            return Err(invalid("population must be non-empty"));
        }
        Ok(Self {
            d,
            samples: vec![0.0; size],
            scheme: Scheme::Synchronous,
            xi_max: initial_window(d, size, 0.0),
            seed,
            sweeps_done: 0,
            overflow_count: 0,
            updates: 0,
        })
    }

    pub fn with_scheme(mut self, scheme: Scheme) -> Self {
        self.scheme = scheme;
        self
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Replaces the whole population by draws against the previous
    /// generation. Update `i` of sweep `s` uses its own stream
    /// `(seed, s, i)`, so the result does not depend on scheduling.
    pub fn sweep(&mut self) -> Result<()> {
        let prev = &self.samples;
        let max_z = prev.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let max_abs = prev.iter().fold(0.0f64, |a, z| a.max(z.abs()));
        let xi_max = initial_window(self.d, prev.len(), max_abs);
        let (d, seed, sweep) = (self.d, self.seed, self.sweeps_done as u64);
        let averaged = self.scheme == Scheme::Averaged;
        let one = |i: usize| {
            let mut rng = stream(seed, sweep, i as u64);
            if averaged && rng.random::<bool>() {
                return Ok((prev[i], 0, false));
            }
            draw(prev, max_z, d, xi_max, &mut rng).map(|(z, o)| (z, o, true))
        };

        #[cfg(feature = "parallel")]
        let draws: Vec<Result<(f64, u32, bool)>> = {
            use rayon::prelude::*;
            (0..prev.len()).into_par_iter().map(one).collect()
        };
        #[cfg(not(feature = "parallel"))]
        let draws: Vec<Result<(f64, u32, bool)>> = (0..prev.len()).map(one).collect();

        let mut next = Vec::with_capacity(prev.len());
        for r in draws {
            let (z, overflows, redrawn) = r?;
            next.push(z);
            self.overflow_count += u64::from(overflows > 0);
            self.updates += u64::from(redrawn);
        }
        self.samples = next;
        self.xi_max = xi_max;
        self.sweeps_done += 1;
        Ok(())
    }

    pub fn sorted_samples(&self) -> Vec<f64> {
        sorted_copy(&self.samples)
    }

    /// CSV with header `z` and one sample per row.
    pub fn samples_csv(&self) -> String {
        let mut s = String::with_capacity(26 * self.samples.len() + 2);
        s.push_str("z\n");
        for z in &self.samples {
            s.push_str(&format!("{z:.16e}\n"));
        }
        s
    }
}

/// `(e · ln(10⁴ P))^(1/d) + max|Z|`: with the uniform tail bound this keeps
/// the chance that the minimum lies beyond the window around `10⁻⁴ / P`.
pub fn initial_window(d: f64, population: usize, max_abs_z: f64) -> f64 {
    (std::f64::consts::E * (1e4 * population as f64).ln()).powf(1.0 / d) + max_abs_z
}

/// Points of the process on `[0, xi_max]`, unsorted.
pub fn sample_poisson_points<R: Rng + ?Sized>(
    d: f64,
    xi_max: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    check_d(d)?;
    if !(xi_max.is_finite() && xi_max > 0.0) {
        return Err(invalid(format!("window must be positive, got {xi_max}")));
    }
    let mut out = Vec::new();
    points_between(d, 0.0, xi_max, rng, &mut out)?;
    Ok(out)
}

/// Appends the points in `(a, b]`: `N ~ Poisson(b^d - a^d)` and, by inverse
/// CDF, `ξ = (a^d + U (b^d - a^d))^(1/d)`.
fn points_between<R: Rng + ?Sized>(
    d: f64,
    a: f64,
    b: f64,
    rng: &mut R,
    out: &mut Vec<f64>,
) -> Result<()> {
    let (ad, bd) = (a.powf(d), b.powf(d));
    let mass = bd - ad;
    if !(mass.is_finite() && mass > 0.0) {
        return Err(numerical(format!("Poisson mass {mass} on ({a}, {b}]")));
    }
    let count = Poisson::new(mass)
        .map_err(|e| numerical(format!("Poisson({mass}): {e}")))?
        .sample(rng) as usize;
    out.reserve(count);
    let inv_d = 1.0 / d;
    for _ in 0..count {
        let u: f64 = rng.random();
        out.push((ad + u * mass).powf(inv_d));
    }
    Ok(())
}

/// One draw of `min_i (ξ_i - Z_i)` against `population`; returns the value
/// and the number of window doublings it needed.
fn draw<R: Rng + ?Sized>(
    population: &[f64],
    max_z: f64,
    d: f64,
    xi_max: f64,
    rng: &mut R,
) -> Result<(f64, u32)> {
    let mut points = Vec::new();
    let mut lo = 0.0;
    let mut hi = xi_max;
    let mut best = f64::INFINITY;
    let mut doublings = 0;
    loop {
        let start = points.len();
        points_between(d, lo, hi, rng, &mut points)?;
        for &xi in &points[start..] {
            let z = population[rng.random_range(0..population.len())];
            best = best.min(xi - z);
        }
        // anything beyond `hi` is at least hi - max_z
        if best <= hi - max_z {
            return Ok((best, doublings));
        }
        doublings += 1;
        if doublings > MAX_DOUBLINGS {
            return Err(numerical(format!(
                "minimum not resolved after {MAX_DOUBLINGS} window doublings (window {hi})"
            )));
        }
        lo = hi;
        hi *= 2.0;
    }
}

/// Single update against the current generation; counts overflows on `state`.
pub fn update_one<R: Rng + ?Sized>(state: &mut PopulationState, rng: &mut R) -> Result<f64> {
    if state.samples.is_empty() {
        return Err(invalid("population must be non-empty"));
    }
    let max_z = state
        .samples
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    let (z, overflows) = draw(&state.samples, max_z, state.d, state.xi_max, rng)?;
    state.updates += 1;
    state.overflow_count += u64::from(overflows > 0);
    Ok(z)
}

/// All-zero start followed by `sweeps` synchronous generations.
pub fn run_population_dynamics(
    d: f64,
    size: usize,
    sweeps: usize,
    seed: u64,
) -> Result<PopulationState> {
    run_population_dynamics_with(d, size, sweeps, seed, Scheme::Synchronous)
}

pub fn run_population_dynamics_with(
    d: f64,
    size: usize,
    sweeps: usize,
    seed: u64,
    scheme: Scheme,
) -> Result<PopulationState> {
    let mut state = PopulationState::new(d, size, seed)?.with_scheme(scheme);
    for _ in 0..sweeps {
        state.sweep()?;
    }
    Ok(state)
}

/// `max_j |P̂(Z > x_j) - f(x_j)|` over the nodes of `f`.
pub fn survival_ks(state: &PopulationState, f: &GridFunction) -> f64 {
    survival_ks_sorted(&state.sorted_samples(), f)
}

pub fn survival_ks_sorted(sorted: &[f64], f: &GridFunction) -> f64 {
    f.nodes()
        .zip(f.values())
        .map(|(x, &v)| (survival_at(sorted, x) - v).abs())
        .fold(0.0, f64::max)
}

/// Summary written next to an exported population.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationSummary {
    pub d: f64,
    pub population: usize,
    pub scheme: Scheme,
    pub sweeps: usize,
    pub seed: u64,
    pub xi_max: f64,
    pub overflow_count: u64,
    pub updates: u64,
    pub mean: f64,
    pub median: f64,
    /// DKW half-width at 99% confidence for this population size.
    pub dkw_99: f64,
    /// KS distance to a reference survival function, when one was supplied.
    pub ks_vs_reference: Option<f64>,
}

impl PopulationSummary {
    pub fn new(state: &PopulationState, reference: Option<&GridFunction>) -> Self {
        let sorted = state.sorted_samples();
        let n = sorted.len();
        Self {
            d: state.d,
            population: n,
            scheme: state.scheme,
            sweeps: state.sweeps_done,
            seed: state.seed,
            xi_max: state.xi_max,
            overflow_count: state.overflow_count,
            updates: state.updates,
            mean: sorted.iter().sum::<f64>() / n as f64,
            median: sorted[n / 2],
            dkw_99: dkw_epsilon(n, 0.01),
            ks_vs_reference: reference.map(|f| survival_ks_sorted(&sorted, f)),
        }
    }
}
