//! WebAssembly bindings for the browser demo in `www/`.
//!
//! Three operations: solve the truncated equation and return the curve with
//! its certified envelope, sweep the energy over λ, and run population
//! dynamics against the solver's curve.

use cavity_core::cavity::{solve_truncated, CavityParams};
use cavity_core::grid_fn::GridFunction;
use cavity_core::limit::{energy, lambda_sweep};
use cavity_core::rde_mc::{run_population_dynamics_with, survival_ks_sorted, Scheme};
use cavity_core::stats::{dkw_epsilon, survival_at};
use wasm_bindgen::prelude::*;

/// Iteration cap for the browser: the averaged iteration needs a few
/// hundred steps at most, and the page should stay responsive.
const MAX_ITER: usize = 2000;

fn js_err(e: cavity_core::Error) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen]
pub struct Solution {
    d: f64,
    lambda: f64,
    nodes: Vec<f64>,
    f: Vec<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    energy: f64,
    energy_tail: f64,
    f_at_0: f64,
    iterations: usize,
    gap: f64,
    residual: f64,
    converged: bool,
    solved: bool,
}

#[wasm_bindgen]
impl Solution {
    #[wasm_bindgen(getter)]
    pub fn d(&self) -> f64 {
        self.d
    }
    #[wasm_bindgen(getter)]
    pub fn lambda(&self) -> f64 {
        self.lambda
    }
    #[wasm_bindgen(getter)]
    pub fn nodes(&self) -> Vec<f64> {
        self.nodes.clone()
    }
    #[wasm_bindgen(getter)]
    pub fn f(&self) -> Vec<f64> {
        self.f.clone()
    }
    #[wasm_bindgen(getter)]
    pub fn lower(&self) -> Vec<f64> {
        self.lower.clone()
    }
    #[wasm_bindgen(getter)]
    pub fn upper(&self) -> Vec<f64> {
        self.upper.clone()
    }
    #[wasm_bindgen(getter)]
    pub fn energy(&self) -> f64 {
        self.energy
    }
    #[wasm_bindgen(getter = energyTail)]
    pub fn energy_tail(&self) -> f64 {
        self.energy_tail
    }
    #[wasm_bindgen(getter = fAt0)]
    pub fn f_at_0(&self) -> f64 {
        self.f_at_0
    }
    #[wasm_bindgen(getter)]
    pub fn iterations(&self) -> usize {
        self.iterations
    }
    #[wasm_bindgen(getter)]
    pub fn gap(&self) -> f64 {
        self.gap
    }
    #[wasm_bindgen(getter)]
    pub fn residual(&self) -> f64 {
        self.residual
    }
    #[wasm_bindgen(getter)]
    pub fn converged(&self) -> bool {
        self.converged
    }
    #[wasm_bindgen(getter)]
    pub fn solved(&self) -> bool {
        self.solved
    }
}

fn solve_inner(
    d: f64,
    lambda: f64,
    grid_step: f64,
    tol: f64,
) -> cavity_core::Result<(Solution, GridFunction)> {
    let p = CavityParams::with_grid_step(d, lambda, grid_step, tol, MAX_ITER)?;
    let r = solve_truncated(&p)?;
    let e = energy(&r.f, d)?;
    let s = Solution {
        d,
        lambda,
        nodes: r.f.nodes().collect(),
        f: r.f.values().to_vec(),
        lower: r.envelope.lower.values().to_vec(),
        upper: r.envelope.upper.values().to_vec(),
        energy: e.value,
        energy_tail: e.tail_remainder_bound,
        f_at_0: r.f.eval(0.0)?,
        iterations: r.iterations,
        gap: r.envelope.gap,
        residual: r.residual,
        converged: r.converged,
        solved: r.solved,
    };
    Ok((s, r.f))
}

/// Solves the truncated equation on a grid of step `grid_step`.
#[wasm_bindgen]
pub fn solve(d: f64, lambda: f64, grid_step: f64, tol: f64) -> Result<Solution, JsError> {
    solve_inner(d, lambda, grid_step, tol)
        .map(|(s, _)| s)
        .map_err(js_err)
}

#[wasm_bindgen]
pub struct Sweep {
    lambdas: Vec<f64>,
    energies: Vec<f64>,
    tail_bounds: Vec<f64>,
    f_at_0: Vec<f64>,
}

#[wasm_bindgen]
impl Sweep {
    #[wasm_bindgen(getter)]
    pub fn lambdas(&self) -> Vec<f64> {
        self.lambdas.clone()
    }
    #[wasm_bindgen(getter)]
    pub fn energies(&self) -> Vec<f64> {
        self.energies.clone()
    }
    #[wasm_bindgen(getter = tailBounds)]
    pub fn tail_bounds(&self) -> Vec<f64> {
        self.tail_bounds.clone()
    }
    #[wasm_bindgen(getter = fAt0)]
    pub fn f_at_0(&self) -> Vec<f64> {
        self.f_at_0.clone()
    }
}

fn sweep_inner(d: f64, lambdas: &[f64], grid_step: f64, tol: f64) -> cavity_core::Result<Sweep> {
    let rep = lambda_sweep(d, lambdas, grid_step, tol, MAX_ITER)?;
    Ok(Sweep {
        lambdas: rep.rows.iter().map(|r| r.lambda).collect(),
        energies: rep.rows.iter().map(|r| r.energy.value).collect(),
        tail_bounds: rep
            .rows
            .iter()
            .map(|r| r.energy.tail_remainder_bound)
            .collect(),
        f_at_0: rep.rows.iter().map(|r| r.f_at_0).collect(),
    })
}

/// Energy `-d ∫ f ln f` of the truncated solution at each λ.
#[wasm_bindgen]
pub fn sweep(d: f64, lambdas: Vec<f64>, grid_step: f64, tol: f64) -> Result<Sweep, JsError> {
    sweep_inner(d, &lambdas, grid_step, tol).map_err(js_err)
}

#[wasm_bindgen]
pub struct Population {
    nodes: Vec<f64>,
    solver: Vec<f64>,
    empirical: Vec<f64>,
    ks: f64,
    dkw_99: f64,
}

#[wasm_bindgen]
impl Population {
    /// Nodes where both survival functions are evaluated.
    #[wasm_bindgen(getter)]
    pub fn nodes(&self) -> Vec<f64> {
        self.nodes.clone()
    }
    #[wasm_bindgen(getter)]
    pub fn solver(&self) -> Vec<f64> {
        self.solver.clone()
    }
    /// Empirical `P(Z > x)` of the final population.
    #[wasm_bindgen(getter)]
    pub fn empirical(&self) -> Vec<f64> {
        self.empirical.clone()
    }
    #[wasm_bindgen(getter)]
    pub fn ks(&self) -> f64 {
        self.ks
    }
    #[wasm_bindgen(getter = dkw99)]
    pub fn dkw_99(&self) -> f64 {
        self.dkw_99
    }
}

fn population_inner(
    d: f64,
    lambda: f64,
    size: usize,
    sweeps: usize,
    seed: u64,
    averaged: bool,
) -> cavity_core::Result<Population> {
    let (_, f) = solve_inner(d, lambda, 0.02, 1e-8)?;
    let scheme = if averaged {
        Scheme::Averaged
    } else {
        Scheme::Synchronous
    };
    let st = run_population_dynamics_with(d, size, sweeps, seed, scheme)?;
    let sorted = st.sorted_samples();
    // thin the grid to keep the plot light
    let stride = (f.len() / 400).max(1);
    let idx: Vec<usize> = (0..f.len()).step_by(stride).collect();
    Ok(Population {
        nodes: idx.iter().map(|&j| f.node(j)).collect(),
        solver: idx.iter().map(|&j| f.values()[j]).collect(),
        empirical: idx
            .iter()
            .map(|&j| survival_at(&sorted, f.node(j)))
            .collect(),
        ks: survival_ks_sorted(&sorted, &f),
        dkw_99: dkw_epsilon(size, 0.01),
    })
}

/// Population dynamics from all zeros, compared with the solver at `lambda`.
#[wasm_bindgen]
pub fn population(
    d: f64,
    lambda: f64,
    size: usize,
    sweeps: usize,
    seed: u64,
    averaged: bool,
) -> Result<Population, JsError> {
    population_inner(d, lambda, size, sweeps, seed, averaged).map_err(js_err)
}
