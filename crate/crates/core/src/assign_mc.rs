//! Random assignment instances: iid costs with `P(X <= x) ~ x^d`, exact
//! optimal assignment by shortest augmenting paths, and Monte Carlo
//! statistics of `M_n / n^(1 - 1/d)`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::grid_fn::check_d;
use crate::rng::stream;
use crate::stats::mean_stderr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CostLaw {
    /// `X = U^(1/d)`, so `P(X <= x) = x^d` on `[0, 1]`.
    Power,
    /// Rate-1 exponential; only meaningful for `d = 1`.
    Exponential,
}

impl CostLaw {
    pub fn name(self) -> &'static str {
        match self {
            CostLaw::Power => "power",
            CostLaw::Exponential => "exponential",
        }
    }
}

impl std::str::FromStr for CostLaw {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "power" => Ok(CostLaw::Power),
            "exponential" | "exp" => Ok(CostLaw::Exponential),
            other => Err(invalid(format!("unknown cost law {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostMatrixSpec {
    pub n: usize,
    pub d: f64,
    pub law: CostLaw,
    pub seed: u64,
}

impl CostMatrixSpec {
    pub fn new(n: usize, d: f64, law: CostLaw, seed: u64) -> Result<Self> {
        let s = Self { n, d, law, seed };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        check_d(self.d)?;
        if self.n == 0 {
            return Err(invalid("n must be at least 1"));
        }
        if self.law == CostLaw::Exponential && self.d != 1.0 {
            return Err(invalid("the exponential law is only available with d = 1"));
        }
        Ok(())
    }
}

/// Dense row-major `n × n` cost matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    n: usize,
    data: Vec<f64>,
}

impl CostMatrix {
    pub fn new(n: usize, data: Vec<f64>) -> Result<Self> {
        if n == 0 || data.len() != n * n {
            return Err(invalid(format!(
                "expected {n}×{n} entries, got {}",
                data.len()
            )));
        }
        Ok(Self { n, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(invalid("cost matrix must be square"));
        }
        Self::new(n, rows.concat())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    /// `Σ_i c[i][perm[i]]`, summed in row order.
    pub fn cost_of(&self, perm: &[usize]) -> f64 {
        perm.iter().enumerate().map(|(i, &j)| self.get(i, j)).sum()
    }
}

pub fn sample_costs<R: Rng + ?Sized>(spec: &CostMatrixSpec, rng: &mut R) -> Result<CostMatrix> {
    spec.validate()?;
    let inv_d = 1.0 / spec.d;
    let data = (0..spec.n * spec.n)
        .map(|_| {
            let u: f64 = rng.random();
            match spec.law {
                CostLaw::Power => u.powf(inv_d),
                CostLaw::Exponential => -(-u).ln_1p(),
            }
        })
        .collect();
    CostMatrix::new(spec.n, data)
}

/// Optimal assignment with its dual potentials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    /// `row_to_col[i]` is the column matched to row `i`.
    pub row_to_col: Vec<usize>,
    pub total: f64,
    /// Row potentials `u`: `u_i + v_j <= c_ij`, with equality on the matching.
    pub row_duals: Vec<f64>,
    pub col_duals: Vec<f64>,
}

/// Exact minimum-cost perfect matching (Hungarian method in its
/// shortest-augmenting-path form, O(n³)).
pub fn solve_assignment(costs: &CostMatrix) -> Result<Assignment> {
    if let Some(v) = costs.data.iter().find(|v| !v.is_finite()) {
        return Err(invalid(format!("cost entry {v} is not finite")));
    }
    let n = costs.n;
    // 1-based; column 0 is the virtual source of each augmentation
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut col_owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    let mut minv = vec![0.0; n + 1];
    let mut used = vec![false; n + 1];

    for i in 1..=n {
        col_owner[0] = i;
        let mut j0 = 0;
        minv.fill(f64::INFINITY);
        used.fill(false);
        loop {
            used[j0] = true;
            let i0 = col_owner[j0];
            let row = costs.row(i0 - 1);
            let ui0 = u[i0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = row[j - 1] - ui0 - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[col_owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if col_owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            col_owner[j0] = col_owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut row_to_col = vec![0; n];
    for j in 1..=n {
        row_to_col[col_owner[j] - 1] = j - 1;
    }
    Ok(Assignment {
        total: costs.cost_of(&row_to_col),
        row_to_col,
        row_duals: u[1..].to_vec(),
        col_duals: v[1..].to_vec(),
    })
}

/// Largest violation of the LP optimality conditions: dual feasibility
/// `u_i + v_j <= c_ij`, complementary slackness on the matching, and
/// `Σu + Σv = total`.
pub fn dual_certificate_defect(costs: &CostMatrix, a: &Assignment) -> f64 {
    let n = costs.n;
    let mut worst: f64 = 0.0;
    for i in 0..n {
        let row = costs.row(i);
        for (c, v) in row.iter().zip(&a.col_duals) {
            worst = worst.max(a.row_duals[i] + v - c);
        }
        let j = a.row_to_col[i];
        worst = worst.max((a.row_duals[i] + a.col_duals[j] - row[j]).abs());
    }
    let dual_obj: f64 = a.row_duals.iter().sum::<f64>() + a.col_duals.iter().sum::<f64>();
    worst.max((dual_obj - a.total).abs())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssignmentEstimate {
    pub n: usize,
    pub d: f64,
    pub law: CostLaw,
    pub samples: usize,
    /// Mean of `M_n / n^(1 - 1/d)`.
    pub mean: f64,
    pub stderr: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub values: Option<Vec<f64>>,
}

impl AssignmentEstimate {
    pub const CSV_HEADER: &'static str = "n,d,law,samples,mean,stderr";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{:.16e},{:.16e}",
            self.n,
            self.d,
            self.law.name(),
            self.samples,
            self.mean,
            self.stderr
        )
    }
}

/// Instance `k` draws its costs from stream `(seed, n, k)`; values are
/// reduced in index order, so the estimate does not depend on scheduling.
pub fn estimate_limit(
    spec: &CostMatrixSpec,
    samples: usize,
    keep_values: bool,
) -> Result<AssignmentEstimate> {
    spec.validate()?;
    if samples == 0 {
        return Err(invalid("need at least one sample"));
    }
    let scale = (spec.n as f64).powf(1.0 - 1.0 / spec.d);
    let one = |k: usize| -> Result<f64> {
        let mut rng = stream(spec.seed, spec.n as u64, k as u64);
        let costs = sample_costs(spec, &mut rng)?;
        Ok(solve_assignment(&costs)?.total / scale)
    };

    #[cfg(feature = "parallel")]
    let values = {
        use rayon::prelude::*;
        (0..samples)
            .into_par_iter()
            .map(one)
            .collect::<Result<Vec<_>>>()?
    };
    #[cfg(not(feature = "parallel"))]
    let values = (0..samples).map(one).collect::<Result<Vec<_>>>()?;

    let (mean, stderr) = mean_stderr(&values);
    Ok(AssignmentEstimate {
        n: spec.n,
        d: spec.d,
        law: spec.law,
        samples,
        mean,
        stderr,
        values: keep_values.then_some(values),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::{ks_statistic, sorted_copy};

    #[test]
    fn tiny_instances() {
        let a = solve_assignment(&CostMatrix::from_rows(&[vec![3.5]]).unwrap()).unwrap();
        assert_eq!(a.row_to_col, vec![0]);
        assert_eq!(a.total, 3.5);
        let c = CostMatrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 1.0]]).unwrap();
        let a = solve_assignment(&c).unwrap();
        assert_eq!(a.row_to_col, vec![0, 1]);
        assert_eq!(a.total, 2.0);
        assert!(dual_certificate_defect(&c, &a) < 1e-12);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(CostMatrix::from_rows(&[vec![1.0, 2.0]]).is_err());
        let c = CostMatrix::from_rows(&[vec![1.0, f64::NAN], vec![0.0, 1.0]]).unwrap();
        assert!(solve_assignment(&c).is_err());
        assert!(CostMatrixSpec::new(3, 2.0, CostLaw::Exponential, 0).is_err());
        assert!(CostMatrixSpec::new(0, 1.0, CostLaw::Power, 0).is_err());
    }

    #[test]
    fn power_law_sampling() {
        let spec = CostMatrixSpec::new(316, 2.0, CostLaw::Power, 1).unwrap();
        let c = sample_costs(&spec, &mut stream(1, 0, 0)).unwrap();
        let xs = sorted_copy(&c.data);
        let ks = ks_statistic(&xs, |x| (x * x).clamp(0.0, 1.0));
        assert!(ks < 0.01, "{ks}");
        // inverse CDF at U = 0.25
        assert_eq!(0.25f64.powf(1.0 / 2.0), 0.5);
    }

    #[test]
    fn single_entry_means() {
        let p = estimate_limit(
            &CostMatrixSpec::new(1, 1.0, CostLaw::Power, 3).unwrap(),
            20_000,
            false,
        )
        .unwrap();
        assert!((p.mean - 0.5).abs() < 4.0 * p.stderr);
        let e = estimate_limit(
            &CostMatrixSpec::new(1, 1.0, CostLaw::Exponential, 3).unwrap(),
            20_000,
            false,
        )
        .unwrap();
        assert!((e.mean - 1.0).abs() < 4.0 * e.stderr);
    }

    #[test]
    fn exponential_mean_matches_finite_n_formula() {
        // E[M_n] = Σ_{k<=n} 1/k² for rate-1 exponential costs
        let n = 10;
        let exact: f64 = (1..=n).map(|k| 1.0 / (k * k) as f64).sum();
        let e = estimate_limit(
            &CostMatrixSpec::new(n, 1.0, CostLaw::Exponential, 8).unwrap(),
            4000,
            false,
        )
        .unwrap();
        assert!(
            (e.mean - exact).abs() < 4.0 * e.stderr,
            "{} ± {} vs {exact}",
            e.mean,
            e.stderr
        );
    }

    #[test]
    fn estimate_is_reproducible() {
        let spec = CostMatrixSpec::new(20, 2.0, CostLaw::Power, 77).unwrap();
        let a = estimate_limit(&spec, 50, true).unwrap();
        let b = estimate_limit(&spec, 50, true).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.values.as_ref().unwrap().len(), 50);
    }
}
