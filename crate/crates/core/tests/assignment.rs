use cavity_core::assign_mc::{
    dual_certificate_defect, sample_costs, solve_assignment, CostLaw, CostMatrix, CostMatrixSpec,
};
use cavity_core::rng::stream;
use rand::seq::SliceRandom;

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}

#[test]
fn matches_exhaustive_search_up_to_eight() {
    for n in 1..=8 {
        let perms = permutations(n);
        for k in 0..5 {
            let spec = CostMatrixSpec::new(n, 1.5, CostLaw::Power, 1).unwrap();
            let c = sample_costs(&spec, &mut stream(1, n as u64, k)).unwrap();
            let best = perms
                .iter()
                .map(|p| c.cost_of(p))
                .fold(f64::INFINITY, f64::min);
            let a = solve_assignment(&c).unwrap();
            assert_eq!(a.total, best, "n={n} k={k}");
        }
    }
}

#[test]
fn beats_random_permutations_and_carries_a_certificate() {
    let mut rng = stream(2, 0, 0);
    for k in 0..20 {
        let n = 10 + 9 * k;
        let spec = CostMatrixSpec::new(n, 2.0, CostLaw::Power, 2).unwrap();
        let c = sample_costs(&spec, &mut stream(2, n as u64, k as u64)).unwrap();
        let a = solve_assignment(&c).unwrap();
        let mut seen = vec![false; n];
        for &j in &a.row_to_col {
            assert!(!seen[j]);
            seen[j] = true;
        }
        let mut p: Vec<usize> = (0..n).collect();
        for _ in 0..100 {
            p.shuffle(&mut rng);
            assert!(a.total <= c.cost_of(&p));
        }
        assert!(dual_certificate_defect(&c, &a) <= 1e-9 * n as f64);
    }
}

#[test]
fn handles_ties_and_negative_costs() {
    let c =
        CostMatrix::from_rows(&[vec![0.0; 4], vec![0.0; 4], vec![0.0; 4], vec![0.0; 4]]).unwrap();
    assert_eq!(solve_assignment(&c).unwrap().total, 0.0);
    let c = CostMatrix::from_rows(&[
        vec![-1.0, 2.0, 5.0],
        vec![2.0, -3.0, 1.0],
        vec![4.0, 0.0, -2.0],
    ])
    .unwrap();
    let a = solve_assignment(&c).unwrap();
    assert_eq!(a.row_to_col, vec![0, 1, 2]);
    assert_eq!(a.total, -6.0);
    assert!(dual_certificate_defect(&c, &a) < 1e-12);
}
