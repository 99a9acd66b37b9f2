//! Solvers and tests checked against brute-force references.

use legible_core::mdp::{evaluate_deterministic, policy_iteration, solve, value_iteration, DeterministicPolicy};
use legible_core::stats::{exact_u_counts, mann_whitney_u, mann_whitney_u_with, Alternative};
use legible_core::{greedy_policy, TabularMDP, Transitions};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_mdp(rng: &mut ChaCha8Rng, ns: usize, na: usize, gamma: f64) -> TabularMDP {
    let mut p = vec![0.0; ns * na * ns];
    for row in p.chunks_mut(ns) {
        // Sparse-ish rows: each successor kept with probability one half.
        let mut total = 0.0;
        for x in row.iter_mut() {
            if rng.random_bool(0.5) {
                *x = rng.random::<f64>();
                total += *x;
            }
        }
        if total == 0.0 {
            row[rng.random_range(0..ns)] = 1.0;
            total = 1.0;
        }
        row.iter_mut().for_each(|x| *x /= total);
    }
    let r = (0..ns * na).map(|_| rng.random_range(-1.0..1.0)).collect();
    TabularMDP::new(ns, na, Transitions::Dense(p), r, gamma).unwrap()
}

/// `V^π = (I − γ P_π)^{-1} r_π` by LU.
fn dense_policy_values(mdp: &TabularMDP, policy: &[usize]) -> DVector<f64> {
    let ns = mdp.n_states();
    let Transitions::Dense(p) = mdp.transitions() else { unreachable!() };
    let mut a = DMatrix::<f64>::identity(ns, ns);
    let mut b = DVector::<f64>::zeros(ns);
    for x in 0..ns {
        let row = &p[(x * mdp.n_actions() + policy[x]) * ns..][..ns];
        for y in 0..ns {
            a[(x, y)] -= mdp.gamma() * row[y];
        }
        b[x] = mdp.reward(x, policy[x]);
    }
    a.lu().solve(&b).expect("I − γP is invertible")
}

/// Best policy over all `na^ns` deterministic policies, with its values.
fn enumerate_optimum(mdp: &TabularMDP) -> (Vec<usize>, DVector<f64>) {
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let mut policy = vec![0; ns];
    let mut best: Option<(Vec<usize>, DVector<f64>)> = None;
    loop {
        let v = dense_policy_values(mdp, &policy);
        if best.as_ref().is_none_or(|(_, bv)| v.sum() > bv.sum()) {
            best = Some((policy.clone(), v));
        }
        // Odometer over action choices.
        let mut i = 0;
        while i < ns {
            policy[i] += 1;
            if policy[i] < na {
                break;
            }
            policy[i] = 0;
            i += 1;
        }
        if i == ns {
            return best.expect("at least one policy");
        }
    }
}

#[test]
fn value_iteration_matches_policy_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..50 {
        let na = rng.random_range(1..=3);
        // Keep na^ns within reach of enumeration.
        let max_states = if na == 3 { 9 } else { 12 };
        let ns = rng.random_range(1..=max_states);
        let mdp = random_mdp(&mut rng, ns, na, 0.9);
        let q = value_iteration(&mdp, 1e-10).unwrap();
        let (policy, v) = enumerate_optimum(&mdp);
        assert_eq!(greedy_policy(&q).actions(), policy.as_slice());
        let p = match mdp.transitions() {
            Transitions::Dense(p) => p,
            _ => unreachable!(),
        };
        for x in 0..ns {
            for a in 0..na {
                let row = &p[(x * na + a) * ns..][..ns];
                let q_ref = mdp.reward(x, a) + 0.9 * row.iter().zip(v.iter()).map(|(p, v)| p * v).sum::<f64>();
                assert!((q.get(x, a) - q_ref).abs() < 1e-6);
            }
        }
    }
}

#[test]
fn deterministic_evaluation_matches_dense_solve() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..100 {
        let ns = rng.random_range(1..=30);
        let na = rng.random_range(1..=4);
        let next: Vec<u32> = (0..ns * na).map(|_| rng.random_range(0..ns as u32)).collect();
        let r: Vec<f64> = (0..ns * na).map(|_| rng.random_range(-1.0..1.0)).collect();
        let det = TabularMDP::new(ns, na, Transitions::Deterministic(next.clone()), r.clone(), 0.95).unwrap();
        let mut dense = vec![0.0; ns * na * ns];
        for (k, &y) in next.iter().enumerate() {
            dense[k * ns + y as usize] = 1.0;
        }
        let dense = TabularMDP::new(ns, na, Transitions::Dense(dense), r, 0.95).unwrap();
        let policy: Vec<usize> = (0..ns).map(|_| rng.random_range(0..na)).collect();
        let exact = evaluate_deterministic(&det, &DeterministicPolicy::new(policy.clone(), na).unwrap()).unwrap();
        let reference = dense_policy_values(&dense, &policy);
        for (a, b) in exact.iter().zip(reference.iter()) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
        let pi = policy_iteration(&det, None, 1000).unwrap();
        let vi = solve(&det, &Default::default(), None).unwrap().q.state_values();
        for (a, b) in pi.values.iter().zip(&vi) {
            assert!((a - b).abs() < 1e-6);
        }
    }
}

/// Every way to give `k` of the ranks `1..=n` to sample a.
fn rank_subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    for bits in 0u32..(1 << n) {
        if bits.count_ones() as usize == k {
            out.push((0..n).filter(|i| bits & (1 << i) != 0).map(|i| i + 1).collect());
        }
    }
    out
}

fn u_of(ranks_a: &[usize]) -> usize {
    let k = ranks_a.len();
    ranks_a.iter().sum::<usize>() - k * (k + 1) / 2
}

#[test]
fn exact_u_test_matches_permutation_enumeration() {
    for k in 1..=6 {
        let n = 2 * k;
        let subsets = rank_subsets(n, k);
        let us: Vec<usize> = subsets.iter().map(|s| u_of(s)).collect();
        let total = us.len() as f64;
        let mut hist = vec![0.0; k * k + 1];
        for &u in &us {
            hist[u] += 1.0;
        }
        assert_eq!(exact_u_counts(k, k), hist);
        for (ranks, &u) in subsets.iter().zip(&us) {
            let a: Vec<f64> = ranks.iter().map(|&r| r as f64).collect();
            let b: Vec<f64> = (1..=n).filter(|r| !ranks.contains(r)).map(|r| r as f64).collect();
            let lower = us.iter().filter(|&&v| v <= u).count() as f64 / total;
            let upper = us.iter().filter(|&&v| v >= u).count() as f64 / total;
            let two = mann_whitney_u(&a, &b).unwrap();
            assert!(two.exact);
            assert_eq!(two.u, u as f64);
            assert!((two.p - (2.0 * lower.min(upper)).min(1.0)).abs() < 1e-12);
            let less = mann_whitney_u_with(&a, &b, Alternative::Less).unwrap();
            assert!((less.p - lower).abs() < 1e-12);
            let greater = mann_whitney_u_with(&a, &b, Alternative::Greater).unwrap();
            assert!((greater.p - upper).abs() < 1e-12);
        }
    }
}

#[test]
fn u_statistics_add_up_on_tied_samples() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..1000 {
        let na = rng.random_range(1..40);
        let nb = rng.random_range(1..40);
        let a: Vec<f64> = (0..na).map(|_| rng.random_range(0..6) as f64).collect();
        let b: Vec<f64> = (0..nb).map(|_| rng.random_range(0..6) as f64).collect();
        let ua = mann_whitney_u(&a, &b).unwrap().u;
        let ub = mann_whitney_u(&b, &a).unwrap().u;
        assert_eq!(ua + ub, (na * nb) as f64);
    }
}
