use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use resalloc::actuation::{verify_sign_preserving, Actuation};
use resalloc::costs::{make_f2_costs, F2Ranges};
use resalloc::dynamics::{feasibility_residual, project_feasible, rhs, AllocationProblem, StateMatrix};
use resalloc::harness::{init_feasible, InitMode};
use resalloc::netgraph::{build_erdos_renyi, WeightRange};
use resalloc::oracle::{solve_kkt, solve_kkt_with, KktOptions, DEFAULT_TOL};

fn actuation() -> impl Strategy<Value = Actuation> {
    prop_oneof![
        Just(Actuation::Identity),
        (0.0..3.0f64).prop_map(|mu| Actuation::power_sign(mu).unwrap()),
        (0.1..1.0f64, 1.0..3.0f64).prop_map(|(a, b)| Actuation::fixed_time(a, b).unwrap()),
        (0.05..2.0f64).prop_map(|d| Actuation::uniform_quantizer(d).unwrap()),
        (0.05..2.0f64).prop_map(|d| Actuation::log_quantizer(d).unwrap()),
        (0.05..0.95f64, 0.01..1.0f64).prop_map(|(e, t)| Actuation::robust_uniform(e, t).unwrap()),
        (0.05..0.95f64).prop_map(|e| Actuation::robust_laplace(e).unwrap()),
        (0.1..5.0f64).prop_map(|k| Actuation::saturation(k).unwrap()),
    ]
}

fn f2_problem(n: usize, d: usize, seed: u64) -> AllocationProblem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = (0..n).map(|_| rng.random_range(0.1..1.0)).collect();
    let b = (0..d).map(|_| rng.random_range(-20.0..20.0)).collect();
    AllocationProblem::new(make_f2_costs(n, d, F2Ranges::default(), seed).unwrap(), a, b).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn actuation_is_odd_and_sign_preserving(g in actuation(), dim in 1usize..5, seed in any::<u64>()) {
        let r = verify_sign_preserving(&g, dim, 32, seed);
        prop_assert!(r.passes(), "{g:?}: {r:?}");
    }

    #[test]
    fn composition_stays_sign_preserving(g in actuation(), h in actuation(), seed in any::<u64>()) {
        let c = Actuation::compose(g, h);
        prop_assert!(verify_sign_preserving(&c, 3, 32, seed).passes());
    }

    #[test]
    fn flow_is_orthogonal_to_coupling(
        n in 2usize..15, d in 1usize..4, p in 0.1..1.0f64, seed in any::<u64>(), g in actuation()
    ) {
        let problem = f2_problem(n, d, seed);
        let x = init_feasible(&problem, InitMode::RandomFeasible, 3.0, seed).unwrap();
        let graph = build_erdos_renyi(n, p, WeightRange::default(), seed).unwrap();
        let r = rhs(&x, &graph, &problem, &g);
        let scale: f64 = r.as_slice().iter().zip((0..n).flat_map(|i| std::iter::repeat_n(problem.a()[i], d)))
            .map(|(v, a)| (v * a).abs()).sum::<f64>().max(1.0);
        for s in r.weighted_sum(problem.a()) {
            prop_assert!(s.abs() <= 1e-12 * scale, "{s}");
        }
    }

    #[test]
    fn projection_restores_feasibility(n in 2usize..20, d in 1usize..5, seed in any::<u64>()) {
        let problem = f2_problem(n, d, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        let data = (0..n * d).map(|_| rng.random_range(-100.0..100.0)).collect();
        let mut x = StateMatrix::from_columns(d, n, data).unwrap();
        project_feasible(&mut x, &problem);
        prop_assert!(feasibility_residual(&x, &problem) <= 1e-12 * (1.0 + problem.b_norm()) * 100.0);
    }
}

#[test]
fn oracle_is_independent_of_bracket() {
    for seed in 0..20 {
        let problem = f2_problem(15, 3, seed);
        let base = solve_kkt(&problem, DEFAULT_TOL).unwrap();
        for bracket in [1e-3, 0.5, 7.0, 1e3] {
            let other = solve_kkt_with(&problem, KktOptions { tol: DEFAULT_TOL, initial_bracket: bracket }).unwrap();
            assert!(other.x_star.max_abs_diff(&base.x_star) <= 10.0 * DEFAULT_TOL.max(1e-11), "seed {seed}");
        }
    }
}

#[test]
fn oracle_gradients_align_with_coupling() {
    for seed in 0..20 {
        let problem = f2_problem(25, 4, seed);
        let sol = solve_kkt(&problem, DEFAULT_TOL).unwrap();
        let psi = problem.scaled_gradients(&sol.x_star);
        for p in 0..problem.d() {
            let (lo, hi) = (0..problem.n())
                .map(|i| psi.get(p, i))
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(v), h.max(v)));
            assert!(hi - lo <= 1e-9, "seed {seed} coordinate {p}: spread {}", hi - lo);
        }
    }
}

#[test]
fn oracle_beats_feasible_perturbations() {
    let problem = f2_problem(12, 3, 5);
    let sol = solve_kkt(&problem, DEFAULT_TOL).unwrap();
    let best = problem.static_value(&sol.x_star);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let zero_b = AllocationProblem::new(problem.costs().to_vec(), problem.a().to_vec(), vec![0.0; 3]).unwrap();
    for _ in 0..100 {
        let data = (0..36).map(|_| rng.random_range(-0.5..0.5)).collect();
        let mut delta = StateMatrix::from_columns(3, 12, data).unwrap();
        project_feasible(&mut delta, &zero_b);
        let trial = StateMatrix::from_columns(
            3,
            12,
            sol.x_star.as_slice().iter().zip(delta.as_slice()).map(|(a, b)| a + b).collect(),
        )
        .unwrap();
        assert!(problem.static_value(&trial) > best);
    }
}
