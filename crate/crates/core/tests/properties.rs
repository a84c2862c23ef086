use graphmtl::data::{Dataset, Sample, Split};
use graphmtl::delay::theorem7_bound;
use graphmtl::graph::{knn_graph, TaskGraph};
use graphmtl::harness::config::{AlgorithmId, ExperimentConfig, RegSpec};
use graphmtl::losses::{estimate_constants, local_prox, loss_grad, loss_value, LossKind};
use graphmtl::objective::{centralized_oracle, from_u_space, to_u_space, Hyperparams, Problem};
use graphmtl::synthdata::{generate_world, TaskSpec};
use graphmtl::trace::{read_trace_csv, RunTrace, TraceRow};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn adjacency(m: usize) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(prop_oneof![Just(0.0), 0.1f64..3.0], m * m).prop_map(move |v| {
        let mut a = DMatrix::from_vec(m, m, v);
        a = (&a + a.transpose()) * 0.5;
        a.fill_diagonal(0.0);
        a
    })
}

fn graph() -> impl Strategy<Value = TaskGraph> {
    (2usize..7).prop_flat_map(adjacency).prop_map(|a| TaskGraph::from_adjacency(a).unwrap())
}

fn matrix(r: usize, c: usize, scale: f64) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(-scale..scale, r * c).prop_map(move |v| DMatrix::from_vec(r, c, v))
}

fn dataset(n: usize, d: usize, logistic: bool) -> impl Strategy<Value = Dataset> {
    (matrix(n, d, 1.0), prop::collection::vec(-2.0f64..2.0, n)).prop_map(move |(x, y)| {
        let y = y.into_iter().map(|v| if logistic { v.signum() } else { v }).collect::<Vec<_>>();
        Dataset::new(x, DVector::from_vec(y), Split::Train).unwrap()
    })
}

fn kind() -> impl Strategy<Value = LossKind> {
    prop_oneof![Just(LossKind::Squared), Just(LossKind::Logistic)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn laplacian_annihilates_ones_and_is_psd(g in graph()) {
        let ones = DVector::from_element(g.m(), 1.0);
        prop_assert!((g.laplacian() * ones).amax() < 1e-12);
        prop_assert_eq!(g.eigenvalues()[0], 0.0);
        prop_assert!(g.eigenvalues().iter().all(|&l| l >= 0.0));
        prop_assert!((g.laplacian() - g.laplacian().transpose()).amax() == 0.0);
    }

    #[test]
    fn coupling_trace_matches_spectrum(g in graph(), kappa in 0.0f64..50.0) {
        let c = g.coupling(kappa).unwrap();
        let from_spectrum: f64 = g.eigenvalues().iter().map(|l| 1.0 / (1.0 + kappa * l)).sum();
        prop_assert!((c.inverse().trace() - from_spectrum).abs() < 1e-8);
        prop_assert!((c.trace_inverse() - from_spectrum).abs() < 1e-8);
    }

    #[test]
    fn one_plus_m_rho_is_trace_of_inverse(g in graph(), b in 0.1f64..3.0, s in 0.1f64..3.0) {
        let m = g.m() as f64;
        let kappa = m * b * b / (s * s);
        let lhs = 1.0 + m * g.rho(b, s).unwrap();
        let rhs = g.coupling(kappa).unwrap().inverse().trace();
        prop_assert!((lhs - rhs).abs() < 1e-8 * rhs);
    }

    #[test]
    fn rho_strictly_decreases_in_b_over_s(g in graph()) {
        prop_assume!(g.lambda_max() > 0.0);
        let rhos: Vec<f64> = (0..10).map(|k| g.rho(10f64.powf(k as f64 / 3.0 - 1.5), 1.0).unwrap()).collect();
        prop_assert!(rhos.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn knn_is_symmetric_binary_with_min_degree(p in matrix(3, 9, 5.0), k in 1usize..8) {
        let a = knn_graph(&p, k).unwrap();
        prop_assert_eq!(&a, &a.transpose());
        prop_assert!(a.iter().all(|&v| v == 0.0 || v == 1.0));
        prop_assert!((0..9).all(|i| a[(i, i)] == 0.0));
        prop_assert!(a.column_iter().all(|c| c.sum() >= k as f64));
    }

    #[test]
    fn losses_are_convex(kind in kind(), w1 in matrix(4, 1, 3.0), w2 in matrix(4, 1, 3.0), x in matrix(4, 1, 2.0), y in -2.0f64..2.0, t in 0.0f64..1.0) {
        let y = if kind == LossKind::Logistic { y.signum() } else { y };
        let z = Sample::new(x.column(0).into_owned(), y);
        let (a, b) = (w1.column(0).into_owned(), w2.column(0).into_owned());
        let mix = &a * t + &b * (1.0 - t);
        let lhs = loss_value(kind, &mix, &z).unwrap();
        let rhs = t * loss_value(kind, &a, &z).unwrap() + (1.0 - t) * loss_value(kind, &b, &z).unwrap();
        prop_assert!(lhs <= rhs + 1e-10);
    }

    #[test]
    fn gradients_are_smooth(kind in kind(), data in dataset(12, 4, true), pairs in prop::collection::vec((matrix(4, 1, 1.0), matrix(4, 1, 1.0)), 100)) {
        let data = if kind == LossKind::Squared {
            Dataset::new(data.x().clone(), data.y() * 0.7, Split::Train).unwrap()
        } else {
            data
        };
        let beta = estimate_constants(kind, std::slice::from_ref(&data), 2.0).unwrap().beta_f;
        for (a, b) in pairs {
            let (a, b) = (a.column(0).into_owned(), b.column(0).into_owned());
            let diff = (kind.empirical_grad(&a, &data) - kind.empirical_grad(&b, &data)).norm();
            prop_assert!(diff <= beta * (&a - &b).norm() * (1.0 + 1e-10) + 1e-12);
        }
    }

    #[test]
    fn prox_is_nonexpansive_in_center(kind in kind(), data in dataset(8, 3, true), c1 in matrix(3, 1, 3.0), c2 in matrix(3, 1, 3.0), beta in 0.05f64..5.0) {
        let tol = 1e-12;
        let (c1, c2) = (c1.column(0).into_owned(), c2.column(0).into_owned());
        let p1 = local_prox(kind, &c1, beta, &data, tol).unwrap();
        let p2 = local_prox(kind, &c2, beta, &data, tol).unwrap();
        // suboptimality tol means distance at most √(2·tol/β) from the exact prox
        let slack = 2.0 * (2.0 * tol / beta).sqrt();
        prop_assert!((&p1 - &p2).norm() <= (&c1 - &c2).norm() + slack);
    }

    #[test]
    fn u_space_objective_matches(kind in kind(), g in (3usize..6).prop_flat_map(adjacency), u in matrix(3, 5, 2.0), eta in 0.05f64..2.0, tau in 0.0f64..2.0, seed in 0u64..1000) {
        let m = g.nrows();
        let graph = TaskGraph::from_adjacency(g).unwrap();
        let data = small_data(m, 3, seed, kind == LossKind::Logistic);
        let hp = Hyperparams::new(eta, tau);
        let problem = Problem::new(kind, &data, &graph, hp).unwrap();
        let coupling = graph.coupling(hp.kappa().unwrap()).unwrap();
        let u = u.columns(0, m).into_owned();
        let w = from_u_space(&u, &coupling);
        let expected = problem.loss_value(&w).unwrap() + eta / (2.0 * m as f64) * u.norm_squared();
        let got = problem.objective_u(&u, &coupling).unwrap();
        prop_assert!((got - expected).abs() <= 1e-9 * (1.0 + expected.abs()));
        prop_assert!((problem.objective(&w).unwrap() - expected).abs() <= 1e-9 * (1.0 + expected.abs()));
        prop_assert!((to_u_space(&w, &coupling) - &u).amax() < 1e-9);
    }

    #[test]
    fn u_space_strong_convexity(g in (3usize..6).prop_flat_map(adjacency), u1 in matrix(3, 5, 2.0), u2 in matrix(3, 5, 2.0), eta in 0.05f64..2.0, tau in 0.0f64..2.0, seed in 0u64..1000) {
        let m = g.nrows();
        let graph = TaskGraph::from_adjacency(g).unwrap();
        let data = small_data(m, 3, seed, false);
        let hp = Hyperparams::new(eta, tau);
        let problem = Problem::new(LossKind::Squared, &data, &graph, hp).unwrap();
        let c = graph.coupling(hp.kappa().unwrap()).unwrap();
        let (u1, u2) = (u1.columns(0, m).into_owned(), u2.columns(0, m).into_owned());
        let f = |u: &DMatrix<f64>| problem.objective_u(u, &c).unwrap();
        let grad = problem.grad_objective_u(&u2, &c).unwrap();
        let bregman = f(&u1) - f(&u2) - grad.dot(&(&u1 - &u2));
        prop_assert!(bregman >= eta / (2.0 * m as f64) * (&u1 - &u2).norm_squared() - 1e-10);
    }

    #[test]
    fn oracle_is_stationary(g in (2usize..6).prop_flat_map(adjacency), eta in 0.05f64..2.0, tau in 0.0f64..2.0, seed in 0u64..1000) {
        let m = g.nrows();
        let graph = TaskGraph::from_adjacency(g).unwrap();
        let data = small_data(m, 3, seed, false);
        let problem = Problem::new(LossKind::Squared, &data, &graph, Hyperparams::new(eta, tau)).unwrap();
        let tol = 1e-10;
        let w = centralized_oracle(&problem, tol).unwrap();
        let rhs: f64 = data.iter().map(|d| d.cross_moment().norm_squared()).sum::<f64>().sqrt() / m as f64;
        prop_assert!(problem.grad_objective(&w).unwrap().norm() <= tol * (1.0 + rhs));
    }

    #[test]
    fn delay_bound_weakens_with_gamma(t in 0usize..200, eta in 0.01f64..2.0, tau in 0.01f64..2.0, gamma in 0usize..6) {
        let lo = theorem7_bound(t, eta, tau, gamma, 1.0);
        let hi = theorem7_bound(t, eta, tau, gamma + 1, 1.0);
        prop_assert!(hi >= lo);
        if t > 0 {
            prop_assert!(hi > lo);
        }
    }

    #[test]
    fn trace_csv_round_trips(rows in prop::collection::vec((0u64..1000, -1e6f64..1e6, prop::option::of(0.0f64..10.0), prop::option::of(0.0f64..10.0)), 1..20)) {
        let mut trace = RunTrace::new("x", &[], DMatrix::zeros(1, 1));
        for (t, (s, obj, pop, dist)) in rows.iter().enumerate() {
            trace.rows.push(TraceRow {
                round: t,
                comm_rounds: t,
                vectors_per_machine: t as f64 * 1.25,
                samples_per_machine: *s,
                erm_objective: *obj,
                population_loss: *pop,
                dist_to_oracle: *dist,
                wall_ms: 0.0,
                extras: vec![],
            });
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trace.csv");
        trace.save(&path).unwrap();
        prop_assert_eq!(read_trace_csv(&path).unwrap(), trace.rows);
    }

    #[test]
    fn config_text_round_trips(alg in 0usize..12, batch in 1usize..50, rounds in 1usize..500, eta in 0.001f64..10.0, tau in 0.0f64..10.0, seed in any::<u64>(), fresh in any::<bool>()) {
        let cfg = ExperimentConfig {
            algorithm: AlgorithmId::ALL[alg],
            reg: RegSpec::Direct { eta, tau },
            batch,
            rounds,
            fresh,
            seed,
            ..ExperimentConfig::default()
        }.with_seed(seed);
        prop_assert_eq!(ExperimentConfig::parse(&cfg.to_text()).unwrap(), cfg);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn worlds_are_reproducible(seed in any::<u64>(), clusters in 2usize..4) {
        let spec = TaskSpec { d: 4, m: 6, clusters, n: 5, dev_size: 3, test_size: 3, seed, knn: Some(2), ..TaskSpec::default() };
        let a = generate_world(&spec).unwrap();
        let b = generate_world(&spec).unwrap();
        prop_assert_eq!(&a.true_predictors, &b.true_predictors);
        prop_assert_eq!(&a.adjacency, &b.adjacency);
        for (x, y) in a.train.iter().chain(&a.test).zip(b.train.iter().chain(&b.test)) {
            prop_assert_eq!(x.checksum(), y.checksum());
        }
    }
}

fn small_data(m: usize, d: usize, seed: u64, logistic: bool) -> Vec<Dataset> {
    use rand::{Rng, SeedableRng};
    let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    (0..m)
        .map(|_| {
            let x = DMatrix::from_fn(6, d, |_, _| r.random_range(-1.0..1.0));
            let y = DVector::from_fn(6, |_, _| {
                let v: f64 = r.random_range(-2.0..2.0);
                if logistic { v.signum() } else { v }
            });
            Dataset::new(x, y, Split::Train).unwrap()
        })
        .collect()
}

#[test]
fn loss_gradient_matches_value_slope() {
    let z = Sample::new(DVector::from_vec(vec![0.5, -1.0]), 1.0);
    for kind in [LossKind::Squared, LossKind::Logistic] {
        let w = DVector::from_vec(vec![0.3, 0.2]);
        let g = loss_grad(kind, &w, &z).unwrap();
        let h = 1e-6;
        let e0 = DVector::from_vec(vec![h, 0.0]);
        let fd = (loss_value(kind, &(&w + &e0), &z).unwrap() - loss_value(kind, &(&w - &e0), &z).unwrap()) / (2.0 * h);
        assert!((fd - g[0]).abs() < 1e-8);
    }
}
