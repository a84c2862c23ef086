//! Reference methods: per-task ridge (`Local`) and the exact regularized ERM
//! solution on pooled data (`Centralized`), both tuned on the dev split.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::data::{Dataset, Split};
use crate::error::{Error, Result};
use crate::graph::TaskGraph;
use crate::losses::{local_prox, LossKind};
use crate::objective::{centralized_oracle, dense_oracle, population_loss, Hyperparams, Problem};
use crate::trace::{RunTrace, TraceRow};

/// Largest `d·m` solved by dense Cholesky instead of conjugate gradient.
pub const DENSE_ORACLE_LIMIT: usize = 1600;

const ORACLE_TOL: f64 = 1e-11;

fn require_split(sets: &[Dataset], split: Split) -> Result<()> {
    match sets.iter().find(|ds| ds.split() != split) {
        Some(ds) => Err(Error::Config(format!(
            "expected {} data, got {}",
            split.as_str(),
            ds.split().as_str()
        ))),
        None => Ok(()),
    }
}

/// Index of the smallest finite score; ties go to the earliest entry.
pub fn argmin(scores: &[f64]) -> Option<usize> {
    scores
        .iter()
        .enumerate()
        .filter(|(_, s)| s.is_finite())
        .fold(None, |best: Option<(usize, f64)>, (i, &s)| match best {
            Some((_, b)) if b <= s => best,
            _ => Some((i, s)),
        })
        .map(|(i, _)| i)
}

/// `argmin_w F̂_i(w) + (λ/2)‖w‖²`.
pub fn ridge(kind: LossKind, data: &Dataset, lambda: f64) -> Result<DVector<f64>> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::Domain(format!("ridge parameter must be finite and >= 0, got {lambda}")));
    }
    match kind {
        LossKind::Squared => {
            let mut system = data.second_moment().clone();
            for a in 0..system.nrows() {
                system[(a, a)] += lambda;
            }
            let chol = system
                .cholesky()
                .ok_or_else(|| Error::Cholesky(format!("ridge system singular at lambda = {lambda}")))?;
            Ok(chol.solve(data.cross_moment()))
        }
        LossKind::Logistic if lambda > 0.0 => local_prox(kind, &DVector::zeros(data.dim()), lambda, data, 1e-12),
        LossKind::Logistic => Err(Error::Unsupported("unregularized logistic ridge".into())),
    }
}

/// A tuned baseline.
#[derive(Debug, Clone)]
pub struct Baseline {
    pub w: DMatrix<f64>,
    /// Selected regularization: `(λ, 0)` for Local, `(η, τ)` for Centralized.
    pub hp: Hyperparams,
    /// Dev loss for every grid point, in grid order.
    pub dev_scores: Vec<f64>,
    pub trace: RunTrace,
}

fn baseline_trace(
    name: &str,
    w: DMatrix<f64>,
    objective: f64,
    tests: Option<&[Dataset]>,
    kind: LossKind,
    row: (usize, usize, f64, u64),
) -> Result<RunTrace> {
    let population = tests.map(|t| population_loss(kind, &w, t)).transpose()?;
    let mut trace = RunTrace::new(name, &[], w);
    trace.rows.push(TraceRow {
        round: row.0,
        comm_rounds: row.1,
        vectors_per_machine: row.2,
        samples_per_machine: row.3,
        erm_objective: objective,
        population_loss: population,
        dist_to_oracle: None,
        wall_ms: 0.0,
        extras: Vec::new(),
    });
    Ok(trace)
}

fn local_fit(kind: LossKind, train: &[Dataset], lambda: f64) -> Result<DMatrix<f64>> {
    let cols: Vec<DVector<f64>> = train.par_iter().map(|ds| ridge(kind, ds, lambda)).collect::<Result<_>>()?;
    Ok(DMatrix::from_columns(&cols))
}

/// Per-task ridge with one λ shared by all tasks, chosen to minimize the mean
/// dev loss. No communication. The recorded objective is the regularized
/// objective with `η = λ`, `τ = 0`.
pub fn run_local_baseline(
    kind: LossKind,
    train: &[Dataset],
    dev: &[Dataset],
    tests: Option<&[Dataset]>,
    lambda_grid: &[f64],
) -> Result<Baseline> {
    if lambda_grid.is_empty() {
        return Err(Error::Config("empty lambda grid".into()));
    }
    require_split(train, Split::Train)?;
    require_split(dev, Split::Dev)?;
    let fits: Vec<Result<DMatrix<f64>>> = lambda_grid.iter().map(|&l| local_fit(kind, train, l)).collect();
    let dev_scores: Vec<f64> = fits
        .iter()
        .map(|f| match f {
            Ok(w) => population_loss(kind, w, dev).unwrap_or(f64::INFINITY),
            Err(_) => f64::INFINITY,
        })
        .collect();
    let best = argmin(&dev_scores).ok_or_else(|| Error::Domain("no lambda in the grid gave a finite dev loss".into()))?;
    let lambda = lambda_grid[best];
    let w = fits.into_iter().nth(best).expect("index in range")?;
    let m = train.len();
    let graph = TaskGraph::from_adjacency(DMatrix::zeros(m, m))?;
    let hp = Hyperparams::new(lambda, 0.0);
    let objective = Problem::new(kind, train, &graph, hp)?.objective(&w)?;
    let n = crate::batch::max_n(train);
    let trace = baseline_trace("local", w.clone(), objective, tests, kind, (0, 0, 0.0, n))?;
    Ok(Baseline {
        w,
        hp,
        dev_scores,
        trace,
    })
}

/// Exact minimizer of the graph-regularized objective, dense when small.
pub fn solve_exact(problem: &Problem<'_>) -> Result<DMatrix<f64>> {
    if problem.loss == LossKind::Squared && problem.dim() * problem.machines() <= DENSE_ORACLE_LIMIT {
        dense_oracle(problem)
    } else {
        centralized_oracle(problem, ORACLE_TOL)
    }
}

/// All data pooled at one site, `(η, τ)` chosen on the dev split over the
/// product grid (η-major order). Logged as one round in which every machine
/// ships its `n` samples.
pub fn run_centralized_baseline(
    kind: LossKind,
    train: &[Dataset],
    dev: &[Dataset],
    tests: Option<&[Dataset]>,
    graph: &TaskGraph,
    eta_grid: &[f64],
    tau_grid: &[f64],
) -> Result<Baseline> {
    if eta_grid.is_empty() || tau_grid.is_empty() {
        return Err(Error::Config("empty tuning grid".into()));
    }
    require_split(train, Split::Train)?;
    require_split(dev, Split::Dev)?;
    let grid: Vec<Hyperparams> = eta_grid
        .iter()
        .flat_map(|&e| tau_grid.iter().map(move |&t| Hyperparams::new(e, t)))
        .collect();
    let fits: Vec<Result<DMatrix<f64>>> = grid
        .par_iter()
        .map(|&hp| solve_exact(&Problem::new(kind, train, graph, hp)?))
        .collect();
    let dev_scores: Vec<f64> = fits
        .iter()
        .map(|f| match f {
            Ok(w) => population_loss(kind, w, dev).unwrap_or(f64::INFINITY),
            Err(_) => f64::INFINITY,
        })
        .collect();
    let best = argmin(&dev_scores).ok_or_else(|| Error::Domain("no grid point gave a finite dev loss".into()))?;
    let hp = grid[best];
    let w = fits.into_iter().nth(best).expect("index in range")?;
    let objective = Problem::new(kind, train, graph, hp)?.objective(&w)?;
    let n = crate::batch::max_n(train);
    let trace = baseline_trace("centralized", w.clone(), objective, tests, kind, (1, 1, n as f64, n))?;
    Ok(Baseline {
        w,
        hp,
        dev_scores,
        trace,
    })
}

/// Centralized solution at fixed `(η, τ)`.
pub fn run_centralized_fixed(problem: &Problem<'_>, tests: Option<&[Dataset]>) -> Result<Baseline> {
    let w = solve_exact(problem)?;
    let objective = problem.objective(&w)?;
    let n = crate::batch::max_n(problem.data);
    let trace = baseline_trace("centralized", w.clone(), objective, tests, problem.loss, (1, 1, n as f64, n))?;
    Ok(Baseline {
        w,
        hp: problem.hp,
        dev_scores: Vec::new(),
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthdata::{generate_world, TaskSpec};

    fn world() -> crate::synthdata::GeneratedWorld {
        generate_world(&TaskSpec {
            d: 4,
            m: 6,
            clusters: 2,
            n: 30,
            dev_size: 60,
            test_size: 60,
            seed: 11,
            knn: Some(2),
            ..TaskSpec::default()
        })
        .unwrap()
    }

    #[test]
    fn huge_lambda_gives_zero() {
        let w = world();
        let b = run_local_baseline(LossKind::Squared, &w.train, &w.dev, None, &[1e12]).unwrap();
        assert!(b.w.amax() < 1e-9);
        assert_eq!(b.trace.rows[0].comm_rounds, 0);
        assert_eq!(b.trace.rows[0].vectors_per_machine, 0.0);
    }

    #[test]
    fn zero_lambda_is_least_squares() {
        let w = world();
        let b = run_local_baseline(LossKind::Squared, &w.train, &w.dev, None, &[0.0]).unwrap();
        for (i, ds) in w.train.iter().enumerate() {
            let g = ds.second_moment() * b.w.column(i) - ds.cross_moment();
            assert!(g.norm() < 1e-8, "task {i}: {}", g.norm());
        }
    }

    #[test]
    fn selection_matches_brute_force() {
        let w = world();
        let grid = [1e-3, 1e-2, 1e-1, 1.0, 10.0];
        let b = run_local_baseline(LossKind::Squared, &w.train, &w.dev, None, &grid).unwrap();
        let brute: Vec<f64> = grid
            .iter()
            .map(|&l| {
                let cols: Vec<_> = w.train.iter().map(|ds| ridge(LossKind::Squared, ds, l).unwrap()).collect();
                population_loss(LossKind::Squared, &DMatrix::from_columns(&cols), &w.dev).unwrap()
            })
            .collect();
        let best = argmin(&brute).unwrap();
        assert_eq!(b.hp.eta, grid[best]);
        assert_eq!(b.dev_scores, brute);
    }

    #[test]
    fn tuning_refuses_test_data() {
        let w = world();
        assert!(run_local_baseline(LossKind::Squared, &w.train, &w.test, None, &[1.0]).is_err());
        let g = TaskGraph::from_adjacency(w.adjacency.clone()).unwrap();
        assert!(run_centralized_baseline(LossKind::Squared, &w.train, &w.test, None, &g, &[1.0], &[1.0]).is_err());
    }

    #[test]
    fn centralized_single_row_at_oracle_objective() {
        let w = world();
        let g = TaskGraph::from_adjacency(w.adjacency.clone()).unwrap();
        let b = run_centralized_baseline(LossKind::Squared, &w.train, &w.dev, Some(&w.test), &g, &[0.01, 0.1], &[0.1, 1.0])
            .unwrap();
        assert_eq!(b.trace.rows.len(), 1);
        let p = Problem::new(LossKind::Squared, &w.train, &g, b.hp).unwrap();
        let oracle = centralized_oracle(&p, 1e-12).unwrap();
        let f = p.objective(&oracle).unwrap();
        assert!((b.trace.rows[0].erm_objective - f).abs() <= 1e-10 * f.abs());
        assert_eq!(b.dev_scores.len(), 4);
    }

    #[test]
    fn argmin_skips_nan() {
        assert_eq!(argmin(&[f64::NAN, 2.0, 1.0, 1.0]), Some(2));
        assert_eq!(argmin(&[f64::INFINITY]), None);
    }
}
