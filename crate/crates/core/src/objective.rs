//! The graph-regularized ERM objective
//! `(1/m)Σ F̂_i(w_i) + (η/2m)Σ‖w_i‖² + (τ/2m)·tr(W L Wᵀ)`,
//! its gradient pieces, the U-space change of variables, population-loss
//! estimates and the exact minimizer used as an oracle.

use std::ops::ControlFlow;

use nalgebra::{DMatrix, DVector};

use crate::batch::accelerated_proxgrad;
use crate::data::{check_machines, Dataset};
use crate::error::{Error, Result};
use crate::graph::{CouplingMatrix, TaskGraph};
use crate::linalg::conjugate_gradient;
use crate::losses::{estimate_constants, LossKind};

/// Regularization strengths `(η, τ)` and the norm / dissimilarity budgets
/// `(B, S)` they were derived from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hyperparams {
    pub eta: f64,
    pub tau: f64,
    pub norm_bound: f64,
    pub dissimilarity_bound: f64,
}

impl Hyperparams {
    pub fn new(eta: f64, tau: f64) -> Self {
        Self {
            eta,
            tau,
            norm_bound: 1.0,
            dissimilarity_bound: 1.0,
        }
    }

    pub fn with_bounds(mut self, b: f64, s: f64) -> Self {
        self.norm_bound = b;
        self.dissimilarity_bound = s;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta >= 0.0) || !(self.tau >= 0.0) || !self.eta.is_finite() || !self.tau.is_finite() {
            return Err(Error::Domain(format!(
                "regularization must be finite and nonnegative (eta = {}, tau = {})",
                self.eta, self.tau
            )));
        }
        Ok(())
    }

    /// `κ = τ/η`, the coupling strength of `M = I + κL`.
    pub fn kappa(&self) -> Result<f64> {
        if self.tau == 0.0 {
            return Ok(0.0);
        }
        if !(self.eta > 0.0) {
            return Err(Error::Domain("kappa = tau/eta needs eta > 0".into()));
        }
        Ok(self.tau / self.eta)
    }
}

/// A regularized ERM instance: loss, per-machine training data, graph and
/// regularization.
#[derive(Debug, Clone, Copy)]
pub struct Problem<'a> {
    pub loss: LossKind,
    pub data: &'a [Dataset],
    pub graph: &'a TaskGraph,
    pub hp: Hyperparams,
}

impl<'a> Problem<'a> {
    pub fn new(loss: LossKind, data: &'a [Dataset], graph: &'a TaskGraph, hp: Hyperparams) -> Result<Self> {
        hp.validate()?;
        let d = data
            .first()
            .ok_or_else(|| Error::Empty("problem has no machines".into()))?
            .dim();
        check_machines(data, graph.m(), d)?;
        Ok(Self { loss, data, graph, hp })
    }

    pub fn machines(&self) -> usize {
        self.graph.m()
    }

    pub fn dim(&self) -> usize {
        self.data[0].dim()
    }

    pub fn zeros(&self) -> DMatrix<f64> {
        DMatrix::zeros(self.dim(), self.machines())
    }

    fn check_shape(&self, w: &DMatrix<f64>) -> Result<()> {
        if w.shape() != (self.dim(), self.machines()) {
            return Err(Error::Dimension(format!(
                "predictor matrix is {:?}, expected {:?}",
                w.shape(),
                (self.dim(), self.machines())
            )));
        }
        Ok(())
    }

    /// `F̂(W) = (1/m) Σ_i F̂_i(w_i)`.
    pub fn loss_value(&self, w: &DMatrix<f64>) -> Result<f64> {
        self.check_shape(w)?;
        Ok(mean_loss(self.loss, w, self.data))
    }

    /// `R(W)`.
    pub fn regularizer(&self, w: &DMatrix<f64>) -> Result<f64> {
        self.check_shape(w)?;
        Ok(regularizer_value(w, &self.hp, self.graph))
    }

    pub fn objective(&self, w: &DMatrix<f64>) -> Result<f64> {
        Ok(self.loss_value(w)? + self.regularizer(w)?)
    }

    /// Per-machine loss gradients `[∇F̂_1(w_1), …, ∇F̂_m(w_m)]` without the
    /// 1/m factor. This is the matrix the W-space update rules exchange.
    pub fn loss_grads(&self, w: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_shape(w)?;
        Ok(loss_grads(self.loss, w, self.data))
    }

    /// `∇R(W) = (1/m)·W·(ηI + τL)`.
    pub fn grad_regularizer(&self, w: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_shape(w)?;
        Ok(grad_regularizer(w, &self.hp, self.graph))
    }

    /// Gradient of the full objective.
    pub fn grad_objective(&self, w: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let m = self.machines() as f64;
        Ok(self.loss_grads(w)? / m + self.grad_regularizer(w)?)
    }

    /// `F̂(U M^{-1/2}) + (η/2m)‖U‖²_F`, the objective written in U-space.
    pub fn objective_u(&self, u: &DMatrix<f64>, coupling: &CouplingMatrix) -> Result<f64> {
        let w = from_u_space(u, coupling);
        Ok(self.loss_value(&w)? + self.hp.eta / (2.0 * self.machines() as f64) * u.norm_squared())
    }

    /// Gradient of [`Self::objective_u`] with respect to `U`.
    pub fn grad_objective_u(&self, u: &DMatrix<f64>, coupling: &CouplingMatrix) -> Result<DMatrix<f64>> {
        let m = self.machines() as f64;
        let w = from_u_space(u, coupling);
        Ok(self.loss_grads(&w)? * coupling.inv_sqrt() / m + u * (self.hp.eta / m))
    }
}

pub(crate) fn mean_loss(kind: LossKind, w: &DMatrix<f64>, data: &[Dataset]) -> f64 {
    let m = data.len() as f64;
    data.iter()
        .enumerate()
        .map(|(i, ds)| kind.empirical_value(&w.column(i).into_owned(), ds))
        .sum::<f64>()
        / m
}

pub(crate) fn loss_grads(kind: LossKind, w: &DMatrix<f64>, data: &[Dataset]) -> DMatrix<f64> {
    let mut g = DMatrix::zeros(w.nrows(), w.ncols());
    for (i, ds) in data.iter().enumerate() {
        g.set_column(i, &kind.empirical_grad(&w.column(i).into_owned(), ds));
    }
    g
}

fn regularizer_value(w: &DMatrix<f64>, hp: &Hyperparams, graph: &TaskGraph) -> f64 {
    let m = graph.m() as f64;
    let quad = (w * graph.laplacian()).component_mul(w).sum();
    hp.eta / (2.0 * m) * w.norm_squared() + hp.tau / (2.0 * m) * quad
}

/// Regularized ERM objective.
pub fn erm_objective(
    w: &DMatrix<f64>,
    loss: LossKind,
    data: &[Dataset],
    hp: &Hyperparams,
    graph: &TaskGraph,
) -> Result<f64> {
    Problem::new(loss, data, graph, *hp)?.objective(w)
}

/// `∇R(W)`: column `i` is `(1/m)(η·w_i + τ·Σ_k a_ik (w_i − w_k))`.
pub fn grad_regularizer(w: &DMatrix<f64>, hp: &Hyperparams, graph: &TaskGraph) -> DMatrix<f64> {
    let m = graph.m();
    let mut weights = graph.laplacian() * hp.tau;
    for i in 0..m {
        weights[(i, i)] += hp.eta;
    }
    w * weights / m as f64
}

/// `U = W·M^{1/2}`.
pub fn to_u_space(w: &DMatrix<f64>, coupling: &CouplingMatrix) -> DMatrix<f64> {
    w * coupling.sqrt()
}

/// `W = U·M^{-1/2}`.
pub fn from_u_space(u: &DMatrix<f64>, coupling: &CouplingMatrix) -> DMatrix<f64> {
    u * coupling.inv_sqrt()
}

/// A Monte Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub mean: f64,
    pub std_error: f64,
}

/// `(1/m)Σ_i mean_{z∈test_i} ℓ(w_i, z)`: the test-set estimate of the
/// population objective.
pub fn population_loss(kind: LossKind, w: &DMatrix<f64>, tests: &[Dataset]) -> Result<f64> {
    if tests.is_empty() {
        return Err(Error::Empty("no test sets".into()));
    }
    check_machines(tests, w.ncols(), w.nrows())?;
    Ok(mean_loss(kind, w, tests))
}

/// [`population_loss`] together with its standard error, treating the
/// machines' test sets as independent strata.
pub fn population_loss_estimate(kind: LossKind, w: &DMatrix<f64>, tests: &[Dataset]) -> Result<Estimate> {
    if tests.is_empty() {
        return Err(Error::Empty("no test sets".into()));
    }
    check_machines(tests, w.ncols(), w.nrows())?;
    let m = tests.len() as f64;
    let mut mean = 0.0;
    let mut var = 0.0;
    for (i, ds) in tests.iter().enumerate() {
        let vals = kind.per_sample_values(&w.column(i).into_owned(), ds);
        let (mu, v) = mean_and_var(&vals);
        mean += mu / m;
        var += v / vals.len() as f64 / (m * m);
    }
    Ok(Estimate {
        mean,
        std_error: var.sqrt(),
    })
}

/// Sample mean and unbiased variance (variance 0 for a single value).
pub fn mean_and_var(vals: &[f64]) -> (f64, f64) {
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    if vals.len() < 2 {
        return (mean, 0.0);
    }
    let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

/// Oracle iteration cap.
pub const ORACLE_MAX_ITER: usize = 200_000;

/// Exact minimizer `Ŵ` of the regularized ERM objective.
///
/// Squared loss: conjugate gradient on the stationarity system
/// `(1/m)[H_i w_i]_i + (1/m)·W(ηI + τL) = (1/m)[c_i]_i` until the residual
/// (which is the objective gradient) is at most `tol·(1 + ‖rhs‖)`.
/// Other losses: accelerated proximal gradient in U-space until the gradient
/// norm is at most `tol`.
pub fn centralized_oracle(problem: &Problem<'_>, tol: f64) -> Result<DMatrix<f64>> {
    let m = problem.machines();
    let d = problem.dim();
    match problem.loss {
        LossKind::Squared => {
            let mut rhs = DMatrix::zeros(d, m);
            for (i, ds) in problem.data.iter().enumerate() {
                rhs.set_column(i, ds.cross_moment());
            }
            rhs /= m as f64;
            let apply = |w: &DMatrix<f64>| {
                let mut out = grad_regularizer(w, &problem.hp, problem.graph);
                for (i, ds) in problem.data.iter().enumerate() {
                    let hw = ds.second_moment() * w.column(i) / m as f64;
                    let mut col = out.column_mut(i);
                    col += hw;
                }
                out
            };
            let target = tol * (1.0 + rhs.norm());
            let out = conjugate_gradient(apply, &rhs, DMatrix::zeros(d, m), target, ORACLE_MAX_ITER)?;
            Ok(out.solution)
        }
        LossKind::Logistic => {
            let hp = problem.hp;
            if !(hp.eta > 0.0) {
                return Err(Error::Unsupported(
                    "iterative oracle needs eta > 0 for strong convexity".into(),
                ));
            }
            let coupling = problem.graph.coupling(hp.kappa()?)?;
            let consts = estimate_constants(problem.loss, problem.data, 1.0)?;
            let beta = (consts.beta_f + hp.eta) / m as f64;
            let mu = hp.eta / m as f64;
            let mut grad_norm = f64::INFINITY;
            let out = accelerated_proxgrad(
                |u| problem.grad_objective_u(u, &coupling),
                |v, _| Ok(v.clone()),
                beta,
                mu,
                DMatrix::zeros(d, m),
                ORACLE_MAX_ITER,
                |_, u| {
                    let w = from_u_space(u, &coupling);
                    grad_norm = problem.grad_objective(&w)?.norm();
                    Ok(if grad_norm <= tol {
                        ControlFlow::Break(())
                    } else {
                        ControlFlow::Continue(())
                    })
                },
            )?;
            if grad_norm > tol {
                return Err(Error::NoConvergence {
                    solver: "centralized oracle",
                    iterations: out.iterations,
                    achieved: grad_norm,
                });
            }
            Ok(from_u_space(&out.x, &coupling))
        }
    }
}

/// Exact minimizer for the squared loss by a dense Cholesky solve of the
/// `dm × dm` stationarity system. Used where the oracle must be accurate to
/// rounding.
pub fn dense_oracle(problem: &Problem<'_>) -> Result<DMatrix<f64>> {
    if problem.loss != LossKind::Squared {
        return Err(Error::Unsupported("dense oracle needs the squared loss".into()));
    }
    let (d, m) = (problem.dim(), problem.machines());
    let lap = problem.graph.laplacian();
    let hp = problem.hp;
    let mut k = DMatrix::zeros(d * m, d * m);
    let mut rhs = DVector::zeros(d * m);
    for i in 0..m {
        let h = problem.data[i].second_moment();
        for a in 0..d {
            for b in 0..d {
                k[(i * d + a, i * d + b)] += h[(a, b)];
            }
            rhs[i * d + a] = problem.data[i].cross_moment()[a];
        }
        for j in 0..m {
            let coef = hp.tau * lap[(i, j)] + if i == j { hp.eta } else { 0.0 };
            if coef != 0.0 {
                for a in 0..d {
                    k[(i * d + a, j * d + a)] += coef;
                }
            }
        }
    }
    let chol = k
        .cholesky()
        .ok_or_else(|| Error::Cholesky("stationarity system not positive definite".into()))?;
    let sol = chol.solve(&rhs);
    Ok(DMatrix::from_column_slice(d, m, sol.as_slice()))
}

/// Regularization chosen from (L, B, S):
/// `η = 2LB·√((1+mρ)/(mn))/B²`, `τ = 2LB·√((1+mρ)/(mn))/(S²/m)`.
pub fn corollary2_params(l: f64, b: f64, s: f64, m: usize, n: usize, graph: &TaskGraph) -> Result<Hyperparams> {
    if !(l > 0.0 && b > 0.0 && s > 0.0) || m == 0 || n == 0 {
        return Err(Error::Domain(format!(
            "parameters must be positive (L = {l}, B = {b}, S = {s}, m = {m}, n = {n})"
        )));
    }
    let rho = graph.rho(b, s)?;
    let mf = m as f64;
    let numerator = 2.0 * l * b * ((1.0 + mf * rho) / (mf * n as f64)).sqrt();
    Ok(Hyperparams {
        eta: numerator / (b * b),
        tau: numerator / (s * s / mf),
        norm_bound: b,
        dissimilarity_bound: s,
    })
}

/// Excess-risk bound `4LB·√((1+mρ)/(mn))` reported alongside the
/// regularization choice.
pub fn corollary2_excess_bound(l: f64, b: f64, rho: f64, m: usize, n: usize) -> f64 {
    let mf = m as f64;
    4.0 * l * b * ((1.0 + mf * rho) / (mf * n as f64)).sqrt()
}

/// Generalization-gap bound `(4L²/(mn))·Σ_i 1/(η + τλ_i)`.
pub fn lemma1_bound(l: f64, n: usize, hp: &Hyperparams, graph: &TaskGraph) -> f64 {
    let m = graph.m() as f64;
    4.0 * l * l / (m * n as f64)
        * graph
            .eigenvalues()
            .iter()
            .map(|lam| 1.0 / (hp.eta + hp.tau * lam))
            .sum::<f64>()
}

/// Sample-complexity accounting: `(n_C, n_L)` up to constants, for a target
/// excess error `eps`.
pub fn sample_complexities(l: f64, b: f64, rho: f64, m: usize, eps: f64) -> (f64, f64) {
    let n_l = l * l * b * b / (eps * eps);
    (n_l * (1.0 / m as f64 + rho), n_l)
}

/// Squared Euclidean norms of the columns.
pub fn column_norms(w: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_iterator(w.ncols(), w.column_iter().map(|c| c.norm()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Sample, Split};
    use crate::graph::build_laplacian;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_problem_data(rng: &mut ChaCha8Rng, m: usize, n: usize, d: usize) -> Vec<Dataset> {
        (0..m)
            .map(|_| {
                let x = DMatrix::from_fn(n, d, |_, _| rng.random_range(-1.0..1.0));
                let y = DVector::from_fn(n, |_, _| rng.random_range(-2.0..2.0));
                Dataset::new(x, y, Split::Train).unwrap()
            })
            .collect()
    }

    fn random_graph(rng: &mut ChaCha8Rng, m: usize) -> TaskGraph {
        let mut a = DMatrix::zeros(m, m);
        for i in 0..m {
            for k in (i + 1)..m {
                if rng.random::<f64>() < 0.6 {
                    let w = rng.random_range(0.1..2.0);
                    a[(i, k)] = w;
                    a[(k, i)] = w;
                }
            }
        }
        build_laplacian(a).unwrap()
    }

    #[test]
    fn zero_predictor_objective() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let data = random_problem_data(&mut rng, 3, 7, 2);
        let g = random_graph(&mut rng, 3);
        let p = Problem::new(LossKind::Squared, &data, &g, Hyperparams::new(0.3, 1.1)).unwrap();
        let expected: f64 = data.iter().flat_map(|d| d.y().iter()).map(|y| y * y / 2.0).sum::<f64>() / 21.0;
        assert!((p.objective(&p.zeros()).unwrap() - expected).abs() < 1e-14);
    }

    #[test]
    fn equal_columns_have_zero_laplacian_term() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let g = random_graph(&mut rng, 4);
        let col = DVector::from_vec(vec![0.3, -2.0, 1.0]);
        let w = DMatrix::from_columns(&[col.clone(), col.clone(), col.clone(), col]);
        let quad = (&w * g.laplacian()).component_mul(&w).sum();
        assert!(quad.abs() < 1e-12);
    }

    #[test]
    fn objective_matches_pairwise_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (m, n, d) = (4, 6, 3);
        let data = random_problem_data(&mut rng, m, n, d);
        let g = random_graph(&mut rng, m);
        let hp = Hyperparams::new(0.4, 0.9);
        let w = DMatrix::from_fn(d, m, |_, _| rng.random_range(-1.0..1.0));
        let mut naive = 0.0;
        for (i, task) in data.iter().enumerate() {
            for j in 0..n {
                let s = task.sample(j);
                naive += 0.5 * (w.column(i).dot(&s.x) - s.y).powi(2) / (n * m) as f64;
            }
            naive += hp.eta / (2.0 * m as f64) * w.column(i).norm_squared();
            for k in 0..m {
                if i != k {
                    let a = g.adjacency()[(i, k)];
                    naive += hp.tau / (2.0 * m as f64) * a / 2.0 * (w.column(i) - w.column(k)).norm_squared();
                }
            }
        }
        let got = erm_objective(&w, LossKind::Squared, &data, &hp, &g).unwrap();
        assert!((got - naive).abs() < 1e-10, "{got} vs {naive}");
    }

    #[test]
    fn regularizer_gradient_forms_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let m = 5;
        let g = random_graph(&mut rng, m);
        let hp = Hyperparams::new(0.7, 1.3);
        let w = DMatrix::from_fn(3, m, |_, _| rng.random_range(-1.0..1.0));
        let matrix_form = grad_regularizer(&w, &hp, &g);
        for i in 0..m {
            let mut col = w.column(i) * hp.eta;
            for k in 0..m {
                col += (w.column(i) - w.column(k)) * (hp.tau * g.adjacency()[(i, k)]);
            }
            col /= m as f64;
            assert!((matrix_form.column(i) - col).amax() < 1e-12);
        }
        let flat = DMatrix::from_element(3, m, 0.8);
        assert!(grad_regularizer(&flat, &Hyperparams::new(0.0, 5.0), &g).amax() < 1e-12);
    }

    #[test]
    fn u_space_round_trip_and_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let g = random_graph(&mut rng, 4);
        let c = g.coupling(2.0).unwrap();
        let w = DMatrix::from_fn(3, 4, |_, _| rng.random_range(-1.0..1.0));
        let u = to_u_space(&w, &c);
        assert!((from_u_space(&u, &c) - &w).norm() < 1e-8);
        let direct = (&w * c.matrix() * w.transpose()).trace();
        assert!((u.norm_squared() - direct).abs() < 1e-9);
        let c0 = g.coupling(0.0).unwrap();
        assert!((to_u_space(&w, &c0) - &w).norm() < 1e-12);
    }

    #[test]
    fn u_space_objective_matches_w_space() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let data = random_problem_data(&mut rng, 4, 5, 3);
        let g = random_graph(&mut rng, 4);
        let hp = Hyperparams::new(0.5, 2.0);
        let p = Problem::new(LossKind::Squared, &data, &g, hp).unwrap();
        let c = g.coupling(hp.kappa().unwrap()).unwrap();
        for _ in 0..5 {
            let w = DMatrix::from_fn(3, 4, |_, _| rng.random_range(-1.0..1.0));
            let u = to_u_space(&w, &c);
            assert!((p.objective_u(&u, &c).unwrap() - p.objective(&w).unwrap()).abs() < 1e-9);
        }
    }

    #[test]
    fn oracle_single_machine_is_ridge() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let data = random_problem_data(&mut rng, 1, 12, 3);
        let g = build_laplacian(DMatrix::zeros(1, 1)).unwrap();
        let hp = Hyperparams::new(0.25, 0.0);
        let p = Problem::new(LossKind::Squared, &data, &g, hp).unwrap();
        let w = centralized_oracle(&p, 1e-12).unwrap();
        let mut sys = data[0].second_moment().clone();
        for i in 0..3 {
            sys[(i, i)] += hp.eta;
        }
        let direct = sys.lu().solve(data[0].cross_moment()).unwrap();
        assert!((w.column(0) - direct).amax() < 1e-10);
    }

    #[test]
    fn oracle_decouples_without_graph_term() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let data = random_problem_data(&mut rng, 3, 9, 2);
        let g = random_graph(&mut rng, 3);
        let p = Problem::new(LossKind::Squared, &data, &g, Hyperparams::new(0.1, 0.0)).unwrap();
        let w = centralized_oracle(&p, 1e-12).unwrap();
        for (i, ds) in data.iter().enumerate() {
            let mut sys = ds.second_moment().clone();
            sys[(0, 0)] += 0.1;
            sys[(1, 1)] += 0.1;
            let direct = sys.lu().solve(ds.cross_moment()).unwrap();
            assert!((w.column(i) - direct).amax() < 1e-10);
        }
    }

    #[test]
    fn oracle_two_machine_hand_solution() {
        // d = 1, x = 1 for both machines, y = (1, 3), η = 1, τ = 1, a_12 = 1.
        // Stationarity (×m): (w1 − 1) + w1 + (w1 − w2) = 0, (w2 − 3) + w2 + (w2 − w1) = 0
        // → 3w1 − w2 = 1, −w1 + 3w2 = 3 → w1 = 3/4, w2 = 5/4.
        let data = vec![
            Dataset::from_samples(&[Sample::new(DVector::from_vec(vec![1.0]), 1.0)], Split::Train).unwrap(),
            Dataset::from_samples(&[Sample::new(DVector::from_vec(vec![1.0]), 3.0)], Split::Train).unwrap(),
        ];
        let g = build_laplacian(DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0])).unwrap();
        let p = Problem::new(LossKind::Squared, &data, &g, Hyperparams::new(1.0, 1.0)).unwrap();
        let w = centralized_oracle(&p, 1e-14).unwrap();
        assert!((w[(0, 0)] - 0.75).abs() < 1e-10);
        assert!((w[(0, 1)] - 1.25).abs() < 1e-10);
    }

    #[test]
    fn dense_and_iterative_oracles_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let data = random_problem_data(&mut rng, 5, 8, 3);
        let g = random_graph(&mut rng, 5);
        let p = Problem::new(LossKind::Squared, &data, &g, Hyperparams::new(0.2, 1.3)).unwrap();
        let a = dense_oracle(&p).unwrap();
        let b = centralized_oracle(&p, 1e-13).unwrap();
        assert!((a.clone() - b).amax() < 1e-10);
        assert!(p.grad_objective(&a).unwrap().norm() < 1e-13);
    }

    #[test]
    fn logistic_oracle_is_stationary() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let data: Vec<Dataset> = (0..3)
            .map(|_| {
                let x = DMatrix::from_fn(15, 2, |_, _| rng.random_range(-1.0..1.0));
                let y = DVector::from_fn(15, |_, _| if rng.random::<bool>() { 1.0 } else { -1.0 });
                Dataset::new(x, y, Split::Train).unwrap()
            })
            .collect();
        let g = random_graph(&mut rng, 3);
        let p = Problem::new(LossKind::Logistic, &data, &g, Hyperparams::new(0.2, 0.5)).unwrap();
        let w = centralized_oracle(&p, 1e-9).unwrap();
        assert!(p.grad_objective(&w).unwrap().norm() <= 1e-9);
    }

    #[test]
    fn corollary2_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let g = random_graph(&mut rng, 5);
        let (l, b, s, m, n) = (3.0, 1.5, 0.7, 5, 40);
        let hp = corollary2_params(l, b, s, m, n, &g).unwrap();
        assert!((hp.tau / hp.eta - m as f64 * b * b / (s * s)).abs() < 1e-9);
        let hp4 = corollary2_params(l, b, s, m, 4 * n, &g).unwrap();
        assert!((hp4.eta * 2.0 - hp.eta).abs() < 1e-12 && (hp4.tau * 2.0 - hp.tau).abs() < 1e-9);

        // consensus limit: a connected graph with S → 0 gives ρ → 0 and
        // η → 2L/(B√(mn))
        let mut full = DMatrix::from_element(4, 4, 1.0);
        full.fill_diagonal(0.0);
        let k4 = build_laplacian(full).unwrap();
        let hp0 = corollary2_params(l, b, 1e-9, 4, n, &k4).unwrap();
        let want = 2.0 * l / (b * ((4 * n) as f64).sqrt());
        assert!((hp0.eta - want).abs() < 1e-9 * want);
    }

    #[test]
    fn lemma1_bound_is_monotone_in_n() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let g = random_graph(&mut rng, 4);
        let hp = Hyperparams::new(0.3, 2.0);
        let a = lemma1_bound(2.0, 10, &hp, &g);
        let b = lemma1_bound(2.0, 20, &hp, &g);
        assert!(b < a);
    }

    #[test]
    fn population_loss_rejects_empty() {
        assert!(population_loss(LossKind::Squared, &DMatrix::zeros(2, 0), &[]).is_err());
    }
}
