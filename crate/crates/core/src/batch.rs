//! Batch ERM solvers: full gradient descent, BSR (solve the regularizer
//! exactly, linearize the loss), BOL (solve the loss locally, linearize the
//! regularizer), and the accelerated proximal gradient method they share.
//!
//! The W-space update rules exchange the raw per-machine gradients
//! `∇F̂_i(w_i)`. They are gradient steps on `m` times the objective, so the
//! stepsizes below are stated in that scaling.

use std::ops::ControlFlow;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::data::{check_machines, Dataset};
use crate::error::{Error, Result};
use crate::graph::{CouplingMatrix, TaskGraph};
use crate::losses::{estimate_constants, local_prox, LossKind};
use crate::objective::{from_u_space, loss_grads, Hyperparams, Problem};
use crate::trace::{CommProfile, Recorder, RunOptions, RunTrace};

/// Result of [`accelerated_proxgrad`].
#[derive(Debug, Clone)]
pub struct ProxGradOutcome {
    pub x: DMatrix<f64>,
    pub iterations: usize,
    pub momentum: f64,
}

/// `(√β − √μ)/(√β + √μ)`.
pub fn momentum(beta: f64, mu: f64) -> f64 {
    (beta.sqrt() - mu.sqrt()) / (beta.sqrt() + mu.sqrt())
}

/// Accelerated proximal gradient descent for `g + h`, `g` β-smooth and
/// μ-strongly convex:
///
/// ```text
/// x^t     = prox_h^β(y^t − ∇g(y^t)/β)
/// y^{t+1} = x^t + q·(x^t − x^{t−1}),   y^1 = x^0
/// ```
///
/// `prox_h(v, t)` must return `argmin_u h(u) + (β/2)‖u − v‖²`. `observe` sees
/// every `x^t` and may stop the loop early.
pub fn accelerated_proxgrad<G, H, O>(
    mut grad_g: G,
    mut prox_h: H,
    beta: f64,
    mu: f64,
    x0: DMatrix<f64>,
    max_iter: usize,
    mut observe: O,
) -> Result<ProxGradOutcome>
where
    G: FnMut(&DMatrix<f64>) -> Result<DMatrix<f64>>,
    H: FnMut(&DMatrix<f64>, usize) -> Result<DMatrix<f64>>,
    O: FnMut(usize, &DMatrix<f64>) -> Result<ControlFlow<()>>,
{
    if !(beta > 0.0) || !(mu >= 0.0) || !beta.is_finite() {
        return Err(Error::Domain(format!(
            "need beta > 0 and mu >= 0, got beta = {beta}, mu = {mu}"
        )));
    }
    if beta < mu {
        return Err(Error::Domain(format!(
            "smoothness {beta} is below the strong convexity {mu}"
        )));
    }
    let q = momentum(beta, mu);
    let mut x_prev = x0.clone();
    let mut y = x0;
    let mut iterations = 0;
    for t in 1..=max_iter {
        let grad = grad_g(&y)?;
        let x = prox_h(&(&y - grad / beta), t)?;
        iterations = t;
        let flow = observe(t, &x)?;
        y = &x + (&x - &x_prev) * q;
        x_prev = x;
        if flow.is_break() {
            break;
        }
    }
    Ok(ProxGradOutcome {
        x: x_prev,
        iterations,
        momentum: q,
    })
}

/// Which update rule a set of combination weights belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightScheme {
    FullGd,
    Bsr,
    BolProx,
}

/// Averaging weights `μ_ki`: column `i` says how machine `i` mixes the
/// predictors of the others.
#[derive(Debug, Clone)]
pub struct CombineWeights {
    pub mu: DMatrix<f64>,
    pub scheme: WeightScheme,
    pub alpha: f64,
}

/// Full GD and BOL use `μ = I − α(ηI + τL)`, nonzero only on edges and the
/// diagonal, with column sums `1 − αη`. BSR uses `μ = α·M^{-1}`.
pub fn combine_weights(scheme: WeightScheme, alpha: f64, hp: &Hyperparams, graph: &TaskGraph) -> Result<CombineWeights> {
    if !(alpha > 0.0) {
        return Err(Error::Domain(format!("stepsize must be positive, got {alpha}")));
    }
    let m = graph.m();
    let mu = match scheme {
        WeightScheme::FullGd | WeightScheme::BolProx => {
            let mut mu = graph.laplacian() * (-alpha * hp.tau);
            for i in 0..m {
                mu[(i, i)] += 1.0 - alpha * hp.eta;
            }
            mu
        }
        WeightScheme::Bsr => graph.coupling(hp.kappa()?)?.inverse() * alpha,
    };
    Ok(CombineWeights { mu, scheme, alpha })
}

/// `w_i' = Σ_k μ_ki w_k − α∇F̂_i(w_i)`.
pub fn gd_full_step(w: &DMatrix<f64>, weights: &CombineWeights, kind: LossKind, data: &[Dataset]) -> Result<DMatrix<f64>> {
    check_step(w, data, weights.mu.nrows())?;
    Ok(w * &weights.mu - loss_grads(kind, w, data) * weights.alpha)
}

/// `W' = (1 − αη)W − α·G·M^{-1}`, `G` the matrix of local gradients.
pub fn bsr_step(
    w: &DMatrix<f64>,
    alpha: f64,
    hp: &Hyperparams,
    coupling: &CouplingMatrix,
    kind: LossKind,
    data: &[Dataset],
) -> Result<DMatrix<f64>> {
    check_step(w, data, coupling.matrix().nrows())?;
    Ok(w * (1.0 - alpha * hp.eta) - loss_grads(kind, w, data) * coupling.inverse() * alpha)
}

/// Each machine takes a local prox step on its own data from the center
/// `w_i − mα·∇_{w_i}R(W)` with inverse stepsize `1/α`.
pub fn bol_step(
    w: &DMatrix<f64>,
    alpha: f64,
    hp: &Hyperparams,
    graph: &TaskGraph,
    kind: LossKind,
    data: &[Dataset],
    prox_tol: f64,
) -> Result<DMatrix<f64>> {
    check_step(w, data, graph.m())?;
    let weights = combine_weights(WeightScheme::BolProx, alpha, hp, graph)?;
    let centers = w * &weights.mu;
    prox_columns(kind, &centers, 1.0 / alpha, data, prox_tol)
}

/// Column-wise `local_prox`, one machine per column, in parallel.
pub(crate) fn prox_columns(
    kind: LossKind,
    centers: &DMatrix<f64>,
    inv_step: f64,
    data: &[Dataset],
    tol: f64,
) -> Result<DMatrix<f64>> {
    let cols = (0..centers.ncols())
        .into_par_iter()
        .map(|i| local_prox(kind, &centers.column(i).into_owned(), inv_step, &data[i], tol))
        .collect::<Result<Vec<_>>>()?;
    Ok(DMatrix::from_columns(&cols))
}

fn check_step(w: &DMatrix<f64>, data: &[Dataset], m: usize) -> Result<()> {
    if w.ncols() != m {
        return Err(Error::Dimension(format!("{} columns for {m} machines", w.ncols())));
    }
    check_machines(data, m, w.nrows())
}

/// Default full-GD stepsize `1/(β_F + η + τλ_m)`.
pub fn gd_default_alpha(beta_f: f64, hp: &Hyperparams, graph: &TaskGraph) -> f64 {
    1.0 / (beta_f + hp.eta + hp.tau * graph.lambda_max())
}

/// Default BSR stepsize `1/(β_F + η)`.
pub fn bsr_default_alpha(beta_f: f64, hp: &Hyperparams) -> f64 {
    1.0 / (beta_f + hp.eta)
}

/// Default BOL stepsize: `1/(mα) = β_R = (η + τλ_m)/m`.
pub fn bol_default_alpha(hp: &Hyperparams, graph: &TaskGraph) -> f64 {
    1.0 / (hp.eta + hp.tau * graph.lambda_max())
}

/// Default inexact-prox tolerance scale.
pub const DEFAULT_PROX_TOL: f64 = 1e-12;

/// Floor of the geometric prox tolerance schedule.
pub const PROX_TOL_FLOOR: f64 = 1e-14;

/// `max(tol0·0.5^t, 1e-14)`.
pub fn prox_tol_schedule(tol0: f64, t: usize) -> f64 {
    (tol0 * 0.5f64.powi(t.min(2000) as i32)).max(PROX_TOL_FLOOR)
}

fn beta_f(problem: &Problem<'_>) -> Result<f64> {
    Ok(estimate_constants(problem.loss, problem.data, 1.0)?.beta_f)
}

/// Plain gradient descent with neighbor-averaging weights.
pub fn run_gd(problem: &Problem<'_>, alpha: Option<f64>, opts: &RunOptions<'_>) -> Result<RunTrace> {
    let alpha = match alpha {
        Some(a) => a,
        None => gd_default_alpha(beta_f(problem)?, &problem.hp, problem.graph),
    };
    let weights = combine_weights(WeightScheme::FullGd, alpha, &problem.hp, problem.graph)?;
    let n = max_n(problem.data);
    let profile = CommProfile::neighbor(problem.graph.edge_count(), problem.machines(), n);
    let mut rec = Recorder::new("gd", *problem, opts, profile, &[]);
    let mut w = rec.init();
    rec.record(0, &w, vec![])?;
    for t in 1..=opts.max_rounds {
        w = gd_full_step(&w, &weights, problem.loss, problem.data)?;
        if rec.round(t, &w, vec![])? {
            break;
        }
    }
    Ok(rec.finish())
}

/// BSR: gradient steps through `M^{-1}`, one all-to-all exchange per round.
pub fn run_bsr(problem: &Problem<'_>, alpha: Option<f64>, opts: &RunOptions<'_>) -> Result<RunTrace> {
    let alpha = match alpha {
        Some(a) => a,
        None => bsr_default_alpha(beta_f(problem)?, &problem.hp),
    };
    let coupling = problem.graph.coupling(problem.hp.kappa()?)?;
    let m = problem.machines();
    let profile = CommProfile::broadcast(m, max_n(problem.data));
    let mut rec = Recorder::new("bsr", *problem, opts, profile, &[]);
    let mut w = rec.init();
    rec.record(0, &w, vec![])?;
    for t in 1..=opts.max_rounds {
        w = bsr_step(&w, alpha, &problem.hp, &coupling, problem.loss, problem.data)?;
        if rec.round(t, &w, vec![])? {
            break;
        }
    }
    Ok(rec.finish())
}

/// BOL: local prox steps with a linearized regularizer, neighbor-only
/// communication.
pub fn run_bol(problem: &Problem<'_>, alpha: Option<f64>, prox_tol: f64, opts: &RunOptions<'_>) -> Result<RunTrace> {
    let alpha = alpha.unwrap_or_else(|| bol_default_alpha(&problem.hp, problem.graph));
    let profile = CommProfile::neighbor(problem.graph.edge_count(), problem.machines(), max_n(problem.data));
    let mut rec = Recorder::new("bol", *problem, opts, profile, &[]);
    let mut w = rec.init();
    rec.record(0, &w, vec![])?;
    for t in 1..=opts.max_rounds {
        w = bol_step(&w, alpha, &problem.hp, problem.graph, problem.loss, problem.data, prox_tol)?;
        if rec.round(t, &w, vec![])? {
            break;
        }
    }
    Ok(rec.finish())
}

/// Accelerated BSR in U-space: `g(U) = F̂(UM^{-1/2}) + (η/2m)‖U‖²`, `h = 0`,
/// `β = (β_F + η)/m`, `μ = η/m`.
pub fn accelerated_bsr(problem: &Problem<'_>, opts: &RunOptions<'_>) -> Result<RunTrace> {
    let hp = problem.hp;
    if !(hp.eta > 0.0) {
        return Err(Error::Unsupported("acceleration needs eta > 0".into()));
    }
    let m = problem.machines() as f64;
    let coupling = problem.graph.coupling(hp.kappa()?)?;
    let beta = (beta_f(problem)? + hp.eta) / m;
    let mu = hp.eta / m;
    let profile = CommProfile::broadcast(problem.machines(), max_n(problem.data));
    let mut rec = Recorder::new("bsr_acc", *problem, opts, profile, &[]);
    let w0 = rec.init();
    rec.record(0, &w0, vec![])?;
    let u0 = crate::objective::to_u_space(&w0, &coupling);
    let mut failure = None;
    accelerated_proxgrad(
        |u| problem.grad_objective_u(u, &coupling),
        |v, _| Ok(v.clone()),
        beta,
        mu,
        u0,
        opts.max_rounds,
        |t, u| {
            let w = from_u_space(u, &coupling);
            match rec.round(t, &w, vec![]) {
                Ok(stop) => Ok(if stop { ControlFlow::Break(()) } else { ControlFlow::Continue(()) }),
                Err(e) => {
                    failure = Some(e);
                    Ok(ControlFlow::Break(()))
                }
            }
        },
    )?;
    if let Some(e) = failure {
        return Err(e);
    }
    Ok(rec.finish())
}

/// Accelerated BOL in W-space: `g = R`, `h = F̂` (local prox per machine),
/// `β = (η + τλ_m)/m`, `μ = η/m`, prox tolerance halved every round.
pub fn accelerated_bol(problem: &Problem<'_>, prox_tol: f64, opts: &RunOptions<'_>) -> Result<RunTrace> {
    let hp = problem.hp;
    if !(hp.eta > 0.0) {
        return Err(Error::Unsupported("acceleration needs eta > 0".into()));
    }
    let m = problem.machines() as f64;
    let beta = (hp.eta + hp.tau * problem.graph.lambda_max()) / m;
    let mu = hp.eta / m;
    let profile = CommProfile::neighbor(problem.graph.edge_count(), problem.machines(), max_n(problem.data));
    let mut rec = Recorder::new("bol_acc", *problem, opts, profile, &[]);
    let w0 = rec.init();
    rec.record(0, &w0, vec![])?;
    let mut failure = None;
    accelerated_proxgrad(
        |w| problem.grad_regularizer(w),
        |v, t| prox_columns(problem.loss, v, m * beta, problem.data, prox_tol_schedule(prox_tol, t)),
        beta,
        mu,
        w0,
        opts.max_rounds,
        |t, w| match rec.round(t, w, vec![]) {
            Ok(stop) => Ok(if stop { ControlFlow::Break(()) } else { ControlFlow::Continue(()) }),
            Err(e) => {
                failure = Some(e);
                Ok(ControlFlow::Break(()))
            }
        },
    )?;
    if let Some(e) = failure {
        return Err(e);
    }
    Ok(rec.finish())
}

pub(crate) fn max_n(data: &[Dataset]) -> u64 {
    data.iter().map(Dataset::len).max().unwrap_or(0) as u64
}
