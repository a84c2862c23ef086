//! Stochastic solvers on minibatches: plain minibatch SGD through `M^{-1}`
//! (SSR), its accelerated three-sequence form (AC-SA), the stochastic local
//! prox (SOL) and distributed minibatch-prox.

use std::ops::ControlFlow;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::batch::{accelerated_proxgrad, bol_step, prox_columns, prox_tol_schedule};
use crate::data::{Dataset, Split};
use crate::error::{Error, Result};
use crate::graph::CouplingMatrix;
use crate::losses::LossKind;
use crate::objective::{from_u_space, loss_grads, to_u_space, Problem};
use crate::trace::{CommProfile, Recorder, RunOptions, RunTrace};

/// Anything that can produce fresh i.i.d. samples for each machine.
pub trait SampleSource: Sync {
    fn machines(&self) -> usize;
    fn dim(&self) -> usize;
    /// `count` new samples from machine `machine`'s distribution.
    fn draw(&self, machine: usize, count: usize, rng: &mut ChaCha8Rng) -> Result<Dataset>;
}

/// Where a [`SampleStream`] gets its samples.
#[derive(Clone, Copy)]
pub enum StreamMode<'a> {
    /// Never-reused draws from the data distribution.
    Fresh(&'a dyn SampleSource),
    /// Uniform draws with replacement from a fixed training set.
    Resample(&'a [Dataset]),
}

/// Per-machine minibatch generator with draw counters.
///
/// Machine `i` uses ChaCha8 seeded from the master seed on stream `i`, so the
/// machines' draws are independent of each other and of scheduling.
pub struct SampleStream<'a> {
    mode: StreamMode<'a>,
    rngs: Vec<ChaCha8Rng>,
    drawn: Vec<u64>,
    budget: Option<u64>,
}

impl<'a> SampleStream<'a> {
    pub fn new(mode: StreamMode<'a>, seed: u64) -> Self {
        let m = match mode {
            StreamMode::Fresh(src) => src.machines(),
            StreamMode::Resample(train) => train.len(),
        };
        let rngs = (0..m)
            .map(|i| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(i as u64);
                rng
            })
            .collect();
        Self {
            mode,
            rngs,
            drawn: vec![0; m],
            budget: None,
        }
    }

    pub fn fresh(source: &'a dyn SampleSource, seed: u64) -> Self {
        Self::new(StreamMode::Fresh(source), seed)
    }

    pub fn resample(train: &'a [Dataset], seed: u64) -> Self {
        Self::new(StreamMode::Resample(train), seed)
    }

    /// Caps the number of samples any machine may draw.
    pub fn with_budget(mut self, per_machine: u64) -> Self {
        self.budget = Some(per_machine);
        self
    }

    pub fn machines(&self) -> usize {
        self.rngs.len()
    }

    pub fn is_fresh(&self) -> bool {
        matches!(self.mode, StreamMode::Fresh(_))
    }

    /// Samples drawn so far by each machine.
    pub fn drawn(&self) -> &[u64] {
        &self.drawn
    }

    pub fn total_drawn(&self) -> u64 {
        self.drawn.iter().sum()
    }

    /// One minibatch of `b` samples per machine.
    pub fn next_batch(&mut self, b: usize) -> Result<Vec<Dataset>> {
        if b == 0 {
            return Err(Error::Domain("minibatch size must be positive".into()));
        }
        if let Some(budget) = self.budget {
            if let Some(i) = self.drawn.iter().position(|&d| d + b as u64 > budget) {
                return Err(Error::StreamExhausted {
                    machine: i,
                    drawn: self.drawn[i],
                });
            }
        }
        let mode = self.mode;
        let batch = self
            .rngs
            .par_iter_mut()
            .enumerate()
            .map(|(i, rng)| match mode {
                StreamMode::Fresh(src) => {
                    let mut ds = src.draw(i, b, rng)?;
                    if ds.split() != Split::Stream {
                        ds = Dataset::new(ds.x().clone(), ds.y().clone(), Split::Stream)?;
                    }
                    Ok(ds)
                }
                StreamMode::Resample(train) => {
                    let src = &train[i];
                    let rows: Vec<usize> = (0..b).map(|_| rng.random_range(0..src.len())).collect();
                    let x = DMatrix::from_fn(b, src.dim(), |j, c| src.x()[(rows[j], c)]);
                    let y = nalgebra::DVector::from_fn(b, |j, _| src.y()[rows[j]]);
                    Dataset::new(x, y, Split::Stream)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        for d in &mut self.drawn {
            *d += b as u64;
        }
        Ok(batch)
    }
}

/// Minibatch gradient matrix: column `k` is `(1/(mb))Σ_j ∇ℓ(w_k, z_kj)`.
pub fn minibatch_gradient(kind: LossKind, w: &DMatrix<f64>, batch: &[Dataset]) -> DMatrix<f64> {
    loss_grads(kind, w, batch) / batch.len() as f64
}

/// `W' = W − α·∇F̂^{t+1}(W)·M^{-1}`.
pub fn ssr_step(
    w: &DMatrix<f64>,
    alpha: f64,
    coupling: &CouplingMatrix,
    kind: LossKind,
    batch: &[Dataset],
) -> Result<DMatrix<f64>> {
    check_batch(w, batch)?;
    Ok(w - minibatch_gradient(kind, w, batch) * coupling.inverse() * alpha)
}

fn check_batch(w: &DMatrix<f64>, batch: &[Dataset]) -> Result<()> {
    crate::data::check_machines(batch, w.ncols(), w.nrows())
}

const STREAM_COLUMNS: [&str; 1] = ["samples_drawn_total"];

/// Minibatch SGD with `b` samples per machine per round and a fixed
/// stepsize.
pub fn run_ssr(
    problem: &Problem<'_>,
    coupling: &CouplingMatrix,
    stream: &mut SampleStream<'_>,
    b: usize,
    alpha: f64,
    opts: &RunOptions<'_>,
) -> Result<RunTrace> {
    let profile = CommProfile::broadcast(problem.machines(), b as u64);
    let mut rec = Recorder::new("ssr", *problem, opts, profile, &STREAM_COLUMNS);
    let mut w = rec.init();
    rec.record(0, &w, vec![0.0])?;
    for t in 1..=opts.max_rounds {
        let batch = stream.next_batch(b)?;
        w = ssr_step(&w, alpha, coupling, problem.loss, &batch)?;
        if rec.round(t, &w, vec![stream.total_drawn() as f64])? {
            break;
        }
    }
    Ok(rec.finish())
}

/// Constants for the AC-SA stepsize schedule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AcsaParams {
    pub horizon: usize,
    pub machines: usize,
    pub beta_f: f64,
    pub norm_bound: f64,
    /// Gradient noise level `σ`; 0 disables the noise branch.
    pub sigma: f64,
}

/// `(θ^{t+1}, α^{t+1})` with `θ^{t+1} = (t+1)/2` and
/// `α^{t+1} = ((t+1)/2)·min{m/(2β_F), √(12mB²)/((T+2)^{3/2}σ)}`.
pub fn acsa_stepsizes(t: usize, p: &AcsaParams) -> (f64, f64) {
    let half = (t as f64 + 1.0) / 2.0;
    (half, half * acsa_base_step(p))
}

fn acsa_base_step(p: &AcsaParams) -> f64 {
    let m = p.machines as f64;
    let smooth = m / (2.0 * p.beta_f);
    if p.sigma <= 0.0 {
        return smooth;
    }
    let noise = (12.0 * m * p.norm_bound * p.norm_bound).sqrt() / ((p.horizon as f64 + 2.0).powf(1.5) * p.sigma);
    smooth.min(noise)
}

/// Whether the noise branch of the stepsize minimum is the active one.
pub fn acsa_noise_branch_active(p: &AcsaParams) -> bool {
    p.sigma > 0.0 && acsa_base_step(p) < p.machines as f64 / (2.0 * p.beta_f)
}

/// Real horizon `T` where both branches of the stepsize minimum are equal:
/// `(T+2)^{3/2} = 2β_F·√(12mB²)/(mσ)`.
pub fn acsa_crossover_horizon(machines: usize, beta_f: f64, norm_bound: f64, sigma: f64) -> f64 {
    let m = machines as f64;
    (2.0 * beta_f * (12.0 * m * norm_bound * norm_bound).sqrt() / (m * sigma)).powf(2.0 / 3.0) - 2.0
}

/// `σ² = (4L²/m²)(1 + mρ)`.
pub fn sigma_bound(l: f64, m: usize, rho: f64) -> f64 {
    let m = m as f64;
    4.0 * l * l / (m * m) * (1.0 + m * rho)
}

/// The three AC-SA sequences.
#[derive(Debug, Clone, PartialEq)]
pub struct AcsaState {
    pub w: DMatrix<f64>,
    pub w_md: DMatrix<f64>,
    pub w_ag: DMatrix<f64>,
    pub theta: f64,
    pub alpha: f64,
}

impl AcsaState {
    pub fn zeros(d: usize, m: usize) -> Self {
        Self {
            w: DMatrix::zeros(d, m),
            w_md: DMatrix::zeros(d, m),
            w_ag: DMatrix::zeros(d, m),
            theta: 0.0,
            alpha: 0.0,
        }
    }

    /// Middle point for round `t` given the round's `θ`.
    pub fn middle(&self, theta: f64) -> DMatrix<f64> {
        &self.w / theta + &self.w_ag * (1.0 - 1.0 / theta)
    }

    /// One recursion step given the stochastic gradient direction at the
    /// middle point, already multiplied by the geometry (`M^{-1}` in W-space,
    /// `M^{-1/2}` in U-space).
    pub fn advance(&mut self, theta: f64, alpha: f64, direction: &DMatrix<f64>) {
        self.w -= direction * alpha;
        self.w_ag = &self.w / theta + &self.w_ag * (1.0 - 1.0 / theta);
        self.theta = theta;
        self.alpha = alpha;
    }
}

/// Which coordinates AC-SA iterates in. Both give the same iterates up to
/// rounding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AcsaSpace {
    W,
    U,
}

/// AC-SA from `W = 0` for `params.horizon` rounds with `b` samples per
/// machine per round; returns the trace of `W_ag`.
pub fn acsa_run(
    problem: &Problem<'_>,
    coupling: &CouplingMatrix,
    stream: &mut SampleStream<'_>,
    b: usize,
    params: &AcsaParams,
    space: AcsaSpace,
    opts: &RunOptions<'_>,
) -> Result<RunTrace> {
    let (d, m) = (problem.dim(), problem.machines());
    let profile = CommProfile::broadcast(m, b as u64);
    let name = match space {
        AcsaSpace::W => "acsa",
        AcsaSpace::U => "acsa_u",
    };
    let mut rec = Recorder::new(name, *problem, opts, profile, &STREAM_COLUMNS);
    let mut state = AcsaState::zeros(d, m);
    rec.record(0, &state.w_ag, vec![0.0])?;
    let rounds = params.horizon.min(opts.max_rounds.max(1));
    for t in 0..rounds {
        let (theta, alpha) = acsa_stepsizes(t, params);
        let md = state.middle(theta);
        let batch = stream.next_batch(b)?;
        let direction = match space {
            AcsaSpace::W => {
                state.w_md = md;
                minibatch_gradient(problem.loss, &state.w_md, &batch) * coupling.inverse()
            }
            AcsaSpace::U => {
                let w_md = from_u_space(&md, coupling);
                state.w_md = md;
                minibatch_gradient(problem.loss, &w_md, &batch) * coupling.inv_sqrt()
            }
        };
        state.advance(theta, alpha, &direction);
        let w_ag = match space {
            AcsaSpace::W => state.w_ag.clone(),
            AcsaSpace::U => from_u_space(&state.w_ag, coupling),
        };
        if rec.round(t + 1, &w_ag, vec![stream.total_drawn() as f64])? {
            break;
        }
    }
    Ok(rec.finish())
}

/// Stochastic local prox: one BOL step with the minibatch in place of the
/// local dataset.
pub fn sol_step(
    w: &DMatrix<f64>,
    alpha: f64,
    problem: &Problem<'_>,
    batch: &[Dataset],
    prox_tol: f64,
) -> Result<DMatrix<f64>> {
    bol_step(w, alpha, &problem.hp, problem.graph, problem.loss, batch, prox_tol)
}

/// Accelerated SOL: the accelerated BOL recursion with a fresh minibatch in
/// each prox.
pub fn accelerated_sol(
    problem: &Problem<'_>,
    stream: &mut SampleStream<'_>,
    b: usize,
    prox_tol: f64,
    opts: &RunOptions<'_>,
) -> Result<RunTrace> {
    let hp = problem.hp;
    if !(hp.eta > 0.0) {
        return Err(Error::Unsupported("acceleration needs eta > 0".into()));
    }
    let m = problem.machines() as f64;
    let beta = (hp.eta + hp.tau * problem.graph.lambda_max()) / m;
    let profile = CommProfile::neighbor(problem.graph.edge_count(), problem.machines(), b as u64);
    let mut rec = Recorder::new("sol", *problem, opts, profile, &STREAM_COLUMNS);
    let w0 = rec.init();
    rec.record(0, &w0, vec![0.0])?;
    let mut failure = None;
    let drawn = std::cell::Cell::new(0.0);
    accelerated_proxgrad(
        |w| problem.grad_regularizer(w),
        |v, t| {
            let batch = stream.next_batch(b)?;
            drawn.set(stream.total_drawn() as f64);
            prox_columns(problem.loss, v, m * beta, &batch, prox_tol_schedule(prox_tol, t))
        },
        beta,
        hp.eta / m,
        w0,
        opts.max_rounds,
        |t, w| match rec.round(t, w, vec![drawn.get()]) {
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

/// Constants for distributed minibatch-prox.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MbproxParams {
    pub horizon: usize,
    pub batch: usize,
    pub lipschitz: f64,
    pub norm_bound: f64,
    pub rho: f64,
    /// Overrides the default `γ` when set.
    pub gamma: Option<f64>,
    /// Multiplies every `ζ_{t+1}`.
    pub zeta_scale: f64,
    /// Inner iteration cap per outer step.
    pub inner_max_iter: usize,
}

impl MbproxParams {
    /// `γ = 2√(T/b)·L√(1+mρ)/(m^{3/2}B)` unless overridden.
    pub fn gamma(&self, m: usize) -> f64 {
        self.gamma.unwrap_or_else(|| mbprox_gamma(self.horizon, self.batch, self.lipschitz, self.norm_bound, self.rho, m))
    }

    pub fn zeta(&self, t: usize, m: usize) -> f64 {
        self.zeta_scale * mbprox_zeta(t, self.horizon, self.batch, self.lipschitz, self.norm_bound, self.rho, m)
    }
}

pub fn mbprox_gamma(horizon: usize, b: usize, l: f64, norm_bound: f64, rho: f64, m: usize) -> f64 {
    let mf = m as f64;
    2.0 * (horizon as f64 / b as f64).sqrt() * l * (1.0 + mf * rho).sqrt() / (mf.powf(1.5) * norm_bound)
}

/// Target suboptimality of outer step `t` (0-based), indexed by the iterate
/// it produces: `min((T/b)^{1/2}, (T/b)^{3/2})·LB(1+mρ)^{3/2}/(m^{5/2}(t+1)³)`.
pub fn mbprox_zeta(t: usize, horizon: usize, b: usize, l: f64, norm_bound: f64, rho: f64, m: usize) -> f64 {
    let r = horizon as f64 / b as f64;
    let mf = m as f64;
    r.sqrt().min(r.powf(1.5)) * l * norm_bound * (1.0 + mf * rho).powf(1.5) / (mf.powf(2.5) * (t as f64 + 1.0).powi(3))
}

/// The minibatch-prox subproblem
/// `f(W) = (γ/2)tr((W−A)M(W−A)ᵀ) + F̂_batch(W)` around anchor `A`.
pub struct MbproxSubproblem<'a> {
    pub kind: LossKind,
    pub gamma: f64,
    pub anchor: &'a DMatrix<f64>,
    pub coupling: &'a CouplingMatrix,
    pub batch: &'a [Dataset],
}

impl MbproxSubproblem<'_> {
    pub fn value(&self, w: &DMatrix<f64>) -> f64 {
        let diff = w - self.anchor;
        let quad = (&diff * self.coupling.matrix()).component_mul(&diff).sum();
        0.5 * self.gamma * quad + crate::objective::mean_loss(self.kind, w, self.batch)
    }

    pub fn gradient(&self, w: &DMatrix<f64>) -> DMatrix<f64> {
        (w - self.anchor) * self.coupling.matrix() * self.gamma + minibatch_gradient(self.kind, w, self.batch)
    }

    /// Smoothness of the quadratic part: `γ·λ_max(M)`.
    pub fn smoothness(&self) -> f64 {
        self.gamma * self.coupling.largest_eigenvalue()
    }

    /// Accelerated proximal gradient with the quadratic as the smooth part and
    /// the loss handled by per-machine prox steps, stopped once
    /// `‖∇f‖²/(2γ) ≤ zeta`. Returns the solution, iteration count and the
    /// final certificate.
    pub fn solve(&self, zeta: f64, max_iter: usize) -> Result<(DMatrix<f64>, usize, f64)> {
        let beta = self.smoothness();
        let m = self.anchor.ncols() as f64;
        let mut cert = f64::INFINITY;
        let out = accelerated_proxgrad(
            |w| Ok((w - self.anchor) * self.coupling.matrix() * self.gamma),
            |v, _| prox_columns(self.kind, v, m * beta, self.batch, (zeta * 1e-3).max(1e-15)),
            beta,
            self.gamma,
            self.anchor.clone(),
            max_iter,
            |_, w| {
                cert = self.gradient(w).norm_squared() / (2.0 * self.gamma);
                Ok(if cert <= zeta {
                    ControlFlow::Break(())
                } else {
                    ControlFlow::Continue(())
                })
            },
        )?;
        if cert > zeta {
            return Err(Error::NoConvergence {
                solver: "minibatch-prox subproblem",
                iterations: out.iterations,
                achieved: cert,
            });
        }
        Ok((out.x, out.iterations, cert))
    }

    /// Exact minimizer for the squared loss by conjugate gradient.
    pub fn exact(&self, tol: f64) -> Result<DMatrix<f64>> {
        if self.kind != LossKind::Squared {
            return Err(Error::Unsupported("closed-form subproblem needs the squared loss".into()));
        }
        let m = self.anchor.ncols() as f64;
        let mut rhs = self.anchor * self.coupling.matrix() * self.gamma;
        for (i, ds) in self.batch.iter().enumerate() {
            let mut col = rhs.column_mut(i);
            col += ds.cross_moment() / m;
        }
        let apply = |w: &DMatrix<f64>| {
            let mut out = w * self.coupling.matrix() * self.gamma;
            for (i, ds) in self.batch.iter().enumerate() {
                let hw = ds.second_moment() * w.column(i) / m;
                let mut col = out.column_mut(i);
                col += hw;
            }
            out
        };
        Ok(crate::linalg::conjugate_gradient(apply, &rhs, self.anchor.clone(), tol, 100_000)?.solution)
    }
}

const MBPROX_COLUMNS: [&str; 4] = ["samples_drawn_total", "inner_iters", "certificate", "zeta"];

/// Distributed minibatch-prox from `W = 0`; every inner iteration is one
/// neighbor round. Rows record the running average `W̄`.
pub fn minibatch_prox_run(
    problem: &Problem<'_>,
    coupling: &CouplingMatrix,
    stream: &mut SampleStream<'_>,
    params: &MbproxParams,
    opts: &RunOptions<'_>,
) -> Result<RunTrace> {
    let (d, m) = (problem.dim(), problem.machines());
    let gamma = params.gamma(m);
    if !(gamma > 0.0) || !gamma.is_finite() {
        return Err(Error::Domain(format!("prox weight must be positive, got {gamma}")));
    }
    let profile = CommProfile::neighbor(problem.graph.edge_count(), m, 0);
    let mut rec = Recorder::new("mbprox", *problem, opts, profile, &MBPROX_COLUMNS);
    let mut w = DMatrix::zeros(d, m);
    let mut sum = DMatrix::zeros(d, m);
    rec.record(0, &w, vec![0.0, 0.0, 0.0, 0.0])?;
    let rounds = params.horizon.min(opts.max_rounds.max(1));
    for t in 0..rounds {
        let batch = stream.next_batch(params.batch)?;
        let zeta = params.zeta(t, m);
        let sub = MbproxSubproblem {
            kind: problem.loss,
            gamma,
            anchor: &w,
            coupling,
            batch: &batch,
        };
        let (next, inner, cert) = sub.solve(zeta, params.inner_max_iter)?;
        w = next;
        sum += &w;
        let avg = &sum / (t + 1) as f64;
        let extras = vec![stream.total_drawn() as f64, inner as f64, cert, zeta];
        if rec.advance(t + 1, inner, params.batch as u64, &avg, extras)? {
            break;
        }
    }
    Ok(rec.finish())
}

/// U-space image of a W-space iterate, exposed for equivalence checks.
pub fn u_of(w: &DMatrix<f64>, coupling: &CouplingMatrix) -> DMatrix<f64> {
    to_u_space(w, coupling)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::batch::bsr_step;
    use crate::graph::{build_laplacian, TaskGraph};
    use crate::objective::Hyperparams;
    use nalgebra::DVector;

    fn instance(seed: u64, m: usize, n: usize, d: usize) -> (Vec<Dataset>, TaskGraph) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..m)
            .map(|_| {
                let x = DMatrix::from_fn(n, d, |_, _| rng.random_range(-1.0..1.0));
                let y = DVector::from_fn(n, |_, _| rng.random_range(-2.0..2.0));
                Dataset::new(x, y, Split::Train).unwrap()
            })
            .collect();
        let mut a = DMatrix::zeros(m, m);
        for i in 0..m {
            let k = (i + 1) % m;
            if k != i {
                a[(i, k)] = 1.0;
                a[(k, i)] = 1.0;
            }
        }
        (data, build_laplacian(a).unwrap())
    }

    #[test]
    fn full_batch_ssr_is_bsr_without_ridge() {
        let (data, g) = instance(1, 4, 6, 3);
        let c = g.coupling(1.5).unwrap();
        let w = DMatrix::from_fn(3, 4, |i, j| (i as f64 - j as f64) * 0.1);
        let alpha = 0.4;
        let ssr = ssr_step(&w, alpha, &c, LossKind::Squared, &data).unwrap();
        let hp = Hyperparams::new(0.0, 0.0);
        let bsr = bsr_step(&w, alpha / 4.0, &hp, &c, LossKind::Squared, &data).unwrap();
        assert!((ssr - bsr).amax() < 1e-14);
    }

    #[test]
    fn zero_residual_batch_leaves_w_unchanged() {
        let w = DMatrix::from_column_slice(2, 2, &[1.0, -1.0, 0.5, 2.0]);
        let batch: Vec<Dataset> = (0..2)
            .map(|i| {
                let x = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
                let y = &x * w.column(i);
                Dataset::new(x, y, Split::Stream).unwrap()
            })
            .collect();
        let (_, g) = instance(2, 2, 1, 2);
        let c = g.coupling(3.0).unwrap();
        assert!((ssr_step(&w, 0.7, &c, LossKind::Squared, &batch).unwrap() - &w).amax() < 1e-15);
    }

    #[test]
    fn resample_stream_counts_and_budget() {
        let (data, _) = instance(3, 3, 5, 2);
        let mut s = SampleStream::resample(&data, 9).with_budget(10);
        s.next_batch(4).unwrap();
        s.next_batch(4).unwrap();
        assert_eq!(s.drawn(), &[8, 8, 8]);
        assert!(matches!(s.next_batch(4), Err(Error::StreamExhausted { .. })));
    }

    #[test]
    fn streams_are_reproducible_and_machine_independent() {
        let (data, _) = instance(4, 3, 50, 2);
        let a = SampleStream::resample(&data, 5).next_batch(7).unwrap();
        let b = SampleStream::resample(&data, 5).next_batch(7).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.checksum(), y.checksum());
        }
        let c = SampleStream::resample(&data, 6).next_batch(7).unwrap();
        assert_ne!(a[0].checksum(), c[0].checksum());
    }

    #[test]
    fn acsa_first_middle_point_is_zero() {
        let p = AcsaParams {
            horizon: 10,
            machines: 3,
            beta_f: 2.0,
            norm_bound: 1.0,
            sigma: 0.5,
        };
        let (theta, _) = acsa_stepsizes(0, &p);
        assert_eq!(theta, 0.5);
        let s = AcsaState::zeros(2, 3);
        assert_eq!(s.middle(theta), DMatrix::zeros(2, 3));
    }

    #[test]
    fn acsa_crossover_matches_branch_switch() {
        let (m, beta_f, b, sigma) = (5, 3.0, 1.2, 0.05);
        let t_star = acsa_crossover_horizon(m, beta_f, b, sigma);
        let params = |horizon| AcsaParams {
            horizon,
            machines: m,
            beta_f,
            norm_bound: b,
            sigma,
        };
        let below = t_star.floor() as usize;
        assert!(!acsa_noise_branch_active(&params(below)));
        assert!(acsa_noise_branch_active(&params(below + 1)));
    }

    #[test]
    fn acsa_aggregate_identity_and_space_equivalence() {
        let (data, g) = instance(5, 4, 40, 3);
        let hp = Hyperparams::new(0.1, 0.5);
        let p = Problem::new(LossKind::Squared, &data, &g, hp).unwrap();
        let c = g.coupling(5.0).unwrap();
        let params = AcsaParams {
            horizon: 25,
            machines: 4,
            beta_f: 1.0,
            norm_bound: 1.0,
            sigma: 0.1,
        };
        let opts = RunOptions::rounds(25);
        let tw = acsa_run(&p, &c, &mut SampleStream::resample(&data, 3), 4, &params, AcsaSpace::W, &opts).unwrap();
        let tu = acsa_run(&p, &c, &mut SampleStream::resample(&data, 3), 4, &params, AcsaSpace::U, &opts).unwrap();
        assert!((tw.final_w.clone() - tu.final_w.clone()).norm() < 1e-8);
        for (a, b) in tw.rows.iter().zip(&tu.rows) {
            assert!((a.erm_objective - b.erm_objective).abs() < 1e-8);
        }

        let mut s = AcsaState::zeros(3, 4);
        let dir = DMatrix::from_element(3, 4, 0.3);
        let prev_ag = s.w_ag.clone();
        s.advance(1.5, 0.2, &dir);
        let expect = &s.w / 1.5 + prev_ag * (1.0 - 1.0 / 1.5);
        assert_eq!(s.w_ag, expect);
    }

    #[test]
    fn sigma_examples() {
        assert_eq!(sigma_bound(3.0, 1, 0.0), 36.0);
        assert!(sigma_bound(1.0, 4, 0.1) > sigma_bound(1.0, 4, 0.05));
    }

    #[test]
    fn full_batch_sol_is_bol() {
        let (data, g) = instance(6, 3, 8, 2);
        let hp = Hyperparams::new(0.2, 0.7);
        let p = Problem::new(LossKind::Squared, &data, &g, hp).unwrap();
        let w = DMatrix::from_element(2, 3, 0.1);
        let a = sol_step(&w, 0.3, &p, &data, 1e-14).unwrap();
        let b = bol_step(&w, 0.3, &hp, &g, LossKind::Squared, &data, 1e-14).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn mbprox_inner_smoothness_and_certificate() {
        let (data, g) = instance(7, 4, 10, 3);
        let c = g.coupling(2.0).unwrap();
        let anchor = DMatrix::from_element(3, 4, 0.2);
        let sub = MbproxSubproblem {
            kind: LossKind::Squared,
            gamma: 0.3,
            anchor: &anchor,
            coupling: &c,
            batch: &data,
        };
        assert!((sub.smoothness() - 0.3 * (1.0 + 2.0 * g.lambda_max())).abs() < 1e-12);
        let exact = sub.exact(1e-14).unwrap();
        let (w, _, cert) = sub.solve(1e-10, 10_000).unwrap();
        let gap = sub.value(&w) - sub.value(&exact);
        assert!(gap <= cert + 1e-12, "gap {gap} above certificate {cert}");
    }

    #[test]
    fn huge_prox_weight_freezes_iterates() {
        let (data, g) = instance(8, 3, 20, 2);
        let hp = Hyperparams::new(0.1, 0.3);
        let p = Problem::new(LossKind::Squared, &data, &g, hp).unwrap();
        let c = g.coupling(1.0).unwrap();
        let base = MbproxParams {
            horizon: 5,
            batch: 4,
            lipschitz: 3.0,
            norm_bound: 1.0,
            rho: g.rho(1.0, 1.0).unwrap(),
            gamma: None,
            zeta_scale: 1.0,
            inner_max_iter: 10_000,
        };
        let gamma = base.gamma(3) * 1e6;
        let params = MbproxParams {
            gamma: Some(gamma),
            ..base
        };
        let trace = minibatch_prox_run(&p, &c, &mut SampleStream::resample(&data, 1), &params, &RunOptions::rounds(5)).unwrap();
        assert!(trace.final_w.amax() < 1e-5);
    }

    #[test]
    fn zeta_uses_target_index() {
        let z0 = mbprox_zeta(0, 8, 2, 1.0, 1.0, 0.0, 1);
        let z1 = mbprox_zeta(1, 8, 2, 1.0, 1.0, 0.0, 1);
        assert!(z0.is_finite());
        assert!((z0 / z1 - 8.0).abs() < 1e-12);
    }
}
