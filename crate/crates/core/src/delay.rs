//! Bounded-delay BOL: each machine reads its neighbors' predictors with a
//! per-edge staleness of at most `Γ` rounds.

use std::collections::VecDeque;

use nalgebra::DMatrix;

use crate::batch::prox_columns;
use crate::error::{Error, Result};
use crate::graph::TaskGraph;
use crate::objective::{Hyperparams, Problem};
use crate::trace::{CommProfile, Recorder, RunOptions, RunTrace};

/// Required closeness of the affinity matrix to double stochasticity.
pub const DOUBLY_STOCHASTIC_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DelayMode {
    /// Every directed edge has its own constant delay.
    Fixed,
    /// Independent uniform delay per directed edge and round.
    UniformRandom,
    /// Always the oldest admissible iterate.
    AdversarialMax,
}

impl DelayMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "fixed" => Ok(Self::Fixed),
            "uniform_random" | "uniform" => Ok(Self::UniformRandom),
            "adversarial_max" | "adversarial" => Ok(Self::AdversarialMax),
            other => Err(Error::Config(format!("unknown delay mode {other:?}"))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Fixed => "fixed",
            Self::UniformRandom => "uniform_random",
            Self::AdversarialMax => "adversarial_max",
        }
    }
}

/// Deterministic delays `d_ik(t) ∈ [0, min(Γ, t)]` derived from
/// `(seed, i, k, t)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DelaySchedule {
    pub gamma_max: usize,
    pub mode: DelayMode,
    pub seed: u64,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn hash(parts: &[u64]) -> u64 {
    parts.iter().fold(0u64, |h, &p| splitmix(h ^ splitmix(p)))
}

impl DelaySchedule {
    pub fn new(gamma_max: usize, mode: DelayMode, seed: u64) -> Self {
        Self { gamma_max, mode, seed }
    }

    /// Delay with which machine `i` sees machine `k` at round `t`.
    pub fn delay(&self, i: usize, k: usize, t: usize) -> usize {
        let cap = self.gamma_max.min(t);
        match self.mode {
            DelayMode::AdversarialMax => cap,
            DelayMode::Fixed => {
                let d = hash(&[self.seed, i as u64, k as u64]) % (self.gamma_max as u64 + 1);
                (d as usize).min(cap)
            }
            DelayMode::UniformRandom => {
                (hash(&[self.seed, i as u64, k as u64, t as u64]) % (cap as u64 + 1)) as usize
            }
        }
    }
}

/// The last `Γ + 1` iterates.
#[derive(Debug, Clone)]
pub struct History {
    buf: VecDeque<DMatrix<f64>>,
    capacity: usize,
    /// Index of the newest iterate.
    t: usize,
}

impl History {
    pub fn new(gamma_max: usize, w0: DMatrix<f64>) -> Self {
        let mut buf = VecDeque::with_capacity(gamma_max + 1);
        buf.push_back(w0);
        Self {
            buf,
            capacity: gamma_max + 1,
            t: 0,
        }
    }

    pub fn push(&mut self, w: DMatrix<f64>) {
        if self.buf.len() == self.capacity {
            self.buf.pop_front();
        }
        self.buf.push_back(w);
        self.t += 1;
    }

    /// Round index of the newest iterate.
    pub fn current_round(&self) -> usize {
        self.t
    }

    pub fn latest(&self) -> &DMatrix<f64> {
        self.buf.back().expect("history is never empty")
    }

    /// `W^{t−delay}`.
    pub fn stale(&self, delay: usize) -> Result<&DMatrix<f64>> {
        if delay >= self.buf.len() {
            return Err(Error::DelayExceedsHistory {
                delay,
                available: self.buf.len() - 1,
            });
        }
        Ok(&self.buf[self.buf.len() - 1 - delay])
    }
}

/// `∇̃_i R = (1/m)(η w_i^t + τ Σ_k a_ik (w_i^t − w_k^{t−d_ik(t)}))` for all
/// machines, plus the mean delay over the edges read.
pub fn delayed_grad_regularizer(
    history: &History,
    hp: &Hyperparams,
    graph: &TaskGraph,
    schedule: &DelaySchedule,
) -> Result<(DMatrix<f64>, f64)> {
    let t = history.current_round();
    let w = history.latest();
    let m = graph.m();
    let a = graph.adjacency();
    let mut out = w * hp.eta;
    let (mut delay_sum, mut reads) = (0usize, 0usize);
    for i in 0..m {
        for k in graph.neighbors(i) {
            let d = schedule.delay(i, k, t);
            delay_sum += d;
            reads += 1;
            let stale = history.stale(d)?;
            let diff = w.column(i) - stale.column(k);
            let mut col = out.column_mut(i);
            col.axpy(hp.tau * a[(i, k)], &diff, 1.0);
        }
    }
    let mean = if reads == 0 { 0.0 } else { delay_sum as f64 / reads as f64 };
    Ok((out / m as f64, mean))
}

/// `(1 − η/(η+τ))^{t/(1+Γ)}·v0`.
pub fn theorem7_bound(t: usize, eta: f64, tau: f64, gamma_max: usize, v0: f64) -> f64 {
    let ratio = tau / (eta + tau);
    ratio.powf(t as f64 / (1.0 + gamma_max as f64)) * v0
}

/// `max_i ‖w_i − ŵ_i‖`.
pub fn worst_machine_distance(w: &DMatrix<f64>, oracle: &DMatrix<f64>) -> f64 {
    (w - oracle).column_iter().map(|c| c.norm()).fold(0.0, f64::max)
}

const DELAY_COLUMNS: [&str; 4] = ["gamma_max", "mean_delay", "v", "bound"];

/// Delayed prox-gradient with inverse stepsize `β = (η+τ)/m` on a doubly
/// stochastic affinity graph. `V(t)` is measured against `oracle`.
pub fn delayed_bol_run(
    problem: &Problem<'_>,
    schedule: &DelaySchedule,
    prox_tol: f64,
    oracle: &DMatrix<f64>,
    opts: &RunOptions<'_>,
) -> Result<RunTrace> {
    let graph = problem.graph;
    let dev = graph.doubly_stochastic_deviation();
    if dev > DOUBLY_STOCHASTIC_TOL {
        return Err(Error::NotDoublyStochastic(dev));
    }
    let hp = problem.hp;
    let inv_step = hp.eta + hp.tau;
    if !(inv_step > 0.0) {
        return Err(Error::Domain("need eta + tau > 0".into()));
    }
    let m = problem.machines() as f64;
    let beta = inv_step / m;
    let profile = CommProfile::neighbor(graph.edge_count(), problem.machines(), crate::batch::max_n(problem.data));
    let mut rec = Recorder::new("bol_delayed", *problem, opts, profile, &DELAY_COLUMNS);
    let w0 = rec.init();
    let v0 = worst_machine_distance(&w0, oracle);
    let gm = schedule.gamma_max as f64;
    rec.record(0, &w0, vec![gm, 0.0, v0, v0])?;
    let mut history = History::new(schedule.gamma_max, w0);
    for t in 1..=opts.max_rounds {
        let (grad, mean_delay) = delayed_grad_regularizer(&history, &hp, graph, schedule)?;
        let centers = history.latest() - grad / beta;
        let w = prox_columns(problem.loss, &centers, inv_step, problem.data, prox_tol)?;
        let v = worst_machine_distance(&w, oracle);
        let bound = theorem7_bound(t, hp.eta, hp.tau, schedule.gamma_max, v0);
        let stop = rec.round(t, &w, vec![gm, mean_delay, v, bound])?;
        history.push(w);
        if stop {
            break;
        }
    }
    Ok(rec.finish())
}
