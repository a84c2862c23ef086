//! Consensus checks: uniform gradient averaging keeps machines identical, the
//! neighbor-averaging weights have column sums `1 − αη`, and those weights
//! approach the doubly stochastic limit `I − L/λ_m` as `τ → ∞`.

use nalgebra::DMatrix;

use crate::batch::{combine_weights, WeightScheme};
use crate::data::{Dataset, Split};
use crate::error::{Error, Result};
use crate::graph::TaskGraph;
use crate::losses::LossKind;
use crate::objective::{loss_grads, Hyperparams};

use super::report::{Check, Report};

/// Limit weights: diagonal `1 − d_i/λ_m`, off-diagonal `a_ik/λ_m`.
pub fn limit_weights(graph: &TaskGraph) -> DMatrix<f64> {
    let mut mu = graph.laplacian() / (-graph.lambda_max());
    for i in 0..graph.m() {
        mu[(i, i)] += 1.0;
    }
    mu
}

/// Largest deviation of any row or column sum from 1.
pub fn stochastic_deviation(mu: &DMatrix<f64>) -> f64 {
    let rows = mu.row_iter().map(|r| (r.sum() - 1.0).abs());
    let cols = mu.column_iter().map(|c| (c.sum() - 1.0).abs());
    rows.chain(cols).fold(0.0, f64::max)
}

/// `W' = (1 − αη)W − G·(α/m)𝟙𝟙ᵀ` with every machine fed the pooled data;
/// returns the largest entrywise spread across columns over all steps.
pub fn uniform_weight_spread(kind: LossKind, pooled: &Dataset, m: usize, eta: f64, alpha: f64, steps: usize) -> f64 {
    let d = pooled.dim();
    let data: Vec<Dataset> = vec![pooled.clone(); m];
    let avg = DMatrix::from_element(m, m, alpha / m as f64);
    let mut w = DMatrix::zeros(d, m);
    let mut worst: f64 = 0.0;
    for _ in 0..steps {
        w = &w * (1.0 - alpha * eta) - loss_grads(kind, &w, &data) * &avg;
        for i in 1..m {
            worst = worst.max((w.column(i) - w.column(0)).amax());
        }
    }
    worst
}

/// τ ladder `10², 10³, …, 10⁸`.
pub fn tau_ladder() -> Vec<f64> {
    (2..=8).map(|e| 10f64.powi(e)).collect()
}

/// Runs checks (a), (b) and (c).
pub fn consensus_suite(graph: &TaskGraph, hp: &Hyperparams, kind: LossKind, datasets: &[Dataset]) -> Result<Report> {
    if !graph.is_connected() {
        return Err(Error::Disconnected(graph.lambda_2().unwrap_or(0.0)));
    }
    hp.validate()?;
    let m = graph.m();
    let mut report = Report::new("consensus");

    // (a) pooled minibatch: the union of every machine's first few samples
    let per = datasets.iter().map(|d| d.len()).min().unwrap_or(0).min(8);
    let rows: Vec<_> = datasets
        .iter()
        .flat_map(|ds| (0..per).map(move |j| ds.sample(j)))
        .collect();
    let pooled = Dataset::from_samples(&rows, Split::Train)?;
    let beta = crate::losses::estimate_constants(kind, std::slice::from_ref(&pooled), 1.0)?.beta_f;
    let spread = uniform_weight_spread(kind, &pooled, m, hp.eta, 1.0 / (beta + hp.eta), 50);
    report.push(Check::upper("uniform_weights_column_identity", spread, 0.0));

    // (c) column sums of the neighbor-averaging weights
    let alpha = 1.0 / (hp.eta + hp.tau * graph.lambda_max());
    let w = combine_weights(WeightScheme::FullGd, alpha, hp, graph)?;
    let sum_err = w
        .mu
        .column_iter()
        .map(|c| (c.sum() - (1.0 - alpha * hp.eta)).abs())
        .fold(0.0, f64::max);
    report.push(Check::upper("column_sums_one_minus_alpha_eta", sum_err, 1e-12));

    // (b) limit along the τ ladder
    let limit = limit_weights(graph);
    report.push(Check::upper("limit_weights_doubly_stochastic", stochastic_deviation(&limit), 1e-12));
    let mut prev = f64::INFINITY;
    let mut monotone = true;
    let mut last = f64::INFINITY;
    for tau in tau_ladder() {
        let h = Hyperparams::new(hp.eta, tau);
        let a = 1.0 / (h.eta + tau * graph.lambda_max());
        let mu = combine_weights(WeightScheme::FullGd, a, &h, graph)?.mu;
        let dist = (&mu - &limit).amax();
        monotone &= dist <= prev;
        prev = dist;
        last = dist;
    }
    report.push(Check::flag("limit_distance_monotone", monotone));
    report.push(Check::upper("limit_distance_at_top_of_ladder", last, 1e-4));
    Ok(report)
}
