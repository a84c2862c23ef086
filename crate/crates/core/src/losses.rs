//! Instantaneous losses: values, gradients, local proximal solves and the
//! Lipschitz / smoothness constants the step-size rules need.

use std::ops::ControlFlow;

use nalgebra::{DMatrix, DVector};

use crate::batch::accelerated_proxgrad;
use crate::data::{Dataset, Sample};
use crate::error::{Error, Result};
use crate::linalg::power_iteration;

/// Inner iteration cap for iterative prox solves.
pub const PROX_MAX_ITER: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LossKind {
    /// `½(⟨w,x⟩ − y)²`
    Squared,
    /// `log(1 + exp(−y⟨w,x⟩))`, labels in {−1, +1}
    Logistic,
}

impl LossKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LossKind::Squared => "squared",
            LossKind::Logistic => "logistic",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "squared" => Ok(LossKind::Squared),
            "logistic" => Ok(LossKind::Logistic),
            other => Err(Error::Config(format!("unknown loss {other:?}"))),
        }
    }

    fn value_at_margin(self, pred: f64, y: f64) -> f64 {
        match self {
            LossKind::Squared => 0.5 * (pred - y) * (pred - y),
            LossKind::Logistic => softplus(-y * pred),
        }
    }

    /// Derivative of the loss with respect to the prediction `⟨w,x⟩`.
    fn slope_at_margin(self, pred: f64, y: f64) -> f64 {
        match self {
            LossKind::Squared => pred - y,
            LossKind::Logistic => -y * sigmoid(-y * pred),
        }
    }

    /// Mean loss of `w` over a dataset, `F̂(w)`.
    pub fn empirical_value(self, w: &DVector<f64>, data: &Dataset) -> f64 {
        match self {
            LossKind::Squared => {
                0.5 * w.dot(&(data.second_moment() * w)) - w.dot(data.cross_moment())
                    + 0.5 * data.mean_y_sq()
            }
            LossKind::Logistic => {
                let preds = data.x() * w;
                preds
                    .iter()
                    .zip(data.y().iter())
                    .map(|(&p, &y)| self.value_at_margin(p, y))
                    .sum::<f64>()
                    / data.len() as f64
            }
        }
    }

    /// Gradient of the mean loss, `∇F̂(w)`.
    pub fn empirical_grad(self, w: &DVector<f64>, data: &Dataset) -> DVector<f64> {
        match self {
            LossKind::Squared => data.second_moment() * w - data.cross_moment(),
            LossKind::Logistic => {
                let preds = data.x() * w;
                let slopes = DVector::from_iterator(
                    data.len(),
                    preds
                        .iter()
                        .zip(data.y().iter())
                        .map(|(&p, &y)| self.slope_at_margin(p, y)),
                );
                data.x().tr_mul(&slopes) / data.len() as f64
            }
        }
    }

    /// Loss of each sample, in order.
    pub fn per_sample_values(self, w: &DVector<f64>, data: &Dataset) -> Vec<f64> {
        let preds = data.x() * w;
        preds
            .iter()
            .zip(data.y().iter())
            .map(|(&p, &y)| self.value_at_margin(p, y))
            .collect()
    }
}

fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

fn check_dim(w: &DVector<f64>, z: &Sample) -> Result<()> {
    if w.len() != z.x.len() {
        return Err(Error::Dimension(format!(
            "predictor has dimension {} but sample has {}",
            w.len(),
            z.x.len()
        )));
    }
    Ok(())
}

/// `ℓ(w, z)`.
pub fn loss_value(kind: LossKind, w: &DVector<f64>, z: &Sample) -> Result<f64> {
    check_dim(w, z)?;
    Ok(kind.value_at_margin(w.dot(&z.x), z.y))
}

/// `∇_w ℓ(w, z)`.
pub fn loss_grad(kind: LossKind, w: &DVector<f64>, z: &Sample) -> Result<DVector<f64>> {
    check_dim(w, z)?;
    Ok(&z.x * kind.slope_at_margin(w.dot(&z.x), z.y))
}

/// `argmin_u (β/2)‖u − center‖² + F̂(u)` to suboptimality `tol`.
///
/// Squared loss is solved exactly from `(βI + (1/n)ΣxxᵀI) u = β·center + (1/n)Σ y x`.
/// Other losses run the accelerated proximal gradient method on the whole
/// (strongly convex) objective and stop once `‖∇f(u)‖²/(2β) ≤ tol`.
pub fn local_prox(
    kind: LossKind,
    center: &DVector<f64>,
    inv_step: f64,
    data: &Dataset,
    tol: f64,
) -> Result<DVector<f64>> {
    if !(inv_step > 0.0) || !inv_step.is_finite() {
        return Err(Error::Domain(format!(
            "inverse step must be positive and finite, got {inv_step}"
        )));
    }
    if !(tol > 0.0) {
        return Err(Error::Domain(format!("prox tolerance must be positive, got {tol}")));
    }
    if center.len() != data.dim() {
        return Err(Error::Dimension(format!(
            "prox center has dimension {} but data has {}",
            center.len(),
            data.dim()
        )));
    }
    match kind {
        LossKind::Squared => {
            let mut system = data.second_moment().clone();
            for i in 0..system.nrows() {
                system[(i, i)] += inv_step;
            }
            let rhs = center * inv_step + data.cross_moment();
            let chol = system
                .cholesky()
                .ok_or_else(|| Error::Cholesky("prox system not positive definite".into()))?;
            Ok(chol.solve(&rhs))
        }
        LossKind::Logistic => {
            let smooth = inv_step + 0.25 * data.second_moment().trace();
            let grad = |u: &DVector<f64>| (u - center) * inv_step + kind.empirical_grad(u, data);
            let mut certificate = f64::INFINITY;
            let out = accelerated_proxgrad(
                |u: &DMatrix<f64>| Ok(as_matrix(grad(&as_vector(u)))),
                |v: &DMatrix<f64>, _t| Ok(v.clone()),
                smooth,
                inv_step,
                as_matrix(center.clone()),
                PROX_MAX_ITER,
                |_, u| {
                    let g = grad(&as_vector(u));
                    certificate = g.norm_squared() / (2.0 * inv_step);
                    Ok(if certificate <= tol {
                        ControlFlow::Break(())
                    } else {
                        ControlFlow::Continue(())
                    })
                },
            )?;
            if certificate > tol {
                return Err(Error::NoConvergence {
                    solver: "local prox",
                    iterations: out.iterations,
                    achieved: certificate,
                });
            }
            Ok(as_vector(&out.x))
        }
    }
}

fn as_matrix(v: DVector<f64>) -> DMatrix<f64> {
    let n = v.len();
    v.reshape_generic(nalgebra::Dyn(n), nalgebra::Dyn(1))
}

fn as_vector(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_column_slice(m.as_slice())
}

/// Lipschitz and smoothness constants of a loss over a set of machines.
#[derive(Debug, Clone, PartialEq)]
pub struct LossConstants {
    /// Effective Lipschitz constant `L` (over the ball `‖w‖ ≤ B_eff` for the
    /// squared loss).
    pub lipschitz: f64,
    /// Per-machine smoothness `β_i`.
    pub smoothness: Vec<f64>,
    /// `β_F = max_i β_i`.
    pub beta_f: f64,
}

pub fn estimate_constants(kind: LossKind, datasets: &[Dataset], b_eff: f64) -> Result<LossConstants> {
    if datasets.is_empty() {
        return Err(Error::Empty("no datasets to estimate constants from".into()));
    }
    if kind == LossKind::Squared && !(b_eff > 0.0) {
        return Err(Error::Domain(format!(
            "effective radius must be positive for the squared loss, got {b_eff}"
        )));
    }
    let mut smoothness = Vec::with_capacity(datasets.len());
    for ds in datasets {
        let top = power_iteration(ds.second_moment(), 1e-6, 1_000_000)?;
        smoothness.push(match kind {
            LossKind::Squared => top,
            LossKind::Logistic => 0.25 * top,
        });
    }
    let beta_f = smoothness.iter().copied().fold(0.0, f64::max);
    let max_x = datasets
        .iter()
        .flat_map(|ds| ds.x().row_iter().map(|r| r.norm()))
        .fold(0.0, f64::max);
    let max_y = datasets
        .iter()
        .flat_map(|ds| ds.y().iter().map(|y| y.abs()))
        .fold(0.0, f64::max);
    let lipschitz = match kind {
        LossKind::Squared => max_x * (max_x * b_eff + max_y),
        LossKind::Logistic => max_x,
    };
    Ok(LossConstants {
        lipschitz,
        smoothness,
        beta_f,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Split;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_dataset(rng: &mut ChaCha8Rng, n: usize, d: usize, logistic: bool) -> Dataset {
        let x = DMatrix::from_fn(n, d, |_, _| rng.random_range(-1.0..1.0));
        let y = DVector::from_fn(n, |_, _| {
            if logistic {
                if rng.random::<bool>() { 1.0 } else { -1.0 }
            } else {
                rng.random_range(-2.0..2.0)
            }
        });
        Dataset::new(x, y, Split::Train).unwrap()
    }

    #[test]
    fn value_examples() {
        let x = DVector::from_vec(vec![0.3, -1.2]);
        let w0 = DVector::zeros(2);
        assert_eq!(loss_value(LossKind::Squared, &w0, &Sample::new(x.clone(), 0.0)).unwrap(), 0.0);
        assert_eq!(loss_value(LossKind::Squared, &w0, &Sample::new(x.clone(), 3.0)).unwrap(), 4.5);
        let l = loss_value(LossKind::Logistic, &w0, &Sample::new(x.clone(), -1.0)).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-15);
        assert!(loss_value(LossKind::Squared, &DVector::zeros(3), &Sample::new(x, 0.0)).is_err());
    }

    #[test]
    fn grad_examples() {
        let x = DVector::from_vec(vec![0.3, -1.2]);
        let g = loss_grad(LossKind::Squared, &DVector::zeros(2), &Sample::new(x.clone(), 2.0)).unwrap();
        assert_eq!(g, &x * -2.0);
        let far = DVector::from_vec(vec![300.0, -1200.0]);
        let g = loss_grad(LossKind::Logistic, &far, &Sample::new(x, 1.0)).unwrap();
        assert!(g.norm() < 1e-100);
    }

    #[test]
    fn prox_single_sample_by_hand() {
        let ds = Dataset::from_samples(
            &[Sample::new(DVector::from_vec(vec![1.0, 0.0]), 1.0)],
            Split::Train,
        )
        .unwrap();
        let u = local_prox(LossKind::Squared, &DVector::zeros(2), 1.0, &ds, 1e-12).unwrap();
        assert!((u - DVector::from_vec(vec![0.5, 0.0])).norm() < 1e-15);
    }

    #[test]
    fn huge_pull_returns_center() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for kind in [LossKind::Squared, LossKind::Logistic] {
            let ds = random_dataset(&mut rng, 20, 4, kind == LossKind::Logistic);
            let c = DVector::from_vec(vec![0.4, -0.2, 1.0, 0.0]);
            let u = local_prox(kind, &c, 1e12, &ds, 1e-12).unwrap();
            assert!((u - c).norm() < 1e-6);
        }
    }

    #[test]
    fn prox_first_order_conditions() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for kind in [LossKind::Squared, LossKind::Logistic] {
            let ds = random_dataset(&mut rng, 30, 5, kind == LossKind::Logistic);
            let c = DVector::from_fn(5, |_, _| rng.random_range(-1.0..1.0));
            let beta = 0.7;
            let tol = 1e-12;
            let u = local_prox(kind, &c, beta, &ds, tol).unwrap();
            let stationarity = (&u - &c) * beta + kind.empirical_grad(&u, &ds);
            // ‖∇f‖ ≤ sqrt(2β·tol) by the certificate
            assert!(stationarity.norm() <= (2.0 * beta * tol).sqrt() + 1e-12 * beta);
        }
    }

    #[test]
    fn prox_rejects_bad_arguments() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let ds = random_dataset(&mut rng, 5, 2, false);
        let c = DVector::zeros(2);
        assert!(local_prox(LossKind::Squared, &c, 0.0, &ds, 1e-9).is_err());
        assert!(local_prox(LossKind::Squared, &c, 1.0, &ds, 0.0).is_err());
        assert!(local_prox(LossKind::Squared, &DVector::zeros(3), 1.0, &ds, 1e-9).is_err());
    }

    #[test]
    fn constants_examples() {
        let single = Dataset::from_samples(
            &[Sample::new(DVector::from_vec(vec![1.0, 0.0, 0.0]), 0.0)],
            Split::Train,
        )
        .unwrap();
        let c = estimate_constants(LossKind::Squared, std::slice::from_ref(&single), 1.0).unwrap();
        assert!((c.smoothness[0] - 1.0).abs() < 1e-12);
        assert!(estimate_constants(LossKind::Squared, std::slice::from_ref(&single), 0.0).is_err());

        let s = 1.0 / 2f64.sqrt();
        let ds = Dataset::from_samples(
            &[
                Sample::new(DVector::from_vec(vec![s * 2.0, s * 2.0]), 1.0),
                Sample::new(DVector::from_vec(vec![0.0, -2.0]), -1.0),
            ],
            Split::Train,
        )
        .unwrap();
        let c = estimate_constants(LossKind::Logistic, &[ds], 1.0).unwrap();
        assert!((c.lipschitz - 2.0).abs() < 1e-12);
    }

    #[test]
    fn smoothness_matches_dense_eigensolver() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let ds = random_dataset(&mut rng, 20, 5, false);
        let c = estimate_constants(LossKind::Squared, std::slice::from_ref(&ds), 1.0).unwrap();
        let oracle = ds.second_moment().clone().symmetric_eigen().eigenvalues.max();
        assert!((c.smoothness[0] - oracle).abs() <= 1e-5 * oracle);
    }
}
