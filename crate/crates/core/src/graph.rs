//! Task-relatedness graphs: adjacency validation, the Laplacian and its
//! spectrum, the coupling matrix `M = I + κL` with its inverse and square
//! roots, the relatedness measure ρ(B, S), k-NN construction and symmetric
//! doubly-stochastic scaling.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::spectral_apply;

const SYMMETRY_TOL: f64 = 1e-12;
const PSD_TOL: f64 = 1e-10;

/// An immutable relatedness graph over `m` tasks.
#[derive(Debug, Clone)]
pub struct TaskGraph {
    adjacency: DMatrix<f64>,
    laplacian: DMatrix<f64>,
    eigenvalues: DVector<f64>,
    eigenvectors: DMatrix<f64>,
    edge_count: usize,
}

/// Builds a [`TaskGraph`] from a symmetric nonnegative adjacency matrix with
/// zero diagonal.
pub fn build_laplacian(adjacency: DMatrix<f64>) -> Result<TaskGraph> {
    TaskGraph::from_adjacency(adjacency)
}

impl TaskGraph {
    pub fn from_adjacency(adjacency: DMatrix<f64>) -> Result<Self> {
        let m = adjacency.nrows();
        if adjacency.ncols() != m {
            return Err(Error::Dimension(format!(
                "adjacency must be square, got {:?}",
                adjacency.shape()
            )));
        }
        if m == 0 {
            return Err(Error::Empty("adjacency with zero tasks".into()));
        }
        for i in 0..m {
            for k in 0..m {
                let a = adjacency[(i, k)];
                if !a.is_finite() {
                    return Err(Error::InvalidAdjacency {
                        row: i,
                        col: k,
                        reason: format!("non-finite weight {a}"),
                    });
                }
                if a < 0.0 {
                    return Err(Error::InvalidAdjacency {
                        row: i,
                        col: k,
                        reason: format!("negative weight {a}"),
                    });
                }
                if i == k && a.abs() > SYMMETRY_TOL {
                    return Err(Error::InvalidAdjacency {
                        row: i,
                        col: k,
                        reason: format!("nonzero diagonal {a}"),
                    });
                }
                if (a - adjacency[(k, i)]).abs() > SYMMETRY_TOL {
                    return Err(Error::InvalidAdjacency {
                        row: i,
                        col: k,
                        reason: format!("asymmetric: {a} vs {}", adjacency[(k, i)]),
                    });
                }
            }
        }
        let mut adjacency = adjacency;
        adjacency.fill_diagonal(0.0);

        let degrees = adjacency.column_sum();
        let mut laplacian = -adjacency.clone();
        for i in 0..m {
            laplacian[(i, i)] = degrees[i];
        }

        let eig = laplacian.clone().symmetric_eigen();
        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let scale = eig.eigenvalues.max().abs().max(1.0);
        let mut eigenvalues = DVector::zeros(m);
        let mut eigenvectors = DMatrix::zeros(m, m);
        for (dst, &src) in order.iter().enumerate() {
            let mut lam = eig.eigenvalues[src];
            if lam < -PSD_TOL * scale {
                return Err(Error::NotPsd(lam));
            }
            if lam.abs() <= PSD_TOL * scale {
                lam = 0.0;
            }
            eigenvalues[dst] = lam;
            eigenvectors.set_column(dst, &eig.eigenvectors.column(src));
        }

        let mut edge_count = 0;
        for i in 0..m {
            for k in (i + 1)..m {
                if adjacency[(i, k)] > 0.0 {
                    edge_count += 1;
                }
            }
        }

        Ok(Self {
            adjacency,
            laplacian,
            eigenvalues,
            eigenvectors,
            edge_count,
        })
    }

    /// Number of tasks / machines.
    pub fn m(&self) -> usize {
        self.adjacency.nrows()
    }

    pub fn adjacency(&self) -> &DMatrix<f64> {
        &self.adjacency
    }

    pub fn laplacian(&self) -> &DMatrix<f64> {
        &self.laplacian
    }

    /// Laplacian eigenvalues in ascending order, clamped so that λ₁ = 0.
    pub fn eigenvalues(&self) -> &DVector<f64> {
        &self.eigenvalues
    }

    /// Orthonormal eigenvectors (columns) matching [`Self::eigenvalues`].
    pub fn eigenvectors(&self) -> &DMatrix<f64> {
        &self.eigenvectors
    }

    pub fn lambda_max(&self) -> f64 {
        self.eigenvalues[self.m() - 1]
    }

    /// Second-smallest eigenvalue (algebraic connectivity); `None` for a
    /// single-node graph.
    pub fn lambda_2(&self) -> Option<f64> {
        (self.m() > 1).then(|| self.eigenvalues[1])
    }

    /// Number of unordered pairs with positive weight.
    pub fn edge_count(&self) -> usize {
        self.edge_count
    }

    pub fn degrees(&self) -> DVector<f64> {
        self.adjacency.column_sum()
    }

    /// Indices `k` with `a_ik > 0`.
    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.m()).filter(move |&k| self.adjacency[(i, k)] > 0.0)
    }

    pub fn is_connected(&self) -> bool {
        match self.lambda_2() {
            None => true,
            Some(l2) => l2 > 1e-8 * self.lambda_max(),
        }
    }

    /// Largest absolute deviation of any row or column sum of the adjacency
    /// from 1.
    pub fn doubly_stochastic_deviation(&self) -> f64 {
        let rows = self.adjacency.column_sum();
        let cols = self.adjacency.row_sum();
        rows.iter()
            .chain(cols.iter())
            .map(|s| (s - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// ρ(B, S) = (1/m)·Σ_{i≥2} 1/(1 + λ_i·m·B²/S²).
    pub fn rho(&self, b: f64, s: f64) -> Result<f64> {
        rho(self, b, s)
    }

    pub fn coupling(&self, kappa: f64) -> Result<CouplingMatrix> {
        build_coupling(self, kappa)
    }
}

/// The coupling matrix `M = I + κL` and its spectral functions. All four
/// matrices share the eigenbasis of `L`.
#[derive(Debug, Clone)]
pub struct CouplingMatrix {
    kappa: f64,
    matrix: DMatrix<f64>,
    inverse: DMatrix<f64>,
    sqrt: DMatrix<f64>,
    inv_sqrt: DMatrix<f64>,
    eigenvalues: DVector<f64>,
}

pub fn build_coupling(graph: &TaskGraph, kappa: f64) -> Result<CouplingMatrix> {
    if !(kappa >= 0.0) || !kappa.is_finite() {
        return Err(Error::Domain(format!(
            "coupling strength must be finite and nonnegative, got {kappa}"
        )));
    }
    let m = graph.m();
    let matrix = DMatrix::identity(m, m) + graph.laplacian() * kappa;
    let eigenvalues = graph.eigenvalues().map(|l| 1.0 + kappa * l);
    let vecs = graph.eigenvectors();
    let lam = graph.eigenvalues();
    let f = |g: fn(f64) -> f64| spectral_apply(vecs, lam, move |l| g(1.0 + kappa * l));
    let inverse = f(|x| 1.0 / x);
    let sqrt = f(f64::sqrt);
    let inv_sqrt = f(|x| 1.0 / x.sqrt());
    Ok(CouplingMatrix {
        kappa,
        matrix,
        inverse,
        sqrt,
        inv_sqrt,
        eigenvalues,
    })
}

impl CouplingMatrix {
    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    /// `M = I + κL`.
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn inverse(&self) -> &DMatrix<f64> {
        &self.inverse
    }

    pub fn sqrt(&self) -> &DMatrix<f64> {
        &self.sqrt
    }

    pub fn inv_sqrt(&self) -> &DMatrix<f64> {
        &self.inv_sqrt
    }

    /// Eigenvalues `1 + κλ_i`, ascending.
    pub fn eigenvalues(&self) -> &DVector<f64> {
        &self.eigenvalues
    }

    pub fn largest_eigenvalue(&self) -> f64 {
        self.eigenvalues[self.eigenvalues.len() - 1]
    }

    /// `tr(M⁻¹) = Σ_i 1/(1 + κλ_i)` from the spectrum.
    pub fn trace_inverse(&self) -> f64 {
        self.eigenvalues.iter().map(|e| 1.0 / e).sum()
    }
}

/// Task-relatedness measure ρ(B, S) ∈ [0, (m−1)/m].
///
/// `S = 0` returns the consensus limit, which is 0 on a connected graph (a
/// disconnected graph keeps one unit per extra zero eigenvalue).
pub fn rho(graph: &TaskGraph, b: f64, s: f64) -> Result<f64> {
    if !(b > 0.0) {
        return Err(Error::Domain(format!("B must be positive, got {b}")));
    }
    if !(s >= 0.0) {
        return Err(Error::Domain(format!("S must be nonnegative, got {s}")));
    }
    let m = graph.m() as f64;
    let tail = graph.eigenvalues().iter().skip(1);
    if s == 0.0 {
        let zeros = tail.filter(|&&l| l == 0.0).count();
        return Ok(zeros as f64 / m);
    }
    let ratio = m * b * b / (s * s);
    Ok(tail.map(|l| 1.0 / (1.0 + l * ratio)).sum::<f64>() / m)
}

/// Binary k-nearest-neighbour graph over the columns of `predictors`,
/// symmetrised by union. Distance ties go to the lower index.
pub fn knn_graph(predictors: &DMatrix<f64>, k: usize) -> Result<DMatrix<f64>> {
    let m = predictors.ncols();
    if k >= m {
        return Err(Error::Domain(format!("k = {k} must be below m = {m}")));
    }
    if predictors.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("predictors contain non-finite entries".into()));
    }
    let mut adjacency = DMatrix::zeros(m, m);
    for i in 0..m {
        let mut others: Vec<(f64, usize)> = (0..m)
            .filter(|&j| j != i)
            .map(|j| ((predictors.column(i) - predictors.column(j)).norm_squared(), j))
            .collect();
        others.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        for &(_, j) in others.iter().take(k) {
            adjacency[(i, j)] = 1.0;
            adjacency[(j, i)] = 1.0;
        }
    }
    Ok(adjacency)
}

/// Symmetric Sinkhorn scaling `D·A·D` with row and column sums 1 and the
/// sparsity pattern of `A`.
///
/// Uses the damped fixed point `x ← sqrt(x / (A x))`; stops at a maximum
/// row-sum deviation below 1e-10 or after 10 000 iterations.
pub fn make_doubly_stochastic(adjacency: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    make_doubly_stochastic_with(adjacency, 1e-10, 10_000)
}

pub fn make_doubly_stochastic_with(
    adjacency: &DMatrix<f64>,
    tol: f64,
    max_iter: usize,
) -> Result<DMatrix<f64>> {
    // validates symmetry / sign / diagonal
    let graph = TaskGraph::from_adjacency(adjacency.clone())?;
    let a = graph.adjacency();
    let m = graph.m();
    if let Some(i) = (0..m).find(|&i| graph.degrees()[i] == 0.0) {
        return Err(Error::Domain(format!("node {i} has no edges; cannot be scaled")));
    }
    let scaled = |x: &DVector<f64>| DMatrix::from_fn(m, m, |i, k| x[i] * a[(i, k)] * x[k]);
    let deviation = |x: &DVector<f64>| {
        let ax = a * x;
        x.iter()
            .zip(ax.iter())
            .map(|(xi, axi)| (xi * axi - 1.0).abs())
            .fold(0.0, |acc: f64, v| if v.is_finite() { acc.max(v) } else { f64::INFINITY })
    };

    let mut x = DVector::from_element(m, 1.0);
    let mut dev = deviation(&x);
    for _ in 0..max_iter {
        if dev < tol {
            return Ok(scaled(&x));
        }
        let ax = a * &x;
        x = x.zip_map(&ax, |xi, axi| (xi / axi).sqrt());
        dev = deviation(&x);
        // scalings escaping to 0 or ∞ mean no positive scaling exists
        if x.iter().any(|v| !v.is_finite() || *v == 0.0) {
            return Err(Error::ScalingNoConvergence {
                iterations: max_iter,
                deviation: dev,
            });
        }
    }
    if dev < tol {
        return Ok(scaled(&x));
    }
    Err(Error::ScalingNoConvergence {
        iterations: max_iter,
        deviation: dev,
    })
}
