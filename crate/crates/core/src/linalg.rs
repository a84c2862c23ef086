//! Small dense linear-algebra helpers shared by the solvers: conjugate
//! gradient on matrix-valued operators, power iteration, spectral matrix
//! functions and a plain-text matrix format.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Frobenius inner product `tr(AᵀB)`.
pub fn frob_dot(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

/// Outcome of a conjugate-gradient solve.
#[derive(Debug, Clone)]
pub struct CgOutcome {
    pub solution: DMatrix<f64>,
    pub iterations: usize,
    pub residual_norm: f64,
}

/// Conjugate gradient for `apply(X) = rhs` where `apply` is symmetric positive
/// (semi)definite under the Frobenius inner product. Stops once the residual
/// Frobenius norm drops to `tol`.
pub fn conjugate_gradient<F>(
    mut apply: F,
    rhs: &DMatrix<f64>,
    x0: DMatrix<f64>,
    tol: f64,
    max_iter: usize,
) -> Result<CgOutcome>
where
    F: FnMut(&DMatrix<f64>) -> DMatrix<f64>,
{
    if rhs.shape() != x0.shape() {
        return Err(Error::Dimension(format!(
            "cg: rhs {:?} vs initial guess {:?}",
            rhs.shape(),
            x0.shape()
        )));
    }
    let mut x = x0;
    let mut r = rhs - apply(&x);
    let mut p = r.clone();
    let mut rr = frob_dot(&r, &r);
    for it in 0..max_iter {
        if rr.sqrt() <= tol {
            return Ok(CgOutcome {
                solution: x,
                iterations: it,
                residual_norm: rr.sqrt(),
            });
        }
        let ap = apply(&p);
        let pap = frob_dot(&p, &ap);
        if pap <= 0.0 {
            break;
        }
        let step = rr / pap;
        x += &p * step;
        r -= &ap * step;
        let rr_next = frob_dot(&r, &r);
        p = &r + &p * (rr_next / rr);
        rr = rr_next;
    }
    // one last exact residual to report honestly
    let residual = (rhs - apply(&x)).norm();
    if residual <= tol {
        return Ok(CgOutcome {
            solution: x,
            iterations: max_iter,
            residual_norm: residual,
        });
    }
    Err(Error::NoConvergence {
        solver: "conjugate gradient",
        iterations: max_iter,
        achieved: residual,
    })
}

/// Largest eigenvalue of a symmetric PSD matrix by power iteration.
///
/// Iterates until the eigen-residual `‖Av − λv‖` falls below `rel_tol·λ`,
/// which bounds the distance of `λ` to the spectrum by the same amount.
pub fn power_iteration(a: &DMatrix<f64>, rel_tol: f64, max_iter: usize) -> Result<f64> {
    let n = a.nrows();
    if n != a.ncols() {
        return Err(Error::Dimension(format!(
            "power iteration needs a square matrix, got {:?}",
            a.shape()
        )));
    }
    if n == 0 {
        return Ok(0.0);
    }
    // deterministic start vector with no special alignment to any eigenvector
    let mut v = DVector::from_fn(n, |i, _| 1.0 + 0.37 * ((i as f64) * 1.618).sin());
    v /= v.norm();
    let mut lambda = 0.0;
    for _ in 0..max_iter {
        let av = a * &v;
        lambda = v.dot(&av);
        let norm = av.norm();
        if norm == 0.0 {
            return Ok(0.0);
        }
        let residual = (&av - &v * lambda).norm();
        if residual <= rel_tol * lambda.abs() {
            return Ok(lambda);
        }
        v = av / norm;
    }
    Err(Error::NoConvergence {
        solver: "power iteration",
        iterations: max_iter,
        achieved: lambda,
    })
}

/// `V·diag(f(λ))·Vᵀ` for an orthonormal eigenbasis `V` (columns).
pub fn spectral_apply<F>(vectors: &DMatrix<f64>, values: &DVector<f64>, f: F) -> DMatrix<f64>
where
    F: Fn(f64) -> f64,
{
    let mut scaled = vectors.clone();
    for (j, mut col) in scaled.column_iter_mut().enumerate() {
        col *= f(values[j]);
    }
    scaled * vectors.transpose()
}

/// Writes a matrix as whitespace-separated rows, one row per line, using the
/// shortest round-trip representation of each entry.
pub fn format_matrix(m: &DMatrix<f64>) -> String {
    let mut out = String::new();
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            if j > 0 {
                out.push(' ');
            }
            let _ = write!(out, "{}", m[(i, j)]);
        }
        out.push('\n');
    }
    out
}

pub fn parse_matrix(text: &str) -> Result<DMatrix<f64>> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let row = line
            .split_whitespace()
            .map(|tok| {
                tok.parse::<f64>()
                    .map_err(|e| Error::Parse(format!("line {}: {tok:?}: {e}", lineno + 1)))
            })
            .collect::<Result<Vec<_>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(Error::Parse(format!(
                    "line {}: expected {} columns, found {}",
                    lineno + 1,
                    first.len(),
                    row.len()
                )));
            }
        }
        rows.push(row);
    }
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

pub fn write_matrix(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    fs::write(path, format_matrix(m))?;
    Ok(())
}

pub fn read_matrix(path: &Path) -> Result<DMatrix<f64>> {
    parse_matrix(&fs::read_to_string(path)?)
}
