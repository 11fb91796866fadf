//! Full GMRES with residual history, Krylov grade, and the iteration-doubling
//! and Jordan-block-size checks for rank-one updates of diagonalizable
//! matrices.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::eigen::givens;
use crate::error::{LabError, Result};
use crate::jordan::{build_matrix, JordanSpec};
use crate::matrix::{
    random_rank_r, singular_values_with, vector_norm, DenseMatrix, RankTol, Vector, EPS,
};
use crate::rng;
use crate::structure::{analyze, AnalyzeOptions};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Default relative residual standing in for exact convergence.
pub const DEFAULT_GMRES_TOL: f64 = 1e-10;
/// Tolerances every doubling report is additionally evaluated at.
pub const SENSITIVITY_TOLS: [f64; 3] = [1e-8, 1e-10, 1e-12];
/// Relative cutoff for the rank test in [`krylov_grade`].
pub const DEFAULT_GRADE_RANK_FACTOR: f64 = 1e-10;
/// Similarity condition cap used when building test operators.
pub const DEFAULT_COND_CAP: f64 = 100.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KrylovTrace {
    /// `||b - A x_k||` for `k = 0, 1, ...`; nonincreasing.
    #[serde(rename = "residualNorms")]
    pub residual_norms: Vec<f64>,
    /// First `k` with `residual_norms[k] <= tolerance * residual_norms[0]`.
    #[serde(rename = "convergedAt")]
    pub converged_at: Option<usize>,
    pub tolerance: f64,
    #[serde(rename = "operatorSize")]
    pub operator_size: usize,
}

impl KrylovTrace {
    pub fn iterations(&self) -> usize {
        self.residual_norms.len().saturating_sub(1)
    }

    pub fn relative_residuals(&self) -> Vec<f64> {
        let r0 = self.residual_norms.first().copied().unwrap_or(1.0);
        self.residual_norms.iter().map(|r| r / r0).collect()
    }

    /// `iteration,residual` rows with a header line.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iteration,residual\n");
        for (i, r) in self.residual_norms.iter().enumerate() {
            out.push_str(&format!("{i},{r:.16e}\n"));
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct GmresOutcome {
    pub x: Vector,
    pub trace: KrylovTrace,
}

impl GmresOutcome {
    pub fn iterations(&self) -> usize {
        self.trace
            .converged_at
            .unwrap_or_else(|| self.trace.iterations())
    }
}

/// Full (unrestarted) GMRES from `x0 = 0`.
///
/// Arnoldi uses modified Gram-Schmidt with a second orthogonalization pass.
/// A happy breakdown that reaches the tolerance counts as convergence; one
/// that does not is reported as `Breakdown`. Running out of iterations yields
/// `GmresNoConvergence` carrying the trace.
pub fn gmres(a: &DenseMatrix, b: &Vector, tol: f64, maxit: usize) -> Result<GmresOutcome> {
    if !a.is_square() || a.rows() != b.len() {
        return Err(LabError::DimensionMismatch {
            expected: format!("square operator matching vector of length {}", b.len()),
            found: format!("{}x{}", a.rows(), a.cols()),
        });
    }
    if tol.is_nan() || tol <= 0.0 {
        return Err(LabError::InvalidArgument(format!(
            "tolerance {tol} must be positive"
        )));
    }
    let n = a.rows();
    let beta = vector_norm(b);
    if beta == 0.0 {
        return Err(LabError::InvalidArgument(
            "right-hand side must be nonzero".into(),
        ));
    }
    let maxit = maxit.max(1);
    let anorm = a.frobenius_norm();

    let mut basis: Vec<Vector> = vec![b / Complex64::new(beta, 0.0)];
    let mut h = DMatrix::<Complex64>::zeros(maxit + 1, maxit);
    let mut rots: Vec<(f64, Complex64)> = Vec::with_capacity(maxit);
    let mut g = DVector::<Complex64>::zeros(maxit + 1);
    g[0] = Complex64::new(beta, 0.0);

    let mut trace = KrylovTrace {
        residual_norms: vec![beta],
        converged_at: None,
        tolerance: tol,
        operator_size: n,
    };

    for j in 0..maxit {
        let mut w = a.matvec(&basis[j]);
        let w_norm0 = vector_norm(&w);
        for _pass in 0..2 {
            for (i, v) in basis.iter().enumerate() {
                let hij = v.dotc(&w);
                w -= v * hij;
                h[(i, j)] += hij;
            }
        }
        let h_next = vector_norm(&w);
        h[(j + 1, j)] = Complex64::new(h_next, 0.0);

        for (i, &(c, s)) in rots.iter().enumerate() {
            let x = h[(i, j)];
            let y = h[(i + 1, j)];
            h[(i, j)] = x * c + s * y;
            h[(i + 1, j)] = -s.conj() * x + y * c;
        }
        let (c, s) = givens(h[(j, j)], h[(j + 1, j)]);
        let x = h[(j, j)];
        let y = h[(j + 1, j)];
        h[(j, j)] = x * c + s * y;
        h[(j + 1, j)] = ZERO;
        rots.push((c, s));
        let gj = g[j];
        g[j] = gj * c;
        g[j + 1] = -s.conj() * gj;

        let res = g[j + 1].norm().min(*trace.residual_norms.last().unwrap());
        trace.residual_norms.push(res);

        let k = j + 1;
        if h[(j, j)].norm() <= n as f64 * EPS * anorm {
            // least-squares factor is singular: the space is invariant and A is singular on it
            return Err(LabError::Breakdown {
                iteration: k,
                relative_residual: trace.residual_norms[j] / beta,
            });
        }
        if res <= tol * beta {
            trace.converged_at = Some(k);
            let x = solve_upper(&h, &g, &basis, k);
            return Ok(GmresOutcome { x, trace });
        }
        let breakdown = h_next <= n as f64 * EPS * w_norm0.max(f64::MIN_POSITIVE);
        if breakdown {
            return Err(LabError::Breakdown {
                iteration: k,
                relative_residual: res / beta,
            });
        }
        if k == maxit {
            break;
        }
        basis.push(w / Complex64::new(h_next, 0.0));
    }
    Err(LabError::GmresNoConvergence(Box::new(trace)))
}

fn solve_upper(
    h: &DMatrix<Complex64>,
    g: &DVector<Complex64>,
    basis: &[Vector],
    k: usize,
) -> Vector {
    let mut y = vec![ZERO; k];
    for i in (0..k).rev() {
        let mut s = g[i];
        for j in (i + 1)..k {
            s -= h[(i, j)] * y[j];
        }
        y[i] = s / h[(i, i)];
    }
    let mut x = DVector::zeros(basis[0].len());
    for (yi, v) in y.iter().zip(basis) {
        x += v * *yi;
    }
    x
}

/// Dimension of the Krylov space generated by `b`: the smallest `k` with
/// `rank [b, Ab, ..., A^k b] = k`.
///
/// The rank is taken of `[Q_k, A q_k / ||A q_k||]` where `Q_k` is an
/// orthonormal basis of `span{b, ..., A^{k-1} b}`; it spans the same space
/// as the raw Krylov matrix without its growing condition number.
pub fn krylov_grade(a: &DenseMatrix, b: &Vector, tol: RankTol) -> Result<usize> {
    let n = a.rows();
    if !a.is_square() || b.len() != n {
        return Err(LabError::DimensionMismatch {
            expected: format!("square operator matching vector of length {}", b.len()),
            found: format!("{}x{}", a.rows(), a.cols()),
        });
    }
    let beta = vector_norm(b);
    if beta == 0.0 {
        return Err(LabError::InvalidArgument("vector must be nonzero".into()));
    }
    let mut q: Vec<Vector> = vec![b / Complex64::new(beta, 0.0)];
    for k in 1..=n {
        let mut w = a.matvec(&q[k - 1]);
        let wn = vector_norm(&w);
        if wn == 0.0 {
            return Ok(k);
        }
        w /= Complex64::new(wn, 0.0);
        let mut cols = q.clone();
        cols.push(w.clone());
        let m = DenseMatrix::from_dmatrix(DMatrix::from_columns(&cols))?;
        if singular_values_with(&m, tol).numerical_rank <= k {
            return Ok(k);
        }
        if k == n {
            break;
        }
        for _pass in 0..2 {
            for v in &q {
                let c = v.dotc(&w);
                w -= v * c;
            }
        }
        let r = vector_norm(&w);
        q.push(w / Complex64::new(r, 0.0));
    }
    Ok(n)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DoublingFailure {
    /// A system did not reach the tolerance within `n` iterations.
    Stagnation,
    /// Both converged but `iters_c > 2 iters_a`.
    CountViolation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToleranceResult {
    pub tol: f64,
    #[serde(rename = "itersA")]
    pub iters_a: Option<usize>,
    #[serde(rename = "itersC")]
    pub iters_c: Option<usize>,
    pub pass: bool,
    pub failure: Option<DoublingFailure>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DoublingReport {
    #[serde(rename = "distinctA")]
    pub distinct_a: usize,
    #[serde(rename = "itersA")]
    pub iters_a: Option<usize>,
    #[serde(rename = "itersC")]
    pub iters_c: Option<usize>,
    pub ratio: Option<f64>,
    pub pass: bool,
    pub failure: Option<DoublingFailure>,
    #[serde(rename = "tolerancesUsed")]
    pub tolerances_used: Vec<ToleranceResult>,
}

fn converged_iterations(a: &DenseMatrix, b: &Vector, tol: f64) -> Result<Option<usize>> {
    match gmres(a, b, tol, a.rows()) {
        Ok(out) => Ok(out.trace.converged_at),
        Err(LabError::GmresNoConvergence(_)) | Err(LabError::Breakdown { .. }) => Ok(None),
        Err(e) => Err(e),
    }
}

fn compare_at(
    a: &DenseMatrix,
    c: &DenseMatrix,
    b: &Vector,
    d: &Vector,
    tol: f64,
) -> Result<ToleranceResult> {
    let iters_a = converged_iterations(a, b, tol)?;
    let iters_c = converged_iterations(c, d, tol)?;
    let (pass, failure) = match (iters_a, iters_c) {
        (Some(ia), Some(ic)) if ic <= 2 * ia => (true, None),
        (Some(_), Some(_)) => (false, Some(DoublingFailure::CountViolation)),
        _ => (false, Some(DoublingFailure::Stagnation)),
    };
    Ok(ToleranceResult {
        tol,
        iters_a,
        iters_c,
        pass,
        failure,
    })
}

/// Compares GMRES iteration counts for `A x = b` and `C y = d` at `tol` and
/// at each of [`SENSITIVITY_TOLS`]; the verdict is the one at `tol`.
pub fn doubling_report(
    a: &DenseMatrix,
    c: &DenseMatrix,
    distinct_a: usize,
    b: &Vector,
    d: &Vector,
    tol: f64,
) -> Result<DoublingReport> {
    let main = compare_at(a, c, b, d, tol)?;
    let mut tolerances_used = vec![main.clone()];
    for t in SENSITIVITY_TOLS {
        if t != tol {
            tolerances_used.push(compare_at(a, c, b, d, t)?);
        }
    }
    let ratio = match (main.iters_a, main.iters_c) {
        (Some(ia), Some(ic)) if ia > 0 => Some(ic as f64 / ia as f64),
        _ => None,
    };
    Ok(DoublingReport {
        distinct_a,
        iters_a: main.iters_a,
        iters_c: main.iters_c,
        ratio,
        pass: main.pass,
        failure: main.failure,
        tolerances_used,
    })
}

/// Operator pair for the doubling experiment.
#[derive(Debug, Clone)]
pub struct PerturbedPair {
    pub a: DenseMatrix,
    pub c: DenseMatrix,
}

/// `A` realized from `spec`, `C = A + B` with `B` of the given rank scaled to
/// `||B||_F = ||A||_F`.
pub fn perturbed_pair(spec: &JordanSpec, rank: usize, seed: u64) -> Result<PerturbedPair> {
    let a = build_matrix(spec, DEFAULT_COND_CAP, rng::derive_seed(seed, 0))?.a;
    let b = random_rank_r(spec.n(), rank, rng::derive_seed(seed, 1))?;
    let bn = b.frobenius_norm();
    let c = if bn == 0.0 {
        a.clone()
    } else {
        &a + &b.scale_real(a.frobenius_norm() / bn)
    };
    Ok(PerturbedPair { a, c })
}

/// Generic right-hand sides `(b, d)` drawn independently from `seed`.
pub fn generic_rhs_pair(n: usize, seed: u64) -> (Vector, Vector) {
    let mut r = rng::seeded(seed);
    let b = rng::normal_complex_vector(&mut r, n);
    let d = rng::normal_complex_vector(&mut r, n);
    (b, d)
}

/// Doubling check for a diagonalizable spec and a rank-one (or, for the
/// control case, rank-zero) update.
pub fn theorem2_check(
    spec: &JordanSpec,
    rank: usize,
    seed_b: u64,
    seed_rhs: u64,
    tol: f64,
) -> Result<DoublingReport> {
    if !spec.is_diagonalizable() {
        return Err(LabError::InvalidSpec(
            "doubling check needs a diagonalizable spec".into(),
        ));
    }
    if rank > 1 {
        return Err(LabError::InvalidRank { rank, n: spec.n() });
    }
    let pair = perturbed_pair(spec, rank, seed_b)?;
    let (b, d) = generic_rhs_pair(spec.n(), seed_rhs);
    doubling_report(&pair.a, &pair.c, spec.distinct(), &b, &d, tol)
}

/// True iff every Jordan block of `c` has size at most `distinct_a`.
pub fn jordan_block_bound_check(
    c: &DenseMatrix,
    distinct_a: usize,
    opts: &AnalyzeOptions,
) -> Result<bool> {
    Ok(analyze(c, opts)?.max_block() <= distinct_a)
}
