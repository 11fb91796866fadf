//! Saddle-point residuals, the block-diagonal Schur-complement
//! preconditioner, deflation of known roots, and deflated Newton.
//!
//! For a residual `F` with Jacobian `J = [[X, Y], [Z, 0]]` the preconditioner
//! is `P = blockdiag(X, -S)` with `S = -Z X^{-1} Y`; with exact solves
//! `P^{-1} J` has three distinct eigenvalues, `1` and `(1 ± √5)/2`.
//!
//! Deflating roots `u_1, ..., u_k` multiplies the residual by
//! `M(u) = prod_i ||u - u_i||^{-p} (+ 1 when shifted)`. The deflated Jacobian
//! `M J + F E^T` with `E = grad M` is a rank-one update of `M J`, and so is its
//! preconditioned form `P^{-1} (M J + F E^T) = M P^{-1} J + (P^{-1} F) E^T`.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::eigen::eigenvalues;
use crate::error::{LabError, Result};
use crate::krylov::{gmres, DEFAULT_GMRES_TOL};
use crate::matrix::{singular_values, DenseMatrix, LuFactors, Vector};
use crate::rng;
use crate::structure::cluster_eigenvalues;

pub type State = DVector<f64>;

/// Distance below which a point counts as sitting on a deflated root.
pub const AT_ROOT_DISTANCE: f64 = 1e-14;
pub const DEFAULT_POWER: f64 = 2.0;
pub const DEFAULT_BLOCKS: (usize, usize) = (6, 2);
pub const DEFAULT_PROBLEM_SEED: u64 = 4;
/// Entries of the default initial guess on the `x` block; `mu` starts at zero.
pub const DEFAULT_GUESS_OFFSET: f64 = 0.1;

/// Residual with a 2x2 block Jacobian whose (2,2) block vanishes.
pub trait SaddleProblem {
    fn block_sizes(&self) -> (usize, usize);

    fn dim(&self) -> usize {
        let (a, b) = self.block_sizes();
        a + b
    }

    fn residual(&self, u: &State) -> State;

    fn jacobian(&self, u: &State) -> DenseMatrix;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    /// `sum_i (x_i^2 - 1)^2`, one well per sign pattern.
    DoubleWell,
    /// `sum_i x_i^2 / 2`, a single KKT point.
    Quadratic,
}

impl Objective {
    fn gradient(self, x: f64) -> f64 {
        match self {
            Objective::DoubleWell => 4.0 * x * (x * x - 1.0),
            Objective::Quadratic => x,
        }
    }

    fn curvature(self, x: f64) -> f64 {
        match self {
            Objective::DoubleWell => 12.0 * x * x - 4.0,
            Objective::Quadratic => 1.0,
        }
    }
}

/// KKT system of `min f(x)` subject to `A x = c`:
/// `F(x, mu) = (grad f(x) + A^T mu, A x - c)`, `J = [[hess f, A^T], [A, 0]]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KktProblem {
    pub objective: Objective,
    /// `n2 x n1`, row-major.
    pub constraint: Vec<Vec<f64>>,
    pub rhs: Vec<f64>,
}

impl KktProblem {
    pub fn new(objective: Objective, constraint: Vec<Vec<f64>>, rhs: Vec<f64>) -> Result<Self> {
        let n2 = constraint.len();
        let n1 = constraint.first().map_or(0, Vec::len);
        if n1 == 0 || n2 == 0 || constraint.iter().any(|r| r.len() != n1) || rhs.len() != n2 {
            return Err(LabError::InvalidArgument(
                "constraint must be a nonempty n2 x n1 array with n2 right-hand sides".into(),
            ));
        }
        let p = Self {
            objective,
            constraint,
            rhs,
        };
        if singular_values(&DenseMatrix::from_real_dmatrix(&p.constraint_matrix())?).numerical_rank
            < n2
        {
            return Err(LabError::InvalidArgument(
                "constraint block must have full row rank".into(),
            ));
        }
        Ok(p)
    }

    /// Multi-well instance whose constraint passes through a random sign
    /// vector `s`, so `(s, 0)` is one of its roots.
    pub fn double_well(n1: usize, n2: usize, seed: u64) -> Result<Self> {
        if n2 == 0 || n2 >= n1 {
            return Err(LabError::InvalidArgument(format!(
                "need 0 < n2 < n1, got {n1}, {n2}"
            )));
        }
        let mut r = rng::seeded(seed);
        let a = rng::normal_matrix(&mut r, n2, n1);
        let s = DVector::from_fn(
            n1,
            |_, _| if rng::normal(&mut r) < 0.0 { -1.0 } else { 1.0 },
        );
        let c = &a * s;
        Self::new(
            Objective::DoubleWell,
            rows_of(&a),
            c.iter().copied().collect(),
        )
    }

    /// Strictly convex instance with a unique KKT point.
    pub fn quadratic(n1: usize, n2: usize, seed: u64) -> Result<Self> {
        if n2 == 0 || n2 >= n1 {
            return Err(LabError::InvalidArgument(format!(
                "need 0 < n2 < n1, got {n1}, {n2}"
            )));
        }
        let mut r = rng::seeded(seed);
        let a = rng::normal_matrix(&mut r, n2, n1);
        let c = rng::normal_vector(&mut r, n2);
        Self::new(
            Objective::Quadratic,
            rows_of(&a),
            c.iter().copied().collect(),
        )
    }

    pub fn default_toy() -> Self {
        Self::double_well(DEFAULT_BLOCKS.0, DEFAULT_BLOCKS.1, DEFAULT_PROBLEM_SEED)
            .expect("default toy problem is well formed")
    }

    /// Origin-adjacent starting point `(0.1, ..., 0.1, 0, ..., 0)`.
    pub fn default_guess(&self) -> State {
        let (n1, n2) = self.block_sizes();
        DVector::from_fn(
            n1 + n2,
            |i, _| if i < n1 { DEFAULT_GUESS_OFFSET } else { 0.0 },
        )
    }

    pub fn constraint_matrix(&self) -> DMatrix<f64> {
        let n2 = self.constraint.len();
        let n1 = self.constraint[0].len();
        DMatrix::from_fn(n2, n1, |i, j| self.constraint[i][j])
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("problem serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: KktProblem =
            serde_json::from_str(text).map_err(|e| LabError::InvalidArgument(e.to_string()))?;
        Self::new(raw.objective, raw.constraint, raw.rhs)
    }
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| m.row(i).iter().copied().collect())
        .collect()
}

impl SaddleProblem for KktProblem {
    fn block_sizes(&self) -> (usize, usize) {
        (self.constraint[0].len(), self.constraint.len())
    }

    fn residual(&self, u: &State) -> State {
        let (n1, n2) = self.block_sizes();
        let x = u.rows(0, n1);
        let mu = u.rows(n1, n2);
        let a = self.constraint_matrix();
        let grad = x.map(|xi| self.objective.gradient(xi)) + a.transpose() * mu;
        let feas = &a * x - DVector::from_column_slice(&self.rhs);
        let mut out = DVector::zeros(n1 + n2);
        out.rows_mut(0, n1).copy_from(&grad);
        out.rows_mut(n1, n2).copy_from(&feas);
        out
    }

    fn jacobian(&self, u: &State) -> DenseMatrix {
        let (n1, n2) = self.block_sizes();
        let a = self.constraint_matrix();
        let mut j = DMatrix::<f64>::zeros(n1 + n2, n1 + n2);
        for i in 0..n1 {
            j[(i, i)] = self.objective.curvature(u[i]);
        }
        j.view_mut((0, n1), (n1, n2)).copy_from(&a.transpose());
        j.view_mut((n1, 0), (n2, n1)).copy_from(&a);
        DenseMatrix::from_real_dmatrix(&j).expect("finite Jacobian")
    }
}

/// `P = blockdiag(X, -S)` with factored blocks.
#[derive(Debug, Clone)]
pub struct SchurPreconditioner {
    pub x: DenseMatrix,
    pub s: DenseMatrix,
    /// Inner solves use exact LU factorizations.
    pub applies_exactly: bool,
    x_lu: LuFactors,
    neg_s_lu: LuFactors,
}

impl SchurPreconditioner {
    pub fn blocks(&self) -> (usize, usize) {
        (self.x.rows(), self.s.rows())
    }

    pub fn matrix(&self) -> DenseMatrix {
        DenseMatrix::block_diagonal(&[self.x.clone(), -&self.s]).expect("nonempty blocks")
    }

    pub fn apply(&self, v: &Vector) -> Vector {
        self.matrix().matvec(v)
    }

    pub fn solve(&self, v: &Vector) -> Result<Vector> {
        let (n1, n2) = self.blocks();
        let top = self.x_lu.solve(&v.rows(0, n1).into_owned())?;
        let bottom = self.neg_s_lu.solve(&v.rows(n1, n2).into_owned())?;
        let mut out = DVector::zeros(n1 + n2);
        out.rows_mut(0, n1).copy_from(&top);
        out.rows_mut(n1, n2).copy_from(&bottom);
        Ok(out)
    }

    /// `P^{-1} M` column by column.
    pub fn solve_matrix(&self, m: &DenseMatrix) -> Result<DenseMatrix> {
        let mut out = DMatrix::zeros(m.rows(), m.cols());
        for j in 0..m.cols() {
            let col = self.solve(&m.as_dmatrix().column(j).into_owned())?;
            out.set_column(j, &col);
        }
        Ok(DenseMatrix::wrap(out))
    }
}

/// Builds the Schur-complement preconditioner from a saddle-point Jacobian.
pub fn schur_preconditioner(
    j: &DenseMatrix,
    blocks: (usize, usize),
) -> Result<SchurPreconditioner> {
    let (n1, n2) = blocks;
    if n1 == 0 || n2 == 0 || !j.is_square() || j.rows() != n1 + n2 {
        return Err(LabError::DimensionMismatch {
            expected: format!("{0}x{0} Jacobian", n1 + n2),
            found: format!("{}x{}", j.rows(), j.cols()),
        });
    }
    if j.block(n1, n1, n2, n2).max_abs() != 0.0 {
        return Err(LabError::InvalidArgument(
            "(2,2) block of the Jacobian must vanish".into(),
        ));
    }
    let x = j.block(0, 0, n1, n1);
    let y = j.block(0, n1, n1, n2);
    let z = j.block(n1, 0, n2, n1);
    let x_lu = LuFactors::factor(&x).map_err(|e| LabError::SingularBlock(format!("X: {e}")))?;
    let s = -&(&z * &x_lu.solve_matrix(&y)?);
    let neg_s_lu =
        LuFactors::factor(&-&s).map_err(|e| LabError::SingularBlock(format!("S: {e}")))?;
    Ok(SchurPreconditioner {
        x,
        s,
        applies_exactly: true,
        x_lu,
        neg_s_lu,
    })
}

/// Random saddle-point Jacobian with SPD `X = G G^T + I` and `Z = Y^T`.
pub fn random_saddle_jacobian(n1: usize, n2: usize, seed: u64) -> Result<DenseMatrix> {
    let mut r = rng::seeded(seed);
    let g = rng::normal_matrix(&mut r, n1, n1);
    let x = &g * g.transpose() + DMatrix::identity(n1, n1);
    let y = rng::normal_matrix(&mut r, n1, n2);
    let mut j = DMatrix::<f64>::zeros(n1 + n2, n1 + n2);
    j.view_mut((0, 0), (n1, n1)).copy_from(&x);
    j.view_mut((0, n1), (n1, n2)).copy_from(&y);
    j.view_mut((n1, 0), (n2, n1)).copy_from(&y.transpose());
    DenseMatrix::from_real_dmatrix(&j)
}

/// Cluster tolerance factor for the preconditioned spectrum.
pub const SPECTRUM_CLUSTER_FACTOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct PreconditionedSpectrum {
    pub distinct: usize,
    pub values: Vec<Complex64>,
    pub tolerance: f64,
}

/// Distinct eigenvalues of `P^{-1} J` at tolerance `1e-6 ||P^{-1} J||_F`.
pub fn preconditioned_spectrum_check(
    j: &DenseMatrix,
    p: &SchurPreconditioner,
) -> Result<PreconditionedSpectrum> {
    let t = p.solve_matrix(j)?;
    let tolerance = SPECTRUM_CLUSTER_FACTOR * t.frobenius_norm();
    let clusters = cluster_eigenvalues(&eigenvalues(&t)?, tolerance);
    Ok(PreconditionedSpectrum {
        distinct: clusters.len(),
        values: clusters.iter().map(|c| c.value).collect(),
        tolerance,
    })
}

/// Known roots and the pole parameters of the deflation operator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeflationState {
    roots: Vec<Vec<f64>>,
    pub power: f64,
    pub shifted: bool,
}

impl DeflationState {
    pub fn new(power: f64, shifted: bool) -> Result<Self> {
        if !power.is_finite() || power <= 0.0 {
            return Err(LabError::InvalidArgument(format!(
                "power {power} must be positive"
            )));
        }
        Ok(Self {
            roots: Vec::new(),
            power,
            shifted,
        })
    }

    pub fn with_roots(power: f64, shifted: bool, roots: &[State]) -> Result<Self> {
        let mut s = Self::new(power, shifted)?;
        for r in roots {
            s.deflate(r.clone())?;
        }
        Ok(s)
    }

    pub fn roots(&self) -> Vec<State> {
        self.roots
            .iter()
            .map(|r| DVector::from_column_slice(r))
            .collect()
    }

    pub fn len(&self) -> usize {
        self.roots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.roots.is_empty()
    }

    /// Adds a root; it must differ from the known ones by more than
    /// `1e-8 (1 + ||root||)`.
    pub fn deflate(&mut self, root: State) -> Result<()> {
        let scale = 1e-8 * (1.0 + root.norm());
        if let Some(dim) = self.roots.first().map(Vec::len) {
            if dim != root.len() {
                return Err(LabError::DimensionMismatch {
                    expected: format!("root of length {dim}"),
                    found: format!("length {}", root.len()),
                });
            }
        }
        for known in self.roots() {
            if (&known - &root).norm() <= scale {
                return Err(LabError::InvalidArgument("root already deflated".into()));
            }
        }
        self.roots.push(root.iter().copied().collect());
        Ok(())
    }

    /// `(prod_i ||u - u_i||^{-p}, [u - u_i], [||u - u_i||])`.
    fn pole_product(&self, u: &State) -> Result<(f64, Vec<State>, Vec<f64>)> {
        let mut prod = 1.0;
        let mut diffs = Vec::with_capacity(self.roots.len());
        let mut dists = Vec::with_capacity(self.roots.len());
        for (index, r) in self.roots.iter().enumerate() {
            let diff = u - DVector::from_column_slice(r);
            let distance = diff.norm();
            if distance < AT_ROOT_DISTANCE {
                return Err(LabError::AtRoot { index, distance });
            }
            prod *= distance.powf(-self.power);
            diffs.push(diff);
            dists.push(distance);
        }
        Ok((prod, diffs, dists))
    }

    /// `M(u)`. With no roots deflated the operator is the identity scaling, `M = 1`.
    pub fn value(&self, u: &State) -> Result<f64> {
        if self.roots.is_empty() {
            return Ok(1.0);
        }
        let (prod, _, _) = self.pole_product(u)?;
        Ok(if self.shifted { prod + 1.0 } else { prod })
    }

    /// `E = grad M(u) = prod * sum_i -p (u - u_i) / ||u - u_i||^2`.
    pub fn gradient(&self, u: &State) -> Result<State> {
        if self.roots.is_empty() {
            return Ok(DVector::zeros(u.len()));
        }
        let (prod, diffs, dists) = self.pole_product(u)?;
        let mut g = DVector::zeros(u.len());
        for (d, dist) in diffs.iter().zip(&dists) {
            g += d * (-self.power / (dist * dist));
        }
        Ok(g * prod)
    }
}

fn to_complex(v: &State) -> Vector {
    v.map(|x| Complex64::new(x, 0.0))
}

/// Deflated residual and Jacobian at `u`.
#[derive(Debug, Clone)]
pub struct DeflatedSystem {
    pub m: f64,
    pub e: State,
    pub f: State,
    pub j: DenseMatrix,
    /// `G = M F`.
    pub g: State,
    /// `M J + F E^T`.
    pub j_tilde: DenseMatrix,
}

pub fn deflated_system<P: SaddleProblem + ?Sized>(
    problem: &P,
    state: &DeflationState,
    u: &State,
) -> Result<DeflatedSystem> {
    let m = state.value(u)?;
    let e = state.gradient(u)?;
    let f = problem.residual(u);
    let j = problem.jacobian(u);
    let g = &f * m;
    let update = DenseMatrix::outer(&to_complex(&f), &to_complex(&e));
    let j_tilde = &j.scale_real(m) + &update;
    Ok(DeflatedSystem {
        m,
        e,
        f,
        j,
        g,
        j_tilde,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NewtonOptions {
    pub max_iter: usize,
    /// Success when `||F(u)|| <= tol`.
    pub tol: f64,
    pub max_halvings: usize,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self {
            max_iter: 100,
            tol: 1e-10,
            max_halvings: 30,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NewtonResult {
    pub root: Vec<f64>,
    pub iterations: usize,
    #[serde(rename = "residualNorm")]
    pub residual_norm: f64,
    /// Total backtracking halvings taken.
    pub halvings: usize,
}

impl NewtonResult {
    pub fn state(&self) -> State {
        DVector::from_column_slice(&self.root)
    }
}

/// Damped Newton on the deflated residual `G`, converged once `||F|| <= tol`.
///
/// Each step solves `J~ delta = -G` and halves the step (up to
/// `max_halvings` times) until `||G||` decreases.
pub fn newton_solve<P: SaddleProblem + ?Sized>(
    problem: &P,
    state: &DeflationState,
    u0: &State,
    opts: &NewtonOptions,
) -> Result<NewtonResult> {
    if u0.len() != problem.dim() {
        return Err(LabError::DimensionMismatch {
            expected: format!("state of length {}", problem.dim()),
            found: format!("length {}", u0.len()),
        });
    }
    state.value(u0)?;
    let mut u = u0.clone();
    let mut halvings = 0;
    for it in 0..=opts.max_iter {
        let sys = deflated_system(problem, state, &u)?;
        let fnorm = sys.f.norm();
        if !fnorm.is_finite() {
            return Err(LabError::Diverged(format!(
                "non-finite residual at iteration {it}"
            )));
        }
        if fnorm <= opts.tol {
            for (i, r) in state.roots().iter().enumerate() {
                if (&u - r).norm() <= 1e-8 * (1.0 + r.norm()) {
                    return Err(LabError::Diverged(format!("returned to deflated root {i}")));
                }
            }
            return Ok(NewtonResult {
                root: u.iter().copied().collect(),
                iterations: it,
                residual_norm: fnorm,
                halvings,
            });
        }
        if it == opts.max_iter {
            break;
        }
        let lu = LuFactors::factor(&sys.j_tilde)
            .map_err(|e| LabError::LinearSolveFailure(e.to_string()))?;
        let delta = lu
            .solve(&to_complex(&-&sys.g))
            .map_err(|e| LabError::LinearSolveFailure(e.to_string()))?
            .map(|z| z.re);
        let gnorm = sys.g.norm();
        let mut step = 1.0;
        let mut accepted = None;
        for h in 0..=opts.max_halvings {
            let trial = &u + &delta * step;
            if let Ok(m) = state.value(&trial) {
                let f = problem.residual(&trial);
                let g = f.norm() * m;
                if g.is_finite() && (g < gnorm || f.norm() <= opts.tol) {
                    accepted = Some(trial);
                    halvings += h;
                    break;
                }
            }
            step *= 0.5;
        }
        match accepted {
            Some(next) => u = next,
            None => {
                return Err(LabError::Diverged(format!(
                    "step underflow at iteration {it} (||G|| = {gnorm:.3e})"
                )))
            }
        }
    }
    Err(LabError::Diverged(format!(
        "no convergence in {} iterations",
        opts.max_iter
    )))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub roots: Vec<NewtonResult>,
    /// Why the search stopped: `maxRoots` or the final solver error.
    pub stopped: String,
}

impl SearchResult {
    pub fn states(&self) -> Vec<State> {
        self.roots.iter().map(NewtonResult::state).collect()
    }
}

/// Runs Newton from `u0` repeatedly, deflating each root found, until a
/// solve fails or `max_roots` roots are known.
pub fn deflated_search<P: SaddleProblem + ?Sized>(
    problem: &P,
    u0: &State,
    max_roots: usize,
    power: f64,
    opts: &NewtonOptions,
) -> Result<SearchResult> {
    if max_roots == 0 {
        return Err(LabError::InvalidArgument(
            "max_roots must be at least 1".into(),
        ));
    }
    let mut state = DeflationState::new(power, true)?;
    let mut roots = Vec::new();
    loop {
        if roots.len() == max_roots {
            return Ok(SearchResult {
                roots,
                stopped: "maxRoots".into(),
            });
        }
        match newton_solve(problem, &state, u0, opts) {
            Ok(found) => {
                state.deflate(found.state())?;
                roots.push(found);
            }
            Err(e) => {
                return Ok(SearchResult {
                    roots,
                    stopped: e.to_string(),
                })
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeflationDoublingReport {
    #[serde(rename = "M")]
    pub m: f64,
    #[serde(rename = "normE")]
    pub norm_e: f64,
    /// `sigma_2 / sigma_1` of `C - A`.
    #[serde(rename = "updateSigmaRatio")]
    pub update_sigma_ratio: f64,
    /// `updateSigmaRatio < 1e-10`.
    #[serde(rename = "rankOne")]
    pub rank_one: bool,
    #[serde(rename = "itersA")]
    pub iters_a: Option<usize>,
    #[serde(rename = "itersC")]
    pub iters_c: Option<usize>,
    /// Both solves converged and `itersC <= 2 itersA`.
    pub pass: bool,
}

impl DeflationDoublingReport {
    pub const CSV_HEADER: &'static str =
        "point,M,normE,updateSigmaRatio,rankOne,itersA,itersC,pass";

    pub fn csv_row(&self, point: usize) -> String {
        let opt = |v: Option<usize>| v.map_or_else(|| "".to_string(), |x| x.to_string());
        format!(
            "{point},{:.17e},{:.17e},{:.6e},{},{},{},{}",
            self.m,
            self.norm_e,
            self.update_sigma_ratio,
            self.rank_one,
            opt(self.iters_a),
            opt(self.iters_c),
            self.pass
        )
    }
}

/// Threshold on `sigma_2 / sigma_1` of the preconditioned update.
pub const PRECONDITIONED_RANK_ONE_TOL: f64 = 1e-10;

/// Doubling check at `u` with `root` deflated by the default shifted operator.
pub fn deflation_doubling_check<P: SaddleProblem + ?Sized>(
    problem: &P,
    u: &State,
    root: &State,
    rhs: &Vector,
    tol: f64,
) -> Result<DeflationDoublingReport> {
    let state = DeflationState::with_roots(DEFAULT_POWER, true, std::slice::from_ref(root))?;
    deflation_doubling_check_with(problem, &state, u, rhs, tol)
}

/// Forms `A = M P^{-1} J` and `C = P^{-1} J~` at `u`, checks that `C - A` is
/// numerically rank one and compares GMRES iteration counts on `rhs`.
pub fn deflation_doubling_check_with<P: SaddleProblem + ?Sized>(
    problem: &P,
    state: &DeflationState,
    u: &State,
    rhs: &Vector,
    tol: f64,
) -> Result<DeflationDoublingReport> {
    let sys = deflated_system(problem, state, u)?;
    let p = schur_preconditioner(&sys.j, problem.block_sizes())?;
    let a = p.solve_matrix(&sys.j)?.scale_real(sys.m);
    let c = p.solve_matrix(&sys.j_tilde)?;
    let update_sigma_ratio = singular_values(&(&c - &a)).second_ratio();
    let n = problem.dim();
    let iters = |op: &DenseMatrix| match gmres(op, rhs, tol, n) {
        Ok(out) => Ok(out.trace.converged_at),
        Err(LabError::GmresNoConvergence(_)) | Err(LabError::Breakdown { .. }) => Ok(None),
        Err(e) => Err(e),
    };
    let iters_a = iters(&a)?;
    let iters_c = iters(&c)?;
    let pass = matches!((iters_a, iters_c), (Some(ia), Some(ic)) if ic <= 2 * ia);
    Ok(DeflationDoublingReport {
        m: sys.m,
        norm_e: sys.e.norm(),
        update_sigma_ratio,
        rank_one: update_sigma_ratio < PRECONDITIONED_RANK_ONE_TOL,
        iters_a,
        iters_c,
        pass,
    })
}

/// Default GMRES tolerance for the deflated doubling check.
pub const DEFLATION_GMRES_TOL: f64 = DEFAULT_GMRES_TOL;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::{lu_solve, real_vector};

    fn st(v: &[f64]) -> State {
        DVector::from_column_slice(v)
    }

    #[test]
    fn three_by_three_schur_example() {
        // X = I2, Y = Z^T = (1, 0)^T
        let j = DenseMatrix::from_real(3, 3, &[1., 0., 1., 0., 1., 0., 1., 0., 0.]).unwrap();
        let p = schur_preconditioner(&j, (2, 1)).unwrap();
        assert_eq!(p.s, DenseMatrix::from_real(1, 1, &[-1.0]).unwrap());
        assert_eq!(p.matrix(), DenseMatrix::identity(3));
        let spec = preconditioned_spectrum_check(&j, &p).unwrap();
        assert_eq!(spec.distinct, 3);
        let mut vals: Vec<f64> = spec.values.iter().map(|z| z.re).collect();
        vals.sort_by(f64::total_cmp);
        let phi = (1.0 + 5f64.sqrt()) / 2.0;
        for (x, y) in vals.iter().zip([1.0 - phi, 1.0, phi]) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_coupling_is_singular() {
        let j = DenseMatrix::from_real(3, 3, &[2., 0., 0., 0., 2., 0., 0., 0., 0.]).unwrap();
        assert!(matches!(
            schur_preconditioner(&j, (2, 1)),
            Err(LabError::SingularBlock(_))
        ));
    }

    #[test]
    fn nonzero_corner_rejected() {
        let j = DenseMatrix::from_real(3, 3, &[1., 0., 1., 0., 1., 0., 1., 0., 0.5]).unwrap();
        assert!(matches!(
            schur_preconditioner(&j, (2, 1)),
            Err(LabError::InvalidArgument(_))
        ));
    }

    #[test]
    fn preconditioner_round_trip() {
        let j = random_saddle_jacobian(4, 2, 9).unwrap();
        let p = schur_preconditioner(&j, (4, 2)).unwrap();
        let pm = p.matrix();
        let back = p.solve_matrix(&pm).unwrap();
        assert!(back.max_abs_diff(&DenseMatrix::identity(6)) < 1e-10);
        let v = real_vector(&[1., -1., 2., 0.5, 3., -2.]);
        let w = p.solve(&p.apply(&v)).unwrap();
        assert!((w - &v).norm() < 1e-10 * v.norm());
        // agrees with a direct dense solve
        let direct = lu_solve(&pm, &v).unwrap();
        assert!((p.solve(&v).unwrap() - direct).norm() < 1e-10);
    }

    #[test]
    fn three_eigenvalues_on_random_instances() {
        for seed in 0..10 {
            let j = random_saddle_jacobian(6, 2, seed).unwrap();
            let p = schur_preconditioner(&j, (6, 2)).unwrap();
            assert_eq!(preconditioned_spectrum_check(&j, &p).unwrap().distinct, 3);
        }
    }

    #[test]
    fn deflation_value_examples() {
        let empty = DeflationState::new(2.0, true).unwrap();
        assert_eq!(empty.value(&st(&[0.3, 0.4])).unwrap(), 1.0);
        assert_eq!(empty.gradient(&st(&[0.3, 0.4])).unwrap(), st(&[0., 0.]));

        let one = DeflationState::with_roots(2.0, true, &[st(&[0., 0.])]).unwrap();
        assert_eq!(one.value(&st(&[1., 0.])).unwrap(), 2.0);

        let two = DeflationState::with_roots(2.0, true, &[st(&[0., 0.]), st(&[3., 0.])]).unwrap();
        assert!((two.value(&st(&[1., 0.])).unwrap() - 1.25).abs() < 1e-15);

        let unshifted = DeflationState::with_roots(2.0, false, &[st(&[0., 0.])]).unwrap();
        assert_eq!(unshifted.value(&st(&[2., 0.])).unwrap(), 0.25);
    }

    #[test]
    fn shifted_value_exceeds_one_and_blows_up() {
        let s = DeflationState::with_roots(2.0, true, &[st(&[1., 1.])]).unwrap();
        assert!(s.value(&st(&[100., -50.])).unwrap() > 1.0);
        assert!(s.value(&st(&[1. + 1e-7, 1.])).unwrap() > 1e13);
        assert!(matches!(
            s.value(&st(&[1., 1.])),
            Err(LabError::AtRoot { index: 0, .. })
        ));
    }

    #[test]
    fn single_root_gradient() {
        let s = DeflationState::with_roots(2.0, true, &[st(&[0., 0.])]).unwrap();
        let e = s.gradient(&st(&[1., 0.])).unwrap();
        assert!((e - st(&[-2., 0.])).norm() < 1e-15);
        // E = -p (u - r) ||u - r||^{-(p+2)}
        let u = st(&[0.3, -1.2]);
        let d: f64 = u.norm();
        let closed = &u * (-2.0 * d.powf(-4.0));
        assert!((s.gradient(&u).unwrap() - closed).norm() < 1e-14);
    }

    #[test]
    fn state_rejects_duplicates_and_bad_power() {
        assert!(DeflationState::new(0.0, true).is_err());
        assert!(DeflationState::new(f64::NAN, true).is_err());
        let mut s = DeflationState::new(1.0, true).unwrap();
        s.deflate(st(&[1., 2.])).unwrap();
        assert!(s.deflate(st(&[1., 2. + 1e-10])).is_err());
        assert!(s.deflate(st(&[1., 2., 3.])).is_err());
    }

    #[test]
    fn no_roots_leave_system_unchanged() {
        let p = KktProblem::default_toy();
        let u = st(&[0.2, -0.3, 0.5, 1.1, -0.7, 0.1, 0.4, -0.2]);
        let sys = deflated_system(&p, &DeflationState::new(2.0, true).unwrap(), &u).unwrap();
        assert_eq!(sys.m, 1.0);
        assert_eq!(sys.g, p.residual(&u));
        assert_eq!(sys.j_tilde, p.jacobian(&u));
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let p = KktProblem::default_toy();
        let u = st(&[0.2, -0.3, 0.5, 1.1, -0.7, 0.1, 0.4, -0.2]);
        let j = p.jacobian(&u);
        let h = 1e-6;
        for k in 0..8 {
            let mut up = u.clone();
            let mut dn = u.clone();
            up[k] += h;
            dn[k] -= h;
            let col = (p.residual(&up) - p.residual(&dn)) / (2.0 * h);
            for i in 0..8 {
                assert!((col[i] - j.get(i, k).re).abs() < 1e-6, "({i},{k})");
            }
        }
    }

    #[test]
    fn toy_problem_has_saddle_structure_and_known_root() {
        let p = KktProblem::default_toy();
        assert_eq!(p.block_sizes(), (6, 2));
        let j = p.jacobian(&st(&[0.5; 8]));
        assert_eq!(j.block(6, 6, 2, 2).max_abs(), 0.0);
        assert_eq!(j.block(0, 6, 6, 2), j.block(6, 0, 2, 6).transpose());
        let back = KktProblem::from_json(&p.to_json()).unwrap();
        assert_eq!(back, p);
    }

    #[test]
    fn newton_at_deflated_root_is_at_root_error() {
        let p = KktProblem::default_toy();
        let r = newton_solve(
            &p,
            &DeflationState::new(2.0, true).unwrap(),
            &DVector::zeros(8),
            &NewtonOptions::default(),
        )
        .unwrap();
        let s = DeflationState::with_roots(2.0, true, &[r.state()]).unwrap();
        assert!(matches!(
            newton_solve(&p, &s, &r.state(), &NewtonOptions::default()),
            Err(LabError::AtRoot { .. })
        ));
    }

    #[test]
    fn max_roots_one_matches_plain_newton() {
        let p = KktProblem::default_toy();
        let u0 = DVector::from_element(8, 0.1);
        let opts = NewtonOptions::default();
        let plain = newton_solve(&p, &DeflationState::new(2.0, true).unwrap(), &u0, &opts).unwrap();
        let search = deflated_search(&p, &u0, 1, 2.0, &opts).unwrap();
        assert_eq!(search.roots, vec![plain]);
        assert_eq!(search.stopped, "maxRoots");
    }

    #[test]
    fn deflating_first_root_finds_a_second() {
        let p = KktProblem::default_toy();
        let opts = NewtonOptions::default();
        let u0 = p.default_guess();
        let r1 = newton_solve(&p, &DeflationState::new(2.0, true).unwrap(), &u0, &opts).unwrap();
        assert!(p.residual(&r1.state()).norm() < 1e-10);
        let s = DeflationState::with_roots(2.0, true, &[r1.state()]).unwrap();
        let r2 = newton_solve(&p, &s, &u0, &opts).unwrap();
        assert!(p.residual(&r2.state()).norm() < 1e-10);
        assert!((r2.state() - r1.state()).norm() > 0.1);
    }

    #[test]
    fn default_search_finds_distinct_roots() {
        let p = KktProblem::default_toy();
        let found = deflated_search(
            &p,
            &p.default_guess(),
            10,
            DEFAULT_POWER,
            &NewtonOptions::default(),
        )
        .unwrap();
        let roots = found.states();
        assert!(roots.len() >= 2);
        for (i, r) in roots.iter().enumerate() {
            assert!(p.residual(r).norm() < 1e-10);
            for q in &roots[..i] {
                assert!((r - q).norm() > 0.1);
            }
        }
        let json = serde_json::to_string(&found).unwrap();
        let back: SearchResult = serde_json::from_str(&json).unwrap();
        assert_eq!(back, found);
    }

    #[test]
    fn convex_problem_yields_one_root() {
        let q = KktProblem::quadratic(6, 2, 3).unwrap();
        let found = deflated_search(
            &q,
            &q.default_guess(),
            5,
            DEFAULT_POWER,
            &NewtonOptions::default(),
        )
        .unwrap();
        assert_eq!(found.roots.len(), 1);
        assert_ne!(found.stopped, "maxRoots");
        // the unique KKT point: x = A^T (A A^T)^{-1} c, mu = -(A A^T)^{-1} c
        let a = q.constraint_matrix();
        let c = DVector::from_column_slice(&q.rhs);
        let w = (&a * a.transpose()).lu().solve(&c).unwrap();
        let x = a.transpose() * &w;
        let root = found.roots[0].state();
        assert!((root.rows(0, 6) - x).norm() < 1e-9);
        assert!((root.rows(6, 2) + w).norm() < 1e-9);
    }

    #[test]
    fn second_solve_on_convex_problem_diverges() {
        let q = KktProblem::quadratic(6, 2, 3).unwrap();
        let opts = NewtonOptions::default();
        let r = newton_solve(
            &q,
            &DeflationState::new(2.0, true).unwrap(),
            &q.default_guess(),
            &opts,
        )
        .unwrap();
        let s = DeflationState::with_roots(2.0, true, &[r.state()]).unwrap();
        assert!(matches!(
            newton_solve(&q, &s, &q.default_guess(), &opts),
            Err(LabError::Diverged(_))
        ));
    }

    #[test]
    fn rank_one_update_at_random_points() {
        let p = KktProblem::default_toy();
        let r1 = newton_solve(
            &p,
            &DeflationState::new(2.0, true).unwrap(),
            &p.default_guess(),
            &NewtonOptions::default(),
        )
        .unwrap();
        let s = DeflationState::with_roots(2.0, true, &[r1.state()]).unwrap();
        let mut r = rng::seeded(40);
        for _ in 0..20 {
            let u = rng::normal_vector(&mut r, 8);
            let sys = deflated_system(&p, &s, &u).unwrap();
            let diff = &sys.j_tilde - &sys.j.scale_real(sys.m);
            assert!(singular_values(&diff).second_ratio() < 1e-12);
        }
        // at the root itself the outer product vanishes
        let two = deflate_far(&r1.state());
        let at = deflated_system(&p, &two, &r1.state()).unwrap();
        let diff = &at.j_tilde - &at.j.scale_real(at.m);
        assert!(diff.max_abs() < 1e-12 * at.j.max_abs());
    }

    fn deflate_far(root: &State) -> DeflationState {
        let far = root.map(|v| v + 5.0);
        DeflationState::with_roots(2.0, true, &[far]).unwrap()
    }

    #[test]
    fn gradient_matches_finite_differences_with_two_roots() {
        let mut r = rng::seeded(41);
        let roots = [rng::normal_vector(&mut r, 5), rng::normal_vector(&mut r, 5)];
        for p in [1.0, 2.0] {
            let s = DeflationState::with_roots(p, true, &roots).unwrap();
            for _ in 0..10 {
                let u = rng::normal_vector(&mut r, 5);
                let e = s.gradient(&u).unwrap();
                let h = 1e-6;
                let fd = DVector::from_fn(5, |k, _| {
                    let mut up = u.clone();
                    let mut dn = u.clone();
                    up[k] += h;
                    dn[k] -= h;
                    (s.value(&up).unwrap() - s.value(&dn).unwrap()) / (2.0 * h)
                });
                let rel = (fd - &e).norm() / e.norm();
                assert!(
                    rel <= 1e-6,
                    "p = {p}: relative error {rel:.3e}, |E| = {:.3e}",
                    e.norm()
                );
            }
        }
    }

    #[test]
    fn solution_preservation() {
        let p = KktProblem::default_toy();
        let opts = NewtonOptions::default();
        let found = deflated_search(&p, &p.default_guess(), 2, DEFAULT_POWER, &opts).unwrap();
        let (r1, r2) = (found.roots[0].state(), found.roots[1].state());
        let s = DeflationState::with_roots(2.0, true, std::slice::from_ref(&r1)).unwrap();
        let tol = opts.tol;
        let mut r = rng::seeded(43);
        let mut points = vec![r2.clone()];
        points.extend((0..20).map(|_| rng::normal_vector(&mut r, 8)));
        for u in points {
            let sys = deflated_system(&p, &s, &u).unwrap();
            assert_eq!(sys.g.norm() <= tol * sys.m, sys.f.norm() <= tol);
        }
    }

    fn pole_masking_ratio(power: f64) -> f64 {
        let p = KktProblem::default_toy();
        let root = newton_solve(
            &p,
            &DeflationState::new(2.0, true).unwrap(),
            &p.default_guess(),
            &NewtonOptions::default(),
        )
        .unwrap()
        .state();
        let s = DeflationState::with_roots(power, true, std::slice::from_ref(&root)).unwrap();
        let mut r = rng::seeded(44);
        let w = rng::normal_vector(&mut r, 8).normalize();
        let limit = p.jacobian(&root).matvec(&to_complex(&w)).norm();
        (0..=50)
            .map(|k| 10f64.powf(-6.0 + 5.0 * k as f64 / 50.0))
            .map(|t| deflated_system(&p, &s, &(&root + &w * t)).unwrap().g.norm())
            .fold(f64::INFINITY, f64::min)
            / limit
    }

    #[test]
    fn pole_masks_root_for_p_one_and_two() {
        assert!(pole_masking_ratio(1.0) > 0.1);
        assert!(pole_masking_ratio(2.0) > 0.1);
    }

    #[test]
    fn tiny_gradient_leaves_iterations_unchanged() {
        let p = KktProblem::default_toy();
        let u = p.default_guess();
        let far = DVector::from_element(8, 1e6);
        let rhs = to_complex(&DVector::from_fn(8, |i, _| 1.0 + i as f64));
        let rep = deflation_doubling_check(&p, &u, &far, &rhs, DEFLATION_GMRES_TOL).unwrap();
        assert!(rep.norm_e < 1e-15);
        assert_eq!(rep.iters_a, rep.iters_c);
        assert!(rep.pass);
    }

    #[test]
    fn doubling_at_generic_points() {
        let p = KktProblem::default_toy();
        let root = newton_solve(
            &p,
            &DeflationState::new(2.0, true).unwrap(),
            &p.default_guess(),
            &NewtonOptions::default(),
        )
        .unwrap()
        .state();
        let mut r = rng::seeded(45);
        for k in 0..10 {
            let u = rng::normal_vector(&mut r, 8);
            let rhs = rng::normal_complex_vector(&mut r, 8);
            let rep = deflation_doubling_check(&p, &u, &root, &rhs, DEFLATION_GMRES_TOL).unwrap();
            assert!(rep.update_sigma_ratio < 1e-10 && rep.rank_one);
            assert!(rep.pass, "point {k}: {rep:?}");
            assert!(rep.csv_row(k).starts_with(&format!("{k},")));
        }
    }
}
