//! Distinct-eigenvalue bound for low-rank updates `C = A + B`.
//!
//! For `rank B = r` the number of distinct eigenvalues of `C` is at most
//! `(r + 1) |Λ(A)| + d(A)`, and each geometric multiplicity can drop by at
//! most `r`. This module realizes random instances and measures both.

use num_complex::Complex64;
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::eigen::eigenvalues;
use crate::error::{LabError, Result};
use crate::jordan::{build_matrix, JordanSpec, SpecSummary};
use crate::matrix::{random_rank_r, singular_values, DenseMatrix, RankTol};
use crate::rng::{self, LabRng};
use crate::structure::{
    cluster_eigenvalues, complex_re_im, geometric_multiplicity, DEFAULT_CLUSTER_FACTOR,
    DEFECTIVE_CLUSTER_FACTOR,
};

/// `||B||_F / ||A||_F` cycled by trial index.
pub const MAGNITUDE_CYCLE: [f64; 3] = [1e-3, 1.0, 1e3];
/// Cutoff for `rank(C - lambda I)`, relative to `||C||_2 + |lambda|`.
pub const MG_RANK_FACTOR: f64 = 1e-10;
pub const SUITE_COND_CAP: f64 = 100.0;
pub const SUITE_MIN_GAP: f64 = 0.5;

/// `(r + 1) * distinct_a + defect_a`.
pub fn theorem1_bound(distinct_a: usize, defect_a: usize, r: usize) -> usize {
    (r + 1) * distinct_a + defect_a
}

/// Cluster tolerance for counting `|Λ(C)|`: `1e-3 max(1, ||C||_F)` when `A`
/// is defective, `1e-6 max(1, ||C||_F)` otherwise.
pub fn distinct_count_tolerance(c: &DenseMatrix, defective: bool) -> f64 {
    let factor = if defective {
        DEFECTIVE_CLUSTER_FACTOR
    } else {
        DEFAULT_CLUSTER_FACTOR
    };
    factor * c.frobenius_norm().max(1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MgDrop {
    #[serde(with = "complex_re_im")]
    pub lambda: Complex64,
    #[serde(rename = "mgA")]
    pub mg_a: usize,
    #[serde(rename = "mgC")]
    pub mg_c: usize,
}

impl MgDrop {
    pub fn holds(&self, r: usize) -> bool {
        self.mg_c + r >= self.mg_a
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub trial: usize,
    #[serde(rename = "specTruth")]
    pub spec_truth: SpecSummary,
    #[serde(rename = "rankUsed")]
    pub rank_used: usize,
    /// `||B||_F / ||A||_F`.
    pub scale: f64,
    #[serde(rename = "measuredDistinctC")]
    pub measured_distinct_c: usize,
    pub bound: usize,
    #[serde(rename = "clusterTolerance")]
    pub cluster_tolerance: f64,
    #[serde(rename = "mgDrops")]
    pub mg_drops: Vec<MgDrop>,
    #[serde(rename = "boundHolds")]
    pub bound_holds: bool,
    #[serde(rename = "dropsHold")]
    pub drops_hold: bool,
    pub pass: bool,
}

impl BoundReport {
    pub const CSV_HEADER: &'static str =
        "trial,n,distinctA,defectA,rank,scale,measuredDistinctC,bound,minMgSlack,boundHolds,dropsHold,pass";

    pub fn csv_row(&self) -> String {
        let slack = self
            .mg_drops
            .iter()
            .map(|m| (m.mg_c + self.rank_used) as i64 - m.mg_a as i64)
            .min()
            .unwrap_or(0);
        format!(
            "{},{},{},{},{},{:e},{},{},{},{},{},{}",
            self.trial,
            self.spec_truth.n,
            self.spec_truth.distinct,
            self.spec_truth.defect,
            self.rank_used,
            self.scale,
            self.measured_distinct_c,
            self.bound,
            slack,
            self.bound_holds,
            self.drops_hold,
            self.pass
        )
    }
}

/// Measurement tolerances for a bound trial.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundOptions {
    /// Absolute cluster tolerance for `|Λ(C)|`; `None` uses [`distinct_count_tolerance`].
    #[serde(rename = "clusterTol")]
    pub cluster_tol: Option<f64>,
    #[serde(rename = "mgRankFactor")]
    pub mg_rank_factor: f64,
}

impl Default for BoundOptions {
    fn default() -> Self {
        Self {
            cluster_tol: None,
            mg_rank_factor: MG_RANK_FACTOR,
        }
    }
}

/// One trial: `A` from `spec`, `B` of rank `r` scaled to `scale ||A||_F`.
pub fn bound_trial(
    spec: &JordanSpec,
    r: usize,
    scale: f64,
    trial: usize,
    rng: &mut LabRng,
    opts: &BoundOptions,
) -> Result<BoundReport> {
    let n = spec.n();
    if r > n {
        return Err(LabError::InvalidRank { rank: r, n });
    }
    let a = build_matrix(spec, SUITE_COND_CAP, rng.next_u64())?.a;
    let b = random_rank_r(n, r, rng.next_u64())?;
    let bn = b.frobenius_norm();
    let c = if bn == 0.0 {
        a.clone()
    } else {
        &a + &b.scale_real(scale * a.frobenius_norm() / bn)
    };

    let tol = opts
        .cluster_tol
        .unwrap_or_else(|| distinct_count_tolerance(&c, !spec.is_diagonalizable()));
    let measured = cluster_eigenvalues(&eigenvalues(&c)?, tol).len();
    let bound = theorem1_bound(spec.distinct(), spec.defect(), r);

    let c_norm = singular_values(&c).largest();
    let mg_drops: Vec<MgDrop> = spec
        .blocks()
        .iter()
        .map(|blk| {
            let cutoff = opts.mg_rank_factor * (c_norm + blk.value().norm());
            MgDrop {
                lambda: blk.value(),
                mg_a: blk.geometric(),
                mg_c: geometric_multiplicity(&c, blk.value(), RankTol::Absolute(cutoff)),
            }
        })
        .collect();
    let bound_holds = measured <= bound;
    let drops_hold = mg_drops.iter().all(|m| m.holds(r));
    Ok(BoundReport {
        trial,
        spec_truth: spec.summary(),
        rank_used: r,
        scale: if r == 0 { 0.0 } else { scale },
        measured_distinct_c: measured,
        bound,
        cluster_tolerance: tol,
        mg_drops,
        bound_holds,
        drops_hold,
        pass: bound_holds && drops_hold,
    })
}

/// Outcome of one batch trial; analysis errors are kept per trial.
pub type TrialOutcome = std::result::Result<BoundReport, LabError>;

/// Runs `trials` independent trials of the bound check for a fixed spec.
/// Trial `i` draws from stream `i` of `seed` and uses magnitude
/// `MAGNITUDE_CYCLE[i % 3]`.
pub fn check_bound(
    spec: &JordanSpec,
    r: usize,
    trials: usize,
    seed: u64,
) -> Result<Vec<TrialOutcome>> {
    check_bound_with(spec, r, trials, seed, &BoundOptions::default())
}

pub fn check_bound_with(
    spec: &JordanSpec,
    r: usize,
    trials: usize,
    seed: u64,
    opts: &BoundOptions,
) -> Result<Vec<TrialOutcome>> {
    if r > spec.n() {
        return Err(LabError::InvalidRank {
            rank: r,
            n: spec.n(),
        });
    }
    Ok((0..trials)
        .map(|i| {
            let mut rng = rng::trial_rng(seed, i as u64);
            bound_trial(
                spec,
                r,
                MAGNITUDE_CYCLE[i % MAGNITUDE_CYCLE.len()],
                i,
                &mut rng,
                opts,
            )
        })
        .collect())
}

/// Ranges for randomly drawn suite specs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SuiteRanges {
    pub n: (usize, usize),
    pub distinct: (usize, usize),
    pub defect: (usize, usize),
    pub rank: (usize, usize),
    pub min_gap: f64,
}

impl Default for SuiteRanges {
    fn default() -> Self {
        Self {
            n: (4, 10),
            distinct: (1, 4),
            defect: (0, 2),
            rank: (0, 3),
            min_gap: SUITE_MIN_GAP,
        }
    }
}

/// Draws a spec with `n`, `|Λ|` and `d` inside `ranges`.
pub fn random_suite_spec(
    rng: &mut LabRng,
    ranges: &SuiteRanges,
    nonzero: bool,
) -> Result<JordanSpec> {
    let k = rng.random_range(ranges.distinct.0..=ranges.distinct.1);
    let d = rng.random_range(ranges.defect.0..=ranges.defect.1);
    let lo = ranges.n.0.max(k + d);
    if lo > ranges.n.1 {
        return Err(LabError::InvalidSpec(format!(
            "{k} eigenvalues with defect {d} do not fit n <= {}",
            ranges.n.1
        )));
    }
    let n = rng.random_range(lo..=ranges.n.1);
    JordanSpec::random(rng, n, k, d, ranges.min_gap, nonzero)
}

/// Trial `index` of the randomized suite: a fresh spec and rank per trial.
pub fn random_bound_trial(
    seed: u64,
    index: usize,
    ranges: &SuiteRanges,
) -> Result<(JordanSpec, BoundReport)> {
    random_bound_trial_with(seed, index, ranges, &BoundOptions::default())
}

pub fn random_bound_trial_with(
    seed: u64,
    index: usize,
    ranges: &SuiteRanges,
    opts: &BoundOptions,
) -> Result<(JordanSpec, BoundReport)> {
    let mut rng = rng::trial_rng(seed, index as u64);
    let spec = random_suite_spec(&mut rng, ranges, false)?;
    let r = rng
        .random_range(ranges.rank.0..=ranges.rank.1)
        .min(spec.n());
    let scale = MAGNITUDE_CYCLE[index % MAGNITUDE_CYCLE.len()];
    let report = bound_trial(&spec, r, scale, index, &mut rng, opts)?;
    Ok((spec, report))
}

/// `A = diag(1, 1, 2, 2, ..., k, k)` and a random rank-one `B`.
#[derive(Debug, Clone)]
pub struct TightnessInstance {
    pub k: usize,
    pub a: DenseMatrix,
    pub b: DenseMatrix,
    /// Generic count `2k`, equal to the rank-one bound `2 |Λ(A)|`.
    pub expected_distinct_c: usize,
}

pub fn tightness_construction(k: usize, seed: u64) -> Result<TightnessInstance> {
    if k == 0 {
        return Err(LabError::InvalidArgument("k must be at least 1".into()));
    }
    let diag: Vec<f64> = (1..=k).flat_map(|i| [i as f64, i as f64]).collect();
    Ok(TightnessInstance {
        k,
        a: DenseMatrix::from_real_diagonal(&diag)?,
        b: random_rank_r(2 * k, 1, seed)?,
        expected_distinct_c: 2 * k,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TightnessReport {
    pub k: usize,
    pub seed: u64,
    pub measured: usize,
    pub expected: usize,
    pub bound: usize,
    pub attained: bool,
    #[serde(rename = "withinBound")]
    pub within_bound: bool,
}

/// Builds the instance and counts `|Λ(A + B)|` at the semisimple tolerance.
pub fn measure_tightness(k: usize, seed: u64) -> Result<TightnessReport> {
    measure_tightness_with(k, seed, None)
}

/// As [`measure_tightness`] with an optional absolute cluster tolerance.
pub fn measure_tightness_with(
    k: usize,
    seed: u64,
    cluster_tol: Option<f64>,
) -> Result<TightnessReport> {
    let inst = tightness_construction(k, seed)?;
    let c = &inst.a + &inst.b;
    let tol = cluster_tol.unwrap_or_else(|| distinct_count_tolerance(&c, false));
    let measured = cluster_eigenvalues(&eigenvalues(&c)?, tol).len();
    let bound = theorem1_bound(k, 0, 1);
    Ok(TightnessReport {
        k,
        seed,
        measured,
        expected: inst.expected_distinct_c,
        bound,
        attained: measured == inst.expected_distinct_c,
        within_bound: measured <= bound,
    })
}
