//! Recovery of the Jordan structure of a dense matrix: distinct eigenvalues,
//! algebraic and geometric multiplicities, defectivity, block sizes and the
//! minimal polynomial degree.
//!
//! Eigenvalues are grouped by single-linkage clustering. For each cluster
//! with representative `lambda` the Weyr sequence `w_k = dim ker (A - lambda I)^k`
//! is read off numerical ranks of successive powers, and block sizes follow
//! as the conjugate partition of its first differences.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::eigen::eigenvalues;
use crate::error::{LabError, Result};
use crate::matrix::{numerical_rank, singular_values, DenseMatrix, RankTol};

/// A group of numerically coincident eigenvalues.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueCluster {
    /// Arithmetic mean of the members.
    pub value: Complex64,
    pub members: Vec<Complex64>,
}

impl ValueCluster {
    pub fn algebraic(&self) -> usize {
        self.members.len()
    }
}

/// Single-linkage clustering: two values share a cluster iff a chain of
/// pairwise gaps `<= tol` connects them. Clusters come back sorted by
/// real part, then imaginary part, of their mean.
pub fn cluster_eigenvalues(values: &[Complex64], tol: f64) -> Vec<ValueCluster> {
    let n = values.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    for i in 0..n {
        for j in (i + 1)..n {
            if (values[i] - values[j]).norm() <= tol {
                let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                if ri != rj {
                    parent[ri.max(rj)] = ri.min(rj);
                }
            }
        }
    }
    let mut groups: Vec<(usize, Vec<Complex64>)> = Vec::new();
    for (i, &v) in values.iter().enumerate() {
        let root = find(&mut parent, i);
        match groups.iter_mut().find(|(r, _)| *r == root) {
            Some((_, members)) => members.push(v),
            None => groups.push((root, vec![v])),
        }
    }
    let mut clusters: Vec<ValueCluster> = groups
        .into_iter()
        .map(|(_, members)| {
            let sum: Complex64 = members.iter().sum();
            ValueCluster {
                value: sum / members.len() as f64,
                members,
            }
        })
        .collect();
    clusters.sort_by(|a, b| {
        a.value
            .re
            .total_cmp(&b.value.re)
            .then(a.value.im.total_cmp(&b.value.im))
    });
    clusters
}

/// `n - rank(A - lambda I)` at the given cutoff.
pub fn geometric_multiplicity(a: &DenseMatrix, lambda: Complex64, tol: RankTol) -> usize {
    a.rows() - numerical_rank(&a.shifted(lambda), tol)
}

pub(crate) mod complex_re_im {
    use num_complex::Complex64;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    struct ReIm {
        re: f64,
        im: f64,
    }

    pub fn serialize<S: Serializer>(z: &Complex64, s: S) -> Result<S::Ok, S::Error> {
        ReIm { re: z.re, im: z.im }.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Complex64, D::Error> {
        let v = ReIm::deserialize(d)?;
        Ok(Complex64::new(v.re, v.im))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EigenCluster {
    #[serde(with = "complex_re_im")]
    pub value: Complex64,
    #[serde(rename = "m_a")]
    pub algebraic: usize,
    #[serde(rename = "m_g")]
    pub geometric: usize,
    #[serde(rename = "d")]
    pub defect: usize,
    /// Nonincreasing.
    #[serde(rename = "blockSizes")]
    pub block_sizes: Vec<usize>,
    /// `w_1, w_2, ...` up to the power where the kernel reaches `m_a`.
    pub weyr: Vec<usize>,
}

impl EigenCluster {
    pub fn max_block(&self) -> usize {
        self.block_sizes.first().copied().unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EigenStructure {
    pub clusters: Vec<EigenCluster>,
    pub dimension: usize,
    #[serde(rename = "clusterTolerance")]
    pub cluster_tolerance: f64,
    #[serde(rename = "rankTolerance")]
    pub rank_tolerance: f64,
    #[serde(rename = "totalDefect")]
    pub total_defect: usize,
    pub mpd: usize,
}

impl EigenStructure {
    pub fn distinct(&self) -> usize {
        self.clusters.len()
    }

    pub fn is_diagonalizable(&self) -> bool {
        self.total_defect == 0
    }

    pub fn max_block(&self) -> usize {
        self.clusters
            .iter()
            .map(EigenCluster::max_block)
            .max()
            .unwrap_or(0)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("structure serializes")
    }
}

/// Default semisimple cluster tolerance factor, scaled by `max(1, ||A||_F)`.
pub const DEFAULT_CLUSTER_FACTOR: f64 = 1e-6;
/// Cluster tolerance factor for matrices with known defective eigenvalues.
pub const DEFECTIVE_CLUSTER_FACTOR: f64 = 1e-3;
/// Relative cutoff applied to each power `(A - lambda I)^k`.
pub const DEFAULT_WEYR_RANK_FACTOR: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnalyzeOptions {
    /// Absolute clustering tolerance; `None` means `1e-6 * max(1, ||A||_F)`.
    pub cluster_tol: Option<f64>,
    /// Cutoff relative to `(||A||_2 + |lambda|)^k` for the rank of the k-th power.
    pub rank_factor: f64,
}

impl Default for AnalyzeOptions {
    fn default() -> Self {
        Self {
            cluster_tol: None,
            rank_factor: DEFAULT_WEYR_RANK_FACTOR,
        }
    }
}

impl AnalyzeOptions {
    /// Cluster tolerance `factor * max(1, ||A||_F)`.
    pub fn relative(factor: f64, a: &DenseMatrix) -> Self {
        Self {
            cluster_tol: Some(factor * a.frobenius_norm().max(1.0)),
            ..Self::default()
        }
    }

    pub fn for_defective(a: &DenseMatrix) -> Self {
        Self::relative(DEFECTIVE_CLUSTER_FACTOR, a)
    }

    pub fn cluster_tolerance(&self, a: &DenseMatrix) -> f64 {
        self.cluster_tol
            .unwrap_or_else(|| DEFAULT_CLUSTER_FACTOR * a.frobenius_norm().max(1.0))
    }
}

/// Weyr sequence `w_1, w_2, ...` for `lambda`, stopping once it stabilizes
/// or reaches `algebraic`.
///
/// Each power is thresholded at `factor * (||A||_2 + |lambda|)^k`, which
/// bounds `||(A - lambda I)^k||_2`; a power that should vanish is then
/// measured against the scale of `A` rather than against its own round-off.
pub fn weyr_sequence(
    a: &DenseMatrix,
    lambda: Complex64,
    algebraic: usize,
    factor: f64,
) -> Vec<usize> {
    let n = a.rows();
    let shifted = a.shifted(lambda);
    let base = singular_values(a).largest() + lambda.norm();
    let mut power = shifted.clone();
    let mut scale = base;
    let mut seq: Vec<usize> = Vec::new();
    for k in 1..=algebraic.max(1) {
        if k > 1 {
            power = &power * &shifted;
            scale *= base;
        }
        let w = n - numerical_rank(&power, RankTol::Absolute(factor * scale));
        if seq.last() == Some(&w) {
            break;
        }
        seq.push(w);
        if w >= algebraic {
            break;
        }
    }
    seq
}

/// Block sizes (nonincreasing) from a Weyr sequence: the number of blocks of
/// size at least `k` is `w_k - w_{k-1}`.
pub fn block_sizes_from_weyr(weyr: &[usize]) -> Result<Vec<usize>> {
    let mut prev = 0usize;
    let mut diffs = Vec::with_capacity(weyr.len());
    for &w in weyr {
        if w <= prev {
            return Err(LabError::StructureInconsistent(format!(
                "Weyr sequence {weyr:?} is not strictly increasing"
            )));
        }
        diffs.push(w - prev);
        prev = w;
    }
    if diffs.windows(2).any(|d| d[1] > d[0]) {
        return Err(LabError::StructureInconsistent(format!(
            "Weyr differences of {weyr:?} are not nonincreasing"
        )));
    }
    let mut sizes = Vec::new();
    for (k, &d) in diffs.iter().enumerate() {
        let next = diffs.get(k + 1).copied().unwrap_or(0);
        for _ in 0..(d - next) {
            sizes.push(k + 1);
        }
    }
    sizes.sort_unstable_by(|a, b| b.cmp(a));
    Ok(sizes)
}

/// Full eigenstructure of a square matrix.
pub fn analyze(a: &DenseMatrix, opts: &AnalyzeOptions) -> Result<EigenStructure> {
    let values = eigenvalues(a)?;
    let n = a.rows();
    let tol = opts.cluster_tolerance(a);
    let groups = cluster_eigenvalues(&values, tol);
    let total: usize = groups.iter().map(ValueCluster::algebraic).sum();
    if total != n {
        return Err(LabError::StructureInconsistent(format!(
            "clusters hold {total} eigenvalues for dimension {n}"
        )));
    }

    let mut clusters = Vec::with_capacity(groups.len());
    for g in &groups {
        let m_a = g.algebraic();
        let weyr = weyr_sequence(a, g.value, m_a, opts.rank_factor);
        if weyr.last() != Some(&m_a) {
            return Err(LabError::StructureInconsistent(format!(
                "kernel dimensions {weyr:?} at {:.6e} do not reach m_a = {m_a} (cluster tolerance {tol:.3e})",
                g.value
            )));
        }
        let block_sizes = block_sizes_from_weyr(&weyr)?;
        let geometric = weyr[0];
        clusters.push(EigenCluster {
            value: g.value,
            algebraic: m_a,
            geometric,
            defect: m_a - geometric,
            block_sizes,
            weyr,
        });
    }
    let total_defect = clusters.iter().map(|c| c.defect).sum();
    let mut s = EigenStructure {
        clusters,
        dimension: n,
        cluster_tolerance: tol,
        rank_tolerance: opts.rank_factor,
        total_defect,
        mpd: 0,
    };
    s.mpd = minimal_polynomial_degree(&s);
    Ok(s)
}

/// Sum over distinct eigenvalues of the largest Jordan block.
pub fn minimal_polynomial_degree(s: &EigenStructure) -> usize {
    s.clusters.iter().map(EigenCluster::max_block).sum()
}
