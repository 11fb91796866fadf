//! Matrices with prescribed Jordan structure.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::matrix::{singular_values, DenseMatrix, LuFactors};
use crate::rng::{self, LabRng};
use crate::structure::EigenStructure;

/// One eigenvalue and the sizes of its Jordan blocks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EigenBlocks {
    pub re: f64,
    #[serde(default)]
    pub im: f64,
    pub sizes: Vec<usize>,
}

impl EigenBlocks {
    pub fn new(value: Complex64, sizes: Vec<usize>) -> Self {
        Self {
            re: value.re,
            im: value.im,
            sizes,
        }
    }

    pub fn value(&self) -> Complex64 {
        Complex64::new(self.re, self.im)
    }

    pub fn algebraic(&self) -> usize {
        self.sizes.iter().sum()
    }

    pub fn geometric(&self) -> usize {
        self.sizes.len()
    }

    pub fn defect(&self) -> usize {
        self.algebraic() - self.geometric()
    }

    pub fn max_block(&self) -> usize {
        self.sizes.iter().copied().max().unwrap_or(0)
    }

    /// Sizes sorted nonincreasing.
    pub fn sorted_sizes(&self) -> Vec<usize> {
        let mut s = self.sizes.clone();
        s.sort_unstable_by(|a, b| b.cmp(a));
        s
    }
}

/// Prescribed eigenvalues with their Jordan block sizes. Serializes as
/// `{"blocks": [{"re": .., "im": .., "sizes": [..]}]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSpec", into = "RawSpec")]
pub struct JordanSpec {
    blocks: Vec<EigenBlocks>,
}

#[derive(Serialize, Deserialize)]
struct RawSpec {
    blocks: Vec<EigenBlocks>,
}

impl TryFrom<RawSpec> for JordanSpec {
    type Error = LabError;
    fn try_from(raw: RawSpec) -> Result<Self> {
        JordanSpec::new(raw.blocks)
    }
}

impl From<JordanSpec> for RawSpec {
    fn from(s: JordanSpec) -> Self {
        RawSpec { blocks: s.blocks }
    }
}

/// Ground-truth structural quantities of a spec.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpecSummary {
    pub n: usize,
    pub distinct: usize,
    pub defect: usize,
    pub mpd: usize,
}

impl JordanSpec {
    pub fn new(blocks: Vec<EigenBlocks>) -> Result<Self> {
        if blocks.is_empty() {
            return Err(LabError::InvalidSpec("no eigenvalues".into()));
        }
        for b in &blocks {
            if b.sizes.is_empty() || b.sizes.contains(&0) {
                return Err(LabError::InvalidSpec(format!(
                    "eigenvalue {} needs positive block sizes",
                    b.value()
                )));
            }
            if !b.re.is_finite() || !b.im.is_finite() {
                return Err(LabError::InvalidSpec("non-finite eigenvalue".into()));
            }
        }
        let spec = Self { blocks };
        if spec.blocks.len() > 1 && spec.min_gap() == 0.0 {
            return Err(LabError::InvalidSpec(
                "eigenvalues must be pairwise distinct".into(),
            ));
        }
        Ok(spec)
    }

    /// Convenience constructor from `(value, sizes)` pairs of real eigenvalues.
    pub fn real(blocks: &[(f64, &[usize])]) -> Result<Self> {
        Self::new(
            blocks
                .iter()
                .map(|(v, s)| EigenBlocks::new(Complex64::new(*v, 0.0), s.to_vec()))
                .collect(),
        )
    }

    /// Diagonalizable spec with the given eigenvalues, each of multiplicity one.
    pub fn diagonal(values: &[f64]) -> Result<Self> {
        Self::new(
            values
                .iter()
                .map(|&v| EigenBlocks::new(Complex64::new(v, 0.0), vec![1]))
                .collect(),
        )
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| LabError::InvalidSpec(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("spec serializes")
    }

    pub fn blocks(&self) -> &[EigenBlocks] {
        &self.blocks
    }

    pub fn n(&self) -> usize {
        self.blocks.iter().map(EigenBlocks::algebraic).sum()
    }

    pub fn distinct(&self) -> usize {
        self.blocks.len()
    }

    pub fn defect(&self) -> usize {
        self.blocks.iter().map(EigenBlocks::defect).sum()
    }

    pub fn mpd(&self) -> usize {
        self.blocks.iter().map(EigenBlocks::max_block).sum()
    }

    pub fn is_diagonalizable(&self) -> bool {
        self.defect() == 0
    }

    /// Smallest pairwise eigenvalue distance; infinite for a single eigenvalue.
    pub fn min_gap(&self) -> f64 {
        let mut gap = f64::INFINITY;
        for (i, a) in self.blocks.iter().enumerate() {
            for b in &self.blocks[i + 1..] {
                gap = gap.min((a.value() - b.value()).norm());
            }
        }
        gap
    }

    pub fn summary(&self) -> SpecSummary {
        SpecSummary {
            n: self.n(),
            distinct: self.distinct(),
            defect: self.defect(),
            mpd: self.mpd(),
        }
    }

    /// Block-diagonal Jordan matrix in listed order.
    /// Differences between this spec and a measured structure; empty when
    /// every eigenvalue's `m_a`, `m_g`, `d`, block sizes and the `mpd` agree
    /// exactly. Each spec eigenvalue is paired with the nearest cluster.
    pub fn mismatches(&self, measured: &EigenStructure) -> Vec<String> {
        let mut out = Vec::new();
        if measured.distinct() != self.distinct() {
            out.push(format!(
                "{} clusters, expected {}",
                measured.distinct(),
                self.distinct()
            ));
            return out;
        }
        let mut used = vec![false; measured.clusters.len()];
        for blk in &self.blocks {
            let nearest = measured
                .clusters
                .iter()
                .enumerate()
                .min_by(|(_, x), (_, y)| {
                    (x.value - blk.value())
                        .norm()
                        .total_cmp(&(y.value - blk.value()).norm())
                })
                .map(|(i, _)| i)
                .expect("cluster counts agree");
            if used[nearest] {
                out.push(format!(
                    "two eigenvalues map to the cluster at {}",
                    measured.clusters[nearest].value
                ));
                continue;
            }
            used[nearest] = true;
            let c = &measured.clusters[nearest];
            let want = (
                blk.algebraic(),
                blk.geometric(),
                blk.defect(),
                blk.sorted_sizes(),
            );
            let got = (c.algebraic, c.geometric, c.defect, c.block_sizes.clone());
            if want != got {
                out.push(format!(
                    "eigenvalue {}: (m_a, m_g, d, blocks) = {got:?}, expected {want:?}",
                    blk.value()
                ));
            }
        }
        if measured.mpd != self.mpd() {
            out.push(format!("mpd {} expected {}", measured.mpd, self.mpd()));
        }
        out
    }

    pub fn jordan_matrix(&self) -> DenseMatrix {
        let n = self.n();
        let mut m = DMatrix::<Complex64>::zeros(n, n);
        let mut at = 0;
        for b in &self.blocks {
            for &size in &b.sizes {
                for i in 0..size {
                    m[(at + i, at + i)] = b.value();
                    if i + 1 < size {
                        m[(at + i, at + i + 1)] = Complex64::new(1.0, 0.0);
                    }
                }
                at += size;
            }
        }
        DenseMatrix::wrap(m)
    }

    /// Random spec with the requested totals. Eigenvalues have real parts in
    /// `[-3, 3]`, are real with probability one half (otherwise imaginary part
    /// in `[-2, 2]`), are pairwise at least `min_gap` apart and, when
    /// `nonzero` is set, at least `min_gap` away from the origin.
    pub fn random(
        rng: &mut LabRng,
        n: usize,
        distinct: usize,
        defect: usize,
        min_gap: f64,
        nonzero: bool,
    ) -> Result<Self> {
        if distinct == 0 || n < distinct + defect {
            return Err(LabError::InvalidSpec(format!(
                "cannot place {distinct} eigenvalues with defect {defect} in dimension {n}"
            )));
        }
        let mut values: Vec<Complex64> = Vec::with_capacity(distinct);
        let mut attempts = 0;
        while values.len() < distinct {
            attempts += 1;
            if attempts > 10_000 {
                return Err(LabError::InvalidSpec(format!(
                    "could not place {distinct} eigenvalues {min_gap} apart"
                )));
            }
            let re = rng.random_range(-3.0..=3.0);
            let im = if rng.random_bool(0.5) {
                0.0
            } else {
                rng.random_range(-2.0..=2.0)
            };
            let z = Complex64::new(re, im);
            if nonzero && z.norm() < min_gap {
                continue;
            }
            if values.iter().all(|v| (v - z).norm() >= min_gap) {
                values.push(z);
            }
        }
        // n - defect blocks in total, one guaranteed per eigenvalue
        let n_blocks = n - defect;
        let mut owner: Vec<usize> = (0..distinct).collect();
        while owner.len() < n_blocks {
            owner.push(rng.random_range(0..distinct));
        }
        let mut sizes = vec![1usize; n_blocks];
        for _ in 0..defect {
            let b = rng.random_range(0..n_blocks);
            sizes[b] += 1;
        }
        let blocks = values
            .iter()
            .enumerate()
            .map(|(e, &v)| {
                let mut s: Vec<usize> = owner
                    .iter()
                    .zip(&sizes)
                    .filter(|(o, _)| **o == e)
                    .map(|(_, &s)| s)
                    .collect();
                s.sort_unstable_by(|a, b| b.cmp(a));
                EigenBlocks::new(v, s)
            })
            .collect();
        Self::new(blocks)
    }
}

/// `A = V J V^{-1}` together with the similarity used.
#[derive(Debug, Clone)]
pub struct BuiltMatrix {
    pub a: DenseMatrix,
    pub v: DenseMatrix,
    pub condition: f64,
    pub draws: usize,
}

pub const MAX_SIMILARITY_DRAWS: usize = 100;

/// Realizes `spec` as `V J V^{-1}` with a real Gaussian `V` redrawn until
/// `cond_2(V) <= cond_cap`. A cap of exactly 1 selects `V = I`.
pub fn build_matrix(spec: &JordanSpec, cond_cap: f64, seed: u64) -> Result<BuiltMatrix> {
    if cond_cap.is_nan() || cond_cap < 1.0 {
        return Err(LabError::InvalidArgument(format!(
            "condition cap {cond_cap} must be at least 1"
        )));
    }
    let n = spec.n();
    let j = spec.jordan_matrix();
    if cond_cap == 1.0 {
        return Ok(BuiltMatrix {
            a: j,
            v: DenseMatrix::identity(n),
            condition: 1.0,
            draws: 0,
        });
    }
    let mut rng = rng::seeded(seed);
    let mut best = f64::INFINITY;
    for draw in 1..=MAX_SIMILARITY_DRAWS {
        let v = DenseMatrix::from_real_dmatrix(&rng::normal_matrix(&mut rng, n, n))?;
        let cond = singular_values(&v).condition_number();
        best = best.min(cond);
        if cond > cond_cap {
            continue;
        }
        let Ok(lu) = LuFactors::factor(&v) else {
            continue;
        };
        let a = &(&v * &j) * &lu.inverse();
        return Ok(BuiltMatrix {
            a,
            v,
            condition: cond,
            draws: draw,
        });
    }
    Err(LabError::CondCapUnreachable {
        cap: cond_cap,
        draws: MAX_SIMILARITY_DRAWS,
        best,
    })
}
