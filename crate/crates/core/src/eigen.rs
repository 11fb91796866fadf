//! Eigenvalues of a dense complex matrix: Householder reduction to upper
//! Hessenberg form followed by single-shift complex QR iteration with
//! Wilkinson shifts and deflation on negligible subdiagonal entries.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{LabError, Result};
use crate::matrix::{DenseMatrix, EPS};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Reduces `h` in place to upper Hessenberg form by unitary similarity.
pub(crate) fn hessenberg_in_place(h: &mut DMatrix<Complex64>) {
    let n = h.nrows();
    if n < 3 {
        return;
    }
    for k in 0..n - 2 {
        let alpha_norm: f64 = ((k + 1)..n)
            .map(|i| h[(i, k)].norm_sqr())
            .sum::<f64>()
            .sqrt();
        if alpha_norm == 0.0 {
            continue;
        }
        let x0 = h[(k + 1, k)];
        let phase = if x0.norm() == 0.0 {
            Complex64::new(1.0, 0.0)
        } else {
            x0 / x0.norm()
        };
        // v = x + phase*|x| e1, H = I - 2 v v^H / (v^H v)
        let mut v: Vec<Complex64> = ((k + 1)..n).map(|i| h[(i, k)]).collect();
        v[0] += phase * alpha_norm;
        let vnorm2: f64 = v.iter().map(|z| z.norm_sqr()).sum();
        if vnorm2 == 0.0 {
            continue;
        }
        let beta = 2.0 / vnorm2;
        // left: rows k+1.., all columns from k
        for j in k..n {
            let mut s = ZERO;
            for (t, vi) in v.iter().enumerate() {
                s += vi.conj() * h[(k + 1 + t, j)];
            }
            s *= beta;
            for (t, vi) in v.iter().enumerate() {
                h[(k + 1 + t, j)] -= vi * s;
            }
        }
        // right: columns k+1.., all rows
        for i in 0..n {
            let mut s = ZERO;
            for (t, vi) in v.iter().enumerate() {
                s += h[(i, k + 1 + t)] * vi;
            }
            s *= beta;
            for (t, vi) in v.iter().enumerate() {
                h[(i, k + 1 + t)] -= s * vi.conj();
            }
        }
        for i in (k + 2)..n {
            h[(i, k)] = ZERO;
        }
    }
}

/// Givens rotation `[c s; -conj(s) c]` with real `c` mapping `(a, b)` to `(r, 0)`.
pub(crate) fn givens(a: Complex64, b: Complex64) -> (f64, Complex64) {
    let na = a.norm();
    let nb = b.norm();
    if nb == 0.0 {
        return (1.0, ZERO);
    }
    if na == 0.0 {
        return (0.0, (b / nb).conj());
    }
    let r = na.hypot(nb);
    let c = na / r;
    let s = (a / na) * b.conj() / r;
    (c, s)
}

/// Eigenvalue of the 2x2 block `[a b; c d]` closest to `d`.
fn wilkinson_shift(a: Complex64, b: Complex64, c: Complex64, d: Complex64) -> Complex64 {
    let half = (a - d) * 0.5;
    let disc = (half * half + b * c).sqrt();
    let mu1 = d - b * c / (half + disc);
    let mu2 = d - b * c / (half - disc);
    let candidates = [mu1, mu2];
    candidates
        .into_iter()
        .filter(|z| z.re.is_finite() && z.im.is_finite())
        .min_by(|x, y| (x - d).norm().total_cmp(&(y - d).norm()))
        .unwrap_or(d)
}

/// All `n` eigenvalues with multiplicity, in the order they deflate.
///
/// Fails with `NoConvergence` once the total number of QR sweeps exceeds `30 n`.
pub fn eigenvalues(a: &DenseMatrix) -> Result<Vec<Complex64>> {
    if !a.is_square() {
        return Err(LabError::DimensionMismatch {
            expected: "square matrix".into(),
            found: format!("{}x{}", a.rows(), a.cols()),
        });
    }
    let n = a.rows();
    let mut h = a.as_dmatrix().clone();
    hessenberg_in_place(&mut h);

    let mut eig = vec![ZERO; n];
    let budget = 30 * n.max(1);
    let mut sweeps = 0usize;
    let mut since_deflation = 0usize;
    let mut converged = 0usize;
    let norm = h.iter().map(|z| z.norm()).fold(0.0, f64::max);

    let mut hi = n as isize - 1;
    while hi >= 0 {
        let hi_u = hi as usize;
        // find start of the active unreduced block
        let mut lo = hi_u;
        while lo > 0 {
            let sub = h[(lo, lo - 1)].norm();
            let mut scale = h[(lo - 1, lo - 1)].norm() + h[(lo, lo)].norm();
            if scale == 0.0 {
                scale = norm;
            }
            if sub <= EPS * scale || sub < f64::MIN_POSITIVE {
                h[(lo, lo - 1)] = ZERO;
                break;
            }
            lo -= 1;
        }
        if lo == hi_u {
            eig[hi_u] = h[(hi_u, hi_u)];
            converged += 1;
            hi -= 1;
            since_deflation = 0;
            continue;
        }

        sweeps += 1;
        since_deflation += 1;
        if sweeps > budget {
            return Err(LabError::NoConvergence {
                iterations: sweeps - 1,
                converged,
                n,
            });
        }

        let shift = if since_deflation.is_multiple_of(10) {
            // exceptional shift to break cycles
            h[(hi_u, hi_u)] + Complex64::new(0.75 * h[(hi_u, hi_u - 1)].norm(), 0.0)
        } else {
            wilkinson_shift(
                h[(hi_u - 1, hi_u - 1)],
                h[(hi_u - 1, hi_u)],
                h[(hi_u, hi_u - 1)],
                h[(hi_u, hi_u)],
            )
        };

        // explicit shifted QR step on rows/cols lo..=hi
        for k in lo..=hi_u {
            h[(k, k)] -= shift;
        }
        let mut rots = Vec::with_capacity(hi_u - lo);
        for k in lo..hi_u {
            let (c, s) = givens(h[(k, k)], h[(k + 1, k)]);
            for j in k..=hi_u {
                let x = h[(k, j)];
                let y = h[(k + 1, j)];
                h[(k, j)] = x * c + s * y;
                h[(k + 1, j)] = -s.conj() * x + y * c;
            }
            rots.push((c, s));
        }
        for (offset, &(c, s)) in rots.iter().enumerate() {
            let k = lo + offset;
            let top = (k + 2).min(hi_u);
            for i in lo..=top {
                let x = h[(i, k)];
                let y = h[(i, k + 1)];
                h[(i, k)] = x * c + y * s.conj();
                h[(i, k + 1)] = -x * s + y * c;
            }
        }
        for k in lo..=hi_u {
            h[(k, k)] += shift;
        }
    }
    Ok(eig)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn sorted_re(mut v: Vec<Complex64>) -> Vec<f64> {
        v.sort_by(|a, b| a.re.total_cmp(&b.re));
        v.into_iter().map(|z| z.re).collect()
    }

    #[test]
    fn diagonal() {
        let a = DenseMatrix::from_real_diagonal(&[3., 1., 2.]).unwrap();
        let e = sorted_re(eigenvalues(&a).unwrap());
        for (x, y) in e.iter().zip([1., 2., 3.]) {
            assert!((x - y).abs() < 1e-14);
        }
    }

    #[test]
    fn jordan_block() {
        let a = DenseMatrix::from_real(3, 3, &[5., 1., 0., 0., 5., 1., 0., 0., 5.]).unwrap();
        for z in eigenvalues(&a).unwrap() {
            assert!((z - Complex64::new(5.0, 0.0)).norm() < 1e-6);
        }
    }

    #[test]
    fn companion_matrix_roots() {
        // (z-1)(z-2)(z-4) = z^3 - 7 z^2 + 14 z - 8
        let a = DenseMatrix::from_real(3, 3, &[7., -14., 8., 1., 0., 0., 0., 1., 0.]).unwrap();
        let e = eigenvalues(&a).unwrap();
        for z in &e {
            assert!(z.im.abs() < 1e-12);
        }
        let e = sorted_re(e);
        for (x, y) in e.iter().zip([1., 2., 4.]) {
            assert!((x - y).abs() < 1e-12, "{x} vs {y}");
        }
    }

    #[test]
    fn rotation_has_complex_pair() {
        let a = DenseMatrix::from_real(2, 2, &[0., -1., 1., 0.]).unwrap();
        let mut e = eigenvalues(&a).unwrap();
        e.sort_by(|x, y| x.im.total_cmp(&y.im));
        assert!((e[0] - Complex64::new(0., -1.)).norm() < 1e-14);
        assert!((e[1] - Complex64::new(0., 1.)).norm() < 1e-14);
    }

    #[test]
    fn permutation_cycle_converges() {
        // cyclic shift: eigenvalues are the 4th roots of unity; unshifted QR stalls here
        let a = DenseMatrix::from_real(
            4,
            4,
            &[
                0., 0., 0., 1., 1., 0., 0., 0., 0., 1., 0., 0., 0., 0., 1., 0.,
            ],
        )
        .unwrap();
        let e = eigenvalues(&a).unwrap();
        for z in e {
            assert!((z.powu(4) - Complex64::new(1.0, 0.0)).norm() < 1e-12);
        }
    }

    #[test]
    fn trace_and_determinant_preserved_for_random_matrix() {
        let mut r = rng::seeded(8);
        let a = DenseMatrix::from_real_dmatrix(&rng::normal_matrix(&mut r, 12, 12)).unwrap();
        let e = eigenvalues(&a).unwrap();
        let tr: Complex64 = e.iter().sum();
        assert!((tr - a.as_dmatrix().trace()).norm() < 1e-11);
        let det: Complex64 = e.iter().product();
        let det_ref = a.as_dmatrix().clone().determinant();
        assert!((det - det_ref).norm() < 1e-9 * det_ref.norm().max(1.0));
    }

    #[test]
    fn hessenberg_preserves_spectrum_shape() {
        let mut r = rng::seeded(2);
        let mut h = DenseMatrix::from_real_dmatrix(&rng::normal_matrix(&mut r, 6, 6))
            .unwrap()
            .into_dmatrix();
        let fro: f64 = h.iter().map(|z| z.norm_sqr()).sum();
        hessenberg_in_place(&mut h);
        for i in 2..6 {
            for j in 0..i - 1 {
                assert_eq!(h[(i, j)], ZERO);
            }
        }
        let fro2: f64 = h.iter().map(|z| z.norm_sqr()).sum();
        assert!((fro - fro2).abs() < 1e-12 * fro);
    }

    #[test]
    fn one_by_one_and_zero() {
        let a = DenseMatrix::from_real(1, 1, &[-2.5]).unwrap();
        assert_eq!(eigenvalues(&a).unwrap(), vec![Complex64::new(-2.5, 0.0)]);
        let z = eigenvalues(&DenseMatrix::zeros(3, 3)).unwrap();
        assert!(z.iter().all(|v| v.norm() == 0.0));
    }
}
