//! Small dense linear-algebra helpers shared by the physics modules.
//!
//! Everything here operates on `ndarray` matrices of `Complex64` (or `f64`
//! for covariances). Matrices are tiny (`2R x 2R` per wavevector, up to a few
//! hundred for subsystem covariances), so clarity wins over blocking tricks;
//! eigen decompositions go through LAPACK via `ndarray-linalg`.

use ndarray::{Array1, Array2};
use ndarray_linalg::{Cholesky, Eig, Eigh, Inverse, Solve, UPLO};

use crate::{C64, Error, Result};

/// Conjugate transpose.
pub fn dagger(a: &Array2<C64>) -> Array2<C64> {
    a.t().mapv(|z| z.conj())
}

/// Hermitian part `(A + A†)/2`.
pub fn hermitian_part(a: &Array2<C64>) -> Array2<C64> {
    let ad = dagger(a);
    (a + &ad).mapv(|z| 0.5 * z)
}

/// Anti-Hermitian content as a Hermitian matrix: `i (A − A†)/2`.
pub fn antihermitian_part(a: &Array2<C64>) -> Array2<C64> {
    let ad = dagger(a);
    (a - &ad).mapv(|z| C64::new(0.0, 0.5) * z)
}

/// Max absolute entry.
pub fn max_abs(a: &Array2<C64>) -> f64 {
    a.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Max absolute deviation from Hermiticity.
pub fn hermiticity_drift(a: &Array2<C64>) -> f64 {
    let n = a.nrows();
    let mut drift: f64 = 0.0;
    for i in 0..n {
        for j in i..n {
            drift = drift.max((a[[i, j]] - a[[j, i]].conj()).norm());
        }
    }
    // the anti-Hermitian residue is split evenly between (i,j) and (j,i)
    0.5 * drift
}

/// Largest absolute value in the strict lower triangle.
pub fn lower_triangle_norm(a: &Array2<C64>) -> f64 {
    let n = a.nrows();
    let mut m: f64 = 0.0;
    for i in 1..n {
        for j in 0..i {
            m = m.max(a[[i, j]].norm());
        }
    }
    m
}

/// Signature matrix `C = diag(I_r, −I_r)` encoding bosonic commutation
/// relations of the doubled spinor.
pub fn signature_matrix(r: usize) -> Array2<C64> {
    let mut c = Array2::zeros((2 * r, 2 * r));
    for i in 0..r {
        c[[i, i]] = C64::new(1.0, 0.0);
        c[[r + i, r + i]] = C64::new(-1.0, 0.0);
    }
    c
}

/// Signature signs as a vector: `+1` for the first `r` entries, `−1` after.
pub fn signature_signs(r: usize) -> Vec<f64> {
    (0..2 * r).map(|i| if i < r { 1.0 } else { -1.0 }).collect()
}

/// Right eigen decomposition of a general complex matrix.
pub fn eig(a: &Array2<C64>) -> Result<(Array1<C64>, Array2<C64>)> {
    Ok(a.eig()?)
}

/// Inverse of a small complex matrix.
pub fn inv(a: &Array2<C64>) -> Result<Array2<C64>> {
    Ok(a.inv()?)
}

/// Solve `A x = b` for complex dense `A`.
pub fn solve_mat(a: &Array2<C64>, b: &Array2<C64>) -> Result<Array2<C64>> {
    let n = a.nrows();
    let mut out = Array2::zeros((n, b.ncols()));
    for (j, col) in b.columns().into_iter().enumerate() {
        let x = a.solve(&col.to_owned())?;
        out.column_mut(j).assign(&x);
    }
    Ok(out)
}

/// Gram–Schmidt in the indefinite inner product `⟨u, v⟩ = u† C v` where
/// `C = diag(I, −I)`.
///
/// Columns are processed in order; column `a` is required to come out with
/// `w_a† C w_a` of sign `signs[a]`. The span of the first `a` columns is
/// preserved, so a flag of invariant subspaces stays invariant. Fails with
/// [`Error::DegenerateBands`] when a column is (numerically) C-isotropic,
/// which signals an exceptional point of the generator.
pub fn c_orthonormalize(cols: &Array2<C64>, signs: &[f64], k: f64) -> Result<Array2<C64>> {
    let n = cols.nrows();
    let m = cols.ncols();
    assert_eq!(signs.len(), m);
    let half = m / 2;
    let mut w = cols.to_owned();
    for a in 0..m {
        // project out previously fixed columns (C-orthogonal projection)
        for b in 0..a {
            let mut overlap = C64::new(0.0, 0.0);
            for i in 0..n {
                let ci = if i < half { 1.0 } else { -1.0 };
                overlap += w[[i, b]].conj() * ci * w[[i, a]];
            }
            let coeff = overlap * signs[b];
            for i in 0..n {
                let correction = coeff * w[[i, b]];
                w[[i, a]] -= correction;
            }
        }
        let mut norm2 = 0.0;
        for i in 0..n {
            let ci = if i < half { 1.0 } else { -1.0 };
            norm2 += (w[[i, a]].conj() * ci * w[[i, a]]).re;
        }
        let scale2 = norm2 * signs[a];
        if scale2 <= 1e-24 {
            return Err(Error::DegenerateBands { k, gap: scale2.abs().sqrt() });
        }
        let scale = C64::new(1.0 / scale2.sqrt(), 0.0);
        for i in 0..n {
            w[[i, a]] *= scale;
        }
    }
    Ok(w)
}

/// Check `W C W† = C`; returns the max-abs deviation.
pub fn canonicality_residual(w: &Array2<C64>, r: usize) -> f64 {
    let c = signature_matrix(r);
    let wd = dagger(w);
    let wcw = w.dot(&c).dot(&wd);
    max_abs(&(&wcw - &c))
}

/// Inverse of a canonical transformation: `W⁻¹ = C W† C`.
pub fn canonical_inverse(w: &Array2<C64>, r: usize) -> Array2<C64> {
    let c = signature_matrix(r);
    let wd = dagger(w);
    c.dot(&wd).dot(&c)
}

/// Symplectic eigenvalues of a real symmetric covariance `G` ordered as
/// `(x_1..x_n, p_1..p_n)`, with symplectic form `Ω = [[0, I], [−I, 0]]`.
///
/// Uses the Cholesky route: with `G = L Lᵀ` the spectrum of the antisymmetric
/// `K = Lᵀ Ω L` is `±iν`, so the symplectic eigenvalues are the square roots
/// of the eigenvalues of `Kᵀ K` (each appearing twice). Falls back to a
/// complex eigen decomposition of `iΩG` when `G` is not numerically positive
/// definite.
pub fn symplectic_eigenvalues(g: &Array2<f64>) -> Result<Vec<f64>> {
    let dim = g.nrows();
    assert_eq!(dim % 2, 0, "covariance must have even dimension");
    let n = dim / 2;
    match g.cholesky(UPLO::Lower) {
        Ok(l) => {
            // K = Lᵀ Ω L, computed blockwise: Ω swaps x/p row blocks with signs
            let mut omega_l = Array2::<f64>::zeros((dim, dim));
            for j in 0..dim {
                for i in 0..n {
                    omega_l[[i, j]] = l[[n + i, j]];
                    omega_l[[n + i, j]] = -l[[i, j]];
                }
            }
            let k = l.t().dot(&omega_l);
            let ktk = k.t().dot(&k);
            let (vals, _) = ktk.eigh(UPLO::Lower)?;
            let mut nus: Vec<f64> = vals.iter().map(|v| v.max(0.0).sqrt()).collect();
            nus.sort_by(|a, b| a.partial_cmp(b).unwrap());
            // spectrum is doubled: keep every second value
            Ok(nus.into_iter().skip(1).step_by(2).collect())
        }
        Err(_) => {
            let mut iog = Array2::<C64>::zeros((dim, dim));
            for j in 0..dim {
                for i in 0..n {
                    iog[[i, j]] = C64::new(0.0, 1.0) * C64::from(g[[n + i, j]]);
                    iog[[n + i, j]] = C64::new(0.0, -1.0) * C64::from(g[[i, j]]);
                }
            }
            let (vals, _) = iog.eig()?;
            let mut nus: Vec<f64> = vals.iter().map(|v| v.re.abs()).collect();
            nus.sort_by(|a, b| a.partial_cmp(b).unwrap());
            Ok(nus.into_iter().skip(1).step_by(2).collect())
        }
    }
}

/// `coth(x)/2` with a Laurent series for small arguments.
pub fn half_coth(x: f64) -> f64 {
    if x.abs() < 1e-4 {
        // coth x = 1/x + x/3 − x³/45 + O(x⁵)
        0.5 * (1.0 / x + x / 3.0 - x * x * x / 45.0)
    } else {
        0.5 / x.tanh()
    }
}

/// `csch(x)/2` with a Laurent series for small arguments.
pub fn half_csch(x: f64) -> f64 {
    if x.abs() < 1e-4 {
        // csch x = 1/x − x/6 + 7x³/360 + O(x⁵)
        0.5 * (1.0 / x - x / 6.0 + 7.0 * x * x * x / 360.0)
    } else {
        0.5 / x.sinh()
    }
}

/// Least-squares polynomial fit `y ≈ Σ c_p x^p` of given degree.
/// Returns coefficients (ascending powers) and the rms residual.
pub fn polyfit(x: &[f64], y: &[C64], degree: usize) -> Result<(Vec<C64>, f64)> {
    let n = x.len();
    let m = degree + 1;
    assert!(n >= m, "need at least degree+1 samples");
    // normal equations on the Vandermonde system; degree is tiny (<= 3)
    let mut ata = Array2::<f64>::zeros((m, m));
    let mut aty = Array1::<C64>::zeros(m);
    for i in 0..n {
        let mut powers = vec![1.0; m];
        for p in 1..m {
            powers[p] = powers[p - 1] * x[i];
        }
        for p in 0..m {
            for q in 0..m {
                ata[[p, q]] += powers[p] * powers[q];
            }
            aty[p] += C64::from(powers[p]) * y[i];
        }
    }
    let ata_c = ata.mapv(|v| C64::from(v));
    let coeffs = ata_c.solve(&aty)?;
    let mut ss = 0.0;
    for i in 0..n {
        let mut fit = C64::new(0.0, 0.0);
        let mut xp = 1.0;
        for p in 0..m {
            fit += coeffs[p] * xp;
            xp *= x[i];
        }
        ss += (y[i] - fit).norm_sqr();
    }
    Ok((coeffs.to_vec(), (ss / n as f64).sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    #[test]
    fn signature_squares_to_identity() {
        let c = signature_matrix(3);
        let c2 = c.dot(&c);
        for i in 0..6 {
            for j in 0..6 {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert_abs_diff_eq!(c2[[i, j]].re, expect, epsilon = 1e-15);
                assert_abs_diff_eq!(c2[[i, j]].im, 0.0, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn c_orthonormalize_bogoliubov() {
        // cosh/sinh columns already canonical; random shear must be repaired
        let th: f64 = 0.3;
        let cols = array![
            [C64::from(th.cosh()), C64::from(th.sinh() + 0.2)],
            [C64::from(th.sinh()), C64::from(th.cosh() + 0.1)],
        ];
        let w = c_orthonormalize(&cols, &[1.0, -1.0], 0.0).unwrap();
        assert!(canonicality_residual(&w, 1) < 1e-12);
    }

    #[test]
    fn symplectic_eigenvalues_vacuum_and_thermal() {
        // vacuum: G = I/2 -> all ν = 1/2
        let g = Array2::<f64>::eye(6).mapv(|v| 0.5 * v);
        let nus = symplectic_eigenvalues(&g).unwrap();
        assert_eq!(nus.len(), 3);
        for nu in nus {
            assert_abs_diff_eq!(nu, 0.5, epsilon = 1e-12);
        }
        // single squeezed-thermal mode: G = diag(a, b) -> ν = sqrt(ab)
        let g = array![[0.9, 0.0], [0.0, 0.4]];
        let nus = symplectic_eigenvalues(&g).unwrap();
        assert_abs_diff_eq!(nus[0], (0.9f64 * 0.4).sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn half_coth_series_matches_direct() {
        // series and direct branches agree near the switch point
        for &x in &[9e-5, 1.1e-4] {
            assert_abs_diff_eq!(half_coth(x), 0.5 / x.tanh(), epsilon = 1e-12);
            assert_abs_diff_eq!(half_csch(x), 0.5 / x.sinh(), epsilon = 1e-12);
        }
        // identity coth² − csch² = 1 (scaled by 1/4) across both branches
        for &x in &[1e-6, 1e-5, 5e-5, 1e-3, 0.5, 2.0] {
            let a = half_coth(x);
            let b = half_csch(x);
            assert_abs_diff_eq!((a * a - b * b) / (a * a), 0.25 / (a * a), epsilon = 1e-12);
            assert!(a > b && b > 0.0);
        }
    }

    #[test]
    fn polyfit_recovers_cubic() {
        let x: Vec<f64> = (0..9).map(|i| -0.04 + 0.01 * i as f64).collect();
        let y: Vec<C64> = x
            .iter()
            .map(|&t| C64::new(1.0 + 2.0 * t + 0.5 * t * t, -0.3 * t * t + 0.1 * t * t * t))
            .collect();
        let (c, res) = polyfit(&x, &y, 3).unwrap();
        assert!(res < 1e-12);
        assert_abs_diff_eq!(c[0].re, 1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(c[1].re, 2.0, epsilon = 1e-9);
        assert_abs_diff_eq!(c[2].re, 0.5, epsilon = 1e-8);
        assert_abs_diff_eq!(c[2].im, -0.3, epsilon = 1e-8);
    }
}
