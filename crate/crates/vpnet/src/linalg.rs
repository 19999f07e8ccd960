//! Internal singular value decomposition based on one-sided (Hestenes)
//! Jacobi rotations.
//!
//! The basis matrices this crate factorizes have singular values tightly
//! clustered near one. Bidiagonalization-based SVDs can mis-converge on such
//! clusters and return a factorization whose product no longer reconstructs
//! the input to machine precision, which poisons pseudoinverses and every
//! derivative built on them. One-sided Jacobi is immune to clustering: it
//! rotates column pairs until they are mutually orthogonal, so `U·Σ·Vᵀ`
//! reconstructs the input to roundoff by construction, at a cost that is
//! negligible for the column counts used here.

use nalgebra::{DMatrix, DVector};

pub(crate) struct JacobiSvd {
    /// m×n matrix of left singular vectors (columns for σ = 0 are zero).
    pub u: DMatrix<f64>,
    /// Singular values, sorted in decreasing order, all non-negative.
    pub sigma: DVector<f64>,
    /// n×n orthogonal matrix of right singular vectors.
    pub v: DMatrix<f64>,
}

/// Computes the thin SVD `A = U·Σ·Vᵀ` of an m×n matrix with m ≥ n ≥ 1.
/// The caller is responsible for shape and finiteness checks.
pub(crate) fn jacobi_svd(a: &DMatrix<f64>) -> JacobiSvd {
    let (m, n) = a.shape();
    debug_assert!(m >= n && n >= 1);
    let mut w = a.clone();
    let mut v = DMatrix::<f64>::identity(n, n);

    // Cyclic sweeps over column pairs; each rotation orthogonalizes one pair.
    // Convergence of cyclic one-sided Jacobi is guaranteed; the cap is a
    // defensive bound that is never reached in practice.
    const MAX_SWEEPS: usize = 64;
    let mut swept = MAX_SWEEPS;
    for sweep in 0..MAX_SWEEPS {
        let mut converged = true;
        for p in 0..n.saturating_sub(1) {
            for q in (p + 1)..n {
                let mut alpha = 0.0;
                let mut beta = 0.0;
                let mut gamma = 0.0;
                for i in 0..m {
                    let (wp, wq) = (w[(i, p)], w[(i, q)]);
                    alpha += wp * wp;
                    beta += wq * wq;
                    gamma += wp * wq;
                }
                if alpha == 0.0 || beta == 0.0 {
                    continue;
                }
                if gamma.abs() <= f64::EPSILON * (alpha * beta).sqrt() {
                    continue;
                }
                converged = false;
                // Rotation angle zeroing the off-diagonal of the 2×2 Gram
                // block [[α, γ], [γ, β]] (Rutishauser's stable formulas).
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for i in 0..m {
                    let (wp, wq) = (w[(i, p)], w[(i, q)]);
                    w[(i, p)] = c * wp - s * wq;
                    w[(i, q)] = s * wp + c * wq;
                }
                for i in 0..n {
                    let (vp, vq) = (v[(i, p)], v[(i, q)]);
                    v[(i, p)] = c * vp - s * vq;
                    v[(i, q)] = s * vp + c * vq;
                }
            }
        }
        if converged {
            swept = sweep;
            break;
        }
    }
    if swept == MAX_SWEEPS {
        log::warn!("one-sided Jacobi SVD hit the sweep cap; result may be slightly unorthogonal");
    }

    // Extract singular values as column norms and sort everything together.
    let mut order: Vec<usize> = (0..n).collect();
    let norms: Vec<f64> = (0..n).map(|k| w.column(k).norm()).collect();
    order.sort_by(|&i, &j| norms[j].partial_cmp(&norms[i]).unwrap());

    let mut u = DMatrix::<f64>::zeros(m, n);
    let mut v_sorted = DMatrix::<f64>::zeros(n, n);
    let mut sigma = DVector::<f64>::zeros(n);
    for (dst, &src) in order.iter().enumerate() {
        let s = norms[src];
        sigma[dst] = s;
        if s > 0.0 {
            let col = w.column(src) / s;
            u.column_mut(dst).copy_from(&col);
        }
        v_sorted.column_mut(dst).copy_from(&v.column(src));
    }
    JacobiSvd {
        u,
        sigma,
        v: v_sorted,
    }
}

/// Singular values only, sorted in decreasing order.
pub(crate) fn singular_values(a: &DMatrix<f64>) -> DVector<f64> {
    jacobi_svd(a).sigma
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn check_factorization(a: &DMatrix<f64>, tol: f64) {
        let (m, n) = a.shape();
        let svd = jacobi_svd(a);
        let mut s = DMatrix::<f64>::zeros(n, n);
        for i in 0..n {
            s[(i, i)] = svd.sigma[i];
            assert!(svd.sigma[i] >= 0.0);
            if i > 0 {
                assert!(svd.sigma[i] <= svd.sigma[i - 1]);
            }
        }
        let scale = a.norm().max(1.0);
        assert!(
            (&svd.u * &s * svd.v.transpose() - a).norm() <= tol * scale,
            "reconstruction failed for {m}×{n}"
        );
        assert!((svd.v.transpose() * &svd.v - DMatrix::<f64>::identity(n, n)).norm() <= tol);
        // U columns for nonzero σ must be orthonormal.
        for i in 0..n {
            for j in i..n {
                if svd.sigma[i] > 0.0 && svd.sigma[j] > 0.0 {
                    let dot = svd.u.column(i).dot(&svd.u.column(j));
                    let expect = if i == j { 1.0 } else { 0.0 };
                    assert!((dot - expect).abs() <= tol, "U gram ({i},{j}) = {dot}");
                }
            }
        }
    }

    #[test]
    fn factorizes_random_matrices() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for &(m, n) in &[(5usize, 5usize), (20, 4), (50, 8), (120, 3)] {
            let a = DMatrix::from_fn(m, n, |_, _| rng.random_range(-2.0..2.0));
            check_factorization(&a, 1e-13);
        }
    }

    #[test]
    fn matches_known_diagonal_values() {
        let mut a = DMatrix::<f64>::zeros(4, 3);
        a[(0, 0)] = 3.0;
        a[(1, 1)] = -2.0; // sign goes into the vectors
        a[(2, 2)] = 0.5;
        let sv = singular_values(&a);
        assert!((sv[0] - 3.0).abs() <= 1e-14);
        assert!((sv[1] - 2.0).abs() <= 1e-14);
        assert!((sv[2] - 0.5).abs() <= 1e-14);
        check_factorization(&a, 1e-14);
    }

    #[test]
    fn duplicated_column_yields_exact_zero_singular_value() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let col = DVector::<f64>::from_fn(10, |_, _| rng.random_range(-1.0..1.0));
        let mut a = DMatrix::<f64>::zeros(10, 2);
        a.column_mut(0).copy_from(&col);
        a.column_mut(1).copy_from(&col);
        let svd = jacobi_svd(&a);
        assert_eq!(svd.sigma[1], 0.0);
        assert!((svd.sigma[0] - 2.0_f64.sqrt() * col.norm()).abs() <= 1e-13);
    }

    #[test]
    fn zero_matrix_has_zero_spectrum() {
        let a = DMatrix::<f64>::zeros(6, 2);
        let sv = singular_values(&a);
        assert!(sv.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn reconstructs_clustered_spectrum_basis_to_machine_precision() {
        // A sampled basis whose singular values cluster tightly near one,
        // with small perturbations of the kind that trip bidiagonalization
        // SVDs into returning an inconsistent factorization.
        use crate::hermite::{adaptive_hermite, SampleGrid, VpParams};
        let grid = SampleGrid::unit(50).unwrap();
        for &lambda in &[0.203255119, 0.203256119, 0.203254119] {
            let params = VpParams::new(22.462999976, lambda).unwrap();
            let basis = adaptive_hermite(&grid, 8, &params).unwrap();
            check_factorization(&basis.phi, 1e-13);
        }
    }
}
