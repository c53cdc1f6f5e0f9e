//! Truncated SVD via one-sided Jacobi, plus the two-layer split rule for
//! 1×1 convolution kernels.
//!
//! Jacobi rotations run on the smaller of the two dimensions, which keeps the
//! method simple and accurate to machine precision at the matrix sizes in
//! scope (≤ 1024 per side).

use thiserror::Error;

use crate::tensor::{DenseMatrix, TensorError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SvdError {
    #[error("rank {rank} out of range [1, {max}]")]
    RankOutOfRange { rank: usize, max: usize },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Leading-rank SVD: `u` (m×R) and `v` (n×R) have orthonormal columns,
/// `s` is descending and nonnegative.
#[derive(Debug, Clone)]
pub struct TruncatedSVD {
    pub u: DenseMatrix,
    pub s: Vec<f64>,
    pub v: DenseMatrix,
    pub rank: usize,
}

impl TruncatedSVD {
    /// Materialize u·diag(s)·vᵀ.
    pub fn reconstruct(&self) -> DenseMatrix {
        let m = self.u.rows();
        let n = self.v.rows();
        let mut out = DenseMatrix::zeros(m, n);
        for r in 0..self.rank {
            for i in 0..m {
                let uis = self.u.get(i, r) * self.s[r];
                if uis == 0.0 {
                    continue;
                }
                for j in 0..n {
                    let cur = out.get(i, j);
                    out.set(i, j, cur + uis * self.v.get(j, r));
                }
            }
        }
        out
    }
}

const JACOBI_TOL: f64 = 1e-13;
const JACOBI_MAX_SWEEPS: usize = 60;

/// Full SVD of `a` by one-sided Jacobi applied to the side with fewer
/// columns. Returns (u, s, v) with all min(m, n) singular triples, sorted
/// descending.
fn jacobi_svd(a: &DenseMatrix) -> (DenseMatrix, Vec<f64>, DenseMatrix) {
    if a.rows() < a.cols() {
        let (u, s, v) = jacobi_svd(&a.transpose());
        return (v, s, u);
    }
    let m = a.rows();
    let n = a.cols();
    let mut w = a.clone();
    let mut v = DenseMatrix::identity(n);

    for _sweep in 0..JACOBI_MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let mut alpha = 0.0;
                let mut beta = 0.0;
                let mut gamma = 0.0;
                for i in 0..m {
                    let wp = w.get(i, p);
                    let wq = w.get(i, q);
                    alpha += wp * wp;
                    beta += wq * wq;
                    gamma += wp * wq;
                }
                if gamma.abs() <= JACOBI_TOL * (alpha * beta).sqrt() || gamma == 0.0 {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for i in 0..m {
                    let wp = w.get(i, p);
                    let wq = w.get(i, q);
                    w.set(i, p, c * wp - s * wq);
                    w.set(i, q, s * wp + c * wq);
                }
                for i in 0..n {
                    let vp = v.get(i, p);
                    let vq = v.get(i, q);
                    v.set(i, p, c * vp - s * vq);
                    v.set(i, q, s * vp + c * vq);
                }
            }
        }
        if !rotated {
            break;
        }
    }

    let mut singular: Vec<f64> = (0..n).map(|j| w.column_norm(j)).collect();
    let mut u = DenseMatrix::zeros(m, n);
    for j in 0..n {
        if singular[j] > 0.0 {
            for i in 0..m {
                u.set(i, j, w.get(i, j) / singular[j]);
            }
        }
    }
    // Zero singular columns: complete u to an orthonormal set so truncation
    // at any rank keeps uᵀu = I.
    for j in 0..n {
        if singular[j] > 0.0 {
            continue;
        }
        for basis in 0..m {
            let mut cand = vec![0.0; m];
            cand[basis] = 1.0;
            for k in 0..n {
                if k == j || (singular[k] == 0.0 && k > j) {
                    continue;
                }
                let dot: f64 = (0..m).map(|i| u.get(i, k) * cand[i]).sum();
                for (i, c) in cand.iter_mut().enumerate() {
                    *c -= dot * u.get(i, k);
                }
            }
            let norm = cand.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-6 {
                for (i, c) in cand.iter().enumerate() {
                    u.set(i, j, c / norm);
                }
                break;
            }
        }
    }

    // Sort descending, then make each u column's largest-magnitude entry
    // nonnegative (v flips along).
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| {
        singular[y]
            .partial_cmp(&singular[x])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(x.cmp(&y))
    });
    let mut u_sorted = DenseMatrix::zeros(m, n);
    let mut v_sorted = DenseMatrix::zeros(n, n);
    let mut s_sorted = vec![0.0; n];
    for (new, &old) in order.iter().enumerate() {
        s_sorted[new] = singular[old];
        for i in 0..m {
            u_sorted.set(i, new, u.get(i, old));
        }
        for i in 0..n {
            v_sorted.set(i, new, v.get(i, old));
        }
    }
    for j in 0..n {
        let mut best = 0usize;
        let mut best_abs = 0.0;
        for i in 0..m {
            let a = u_sorted.get(i, j).abs();
            if a > best_abs {
                best_abs = a;
                best = i;
            }
        }
        if u_sorted.get(best, j) < 0.0 {
            u_sorted.scale_column(j, -1.0);
            v_sorted.scale_column(j, -1.0);
        }
    }
    singular = s_sorted;
    (u_sorted, singular, v_sorted)
}

/// All singular values of `a`, descending.
pub fn singular_values(a: &DenseMatrix) -> Vec<f64> {
    jacobi_svd(a).1
}

/// Leading-`rank` SVD of `a`; the reconstruction u·diag(s)·vᵀ is the best
/// rank-`rank` Frobenius approximation.
pub fn truncated_svd(a: &DenseMatrix, rank: usize) -> Result<TruncatedSVD, SvdError> {
    let max = a.rows().min(a.cols());
    if rank == 0 || rank > max {
        return Err(SvdError::RankOutOfRange { rank, max });
    }
    let (u, s, v) = jacobi_svd(a);
    let mut u_r = DenseMatrix::zeros(a.rows(), rank);
    let mut v_r = DenseMatrix::zeros(a.cols(), rank);
    for j in 0..rank {
        for i in 0..a.rows() {
            u_r.set(i, j, u.get(i, j));
        }
        for i in 0..a.cols() {
            v_r.set(i, j, v.get(i, j));
        }
    }
    Ok(TruncatedSVD {
        u: u_r,
        s: s[..rank].to_vec(),
        v: v_r,
        rank,
    })
}

/// Split a 1×1 kernel matrix (input channels × output channels) into the
/// weights of two pointwise layers: `w1` (Cin×R) projects into R channels,
/// `w2` (R×Cout) expands back, and w1·w2 is the rank-R reconstruction of `a`.
/// The singular values ride on `w2`.
pub fn svd_split(a: &DenseMatrix, rank: usize) -> Result<(DenseMatrix, DenseMatrix), SvdError> {
    let t = truncated_svd(a, rank)?;
    let w1 = t.u.clone();
    let mut w2 = DenseMatrix::zeros(rank, a.cols());
    for r in 0..rank {
        for j in 0..a.cols() {
            w2.set(r, j, t.s[r] * t.v.get(j, r));
        }
    }
    Ok((w1, w2))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, m: usize, n: usize) -> DenseMatrix {
        let mut a = DenseMatrix::zeros(m, n);
        for i in 0..m {
            for j in 0..n {
                a.set(i, j, rng.gen_range(-1.0..1.0));
            }
        }
        a
    }

    fn max_abs_diff(a: &DenseMatrix, b: &DenseMatrix) -> f64 {
        a.data()
            .iter()
            .zip(b.data())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    }

    fn assert_orthonormal(m: &DenseMatrix) {
        let g = m.gram();
        for i in 0..g.rows() {
            for j in 0..g.cols() {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!(
                    (g.get(i, j) - expect).abs() < 1e-10,
                    "gram[{i}][{j}] = {}",
                    g.get(i, j)
                );
            }
        }
    }

    #[test]
    fn identity_has_unit_spectrum() {
        let a = DenseMatrix::identity(4);
        let t = truncated_svd(&a, 4).unwrap();
        for &s in &t.s {
            assert!((s - 1.0).abs() < 1e-12);
        }
        assert!(max_abs_diff(&t.reconstruct(), &a) < 1e-12);
    }

    #[test]
    fn rank_one_matrix_recovered_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let q: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut a = DenseMatrix::zeros(6, 4);
        for i in 0..6 {
            for j in 0..4 {
                a.set(i, j, p[i] * q[j]);
            }
        }
        let t = truncated_svd(&a, 1).unwrap();
        let rel = max_abs_diff(&t.reconstruct(), &a) / a.frobenius_norm();
        assert!(rel <= 1e-10, "rel {rel}");
    }

    #[test]
    fn padded_diagonal_drops_smallest_value() {
        let mut a = DenseMatrix::zeros(4, 3);
        a.set(0, 0, 3.0);
        a.set(1, 1, 2.0);
        a.set(2, 2, 1.0);
        let t = truncated_svd(&a, 2).unwrap();
        let mut err = 0.0;
        let recon = t.reconstruct();
        for i in 0..4 {
            for j in 0..3 {
                err += (a.get(i, j) - recon.get(i, j)).powi(2);
            }
        }
        assert!((err.sqrt() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn orthonormal_factors_and_descending_spectrum() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for &(m, n) in &[(8, 5), (5, 8), (6, 6)] {
            let a = random_matrix(&mut rng, m, n);
            let t = truncated_svd(&a, m.min(n)).unwrap();
            assert_orthonormal(&t.u);
            assert_orthonormal(&t.v);
            for pair in t.s.windows(2) {
                assert!(pair[0] >= pair[1]);
                assert!(pair[1] >= 0.0);
            }
        }
    }

    #[test]
    fn truncation_error_is_dropped_tail_energy() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a = random_matrix(&mut rng, 8, 8);
        let all = singular_values(&a);
        let (w1, w2) = svd_split(&a, 4).unwrap();
        let product = w1.matmul(&w2).unwrap();
        let mut err = 0.0;
        for i in 0..8 {
            for j in 0..8 {
                err += (a.get(i, j) - product.get(i, j)).powi(2);
            }
        }
        let tail: f64 = all[4..].iter().map(|s| s * s).sum();
        assert!(
            (err.sqrt() - tail.sqrt()).abs() < 1e-9,
            "err {} tail {}",
            err.sqrt(),
            tail.sqrt()
        );
    }

    #[test]
    fn full_rank_split_reproduces_matrix() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let a = random_matrix(&mut rng, 5, 7);
        let (w1, w2) = svd_split(&a, 5).unwrap();
        assert_eq!(w1.rows(), 5);
        assert_eq!(w1.cols(), 5);
        assert_eq!(w2.rows(), 5);
        assert_eq!(w2.cols(), 7);
        assert!(max_abs_diff(&w1.matmul(&w2).unwrap(), &a) < 1e-10);
    }

    #[test]
    fn beats_random_factorizations() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let a = random_matrix(&mut rng, 8, 6);
        let r = 3;
        let best = {
            let t = truncated_svd(&a, r).unwrap();
            let mut err = 0.0;
            let recon = t.reconstruct();
            for (x, y) in a.data().iter().zip(recon.data()) {
                err += (x - y) * (x - y);
            }
            err.sqrt()
        };
        for _ in 0..100 {
            let b = random_matrix(&mut rng, 8, r);
            let c = random_matrix(&mut rng, r, 6);
            let approx = b.matmul(&c).unwrap();
            let mut err = 0.0;
            for (x, y) in a.data().iter().zip(approx.data()) {
                err += (x - y) * (x - y);
            }
            assert!(best <= err.sqrt() + 1e-12);
        }
    }

    #[test]
    fn rank_bounds_are_enforced() {
        let a = DenseMatrix::identity(3);
        assert!(matches!(
            truncated_svd(&a, 0),
            Err(SvdError::RankOutOfRange { rank: 0, max: 3 })
        ));
        assert!(matches!(
            truncated_svd(&a, 4),
            Err(SvdError::RankOutOfRange { rank: 4, max: 3 })
        ));
    }

    #[test]
    fn zero_rank_columns_stay_orthonormal() {
        // Rank-1 matrix, full-rank request: the completed columns must keep
        // uᵀu = I.
        let mut a = DenseMatrix::zeros(4, 3);
        for i in 0..4 {
            a.set(i, 0, 1.0);
        }
        let t = truncated_svd(&a, 3).unwrap();
        assert_orthonormal(&t.u);
    }
}
