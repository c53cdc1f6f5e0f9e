//! Rank-R canonical polyadic decomposition of 3rd-order tensors by
//! alternating least squares.
//!
//! Factors are kept with unit-norm columns; the per-component magnitudes live
//! in `coeffs`, sorted descending. The ALS mode update solves the normal
//! equations through the Hadamard product of the other factors' Gram
//! matrices, with a small Tikhonov jitter when that system is close to
//! singular.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::tensor::{khatri_rao, refold, unfold, DenseMatrix, DenseTensor, TensorError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CpdError {
    #[error("rank must be at least 1")]
    RankZero,
    #[error("rank {rank} exceeds the cap {cap} (product of the two largest dims)")]
    RankTooLarge { rank: usize, cap: usize },
    #[error("cannot decompose an all-zero tensor")]
    ZeroTensor,
    #[error("expected a 3rd-order tensor, got order {order}")]
    NotThirdOrder { order: usize },
    #[error("factor {index} has shape {rows}x{cols}, expected {expected_rows}x{rank}")]
    FactorShape {
        index: usize,
        rows: usize,
        cols: usize,
        expected_rows: usize,
        rank: usize,
    },
    #[error("factor {index} column {col} has norm {norm}, expected 1 within 1e-10")]
    ColumnNotUnit { index: usize, col: usize, norm: f64 },
    #[error("coefficient {index} is negative: {value}")]
    NegativeCoeff { index: usize, value: f64 },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Stopping and initialization knobs for [`cp_als`].
#[derive(Debug, Clone)]
pub struct AlsOptions {
    /// Maximum number of ALS sweeps.
    pub max_iters: usize,
    /// Stop when the relative-error improvement of a sweep falls below this.
    pub tol: f64,
    /// Seed for the random factor initialization.
    pub seed: u64,
}

impl Default for AlsOptions {
    fn default() -> Self {
        Self {
            max_iters: 500,
            tol: 1e-8,
            seed: 0,
        }
    }
}

/// A CP decomposition: unit-norm factor matrices plus per-component
/// coefficients, coefficients sorted descending.
#[derive(Debug, Clone)]
pub struct CPDecomposition {
    rank: usize,
    factors: Vec<DenseMatrix>,
    coeffs: Vec<f64>,
}

const UNIT_COLUMN_TOL: f64 = 1e-10;

impl CPDecomposition {
    /// Validate factors (unit columns, consistent rank) and coefficients
    /// (nonnegative); components are sorted by coefficient, descending.
    pub fn from_parts(factors: Vec<DenseMatrix>, coeffs: Vec<f64>) -> Result<Self, CpdError> {
        if coeffs.is_empty() || factors.is_empty() {
            return Err(CpdError::RankZero);
        }
        let rank = coeffs.len();
        for (index, f) in factors.iter().enumerate() {
            if f.cols() != rank {
                return Err(CpdError::FactorShape {
                    index,
                    rows: f.rows(),
                    cols: f.cols(),
                    expected_rows: f.rows(),
                    rank,
                });
            }
            for col in 0..rank {
                let norm = f.column_norm(col);
                if (norm - 1.0).abs() > UNIT_COLUMN_TOL {
                    return Err(CpdError::ColumnNotUnit { index, col, norm });
                }
            }
        }
        for (index, &value) in coeffs.iter().enumerate() {
            if value < 0.0 {
                return Err(CpdError::NegativeCoeff { index, value });
            }
        }
        let mut cpd = Self {
            rank,
            factors,
            coeffs,
        };
        cpd.sort_descending();
        Ok(cpd)
    }

    pub(crate) fn from_parts_unchecked(factors: Vec<DenseMatrix>, coeffs: Vec<f64>) -> Self {
        Self {
            rank: coeffs.len(),
            factors,
            coeffs,
        }
    }

    #[inline]
    pub fn rank(&self) -> usize {
        self.rank
    }

    #[inline]
    pub fn factors(&self) -> &[DenseMatrix] {
        &self.factors
    }

    #[inline]
    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    /// Extents of the tensor this decomposition reconstructs.
    pub fn dims(&self) -> Vec<usize> {
        self.factors.iter().map(|f| f.rows()).collect()
    }

    #[cfg(test)]
    pub(crate) fn coeffs_mut(&mut self) -> &mut [f64] {
        &mut self.coeffs
    }

    pub(crate) fn sort_descending(&mut self) {
        let mut order: Vec<usize> = (0..self.rank).collect();
        order.sort_by(|&a, &b| {
            self.coeffs[b]
                .partial_cmp(&self.coeffs[a])
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.cmp(&b))
        });
        if order.iter().enumerate().all(|(i, &o)| i == o) {
            return;
        }
        self.coeffs = order.iter().map(|&o| self.coeffs[o]).collect();
        for f in &mut self.factors {
            let mut permuted = DenseMatrix::zeros(f.rows(), f.cols());
            for (new_col, &old_col) in order.iter().enumerate() {
                for row in 0..f.rows() {
                    permuted.set(row, new_col, f.get(row, old_col));
                }
            }
            *f = permuted;
        }
    }

    /// Canonical column signs: in every factor but the last, each column's
    /// largest-magnitude entry is made nonnegative; the last factor absorbs
    /// the compensating sign so coefficients stay nonnegative.
    pub(crate) fn fix_signs(&mut self) {
        let n = self.factors.len();
        if n < 2 {
            return;
        }
        for r in 0..self.rank {
            let mut flip = 1.0;
            for f in &mut self.factors[..n - 1] {
                let mut best = 0usize;
                let mut best_abs = 0.0;
                for row in 0..f.rows() {
                    let a = f.get(row, r).abs();
                    if a > best_abs {
                        best_abs = a;
                        best = row;
                    }
                }
                if f.get(best, r) < 0.0 {
                    f.scale_column(r, -1.0);
                    flip = -flip;
                }
            }
            if flip < 0.0 {
                self.factors[n - 1].scale_column(r, -1.0);
            }
        }
    }
}

/// Materialize the full tensor Σ_r λ_r · b_r^(1) ∘ ··· ∘ b_r^(N).
///
/// Built from the mode-0 unfolding identity Y_(0) = F_0 Λ (F_1 ⊙ ··· ⊙
/// F_{N-1})^T rather than an entrywise loop.
pub fn reconstruct(cpd: &CPDecomposition) -> Result<DenseTensor, TensorError> {
    let factors = cpd.factors();
    let dims = cpd.dims();
    if factors.len() == 1 {
        let f = &factors[0];
        let mut data = vec![0.0; f.rows()];
        for r in 0..cpd.rank() {
            for (i, v) in data.iter_mut().enumerate() {
                *v += cpd.coeffs()[r] * f.get(i, r);
            }
        }
        return DenseTensor::new(dims, data);
    }
    let mut kr = factors[1].clone();
    for f in &factors[2..] {
        kr = khatri_rao(&kr, f)?;
    }
    let mut scaled = factors[0].clone();
    for r in 0..cpd.rank() {
        scaled.scale_column(r, cpd.coeffs()[r]);
    }
    let unfolded = scaled.matmul(&kr.transpose())?;
    refold(&unfolded, 0, &dims)
}

/// Σ_r λ_r²: with unit-norm factors this is the sum of squared Frobenius
/// norms of the rank-1 components.
pub fn sensitivity(cpd: &CPDecomposition) -> f64 {
    cpd.coeffs().iter().map(|c| c * c).sum()
}

/// Hadamard product of the Gram matrices of all factors except `skip`.
pub(crate) fn gram_hadamard(factors: &[DenseMatrix], skip: usize) -> DenseMatrix {
    let rank = factors[0].cols();
    let mut g = DenseMatrix::zeros(rank, rank);
    for a in 0..rank {
        for b in 0..rank {
            g.set(a, b, 1.0);
        }
    }
    for (n, f) in factors.iter().enumerate() {
        if n == skip {
            continue;
        }
        let fg = f.gram();
        for a in 0..rank {
            for b in 0..rank {
                g.set(a, b, g.get(a, b) * fg.get(a, b));
            }
        }
    }
    g
}

/// Khatri-Rao chain of all factors except `skip`, ascending mode order.
pub(crate) fn khatri_rao_others(
    factors: &[DenseMatrix],
    skip: usize,
) -> Result<DenseMatrix, TensorError> {
    let mut acc: Option<DenseMatrix> = None;
    for (n, f) in factors.iter().enumerate() {
        if n == skip {
            continue;
        }
        acc = Some(match acc {
            None => f.clone(),
            Some(prev) => khatri_rao(&prev, f)?,
        });
    }
    Ok(acc.expect("at least two factors"))
}

/// Cholesky factor of `g + ridge·I`; `None` when a pivot fails.
fn cholesky(g: &DenseMatrix, ridge: f64) -> Option<DenseMatrix> {
    let n = g.rows();
    let mut l = DenseMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let mut s = g.get(i, j);
            if i == j {
                s += ridge;
            }
            for k in 0..j {
                s -= l.get(i, k) * l.get(j, k);
            }
            if i == j {
                if s <= 0.0 {
                    return None;
                }
                l.set(i, j, s.sqrt());
            } else {
                l.set(i, j, s / l.get(j, j));
            }
        }
    }
    Some(l)
}

fn cholesky_solve(l: &DenseMatrix, rhs: &[f64]) -> Vec<f64> {
    let n = l.rows();
    let mut y = vec![0.0; n];
    for i in 0..n {
        let mut s = rhs[i];
        for k in 0..i {
            s -= l.get(i, k) * y[k];
        }
        y[i] = s / l.get(i, i);
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in i + 1..n {
            s -= l.get(k, i) * x[k];
        }
        x[i] = s / l.get(i, i);
    }
    x
}

const GRAM_JITTER: f64 = 1e-12;
const GRAM_COND_LIMIT: f64 = 1e12;

/// Solve `(g + ridge·I) Xᵀ = Bᵀ` for X (rows of B are right-hand sides).
///
/// On top of the caller's ridge, a jitter of 1e-12 is added when the
/// Cholesky-diagonal condition estimate exceeds 1e12 (and escalated tenfold
/// until the factorization succeeds).
pub(crate) fn solve_gram(g: &DenseMatrix, b: &DenseMatrix, ridge: f64) -> DenseMatrix {
    let mut extra = 0.0;
    let l = loop {
        match cholesky(g, ridge + extra) {
            Some(l) => {
                let mut dmin = f64::INFINITY;
                let mut dmax = 0.0f64;
                for i in 0..l.rows() {
                    let d = l.get(i, i);
                    dmin = dmin.min(d);
                    dmax = dmax.max(d);
                }
                let cond_estimate = (dmax / dmin).powi(2);
                if cond_estimate > GRAM_COND_LIMIT && extra == 0.0 {
                    extra = GRAM_JITTER;
                    continue;
                }
                break l;
            }
            None => {
                extra = if extra == 0.0 {
                    GRAM_JITTER
                } else {
                    extra * 10.0
                };
            }
        }
    };
    let mut out = DenseMatrix::zeros(b.rows(), b.cols());
    let mut rhs = vec![0.0; b.cols()];
    for i in 0..b.rows() {
        for j in 0..b.cols() {
            rhs[j] = b.get(i, j);
        }
        let x = cholesky_solve(&l, &rhs);
        for j in 0..b.cols() {
            out.set(i, j, x[j]);
        }
    }
    out
}

/// Normalize every column to unit length, returning the norms. Zero columns
/// are replaced by e₁ with a zero norm so the unit invariant holds.
pub(crate) fn normalize_columns(m: &mut DenseMatrix) -> Vec<f64> {
    let mut norms = Vec::with_capacity(m.cols());
    for c in 0..m.cols() {
        let norm = m.column_norm(c);
        if norm > 0.0 {
            m.scale_column(c, 1.0 / norm);
        } else {
            for row in 0..m.rows() {
                m.set(row, c, if row == 0 { 1.0 } else { 0.0 });
            }
        }
        norms.push(norm);
    }
    norms
}

fn rank_cap(dims: &[usize]) -> usize {
    let mut sorted = dims.to_vec();
    sorted.sort_unstable_by(|a, b| b.cmp(a));
    sorted[0] * sorted[1]
}

fn validate_als_input(x: &DenseTensor, rank: usize) -> Result<(), CpdError> {
    if x.order() != 3 {
        return Err(CpdError::NotThirdOrder { order: x.order() });
    }
    if rank == 0 {
        return Err(CpdError::RankZero);
    }
    let cap = rank_cap(x.dims());
    if rank > cap {
        return Err(CpdError::RankTooLarge { rank, cap });
    }
    if x.frobenius_norm() == 0.0 {
        return Err(CpdError::ZeroTensor);
    }
    Ok(())
}

fn random_unit_factors(dims: &[usize], rank: usize, seed: u64) -> Vec<DenseMatrix> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    dims.iter()
        .map(|&d| {
            let mut f = DenseMatrix::zeros(d, rank);
            for i in 0..d {
                for r in 0..rank {
                    f.set(i, r, rng.gen_range(-1.0..1.0));
                }
            }
            normalize_columns(&mut f);
            f
        })
        .collect()
}

/// CP-ALS returning the decomposition together with the relative
/// reconstruction error recorded after every sweep.
pub fn cp_als_traced(
    x: &DenseTensor,
    rank: usize,
    opts: &AlsOptions,
) -> Result<(CPDecomposition, Vec<f64>), CpdError> {
    validate_als_input(x, rank)?;
    let dims = x.dims().to_vec();
    let norm_x = x.frobenius_norm();
    let unfoldings: Vec<DenseMatrix> = (0..3).map(|n| unfold(x, n)).collect::<Result<_, _>>()?;

    let mut factors = random_unit_factors(&dims, rank, opts.seed);
    let mut coeffs = vec![1.0; rank];
    let mut trace = Vec::new();
    let mut prev_rel = f64::INFINITY;

    for _sweep in 0..opts.max_iters.max(1) {
        for n in 0..3 {
            let kr = khatri_rao_others(&factors, n)?;
            let b = unfoldings[n].matmul(&kr)?;
            let g = gram_hadamard(&factors, n);
            let mut u = solve_gram(&g, &b, 0.0);
            coeffs = normalize_columns(&mut u);
            factors[n] = u;
        }
        let current = CPDecomposition::from_parts_unchecked(factors.clone(), coeffs.clone());
        let recon = reconstruct(&current)?;
        let diff = x
            .data()
            .iter()
            .zip(recon.data())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let rel = diff / norm_x;
        trace.push(rel);
        if prev_rel - rel < opts.tol {
            break;
        }
        prev_rel = rel;
    }

    let mut cpd = CPDecomposition::from_parts_unchecked(factors, coeffs);
    cpd.fix_signs();
    cpd.sort_descending();
    Ok((cpd, trace))
}

/// CP-ALS decomposition of a 3rd-order tensor.
pub fn cp_als(
    x: &DenseTensor,
    rank: usize,
    opts: &AlsOptions,
) -> Result<CPDecomposition, CpdError> {
    cp_als_traced(x, rank, opts).map(|(cpd, _)| cpd)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::relative_error;

    /// Oracle: definitional entrywise sum of rank-1 outer products.
    fn reconstruct_by_loop(cpd: &CPDecomposition) -> DenseTensor {
        let dims = cpd.dims();
        DenseTensor::from_fn(dims, |idx| {
            (0..cpd.rank())
                .map(|r| {
                    cpd.coeffs()[r]
                        * idx
                            .iter()
                            .enumerate()
                            .map(|(n, &i)| cpd.factors()[n].get(i, r))
                            .product::<f64>()
                })
                .sum()
        })
        .unwrap()
    }

    fn unit_vec(v: Vec<f64>) -> Vec<f64> {
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.into_iter().map(|x| x / n).collect()
    }

    fn rank_terms_tensor(
        dims: &[usize; 3],
        coeffs: &[f64],
        seed: u64,
    ) -> (DenseTensor, CPDecomposition) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rank = coeffs.len();
        let factors: Vec<DenseMatrix> = dims
            .iter()
            .map(|&d| {
                let mut f = DenseMatrix::zeros(d, rank);
                for r in 0..rank {
                    let col = unit_vec((0..d).map(|_| rng.gen_range(-1.0..1.0)).collect());
                    for (i, v) in col.iter().enumerate() {
                        f.set(i, r, *v);
                    }
                }
                f
            })
            .collect();
        let cpd = CPDecomposition::from_parts(factors, coeffs.to_vec()).unwrap();
        let x = reconstruct(&cpd).unwrap();
        (x, cpd)
    }

    #[test]
    fn reconstruct_single_spike() {
        let mut f0 = DenseMatrix::zeros(2, 1);
        f0.set(0, 0, 1.0);
        let mut f1 = DenseMatrix::zeros(3, 1);
        f1.set(0, 0, 1.0);
        let mut f2 = DenseMatrix::zeros(2, 1);
        f2.set(0, 0, 1.0);
        let cpd = CPDecomposition::from_parts(vec![f0, f1, f2], vec![7.0]).unwrap();
        let t = reconstruct(&cpd).unwrap();
        assert_eq!(t.get(&[0, 0, 0]), 7.0);
        assert_eq!(t.data().iter().map(|x| x.abs()).sum::<f64>(), 7.0);
    }

    #[test]
    fn reconstruct_matches_loop_oracle() {
        let (_, cpd) = rank_terms_tensor(&[4, 3, 2], &[2.0, 1.0, 0.5], 11);
        let fast = reconstruct(&cpd).unwrap();
        let slow = reconstruct_by_loop(&cpd);
        let max_diff = fast
            .data()
            .iter()
            .zip(slow.data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        assert!(max_diff <= 1e-12, "max diff {max_diff}");
    }

    #[test]
    fn sensitivity_is_sum_of_squared_coeffs() {
        let (_, cpd) = rank_terms_tensor(&[3, 3, 3], &[5.0, 1.0], 3);
        assert!((sensitivity(&cpd) - 26.0).abs() < 1e-9);
    }

    #[test]
    fn sensitivity_matches_per_term_materialization() {
        let (_, cpd) = rank_terms_tensor(&[4, 3, 2], &[3.0, 2.0, 1.0], 17);
        // Oracle: materialize each rank-1 term and sum squared norms.
        let mut total = 0.0;
        for r in 0..cpd.rank() {
            let factors: Vec<DenseMatrix> = cpd
                .factors()
                .iter()
                .map(|f| {
                    let mut one = DenseMatrix::zeros(f.rows(), 1);
                    for i in 0..f.rows() {
                        one.set(i, 0, f.get(i, r));
                    }
                    one
                })
                .collect();
            let term = CPDecomposition::from_parts(factors, vec![cpd.coeffs()[r]]).unwrap();
            total += reconstruct(&term).unwrap().frobenius_norm().powi(2);
        }
        assert!((sensitivity(&cpd) - total).abs() < 1e-9);
    }

    #[test]
    fn als_recovers_rank_one_exactly() {
        let (x, _) = rank_terms_tensor(&[4, 3, 2], &[2.0], 5);
        let cpd = cp_als(&x, 1, &AlsOptions::default()).unwrap();
        let rel = relative_error(&x, &reconstruct(&cpd).unwrap()).unwrap();
        assert!(rel <= 1e-8, "rel {rel}");
    }

    #[test]
    fn als_recovers_two_separated_components() {
        let (x, _) = rank_terms_tensor(&[4, 3, 2], &[5.0, 1.0], 7);
        let opts = AlsOptions {
            max_iters: 2000,
            tol: 1e-14,
            seed: 1,
        };
        let cpd = cp_als(&x, 2, &opts).unwrap();
        let rel = relative_error(&x, &reconstruct(&cpd).unwrap()).unwrap();
        assert!(rel <= 1e-6, "rel {rel}");
        assert!(
            (cpd.coeffs()[0] - 5.0).abs() < 1e-4,
            "coeffs {:?}",
            cpd.coeffs()
        );
        assert!(
            (cpd.coeffs()[1] - 1.0).abs() < 1e-4,
            "coeffs {:?}",
            cpd.coeffs()
        );
    }

    #[test]
    fn als_error_improves_with_rank() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let x = DenseTensor::from_fn(vec![4, 4, 4], |_| rng.gen_range(-1.0..1.0)).unwrap();
        let opts = AlsOptions::default();
        let r1 = cp_als(&x, 1, &opts).unwrap();
        let r3 = cp_als(&x, 3, &opts).unwrap();
        let e1 = relative_error(&x, &reconstruct(&r1).unwrap()).unwrap();
        let e3 = relative_error(&x, &reconstruct(&r3).unwrap()).unwrap();
        assert!(e3 <= e1 + 1e-9, "e1 {e1} e3 {e3}");
    }

    #[test]
    fn als_trace_is_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = DenseTensor::from_fn(vec![5, 4, 3], |_| rng.gen_range(-1.0..1.0)).unwrap();
        let (_, trace) = cp_als_traced(&x, 3, &AlsOptions::default()).unwrap();
        for pair in trace.windows(2) {
            assert!(pair[1] <= pair[0] + 1e-12, "trace {trace:?}");
        }
    }

    #[test]
    fn als_scale_equivariance() {
        let (x, _) = rank_terms_tensor(&[4, 3, 2], &[3.0, 1.5], 21);
        let alpha = 2.5;
        let scaled = DenseTensor::new(
            x.dims().to_vec(),
            x.data().iter().map(|v| v * alpha).collect(),
        )
        .unwrap();
        let opts = AlsOptions {
            max_iters: 50,
            tol: 0.0,
            seed: 9,
        };
        let a = cp_als(&x, 2, &opts).unwrap();
        let b = cp_als(&scaled, 2, &opts).unwrap();
        for (ca, cb) in a.coeffs().iter().zip(b.coeffs()) {
            assert!(
                (cb - alpha * ca).abs() < 1e-6 * cb.abs().max(1.0),
                "{ca} {cb}"
            );
        }
        for (fa, fb) in a.factors().iter().zip(b.factors()) {
            for (va, vb) in fa.data().iter().zip(fb.data()) {
                assert!((va.abs() - vb.abs()).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn als_normalization_holds_after_every_sweep() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let x = DenseTensor::from_fn(vec![4, 4, 3], |_| rng.gen_range(-1.0..1.0)).unwrap();
        for sweeps in 1..=4 {
            let opts = AlsOptions {
                max_iters: sweeps,
                tol: 0.0,
                seed: 2,
            };
            let cpd = cp_als(&x, 2, &opts).unwrap();
            for f in cpd.factors() {
                for c in 0..f.cols() {
                    assert!((f.column_norm(c) - 1.0).abs() <= 1e-10);
                }
            }
        }
    }

    #[test]
    fn als_rejects_invalid_input() {
        let (x, _) = rank_terms_tensor(&[4, 3, 2], &[1.0], 2);
        assert!(matches!(
            cp_als(&x, 0, &AlsOptions::default()),
            Err(CpdError::RankZero)
        ));
        // cap = 4*3 = 12
        assert!(matches!(
            cp_als(&x, 13, &AlsOptions::default()),
            Err(CpdError::RankTooLarge { rank: 13, cap: 12 })
        ));
        let zero = DenseTensor::zeros(vec![2, 2, 2]).unwrap();
        assert!(matches!(
            cp_als(&zero, 1, &AlsOptions::default()),
            Err(CpdError::ZeroTensor)
        ));
        let mat = DenseTensor::zeros(vec![2, 2]).unwrap();
        assert!(matches!(
            cp_als(&mat, 1, &AlsOptions::default()),
            Err(CpdError::NotThirdOrder { order: 2 })
        ));
    }

    #[test]
    fn from_parts_validates_and_sorts() {
        let (_, cpd) = rank_terms_tensor(&[3, 3, 3], &[1.0, 4.0], 8);
        // Constructor sorted descending.
        assert!(cpd.coeffs()[0] >= cpd.coeffs()[1]);

        let mut bad = DenseMatrix::zeros(2, 1);
        bad.set(0, 0, 2.0);
        let ok = DenseMatrix::identity(2);
        assert!(matches!(
            CPDecomposition::from_parts(vec![bad, ok.clone()], vec![1.0]),
            Err(CpdError::ColumnNotUnit { .. })
        ));

        let mut e1 = DenseMatrix::zeros(2, 1);
        e1.set(0, 0, 1.0);
        assert!(matches!(
            CPDecomposition::from_parts(vec![e1.clone(), e1], vec![-1.0]),
            Err(CpdError::NegativeCoeff { .. })
        ));
    }
}
