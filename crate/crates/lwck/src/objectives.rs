//! Training-time objectives: the Frobenius-norm penalty on factorized
//! weights and the weighted binary cross-entropy used for temperature
//! fitting.

use thiserror::Error;

use crate::tensor::DenseTensor;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ObjectiveError {
    #[error("label/probability lengths differ: {labels} vs {probs}")]
    LengthMismatch { labels: usize, probs: usize },
    #[error("labels must be 0 or 1, found {0}")]
    NonBinaryLabel(f64),
}

/// Default base of the class weight: natural e.
pub const DEFAULT_BCE_EPS: f64 = std::f64::consts::E;
/// Default class weight.
pub const DEFAULT_BCE_WEIGHT: f64 = 0.5;

/// Shrinkage factor λ plus, per compressed source layer, its factorized
/// weight collections (three for the CP rewrite, two for the SVD rewrite).
#[derive(Debug, Clone)]
pub struct PenaltyConfig {
    pub lambda: f64,
    pub layer_sets: Vec<Vec<DenseTensor>>,
}

/// λ · Σ over layers and factors of the squared Frobenius norm.
pub fn penalty(cfg: &PenaltyConfig) -> f64 {
    cfg.lambda
        * cfg
            .layer_sets
            .iter()
            .flatten()
            .map(|t| t.frobenius_norm().powi(2))
            .sum::<f64>()
}

/// Gradient of [`penalty`] w.r.t. every factor entry: 2λ·entry, shaped like
/// the inputs.
pub fn penalty_gradient(cfg: &PenaltyConfig) -> Vec<Vec<DenseTensor>> {
    cfg.layer_sets
        .iter()
        .map(|layer| {
            layer
                .iter()
                .map(|t| {
                    DenseTensor::new(
                        t.dims().to_vec(),
                        t.data().iter().map(|v| 2.0 * cfg.lambda * v).collect(),
                    )
                    .expect("same dims as input")
                })
                .collect()
        })
        .collect()
}

const PROB_CLAMP: f64 = 1e-12;

/// Weighted binary cross-entropy: the negated mean of
/// ε^(p + (1−2p)·W) · p·ln(q̂) + (1−p)·ln(1−q̂), probabilities clamped to
/// [1e-12, 1−1e-12]. With ε = 1 this is the standard mean BCE.
pub fn weighted_bce(
    labels: &[f64],
    probs: &[f64],
    weight: f64,
    eps: f64,
) -> Result<f64, ObjectiveError> {
    if labels.len() != probs.len() {
        return Err(ObjectiveError::LengthMismatch {
            labels: labels.len(),
            probs: probs.len(),
        });
    }
    let mut total = 0.0;
    for (&p, &q) in labels.iter().zip(probs) {
        if p != 0.0 && p != 1.0 {
            return Err(ObjectiveError::NonBinaryLabel(p));
        }
        let q = q.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
        let class_weight = eps.powf(p + (1.0 - 2.0 * p) * weight);
        total += class_weight * p * q.ln() + (1.0 - p) * (1.0 - q).ln();
    }
    Ok(-total / labels.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_config(seed: u64, lambda: f64) -> PenaltyConfig {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layer_sets = (0..3)
            .map(|_| {
                let n_factors = if rng.gen_bool(0.5) { 3 } else { 2 };
                (0..n_factors)
                    .map(|_| {
                        let rows = rng.gen_range(2..5);
                        let cols = rng.gen_range(2..5);
                        DenseTensor::from_fn(vec![rows, cols], |_| rng.gen_range(-1.0..1.0))
                            .unwrap()
                    })
                    .collect()
            })
            .collect();
        PenaltyConfig { lambda, layer_sets }
    }

    #[test]
    fn penalty_zero_lambda() {
        let cfg = random_config(1, 0.0);
        assert_eq!(penalty(&cfg), 0.0);
    }

    #[test]
    fn penalty_arithmetic() {
        // One layer with three factors of squared norms 1, 4, 9.
        let factors = vec![
            DenseTensor::new(vec![1], vec![1.0]).unwrap(),
            DenseTensor::new(vec![1], vec![2.0]).unwrap(),
            DenseTensor::new(vec![1], vec![3.0]).unwrap(),
        ];
        let cfg = PenaltyConfig {
            lambda: 0.001,
            layer_sets: vec![factors],
        };
        assert!((penalty(&cfg) - 0.014).abs() < 1e-15);
    }

    #[test]
    fn penalty_matches_direct_summation() {
        let cfg = random_config(7, 0.37);
        // Oracle: materialize and sum.
        let mut sum = 0.0;
        for layer in &cfg.layer_sets {
            for factor in layer {
                for v in factor.data() {
                    sum += v * v;
                }
            }
        }
        assert!((penalty(&cfg) - cfg.lambda * sum).abs() < 1e-12);
    }

    #[test]
    fn penalty_homogeneity() {
        let cfg = random_config(11, 0.25);
        let doubled_lambda = PenaltyConfig {
            lambda: 0.5,
            layer_sets: cfg.layer_sets.clone(),
        };
        assert!((penalty(&doubled_lambda) - 2.0 * penalty(&cfg)).abs() < 1e-12);

        let scaled = PenaltyConfig {
            lambda: cfg.lambda,
            layer_sets: cfg
                .layer_sets
                .iter()
                .map(|layer| {
                    layer
                        .iter()
                        .map(|t| {
                            DenseTensor::new(
                                t.dims().to_vec(),
                                t.data().iter().map(|v| 3.0 * v).collect(),
                            )
                            .unwrap()
                        })
                        .collect()
                })
                .collect(),
        };
        assert!((penalty(&scaled) - 9.0 * penalty(&cfg)).abs() < 1e-10);
    }

    #[test]
    fn gradient_is_two_lambda_times_entry() {
        let cfg = PenaltyConfig {
            lambda: 0.5,
            layer_sets: vec![vec![DenseTensor::new(vec![2], vec![0.3, -1.2]).unwrap()]],
        };
        let grads = penalty_gradient(&cfg);
        assert_eq!(grads[0][0].data(), &[0.3, -1.2]);

        let zero = PenaltyConfig { lambda: 0.0, ..cfg };
        assert!(penalty_gradient(&zero)[0][0]
            .data()
            .iter()
            .all(|&g| g == 0.0));
    }

    #[test]
    fn gradient_matches_central_differences() {
        let h = 1e-6;
        for seed in 0..20 {
            let cfg = random_config(100 + seed, 0.123);
            let grads = penalty_gradient(&cfg);
            for (li, layer) in cfg.layer_sets.iter().enumerate() {
                for (fi, factor) in layer.iter().enumerate() {
                    for ei in 0..factor.len() {
                        let mut plus = cfg.clone();
                        let mut minus = cfg.clone();
                        let mut d_plus = plus.layer_sets[li][fi].data().to_vec();
                        let mut d_minus = minus.layer_sets[li][fi].data().to_vec();
                        d_plus[ei] += h;
                        d_minus[ei] -= h;
                        plus.layer_sets[li][fi] =
                            DenseTensor::new(factor.dims().to_vec(), d_plus).unwrap();
                        minus.layer_sets[li][fi] =
                            DenseTensor::new(factor.dims().to_vec(), d_minus).unwrap();
                        let fd = (penalty(&plus) - penalty(&minus)) / (2.0 * h);
                        let analytic = grads[li][fi].data()[ei];
                        let denom = analytic.abs().max(1e-8);
                        assert!(
                            ((fd - analytic) / denom).abs() <= 1e-5,
                            "seed {seed}: fd {fd} vs {analytic}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn bce_is_zero_at_perfect_confident_predictions() {
        let loss = weighted_bce(&[1.0], &[1.0], 0.7, 2.0).unwrap();
        assert!(loss.abs() < 1e-10, "loss {loss}");
    }

    #[test]
    fn bce_with_unit_eps_is_standard() {
        let loss = weighted_bce(&[1.0, 0.0], &[0.5, 0.5], 0.3, 1.0).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let labels: Vec<f64> = (0..50)
            .map(|_| if rng.gen_bool(0.5) { 1.0 } else { 0.0 })
            .collect();
        let probs: Vec<f64> = (0..50).map(|_| rng.gen_range(0.01..0.99)).collect();
        let ours = weighted_bce(&labels, &probs, 0.8, 1.0).unwrap();
        // Oracle: textbook mean BCE.
        let standard = -labels
            .iter()
            .zip(&probs)
            .map(|(&p, &q)| p * q.ln() + (1.0 - p) * (1.0 - q).ln())
            .sum::<f64>()
            / 50.0;
        assert!((ours - standard).abs() < 1e-12);
    }

    #[test]
    fn negative_class_terms_ignore_the_weight() {
        let labels = vec![0.0; 8];
        let probs: Vec<f64> = (0..8).map(|i| 0.1 + 0.1 * i as f64).collect();
        let a = weighted_bce(&labels, &probs, 0.1, 3.0).unwrap();
        let b = weighted_bce(&labels, &probs, 0.9, 3.0).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn bce_nonnegative_and_zero_only_at_match() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..50 {
            let n = rng.gen_range(1..20);
            let labels: Vec<f64> = (0..n)
                .map(|_| if rng.gen_bool(0.5) { 1.0 } else { 0.0 })
                .collect();
            let probs: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
            let w = rng.gen_range(0.0..1.0);
            let eps = rng.gen_range(1.0..4.0);
            let loss = weighted_bce(&labels, &probs, w, eps).unwrap();
            assert!(loss >= 0.0);
        }
        let exact = weighted_bce(&[1.0, 0.0], &[1.0, 0.0], 0.5, 2.0).unwrap();
        assert!(exact < 1e-10);
    }

    #[test]
    fn bce_rejects_bad_input() {
        assert!(matches!(
            weighted_bce(&[1.0], &[0.5, 0.5], 0.5, 1.0),
            Err(ObjectiveError::LengthMismatch {
                labels: 1,
                probs: 2
            })
        ));
        assert!(matches!(
            weighted_bce(&[0.5], &[0.5], 0.5, 1.0),
            Err(ObjectiveError::NonBinaryLabel(_))
        ));
    }
}
