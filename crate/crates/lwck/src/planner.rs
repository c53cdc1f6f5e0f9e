//! Whole-model compression driver: per-layer method selection (CP rewrite
//! for D>1, SVD split for 1×1), binary rank search against a quality metric,
//! parameter/FLOP accounting, and speedup reporting.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::conv::{
    cp_factorize_conv, kernel_from_weights, max_cp_rank, max_svd_rank, svd_factorize_conv,
    ConvError, ConvLayerSpec, FactorizedConv, FactorizedLayer, LayerKind,
};
use crate::cpd::AlsOptions;
use crate::epc::EpcConfig;
use crate::svd::singular_values;
use crate::tensor::{reshape_kernel, DenseMatrix, DenseTensor};

type Factorizer<'a> = Box<dyn FnMut(usize) -> Result<FactorizedConv, ConvError> + 'a>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlanError {
    #[error("rank range [{min}, {max}] is empty")]
    InvalidRankRange { min: usize, max: usize },
    #[error("sub-layer FLOP list is empty")]
    EmptySubLayers,
    #[error("FLOP counts must be positive")]
    NonPositiveFlops,
    #[error("duplicate layer name '{0}'")]
    DuplicateLayerName(String),
    #[error("layer '{name}' weights have dims {got:?}, spec expects {expected:?}")]
    ManifestWeightShape {
        name: String,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error(transparent)]
    Conv(#[from] ConvError),
}

/// A layer with its weights resolved into memory.
#[derive(Debug, Clone)]
pub struct ManifestLayer {
    pub spec: ConvLayerSpec,
    pub weights: DenseTensor,
}

/// Ordered collection of layers to compress. Names are unique and weights
/// match each spec's (T, S/groups, D, D) shape.
#[derive(Debug, Clone)]
pub struct ModelManifest {
    layers: Vec<ManifestLayer>,
}

impl ModelManifest {
    pub fn new(layers: Vec<ManifestLayer>) -> Result<Self, PlanError> {
        let mut seen = std::collections::HashSet::new();
        for layer in &layers {
            layer.spec.validate()?;
            if !seen.insert(layer.spec.name.clone()) {
                return Err(PlanError::DuplicateLayerName(layer.spec.name.clone()));
            }
            if layer.weights.dims() != layer.spec.weight_dims().as_slice() {
                return Err(PlanError::ManifestWeightShape {
                    name: layer.spec.name.clone(),
                    expected: layer.spec.weight_dims(),
                    got: layer.weights.dims().to_vec(),
                });
            }
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[ManifestLayer] {
        &self.layers
    }
}

/// Weight count of a layer: T × (S/groups) × D² (no bias).
pub fn count_params(spec: &ConvLayerSpec) -> u64 {
    (spec.out_channels as u64)
        * (spec.in_channels / spec.groups) as u64
        * (spec.kernel_size * spec.kernel_size) as u64
}

/// FLOPs of one forward pass with a MAC counted as 2 FLOPs:
/// 2 × H_out × W_out × T × (S/groups) × D².
pub fn count_flops(spec: &ConvLayerSpec) -> Result<u64, PlanError> {
    let (h_out, w_out) = spec.output_hw()?;
    Ok(2 * (h_out as u64) * (w_out as u64) * count_params(spec))
}

/// Ratio of the original layer's FLOPs to the summed FLOPs of its rewrite.
pub fn speedup(flops_original: f64, flops_sublayers: &[f64]) -> Result<f64, PlanError> {
    if flops_sublayers.is_empty() {
        return Err(PlanError::EmptySubLayers);
    }
    if flops_original <= 0.0 || flops_sublayers.iter().any(|&f| f <= 0.0) {
        return Err(PlanError::NonPositiveFlops);
    }
    Ok(flops_original / flops_sublayers.iter().sum::<f64>())
}

/// Rank-search window and acceptance threshold. The metric itself is a
/// callback: candidate rank in, score out, lower is better, a score equal to
/// the threshold is acceptable.
#[derive(Debug, Clone)]
pub struct RankSearchConfig {
    pub threshold: f64,
    pub min_rank: usize,
    pub max_rank: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum RankSearchOutcome {
    Found(usize),
    /// No rank in range met the threshold; carries the score at `max_rank`.
    Infeasible {
        metric_at_max: f64,
    },
}

/// Binary search for the smallest acceptable rank, assuming the metric is
/// non-increasing in rank. A bounded downward sweep (8 probes) afterwards
/// guards against mild non-monotonicity; the smallest rank verified
/// acceptable among all probes wins.
pub fn rank_search(
    cfg: &RankSearchConfig,
    mut metric: impl FnMut(usize) -> f64,
) -> Result<RankSearchOutcome, PlanError> {
    if cfg.min_rank == 0 || cfg.min_rank > cfg.max_rank {
        return Err(PlanError::InvalidRankRange {
            min: cfg.min_rank,
            max: cfg.max_rank,
        });
    }
    let mut cache: HashMap<usize, f64> = HashMap::new();
    let mut eval = |r: usize, cache: &mut HashMap<usize, f64>| -> f64 {
        if let Some(&v) = cache.get(&r) {
            return v;
        }
        let v = metric(r);
        cache.insert(r, v);
        v
    };

    let at_max = eval(cfg.max_rank, &mut cache);
    if at_max > cfg.threshold {
        return Ok(RankSearchOutcome::Infeasible {
            metric_at_max: at_max,
        });
    }
    let mut lo = cfg.min_rank;
    let mut hi = cfg.max_rank;
    while lo < hi {
        let mid = lo + (hi - lo) / 2;
        if eval(mid, &mut cache) <= cfg.threshold {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    // `hi` is always verified acceptable at this point.
    let mut best = hi;
    let sweep_floor = hi.saturating_sub(8).max(cfg.min_rank);
    for r in (sweep_floor..hi).rev() {
        if eval(r, &mut cache) <= cfg.threshold && r < best {
            best = r;
        }
    }
    Ok(RankSearchOutcome::Found(best))
}

/// Rewrite method recorded per layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CompressionMethod {
    #[serde(rename = "cpd-epc")]
    CpdEpc,
    #[serde(rename = "svd")]
    Svd,
    #[serde(rename = "skip")]
    Skip,
}

/// One sub-layer of a rewrite, with its analytic counts.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SubLayerRecord {
    pub name: String,
    pub kind: LayerKind,
    pub spec: ConvLayerSpec,
    pub params: u64,
    pub flops: u64,
    /// Filled when the weights are serialized next to the plan.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights_path: Option<String>,
}

/// Per-layer planning record.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct LayerPlan {
    pub name: String,
    pub method: CompressionMethod,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rank: Option<usize>,
    pub params_before: u64,
    pub params_after: u64,
    pub flops_before: u64,
    pub flops_after: u64,
    pub speedup: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel_rel_error: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub skip_reason: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sub_layers: Vec<SubLayerRecord>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PlanTotals {
    pub params_before: u64,
    pub params_after: u64,
    pub flops_before: u64,
    pub flops_after: u64,
    pub speedup: f64,
}

/// The full compression record, serializable via the plan file format.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CompressionPlan {
    pub layers: Vec<LayerPlan>,
    pub totals: PlanTotals,
}

/// Driver configuration. The EPC budget is relative to each kernel's
/// Frobenius norm and converted to the absolute budget internally.
#[derive(Debug, Clone)]
pub struct CompressConfig {
    pub epc_delta_rel: f64,
    /// Acceptance threshold on the kernel relative reconstruction error.
    pub rank_threshold: f64,
    pub als: AlsOptions,
    /// Layer-name patterns to leave untouched ("*" for everything, trailing
    /// "*" for prefix matches).
    pub skip: Vec<String>,
    /// Rewrite even when the factorized form has more parameters.
    pub force: bool,
    /// Optional ceiling on the rank-search window, on top of each layer's
    /// own bound.
    pub rank_cap: Option<usize>,
}

impl Default for CompressConfig {
    fn default() -> Self {
        Self {
            epc_delta_rel: 0.002,
            rank_threshold: 0.05,
            als: AlsOptions::default(),
            skip: Vec::new(),
            force: false,
            rank_cap: None,
        }
    }
}

/// Factorized weights for one source layer (empty when skipped).
#[derive(Debug, Clone)]
pub struct CompressedLayer {
    pub name: String,
    pub layers: Vec<FactorizedLayer>,
}

#[derive(Debug, Clone)]
pub struct CompressionOutcome {
    pub plan: CompressionPlan,
    pub factorized: Vec<CompressedLayer>,
    /// True when any layer was skipped for a reason other than the skip
    /// list; drives the partial-success exit code.
    pub had_unrequested_skip: bool,
}

fn matches_skip(name: &str, patterns: &[String]) -> bool {
    patterns.iter().any(|p| {
        if p == "*" {
            true
        } else if let Some(prefix) = p.strip_suffix('*') {
            name.starts_with(prefix)
        } else {
            name == p
        }
    })
}

/// Stable, platform-independent per-layer seed derivation (FNV-1a).
fn layer_seed(base: u64, name: &str) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in name.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    base ^ h
}

fn skip_plan(spec: &ConvLayerSpec, params: u64, flops: u64, reason: &str) -> LayerPlan {
    LayerPlan {
        name: spec.name.clone(),
        method: CompressionMethod::Skip,
        rank: None,
        params_before: params,
        params_after: params,
        flops_before: flops,
        flops_after: flops,
        speedup: 1.0,
        kernel_rel_error: None,
        skip_reason: Some(reason.to_string()),
        sub_layers: Vec::new(),
    }
}

fn plan_from_factorization(
    spec: &ConvLayerSpec,
    method: CompressionMethod,
    rank: usize,
    fc: &FactorizedConv,
    params_before: u64,
    flops_before: u64,
) -> Result<LayerPlan, PlanError> {
    let mut sub_layers = Vec::with_capacity(fc.layers.len());
    let mut params_after = 0u64;
    let mut flops_after = 0u64;
    for layer in &fc.layers {
        let params = count_params(&layer.spec);
        let flops = count_flops(&layer.spec)?;
        params_after += params;
        flops_after += flops;
        sub_layers.push(SubLayerRecord {
            name: layer.spec.name.clone(),
            kind: layer.kind,
            spec: layer.spec.clone(),
            params,
            flops,
            weights_path: None,
        });
    }
    let ratio = speedup(
        flops_before as f64,
        &sub_layers
            .iter()
            .map(|s| s.flops as f64)
            .collect::<Vec<_>>(),
    )?;
    Ok(LayerPlan {
        name: spec.name.clone(),
        method,
        rank: Some(rank),
        params_before,
        params_after,
        flops_before,
        flops_after,
        speedup: ratio,
        kernel_rel_error: Some(fc.kernel_relative_error),
        skip_reason: None,
        sub_layers,
    })
}

fn compress_layer(
    layer: &ManifestLayer,
    cfg: &CompressConfig,
) -> Result<(LayerPlan, Vec<FactorizedLayer>), PlanError> {
    let spec = &layer.spec;
    let params_before = count_params(spec);
    let flops_before = count_flops(spec)?;

    if matches_skip(&spec.name, &cfg.skip) {
        return Ok((
            skip_plan(spec, params_before, flops_before, "skip-list"),
            Vec::new(),
        ));
    }
    if spec.groups != 1 {
        return Ok((
            skip_plan(spec, params_before, flops_before, "grouped layer"),
            Vec::new(),
        ));
    }

    let als = AlsOptions {
        seed: layer_seed(cfg.als.seed, &spec.name),
        ..cfg.als.clone()
    };

    let (method, search, factorization): (_, _, Factorizer) = if spec.kernel_size == 1 {
        // The whole spectrum prices every rank at once.
        let mut a = DenseMatrix::zeros(spec.in_channels, spec.out_channels);
        for s in 0..spec.in_channels {
            for t in 0..spec.out_channels {
                a.set(s, t, layer.weights.get(&[t, s, 0, 0]));
            }
        }
        let sv = singular_values(&a);
        let total: f64 = sv.iter().map(|s| s * s).sum();
        let tail_rel = move |r: usize| -> f64 {
            if total == 0.0 {
                return 0.0;
            }
            (sv[r.min(sv.len())..].iter().map(|s| s * s).sum::<f64>() / total).sqrt()
        };
        let cfg_search = RankSearchConfig {
            threshold: cfg.rank_threshold,
            min_rank: 1,
            max_rank: cfg
                .rank_cap
                .map_or(max_svd_rank(spec), |cap| cap.min(max_svd_rank(spec)))
                .max(1),
        };
        let outcome = rank_search(&cfg_search, tail_rel)?;
        let spec_cl = spec.clone();
        let weights_cl = layer.weights.clone();
        (
            CompressionMethod::Svd,
            outcome,
            Box::new(move |r| svd_factorize_conv(&spec_cl, &weights_cl, r)),
        )
    } else {
        let kernel3 =
            reshape_kernel(&kernel_from_weights(&layer.weights)?).map_err(ConvError::from)?;
        let epc = EpcConfig {
            delta: cfg.epc_delta_rel * kernel3.frobenius_norm(),
            ..EpcConfig::for_tensor(&kernel3, 0.0)
        };
        let spec_cl = spec.clone();
        let weights_cl = layer.weights.clone();
        let als_cl = als.clone();
        let mut cache: HashMap<usize, FactorizedConv> = HashMap::new();
        let mut factorize = move |r: usize| -> Result<FactorizedConv, ConvError> {
            if let Some(fc) = cache.get(&r) {
                return Ok(fc.clone());
            }
            let fc = cp_factorize_conv(&spec_cl, &weights_cl, r, &als_cl, Some(&epc))?;
            cache.insert(r, fc.clone());
            Ok(fc)
        };
        let cfg_search = RankSearchConfig {
            threshold: cfg.rank_threshold,
            min_rank: 1,
            max_rank: cfg
                .rank_cap
                .map_or(max_cp_rank(spec), |cap| cap.min(max_cp_rank(spec)))
                .max(1),
        };
        let outcome = rank_search(&cfg_search, |r| match factorize(r) {
            Ok(fc) => fc.kernel_relative_error,
            Err(_) => f64::INFINITY,
        })?;
        (CompressionMethod::CpdEpc, outcome, Box::new(factorize))
    };

    let rank = match search {
        RankSearchOutcome::Found(r) => r,
        RankSearchOutcome::Infeasible { metric_at_max } => {
            return Ok((
                skip_plan(
                    spec,
                    params_before,
                    flops_before,
                    &format!(
                        "no rank within threshold {} (metric at max rank: {:.6})",
                        cfg.rank_threshold, metric_at_max
                    ),
                ),
                Vec::new(),
            ));
        }
    };

    let mut factorization = factorization;
    let fc = match factorization(rank) {
        Ok(fc) => fc,
        Err(e) => {
            return Ok((
                skip_plan(
                    spec,
                    params_before,
                    flops_before,
                    &format!("factorization failed: {e}"),
                ),
                Vec::new(),
            ));
        }
    };

    let plan = plan_from_factorization(spec, method, rank, &fc, params_before, flops_before)?;
    if plan.params_after > plan.params_before && !cfg.force {
        return Ok((
            skip_plan(
                spec,
                params_before,
                flops_before,
                "factorized form would have more parameters",
            ),
            Vec::new(),
        ));
    }
    Ok((plan, fc.layers))
}

/// Compress every layer of the manifest. Per-layer failures become skip
/// records rather than aborting the run; totals cover all layers with
/// skipped ones counted unchanged.
pub fn compress_model(
    manifest: &ModelManifest,
    cfg: &CompressConfig,
) -> Result<CompressionOutcome, PlanError> {
    let results: Vec<Result<(LayerPlan, Vec<FactorizedLayer>), PlanError>> = manifest
        .layers()
        .par_iter()
        .map(|layer| compress_layer(layer, cfg))
        .collect();

    let mut layers = Vec::with_capacity(results.len());
    let mut factorized = Vec::with_capacity(results.len());
    let mut had_unrequested_skip = false;
    for result in results {
        let (plan, fls) = result?;
        if let Some(reason) = &plan.skip_reason {
            if reason != "skip-list" {
                had_unrequested_skip = true;
            }
        }
        factorized.push(CompressedLayer {
            name: plan.name.clone(),
            layers: fls,
        });
        layers.push(plan);
    }

    let params_before: u64 = layers.iter().map(|l| l.params_before).sum();
    let params_after: u64 = layers.iter().map(|l| l.params_after).sum();
    let flops_before: u64 = layers.iter().map(|l| l.flops_before).sum();
    let flops_after: u64 = layers.iter().map(|l| l.flops_after).sum();
    let totals = PlanTotals {
        params_before,
        params_after,
        flops_before,
        flops_after,
        speedup: flops_before as f64 / flops_after as f64,
    };

    Ok(CompressionOutcome {
        plan: CompressionPlan { layers, totals },
        factorized,
        had_unrequested_skip,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn spec(
        name: &str,
        s: usize,
        t: usize,
        d: usize,
        stride: usize,
        pad: usize,
        hw: (usize, usize),
    ) -> ConvLayerSpec {
        ConvLayerSpec {
            name: name.to_string(),
            in_channels: s,
            out_channels: t,
            kernel_size: d,
            stride,
            padding: pad,
            groups: 1,
            input_hw: hw,
        }
    }

    #[test]
    fn param_counts() {
        assert_eq!(
            count_params(&spec("attn", 768, 48, 1, 1, 0, (8, 8))),
            36_864
        );
        assert_eq!(count_params(&spec("tiny", 1, 1, 3, 1, 1, (8, 8))), 9);
        let dw = ConvLayerSpec {
            groups: 16,
            ..spec("dw", 16, 16, 3, 1, 1, (8, 8))
        };
        assert_eq!(count_params(&dw), 144);
    }

    #[test]
    fn flop_counts() {
        assert_eq!(
            count_flops(&spec("unit", 1, 1, 1, 1, 0, (1, 1))).unwrap(),
            2
        );
        assert_eq!(
            count_flops(&spec("mid", 2, 4, 3, 1, 1, (8, 8))).unwrap(),
            9216
        );
        let s1 = count_flops(&spec("s1", 2, 4, 3, 1, 1, (8, 8))).unwrap();
        let s2 = count_flops(&spec("s2", 2, 4, 3, 2, 1, (8, 8))).unwrap();
        assert_eq!(s1 / s2, 4);
    }

    #[test]
    fn flops_match_naive_loop_count() {
        // Oracle: count MACs by walking the same loops the reference conv
        // walks (padding contributes: every tap is a MAC).
        for sp in [
            spec("a", 2, 3, 3, 1, 1, (5, 5)),
            spec("b", 3, 2, 3, 2, 0, (7, 7)),
            spec("c", 1, 4, 1, 1, 0, (4, 6)),
        ] {
            let (h_out, w_out) = sp.output_hw().unwrap();
            let mut macs: u64 = 0;
            for _t in 0..sp.out_channels {
                for _oy in 0..h_out {
                    for _ox in 0..w_out {
                        for _s in 0..sp.in_channels / sp.groups {
                            for _kh in 0..sp.kernel_size {
                                for _kw in 0..sp.kernel_size {
                                    macs += 1;
                                }
                            }
                        }
                    }
                }
            }
            assert_eq!(count_flops(&sp).unwrap(), 2 * macs, "{}", sp.name);
        }
    }

    #[test]
    fn speedup_table_values() {
        let s1 = speedup(1.616e-1, &[2.118e-2, 2.979e-3, 6.415e-2]).unwrap();
        assert!((s1 - 1.829).abs() <= 0.001, "{s1}");
        let s2 = speedup(4.496e-3, &[1.177e-3, 4.414e-4]).unwrap();
        assert!((s2 - 2.778).abs() <= 0.001, "{s2}");
        let s3 = speedup(1.346e-2, &[3.923e-4, 5.52e-5, 4.414e-4]).unwrap();
        assert!((s3 - 15.14).abs() <= 0.01, "{s3}");
    }

    #[test]
    fn speedup_rejects_bad_input() {
        assert!(matches!(speedup(1.0, &[]), Err(PlanError::EmptySubLayers)));
        assert!(matches!(
            speedup(1.0, &[0.0]),
            Err(PlanError::NonPositiveFlops)
        ));
        assert!(matches!(
            speedup(0.0, &[1.0]),
            Err(PlanError::NonPositiveFlops)
        ));
    }

    #[test]
    fn rank_search_monotone_metric() {
        let cfg = RankSearchConfig {
            threshold: 0.25,
            min_rank: 1,
            max_rank: 16,
        };
        let outcome = rank_search(&cfg, |r| 1.0 / r as f64).unwrap();
        assert_eq!(outcome, RankSearchOutcome::Found(4));
    }

    #[test]
    fn rank_search_boundaries() {
        let cfg = RankSearchConfig {
            threshold: 2.0,
            min_rank: 3,
            max_rank: 10,
        };
        assert_eq!(
            rank_search(&cfg, |r| 1.0 / r as f64).unwrap(),
            RankSearchOutcome::Found(3)
        );
        let strict = RankSearchConfig {
            threshold: 0.01,
            min_rank: 1,
            max_rank: 10,
        };
        match rank_search(&strict, |r| 1.0 / r as f64).unwrap() {
            RankSearchOutcome::Infeasible { metric_at_max } => {
                assert!((metric_at_max - 0.1).abs() < 1e-12);
            }
            other => panic!("expected infeasible, got {other:?}"),
        }
        let bad = RankSearchConfig {
            threshold: 1.0,
            min_rank: 5,
            max_rank: 4,
        };
        assert!(rank_search(&bad, |r| r as f64).is_err());
    }

    #[test]
    fn rank_search_exact_threshold_is_acceptable() {
        let cfg = RankSearchConfig {
            threshold: 0.5,
            min_rank: 1,
            max_rank: 8,
        };
        // metric(2) == 0.5 exactly; <= means rank 2 is acceptable.
        assert_eq!(
            rank_search(&cfg, |r| 1.0 / r as f64).unwrap(),
            RankSearchOutcome::Found(2)
        );
    }

    #[test]
    fn rank_search_matches_exhaustive_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for case in 0..50 {
            let max_rank = rng.gen_range(2..40usize);
            let scale: f64 = rng.gen_range(0.5..4.0);
            let threshold: f64 = rng.gen_range(0.01..1.0);
            let metric = |r: usize| scale / r as f64;
            let cfg = RankSearchConfig {
                threshold,
                min_rank: 1,
                max_rank,
            };
            let expect = (1..=max_rank).find(|&r| metric(r) <= threshold);
            match (rank_search(&cfg, metric).unwrap(), expect) {
                (RankSearchOutcome::Found(found), Some(want)) => {
                    assert_eq!(found, want, "case {case}");
                }
                (RankSearchOutcome::Infeasible { .. }, None) => {}
                (got, want) => panic!("case {case}: got {got:?}, scan says {want:?}"),
            }
        }
    }

    fn random_weights(rng: &mut ChaCha8Rng, spec: &ConvLayerSpec) -> DenseTensor {
        DenseTensor::from_fn(spec.weight_dims(), |_| rng.gen_range(-1.0..1.0)).unwrap()
    }

    /// A kernel whose (D², S, T) reshape has exactly CP rank `rank`.
    fn low_rank_weights(rng: &mut ChaCha8Rng, spec: &ConvLayerSpec, rank: usize) -> DenseTensor {
        use crate::cpd::CPDecomposition;
        use crate::tensor::unshape_kernel;
        let d = spec.kernel_size;
        let dims = [d * d, spec.in_channels, spec.out_channels];
        let factors: Vec<DenseMatrix> = dims
            .iter()
            .map(|&rows| {
                let mut f = DenseMatrix::zeros(rows, rank);
                for r in 0..rank {
                    let col: Vec<f64> = (0..rows).map(|_| rng.gen_range(-1.0..1.0)).collect();
                    let norm = col.iter().map(|x| x * x).sum::<f64>().sqrt();
                    for (i, v) in col.iter().enumerate() {
                        f.set(i, r, v / norm);
                    }
                }
                f
            })
            .collect();
        let coeffs: Vec<f64> = (1..=rank).rev().map(|c| c as f64).collect();
        let cpd = CPDecomposition::from_parts(factors, coeffs).unwrap();
        let kernel = unshape_kernel(&crate::cpd::reconstruct(&cpd).unwrap(), d).unwrap();
        crate::conv::weights_from_kernel(&kernel).unwrap()
    }

    #[test]
    fn compress_single_pointwise_full_rank() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let sp = spec("pw", 6, 4, 1, 1, 0, (5, 5));
        let weights = random_weights(&mut rng, &sp);
        let manifest = ModelManifest::new(vec![ManifestLayer {
            spec: sp.clone(),
            weights,
        }])
        .unwrap();
        let cfg = CompressConfig {
            rank_threshold: 1e-10,
            force: true,
            ..CompressConfig::default()
        };
        let outcome = compress_model(&manifest, &cfg).unwrap();
        let plan = &outcome.plan.layers[0];
        assert_eq!(plan.method, CompressionMethod::Svd);
        let r = plan.rank.unwrap();
        assert_eq!(r, 4); // min(S, T): a random kernel needs full rank
        assert_eq!(plan.params_after, (r * (6 + 4)) as u64);
    }

    #[test]
    fn compress_three_layer_manifest_accounting() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let l1 = spec("pw", 8, 8, 1, 1, 0, (8, 8));
        let l2 = spec("mid", 6, 8, 3, 1, 1, (8, 8));
        let l3 = spec("stem", 3, 4, 7, 2, 3, (16, 16));
        let manifest = ModelManifest::new(vec![
            ManifestLayer {
                weights: {
                    // Rank-2 kernel matrix: low-rank by construction.
                    let p: Vec<f64> = (0..16).map(|_| rng.gen_range(-1.0..1.0)).collect();
                    DenseTensor::from_fn(vec![8, 8, 1, 1], |idx| {
                        p[idx[0]] * p[8 + idx[1]]
                            + 0.5 * p[(idx[0] + 3) % 16] * p[(idx[1] + 9) % 16]
                    })
                    .unwrap()
                },
                spec: l1.clone(),
            },
            ManifestLayer {
                weights: low_rank_weights(&mut rng, &l2, 3),
                spec: l2.clone(),
            },
            ManifestLayer {
                weights: low_rank_weights(&mut rng, &l3, 2),
                spec: l3.clone(),
            },
        ])
        .unwrap();
        let cfg = CompressConfig {
            rank_threshold: 1e-5,
            als: AlsOptions {
                max_iters: 2000,
                tol: 1e-12,
                seed: 0,
            },
            rank_cap: Some(8),
            ..CompressConfig::default()
        };
        let outcome = compress_model(&manifest, &cfg).unwrap();
        assert_eq!(outcome.plan.layers.len(), 3);

        let mut params_before = 0;
        let mut params_after = 0;
        let mut flops_before = 0;
        let mut flops_after = 0;
        for plan in &outcome.plan.layers {
            // Accounting consistency: record fields are sums of sub-layers.
            if plan.method != CompressionMethod::Skip {
                assert_eq!(
                    plan.params_after,
                    plan.sub_layers.iter().map(|s| s.params).sum::<u64>(),
                    "{}",
                    plan.name
                );
                assert_eq!(
                    plan.flops_after,
                    plan.sub_layers.iter().map(|s| s.flops).sum::<u64>()
                );
                let r = plan.rank.unwrap() as u64;
                let src = manifest
                    .layers()
                    .iter()
                    .find(|l| l.spec.name == plan.name)
                    .unwrap();
                let (s, t, d) = (
                    src.spec.in_channels as u64,
                    src.spec.out_channels as u64,
                    src.spec.kernel_size as u64,
                );
                let expect = match plan.method {
                    CompressionMethod::CpdEpc => r * s + r * d * d + r * t,
                    CompressionMethod::Svd => r * (s + t),
                    CompressionMethod::Skip => unreachable!(),
                };
                assert_eq!(plan.params_after, expect, "{}", plan.name);
                assert_eq!(
                    plan.speedup > 1.0,
                    plan.flops_after < plan.flops_before,
                    "{}",
                    plan.name
                );
            }
            params_before += plan.params_before;
            params_after += plan.params_after;
            flops_before += plan.flops_before;
            flops_after += plan.flops_after;
        }
        assert_eq!(outcome.plan.totals.params_before, params_before);
        assert_eq!(outcome.plan.totals.params_after, params_after);
        assert_eq!(outcome.plan.totals.flops_before, flops_before);
        assert_eq!(outcome.plan.totals.flops_after, flops_after);
    }

    #[test]
    fn skip_all_is_identity_plan() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let sp = spec("conv", 4, 4, 3, 1, 1, (6, 6));
        let manifest = ModelManifest::new(vec![ManifestLayer {
            weights: random_weights(&mut rng, &sp),
            spec: sp,
        }])
        .unwrap();
        let cfg = CompressConfig {
            skip: vec!["*".to_string()],
            ..CompressConfig::default()
        };
        let outcome = compress_model(&manifest, &cfg).unwrap();
        assert!(!outcome.had_unrequested_skip);
        assert_eq!(outcome.plan.layers[0].method, CompressionMethod::Skip);
        assert_eq!(outcome.plan.totals.speedup, 1.0);
        assert_eq!(
            outcome.plan.totals.params_before,
            outcome.plan.totals.params_after
        );
    }

    #[test]
    fn tiny_layer_skipped_unless_forced() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        // 1x1 with S=T=2: full-rank split has 2*(2+2)=8 params vs 4.
        let sp = spec("tiny", 2, 2, 1, 1, 0, (4, 4));
        let weights = random_weights(&mut rng, &sp);
        let manifest = ModelManifest::new(vec![ManifestLayer {
            spec: sp.clone(),
            weights: weights.clone(),
        }])
        .unwrap();
        let cfg = CompressConfig {
            rank_threshold: 1e-10,
            ..CompressConfig::default()
        };
        let outcome = compress_model(&manifest, &cfg).unwrap();
        assert_eq!(outcome.plan.layers[0].method, CompressionMethod::Skip);
        assert!(outcome.had_unrequested_skip);

        let forced = CompressConfig { force: true, ..cfg };
        let outcome = compress_model(&manifest, &forced).unwrap();
        assert_eq!(outcome.plan.layers[0].method, CompressionMethod::Svd);
        assert!(outcome.plan.layers[0].params_after > outcome.plan.layers[0].params_before);
    }

    #[test]
    fn lower_rank_never_costs_more() {
        let sp = spec("mono", 8, 12, 3, 1, 1, (10, 10));
        let mut last_params = u64::MAX;
        let mut last_flops = u64::MAX;
        for rank in (1..=6).rev() {
            // Analytic counts of the three-layer rewrite at this rank.
            let pw_in = spec("a", 8, rank, 1, 1, 0, (10, 10));
            let dw = ConvLayerSpec {
                groups: rank,
                ..spec("b", rank, rank, 3, 1, 1, (10, 10))
            };
            let pw_out = spec("c", rank, 12, 1, 1, 0, (10, 10));
            let params: u64 = [&pw_in, &dw, &pw_out].iter().map(|s| count_params(s)).sum();
            let flops: u64 = [&pw_in, &dw, &pw_out]
                .iter()
                .map(|s| count_flops(s).unwrap())
                .sum();
            assert!(params <= last_params);
            assert!(flops <= last_flops);
            last_params = params;
            last_flops = flops;
        }
        let _ = sp;
    }

    #[test]
    fn manifest_rejects_duplicates_and_bad_weights() {
        let sp = spec("dup", 2, 2, 1, 1, 0, (2, 2));
        let w = DenseTensor::zeros(vec![2, 2, 1, 1]).unwrap();
        assert!(matches!(
            ModelManifest::new(vec![
                ManifestLayer {
                    spec: sp.clone(),
                    weights: w.clone()
                },
                ManifestLayer {
                    spec: sp.clone(),
                    weights: w.clone()
                },
            ]),
            Err(PlanError::DuplicateLayerName(_))
        ));
        let bad = DenseTensor::zeros(vec![2, 2, 3, 3]).unwrap();
        assert!(matches!(
            ModelManifest::new(vec![ManifestLayer {
                spec: sp,
                weights: bad
            }]),
            Err(PlanError::ManifestWeightShape { .. })
        ));
    }
}
