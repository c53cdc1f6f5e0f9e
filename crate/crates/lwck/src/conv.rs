//! Reference 2-D convolution and the layer-rewrite rules.
//!
//! `conv2d_forward` is a direct cross-correlation loop (stride, zero padding,
//! groups, no bias) and serves as the oracle every rewrite is checked
//! against. `cp_factorize_conv` turns a D×D (D>1) layer into
//! pointwise → depthwise → pointwise; `svd_factorize_conv` turns a 1×1 layer
//! into two pointwise layers.

use thiserror::Error;

use crate::cpd::{cp_als, reconstruct, AlsOptions, CpdError};
use crate::epc::{decompose_with_epc, EpcConfig, EpcError};
use crate::svd::{svd_split, SvdError};
use crate::tensor::{relative_error, reshape_kernel, DenseMatrix, DenseTensor, TensorError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConvError {
    #[error("layer '{name}': {problem}")]
    InvalidSpec { name: String, problem: String },
    #[error("input has {got} channels, layer expects {expected}")]
    ChannelMismatch { expected: usize, got: usize },
    #[error("weights dims {got:?} do not match expected {expected:?}")]
    WeightShape {
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("spatial input {h}x{w} too small for kernel {kernel} with padding {padding}")]
    InputTooSmall {
        h: usize,
        w: usize,
        kernel: usize,
        padding: usize,
    },
    #[error("expected kernel size 1 for the SVD rewrite, got {0}")]
    KernelNotPointwise(usize),
    #[error("kernel size 1 layers take the SVD rewrite, not the CP rewrite")]
    KernelIsPointwise,
    #[error("grouped layers are not rewritten (groups = {0})")]
    Grouped(usize),
    #[error(
        "layer chain mismatch: previous output has {got} channels, next layer expects {expected}"
    )]
    ChainMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Cpd(#[from] CpdError),
    #[error(transparent)]
    Epc(#[from] EpcError),
    #[error(transparent)]
    Svd(#[from] SvdError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Shape metadata of a convolutional layer. Kernels are square; `input_hw`
/// is the spatial size the layer sees, needed for FLOP accounting.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ConvLayerSpec {
    pub name: String,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_size: usize,
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
    pub input_hw: (usize, usize),
}

impl ConvLayerSpec {
    pub fn validate(&self) -> Result<(), ConvError> {
        let fail = |problem: &str| {
            Err(ConvError::InvalidSpec {
                name: self.name.clone(),
                problem: problem.to_string(),
            })
        };
        if self.in_channels == 0 || self.out_channels == 0 {
            return fail("channel counts must be positive");
        }
        if self.kernel_size == 0 || self.kernel_size % 2 == 0 {
            return fail("kernel size must be odd and positive");
        }
        if self.stride == 0 {
            return fail("stride must be positive");
        }
        if self.groups == 0
            || self.in_channels % self.groups != 0
            || self.out_channels % self.groups != 0
        {
            return fail("channels must be divisible by groups");
        }
        if self.input_hw.0 == 0 || self.input_hw.1 == 0 {
            return fail("input spatial size must be positive");
        }
        Ok(())
    }

    /// Expected weight dims: (T, S/groups, D, D).
    pub fn weight_dims(&self) -> Vec<usize> {
        vec![
            self.out_channels,
            self.in_channels / self.groups,
            self.kernel_size,
            self.kernel_size,
        ]
    }

    /// Output spatial size under this stride/padding.
    pub fn output_hw(&self) -> Result<(usize, usize), ConvError> {
        let (h, w) = self.input_hw;
        let d = self.kernel_size;
        let padded_h = h + 2 * self.padding;
        let padded_w = w + 2 * self.padding;
        if padded_h < d || padded_w < d {
            return Err(ConvError::InputTooSmall {
                h,
                w,
                kernel: d,
                padding: self.padding,
            });
        }
        Ok((
            (padded_h - d) / self.stride + 1,
            (padded_w - d) / self.stride + 1,
        ))
    }
}

/// Role of a layer inside a factorized sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerKind {
    Pointwise,
    Depthwise,
    Standard,
}

/// A layer of a factorized sequence: shape metadata plus its weights,
/// stored as (T, S/groups, D, D).
#[derive(Debug, Clone)]
pub struct FactorizedLayer {
    pub kind: LayerKind,
    pub spec: ConvLayerSpec,
    pub weights: DenseTensor,
}

impl FactorizedLayer {
    pub fn new(
        kind: LayerKind,
        spec: ConvLayerSpec,
        weights: DenseTensor,
    ) -> Result<Self, ConvError> {
        spec.validate()?;
        if weights.dims() != spec.weight_dims().as_slice() {
            return Err(ConvError::WeightShape {
                expected: spec.weight_dims(),
                got: weights.dims().to_vec(),
            });
        }
        let ok = match kind {
            LayerKind::Pointwise => spec.kernel_size == 1 && spec.groups == 1,
            LayerKind::Depthwise => {
                spec.groups == spec.in_channels && spec.in_channels == spec.out_channels
            }
            LayerKind::Standard => true,
        };
        if !ok {
            return Err(ConvError::InvalidSpec {
                name: spec.name.clone(),
                problem: format!("shape does not match {kind:?} role"),
            });
        }
        Ok(Self {
            kind,
            spec,
            weights,
        })
    }
}

/// Direct cross-correlation (no kernel flip, no bias). Input is C×H×W;
/// weights are (T, S/groups, D, D).
pub fn conv2d_forward(
    input: &DenseTensor,
    spec: &ConvLayerSpec,
    weights: &DenseTensor,
) -> Result<DenseTensor, ConvError> {
    spec.validate()?;
    if input.order() != 3 || input.dims()[0] != spec.in_channels {
        return Err(ConvError::ChannelMismatch {
            expected: spec.in_channels,
            got: if input.order() == 3 {
                input.dims()[0]
            } else {
                0
            },
        });
    }
    if weights.dims() != spec.weight_dims().as_slice() {
        return Err(ConvError::WeightShape {
            expected: spec.weight_dims(),
            got: weights.dims().to_vec(),
        });
    }
    let (h, w) = (input.dims()[1], input.dims()[2]);
    if (h, w) != spec.input_hw {
        return Err(ConvError::InvalidSpec {
            name: spec.name.clone(),
            problem: format!("input is {h}x{w}, spec says {:?}", spec.input_hw),
        });
    }
    let (h_out, w_out) = spec.output_hw()?;
    let d = spec.kernel_size;
    let in_per_group = spec.in_channels / spec.groups;
    let out_per_group = spec.out_channels / spec.groups;

    let mut out = DenseTensor::zeros(vec![spec.out_channels, h_out, w_out])?;
    let out_data = out.data_mut();
    for t in 0..spec.out_channels {
        let g = t / out_per_group;
        for oy in 0..h_out {
            for ox in 0..w_out {
                let mut sum = 0.0;
                for sc in 0..in_per_group {
                    let s_global = g * in_per_group + sc;
                    for kh in 0..d {
                        let iy = (oy * spec.stride + kh) as isize - spec.padding as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kw in 0..d {
                            let ix = (ox * spec.stride + kw) as isize - spec.padding as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            sum += input.get(&[s_global, iy as usize, ix as usize])
                                * weights.get(&[t, sc, kh, kw]);
                        }
                    }
                }
                out_data[(t * h_out + oy) * w_out + ox] = sum;
            }
        }
    }
    Ok(out)
}

/// Permute conv weights (T, S, D, D) to the spatial-first kernel layout
/// (D, D, S, T) the decomposition works on.
pub fn kernel_from_weights(weights: &DenseTensor) -> Result<DenseTensor, ConvError> {
    let dims = weights.dims();
    if dims.len() != 4 || dims[2] != dims[3] {
        return Err(ConvError::WeightShape {
            expected: vec![0, 0, 0, 0],
            got: dims.to_vec(),
        });
    }
    let (t_ch, s_ch, d) = (dims[0], dims[1], dims[2]);
    DenseTensor::from_fn(vec![d, d, s_ch, t_ch], |idx| {
        weights.get(&[idx[3], idx[2], idx[0], idx[1]])
    })
    .map_err(Into::into)
}

/// Inverse of [`kernel_from_weights`].
pub fn weights_from_kernel(kernel: &DenseTensor) -> Result<DenseTensor, ConvError> {
    let dims = kernel.dims();
    if dims.len() != 4 || dims[0] != dims[1] {
        return Err(ConvError::WeightShape {
            expected: vec![0, 0, 0, 0],
            got: dims.to_vec(),
        });
    }
    let (d, s_ch, t_ch) = (dims[0], dims[2], dims[3]);
    DenseTensor::from_fn(vec![t_ch, s_ch, d, d], |idx| {
        kernel.get(&[idx[2], idx[3], idx[1], idx[0]])
    })
    .map_err(Into::into)
}

/// A rewritten layer sequence plus how well its kernel matches the original.
#[derive(Debug, Clone)]
pub struct FactorizedConv {
    pub layers: Vec<FactorizedLayer>,
    /// Relative Frobenius error of the factorized kernel vs. the original.
    pub kernel_relative_error: f64,
}

/// Rewrite a D>1 layer as pointwise (S→R, coefficients absorbed) →
/// depthwise (R groups, original stride/padding) → pointwise (R→T).
///
/// The kernel is reshaped to D²×S×T and fitted by CP-ALS at rank `rank`;
/// when `epc_cfg` is present, diverging fits are corrected.
pub fn cp_factorize_conv(
    spec: &ConvLayerSpec,
    weights: &DenseTensor,
    rank: usize,
    opts: &AlsOptions,
    epc_cfg: Option<&EpcConfig>,
) -> Result<FactorizedConv, ConvError> {
    spec.validate()?;
    if spec.kernel_size == 1 {
        return Err(ConvError::KernelIsPointwise);
    }
    if spec.groups != 1 {
        return Err(ConvError::Grouped(spec.groups));
    }
    if weights.dims() != spec.weight_dims().as_slice() {
        return Err(ConvError::WeightShape {
            expected: spec.weight_dims(),
            got: weights.dims().to_vec(),
        });
    }
    let d = spec.kernel_size;
    let s_ch = spec.in_channels;
    let t_ch = spec.out_channels;

    let kernel3 = reshape_kernel(&kernel_from_weights(weights)?)?;
    let cpd = match epc_cfg {
        Some(cfg) => decompose_with_epc(&kernel3, rank, opts, cfg)?.decomposition,
        None => cp_als(&kernel3, rank, opts)?,
    };
    let kernel_relative_error = relative_error(&kernel3, &reconstruct(&cpd)?)?;

    let f_hw = &cpd.factors()[0];
    let f_s = &cpd.factors()[1];
    let f_t = &cpd.factors()[2];
    let coeffs = cpd.coeffs();

    // First pointwise carries the coefficients so the depthwise weights stay
    // at unit scale.
    let w_in = DenseTensor::from_fn(vec![rank, s_ch, 1, 1], |idx| {
        coeffs[idx[0]] * f_s.get(idx[1], idx[0])
    })?;
    let w_dw = DenseTensor::from_fn(vec![rank, 1, d, d], |idx| {
        f_hw.get(idx[2] * d + idx[3], idx[0])
    })?;
    let w_out = DenseTensor::from_fn(vec![t_ch, rank, 1, 1], |idx| f_t.get(idx[0], idx[1]))?;

    let pw_in_spec = ConvLayerSpec {
        name: format!("{}.0", spec.name),
        in_channels: s_ch,
        out_channels: rank,
        kernel_size: 1,
        stride: 1,
        padding: 0,
        groups: 1,
        input_hw: spec.input_hw,
    };
    let dw_spec = ConvLayerSpec {
        name: format!("{}.1", spec.name),
        in_channels: rank,
        out_channels: rank,
        kernel_size: d,
        stride: spec.stride,
        padding: spec.padding,
        groups: rank,
        input_hw: spec.input_hw,
    };
    let pw_out_spec = ConvLayerSpec {
        name: format!("{}.2", spec.name),
        in_channels: rank,
        out_channels: t_ch,
        kernel_size: 1,
        stride: 1,
        padding: 0,
        groups: 1,
        input_hw: dw_spec.output_hw()?,
    };

    Ok(FactorizedConv {
        layers: vec![
            FactorizedLayer::new(LayerKind::Pointwise, pw_in_spec, w_in)?,
            FactorizedLayer::new(LayerKind::Depthwise, dw_spec, w_dw)?,
            FactorizedLayer::new(LayerKind::Pointwise, pw_out_spec, w_out)?,
        ],
        kernel_relative_error,
    })
}

/// Rewrite a 1×1 layer as two pointwise layers, Cin→R then R→Cout, via the
/// rank-R SVD split of its Cin×Cout kernel matrix.
pub fn svd_factorize_conv(
    spec: &ConvLayerSpec,
    weights: &DenseTensor,
    rank: usize,
) -> Result<FactorizedConv, ConvError> {
    spec.validate()?;
    if spec.kernel_size != 1 {
        return Err(ConvError::KernelNotPointwise(spec.kernel_size));
    }
    if spec.groups != 1 {
        return Err(ConvError::Grouped(spec.groups));
    }
    if weights.dims() != spec.weight_dims().as_slice() {
        return Err(ConvError::WeightShape {
            expected: spec.weight_dims(),
            got: weights.dims().to_vec(),
        });
    }
    let s_ch = spec.in_channels;
    let t_ch = spec.out_channels;
    let mut a = DenseMatrix::zeros(s_ch, t_ch);
    for s in 0..s_ch {
        for t in 0..t_ch {
            a.set(s, t, weights.get(&[t, s, 0, 0]));
        }
    }
    let (w1, w2) = svd_split(&a, rank)?;
    let product = w1.matmul(&w2)?;
    let kernel_relative_error = {
        let mut diff = 0.0;
        for (x, y) in a.data().iter().zip(product.data()) {
            diff += (x - y) * (x - y);
        }
        diff.sqrt() / a.frobenius_norm()
    };

    let first_spec = ConvLayerSpec {
        name: format!("{}.0", spec.name),
        in_channels: s_ch,
        out_channels: rank,
        kernel_size: 1,
        stride: spec.stride,
        padding: spec.padding,
        groups: 1,
        input_hw: spec.input_hw,
    };
    let second_spec = ConvLayerSpec {
        name: format!("{}.1", spec.name),
        in_channels: rank,
        out_channels: t_ch,
        kernel_size: 1,
        stride: 1,
        padding: 0,
        groups: 1,
        input_hw: first_spec.output_hw()?,
    };
    let wt1 = DenseTensor::from_fn(vec![rank, s_ch, 1, 1], |idx| w1.get(idx[1], idx[0]))?;
    let wt2 = DenseTensor::from_fn(vec![t_ch, rank, 1, 1], |idx| w2.get(idx[1], idx[0]))?;

    Ok(FactorizedConv {
        layers: vec![
            FactorizedLayer::new(LayerKind::Pointwise, first_spec, wt1)?,
            FactorizedLayer::new(LayerKind::Pointwise, second_spec, wt2)?,
        ],
        kernel_relative_error,
    })
}

/// Left-to-right composition of [`conv2d_forward`]; an empty sequence is the
/// identity.
pub fn forward_sequence(
    input: &DenseTensor,
    layers: &[FactorizedLayer],
) -> Result<DenseTensor, ConvError> {
    let mut current = input.clone();
    for layer in layers {
        if current.dims()[0] != layer.spec.in_channels {
            return Err(ConvError::ChainMismatch {
                expected: layer.spec.in_channels,
                got: current.dims()[0],
            });
        }
        current = conv2d_forward(&current, &layer.spec, &layer.weights)?;
    }
    Ok(current)
}

/// Upper bound for the CP rewrite's rank search: D²·min(S, T). Ranks above
/// it stop saving parameters; it is a search bound, not an exactness
/// guarantee.
pub fn max_cp_rank(spec: &ConvLayerSpec) -> usize {
    spec.kernel_size * spec.kernel_size * spec.in_channels.min(spec.out_channels)
}

/// Upper bound for the SVD rewrite: min(S, T).
pub fn max_svd_rank(spec: &ConvLayerSpec) -> usize {
    spec.in_channels.min(spec.out_channels)
}
