//! Low-rank compression of convolutional layers.
//!
//! The pipeline: kernels with spatial size > 1 are reshaped to 3rd-order
//! tensors and factorized by CP-ALS with an error-preserving correction (EPC)
//! that shrinks diverging rank-1 components; 1×1 kernels are split by
//! truncated SVD. A planner drives per-layer rank search and reports
//! parameter/FLOP savings, and a calibration module provides ECE, reliability
//! diagram data, and temperature scaling for checking that compressed models
//! keep their confidence honest.

pub mod calibration;
pub mod conv;
pub mod cpd;
pub mod epc;
pub mod io;
pub mod objectives;
pub mod planner;
pub mod svd;
pub mod tensor;

pub use cpd::{cp_als, cp_als_traced, reconstruct, sensitivity, AlsOptions, CPDecomposition};
pub use epc::{decompose_with_epc, epc_correct, needs_correction, EpcConfig, EpcResult};
pub use svd::{svd_split, truncated_svd, TruncatedSVD};
pub use tensor::{
    khatri_rao, refold, relative_error, reshape_kernel, unfold, unshape_kernel, DenseMatrix,
    DenseTensor,
};
