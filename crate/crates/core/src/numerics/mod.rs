//! Dense matrices, the orthonormal DCT pair and the finite-difference oracle.

mod dct;
mod gradcheck;
mod matrix;

pub use dct::{build_dct_basis, dct, idct, DctBasis};
pub use gradcheck::{
    compare_gradients, finite_diff_gradient, relative_error, FdGradient, GradCheckReport,
    NamedTensors, ParamCheck, Parameters,
};
pub use matrix::{dot, Matrix};
