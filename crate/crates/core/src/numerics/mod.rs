//! Dense tensors, activation and attention kernels, one-sided DFT
//! magnitudes, and the reverse-mode tape used for training.

pub mod counter;
pub mod dft;
pub mod ops;
pub mod params;
pub mod tape;
pub mod tensor;

pub use dft::dft_magnitudes;
pub use ops::{
    dynamic_tanh, matmul_last, mode_multiply, sigmoid, sigmoid_scalar, softmax_axis,
    softmax_lastaxis, softplus, softplus_scalar,
};
pub use params::{uniform_tensor, ParamId, ParamStore};
pub use tape::{Adjoints, CustomOp, DualTensor, Graph, Var};
pub use tensor::Tensor;

/// Central-difference derivative of `f` along every entry of `x`.
pub fn finite_difference(x: &Tensor, h: f64, mut f: impl FnMut(&Tensor) -> f64) -> Tensor {
    let mut probe = x.clone();
    let mut out = Tensor::zeros(x.shape());
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let up = f(&probe);
        probe.data_mut()[i] = orig - h;
        let down = f(&probe);
        probe.data_mut()[i] = orig;
        out.data_mut()[i] = (up - down) / (2.0 * h);
    }
    out
}

/// Relative error with an absolute floor: differences at or below `abs_floor`
/// count as exact.
pub fn relative_error(analytic: f64, numeric: f64, abs_floor: f64) -> f64 {
    let diff = (analytic - numeric).abs();
    if diff <= abs_floor {
        0.0
    } else {
        diff / analytic.abs().max(numeric.abs())
    }
}
