//! Small layer bundles over the parameter store.

use crate::error::Result;
use crate::numcore::store::{ParamId, ParamStore};
use crate::numcore::tape::{Tape, Var};
use crate::numcore::tensor::Tensor;
use rand_chacha::ChaCha8Rng;

/// Dense layer `y = W x + b` with `W: [out, in]`, `b: [out]`.
#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let weight = store.add(
            format!("{name}.weight"),
            Tensor::xavier(vec![out_dim, in_dim], in_dim, out_dim, rng),
        );
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(vec![out_dim]));
        Linear { weight, bias, in_dim, out_dim }
    }

    pub fn apply(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let w = tape.param(store, self.weight);
        let b = tape.param(store, self.bias);
        let wx = tape.matmul(w, x)?;
        tape.add(wx, b)
    }
}

/// Convolution layer parameters: `kernels: [F, C, k, k]`, `bias: [F]`.
#[derive(Debug, Clone, Copy)]
pub struct Conv2d {
    pub kernels: ParamId,
    pub bias: ParamId,
    pub stride: usize,
}

impl Conv2d {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        k: usize,
        stride: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let fan_in = in_ch * k * k;
        let kernels = store.add(
            format!("{name}.weight"),
            Tensor::he(vec![out_ch, in_ch, k, k], fan_in, rng),
        );
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(vec![out_ch]));
        Conv2d { kernels, bias, stride }
    }

    pub fn apply(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let w = tape.param(store, self.kernels);
        let b = tape.param(store, self.bias);
        tape.conv2d(x, w, b, self.stride)
    }
}

/// Output spatial size of a valid convolution.
pub fn conv_out(size: usize, k: usize, stride: usize) -> usize {
    assert!(size >= k, "conv input size {size} smaller than kernel {k}");
    (size - k) / stride + 1
}
