use crate::error::{FearError, Result};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Dense n-dimensional f32 array in row-major order.
///
/// `grad`, when present, always has the same element count as `data`; it is
/// filled in by [`crate::numcore::Tape::backward`] via
/// [`crate::numcore::ParamStore`] accumulation.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
    pub requires_grad: bool,
    pub grad: Option<Vec<f32>>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(FearError::dim(format!(
                "shape {:?} implies {} elements, got {}",
                shape,
                numel,
                data.len()
            )));
        }
        Ok(Tensor { shape, data, requires_grad: false, grad: None })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        Tensor { shape, data: vec![0.0; numel], requires_grad: false, grad: None }
    }

    pub fn full(shape: Vec<usize>, value: f32) -> Self {
        let numel = shape.iter().product();
        Tensor { shape, data: vec![value; numel], requires_grad: false, grad: None }
    }

    pub fn from_vec(data: Vec<f32>) -> Self {
        Tensor { shape: vec![data.len()], data, requires_grad: false, grad: None }
    }

    pub fn scalar(value: f32) -> Self {
        Tensor { shape: vec![1], data: vec![value], requires_grad: false, grad: None }
    }

    /// Uniform random values in `[-limit, limit)`.
    pub fn uniform(shape: Vec<usize>, limit: f32, rng: &mut ChaCha8Rng) -> Self {
        let numel: usize = shape.iter().product();
        let data = (0..numel).map(|_| rng.gen_range(-limit..limit)).collect();
        Tensor { shape, data, requires_grad: false, grad: None }
    }

    /// Xavier/Glorot uniform init for dense layers.
    pub fn xavier(shape: Vec<usize>, fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Self {
        let limit = (6.0 / (fan_in + fan_out) as f32).sqrt();
        Self::uniform(shape, limit, rng)
    }

    /// He uniform init for layers followed by relu.
    pub fn he(shape: Vec<usize>, fan_in: usize, rng: &mut ChaCha8Rng) -> Self {
        let limit = (6.0 / fan_in as f32).sqrt();
        Self::uniform(shape, limit, rng)
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn requires_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Zeroes the gradient buffer, allocating it if missing.
    pub fn zero_grad(&mut self) {
        match self.grad.as_mut() {
            Some(g) => g.iter_mut().for_each(|v| *v = 0.0),
            None => self.grad = Some(vec![0.0; self.data.len()]),
        }
    }
}

/// Splitmix64: cheap deterministic stream derivation for seeding sub-RNGs.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base
        .wrapping_add(0x9e3779b97f4a7c15)
        .wrapping_add(stream.wrapping_mul(0xbf58476d1ce4e5b9));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}
