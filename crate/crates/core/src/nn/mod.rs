//! Minimal CPU neural-network toolkit: NCHW tensors, layers with explicit
//! backward passes, losses and Adam.
//!
//! Layers cache what their backward pass needs during a training-mode
//! forward call; `backward` must follow the matching `forward`.

mod layers;
mod loss;
mod optim;

use rand::Rng;
use rand_distr::{Distribution, Normal};

pub use layers::{
    concat_channels, split_channels, Conv2d, ConvTranspose2d, Dropout, InstanceNorm2d, LeakyRelu, Linear, Relu, Tanh,
};
pub use loss::{bce_with_logits, l1_loss, mse_loss};
pub use optim::Adam;

/// Dense `[n, c, h, w]` float tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn zeros(n: usize, c: usize, h: usize, w: usize) -> Self {
        Self { n, c, h, w, data: vec![0.0; n * c * h * w] }
    }

    pub fn from_vec(n: usize, c: usize, h: usize, w: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), n * c * h * w, "tensor data length");
        Self { n, c, h, w, data }
    }

    pub fn shape(&self) -> [usize; 4] {
        [self.n, self.c, self.h, self.w]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Elements per sample.
    pub fn sample_len(&self) -> usize {
        self.c * self.h * self.w
    }

    pub fn sample(&self, i: usize) -> &[f32] {
        let s = self.sample_len();
        &self.data[i * s..(i + 1) * s]
    }
}

/// Trainable parameter with its gradient and Adam moments.
#[derive(Clone, Debug)]
pub struct Param {
    pub value: Vec<f32>,
    pub grad: Vec<f32>,
    pub(crate) m: Vec<f32>,
    pub(crate) v: Vec<f32>,
}

impl Param {
    pub fn new(value: Vec<f32>) -> Self {
        let n = value.len();
        Self { value, grad: vec![0.0; n], m: vec![0.0; n], v: vec![0.0; n] }
    }

    pub fn constant(len: usize, v: f32) -> Self {
        Self::new(vec![v; len])
    }

    pub fn normal(len: usize, mean: f32, std: f32, rng: &mut impl Rng) -> Self {
        let dist = Normal::new(mean, std).expect("positive std");
        Self::new((0..len).map(|_| dist.sample(rng)).collect())
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }
}

/// Weight initialization scheme for conv and linear kernels.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// Zero-mean normal with the given standard deviation.
    Normal(f32),
    /// He/Kaiming normal for ReLU networks.
    He,
}

impl Init {
    pub(crate) fn param(self, len: usize, fan_in: usize, rng: &mut impl Rng) -> Param {
        match self {
            Init::Normal(std) => Param::normal(len, 0.0, std, rng),
            Init::He => Param::normal(len, 0.0, (2.0 / fan_in as f32).sqrt(), rng),
        }
    }
}

/// Anything with an ordered list of parameters.
pub trait Module {
    fn params(&self) -> Vec<&Param>;
    fn params_mut(&mut self) -> Vec<&mut Param>;

    fn zero_grad(&mut self) {
        self.params_mut().into_iter().for_each(Param::zero_grad);
    }

    fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    /// All parameter values concatenated in declaration order.
    fn flat_params(&self) -> Vec<f32> {
        self.params().iter().flat_map(|p| p.value.iter().copied()).collect()
    }

    /// Inverse of [`flat_params`](Module::flat_params); false on a length mismatch.
    fn load_flat_params(&mut self, flat: &[f32]) -> bool {
        if flat.len() != self.param_count() {
            return false;
        }
        let mut offset = 0;
        for p in self.params_mut() {
            let n = p.len();
            p.value.copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        true
    }
}

/// Row-major `c = a * b + beta * c` with optional transposed storage of
/// `a` (`k x m` when `ta`) and `b` (`n x k` when `tb`).
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(m: usize, k: usize, n: usize, a: &[f32], ta: bool, b: &[f32], tb: bool, beta: f32, c: &mut [f32]) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n, "gemm operand sizes");
    if m == 0 || n == 0 {
        return;
    }
    if !ta && n <= 16 {
        // packing dominates for a handful of columns: use dot products
        let bt: std::borrow::Cow<[f32]> = if tb {
            std::borrow::Cow::Borrowed(&b[..n * k])
        } else {
            let mut t = vec![0.0; n * k];
            for p in 0..k {
                for j in 0..n {
                    t[j * k + p] = b[p * n + j];
                }
            }
            std::borrow::Cow::Owned(t)
        };
        for i in 0..m {
            let row = &a[i * k..(i + 1) * k];
            for j in 0..n {
                let v = dot(row, &bt[j * k..(j + 1) * k]);
                let out = &mut c[i * n + j];
                *out = if beta == 0.0 { v } else { beta * *out + v };
            }
        }
        return;
    }
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: bounds asserted above; the strides describe dense row-major
    // storage of exactly those extents and `c` does not alias `a` or `b`.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Runs `$body` compiled for AVX2 when the CPU has it. The generic and
/// wide builds perform the same operations in the same order, so results
/// do not depend on the machine.
macro_rules! multiversion {
    ($(#[$m:meta])* fn $name:ident($($arg:ident: $ty:ty),*) $(-> $ret:ty)? $body:block) => {
        $(#[$m])*
        pub(crate) fn $name($($arg: $ty),*) $(-> $ret)? {
            #[inline(always)]
            fn generic($($arg: $ty),*) $(-> $ret)? $body

            #[cfg(target_arch = "x86_64")]
            {
                #[target_feature(enable = "avx2")]
                unsafe fn wide($($arg: $ty),*) $(-> $ret)? {
                    generic($($arg),*)
                }
                if std::arch::is_x86_feature_detected!("avx2") {
                    // SAFETY: the feature was detected at runtime
                    return unsafe { wide($($arg),*) };
                }
            }
            generic($($arg),*)
        }
    };
}
pub(crate) use multiversion;

multiversion! {
    fn dot(a: &[f32], b: &[f32]) -> f32 {
        let mut acc = [0.0f32; 16];
        let (ca, cb) = (a.chunks_exact(16), b.chunks_exact(16));
        let tail: f32 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
        for (x, y) in ca.zip(cb) {
            for l in 0..16 {
                acc[l] += x[l] * y[l];
            }
        }
        acc.iter().sum::<f32>() + tail
    }
}

multiversion! {
    /// `y += a * x`.
    fn axpy(y: &mut [f32], a: f32, x: &[f32]) {
        for (y, x) in y.iter_mut().zip(x) {
            *y += a * x;
        }
    }
}

#[cfg(test)]
mod tests;
