use rand::Rng;

use super::{axpy, dot, gemm, Init, Module, Param, Tensor};

/// Unfolds one `c x h x w` sample into columns `off..off + ho * wo` of a
/// row-major `[c * k * k, ld]` matrix.
#[allow(clippy::too_many_arguments)]
fn im2col(
    x: &[f32],
    (c, h, w): (usize, usize, usize),
    (k, s, p): (usize, usize, usize),
    (ho, wo): (usize, usize),
    cols: &mut [f32],
    ld: usize,
    off: usize,
) {
    for ci in 0..c {
        let plane = &x[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = &mut cols[((ci * k + ky) * k + kx) * ld + off..][..ho * wo];
                for oy in 0..ho {
                    let iy = (oy * s + ky) as isize - p as isize;
                    let dst = &mut row[oy * wo..(oy + 1) * wo];
                    if iy < 0 || iy >= h as isize {
                        dst.fill(0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * s + kx) as isize - p as isize;
                        *d = if ix < 0 || ix >= w as isize { 0.0 } else { src[ix as usize] };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates columns back into a sample.
#[allow(clippy::too_many_arguments)]
fn col2im(
    cols: &[f32],
    (c, h, w): (usize, usize, usize),
    (k, s, p): (usize, usize, usize),
    (ho, wo): (usize, usize),
    ld: usize,
    off: usize,
    x: &mut [f32],
) {
    for ci in 0..c {
        let plane = &mut x[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = &cols[((ci * k + ky) * k + kx) * ld + off..][..ho * wo];
                for oy in 0..ho {
                    let iy = (oy * s + ky) as isize - p as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, v) in row[oy * wo..(oy + 1) * wo].iter().enumerate() {
                        let ix = (ox * s + kx) as isize - p as isize;
                        if ix >= 0 && ix < w as isize {
                            dst[ix as usize] += v;
                        }
                    }
                }
            }
        }
    }
}

/// `[n, c, hw]` tensor data to a `[c, n * hw]` matrix.
fn to_channel_major(t: &Tensor) -> Vec<f32> {
    let hw = t.h * t.w;
    let mut out = vec![0.0; t.len()];
    for n in 0..t.n {
        for c in 0..t.c {
            out[c * t.n * hw + n * hw..][..hw].copy_from_slice(&t.data[(n * t.c + c) * hw..][..hw]);
        }
    }
    out
}

fn from_channel_major(m: &[f32], n: usize, c: usize, h: usize, w: usize) -> Tensor {
    let hw = h * w;
    let mut out = Tensor::zeros(n, c, h, w);
    for i in 0..n {
        for ch in 0..c {
            out.data[(i * c + ch) * hw..][..hw].copy_from_slice(&m[ch * n * hw + i * hw..][..hw]);
        }
    }
    out
}

fn add_bias(t: &mut Tensor, bias: &Param) {
    let hw = t.h * t.w;
    for n in 0..t.n {
        for c in 0..t.c {
            let b = bias.value[c];
            t.data[(n * t.c + c) * hw..][..hw].iter_mut().for_each(|v| *v += b);
        }
    }
}

fn accumulate_bias_grad(dy: &Tensor, bias: &mut Param) {
    let hw = dy.h * dy.w;
    for n in 0..dy.n {
        for c in 0..dy.c {
            bias.grad[c] += dy.data[(n * dy.c + c) * hw..][..hw].iter().sum::<f32>();
        }
    }
}

/// 2-D convolution, square kernel, zero padding.
#[derive(Clone, Debug)]
pub struct Conv2d {
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    /// `[cout, cin * k * k]`.
    pub weight: Param,
    pub bias: Option<Param>,
    cols: Vec<f32>,
    in_shape: [usize; 4],
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(cin: usize, cout: usize, k: usize, stride: usize, pad: usize, bias: bool, init: Init, rng: &mut impl Rng) -> Self {
        let fan_in = cin * k * k;
        Self {
            cin,
            cout,
            k,
            stride,
            pad,
            weight: init.param(cout * fan_in, fan_in, rng),
            bias: bias.then(|| Param::constant(cout, 0.0)),
            cols: Vec::new(),
            in_shape: [0; 4],
        }
    }

    pub fn out_size(&self, h: usize, w: usize) -> (usize, usize) {
        ((h + 2 * self.pad - self.k) / self.stride + 1, (w + 2 * self.pad - self.k) / self.stride + 1)
    }

    pub fn forward(&mut self, x: &Tensor) -> Tensor {
        assert_eq!(x.c, self.cin, "conv input channels");
        let (ho, wo) = self.out_size(x.h, x.w);
        let kk = self.cin * self.k * self.k;
        let ld = x.n * ho * wo;
        self.cols.resize(kk * ld, 0.0);
        for n in 0..x.n {
            im2col(x.sample(n), (x.c, x.h, x.w), (self.k, self.stride, self.pad), (ho, wo), &mut self.cols, ld, n * ho * wo);
        }
        let mut y = vec![0.0; self.cout * ld];
        gemm(self.cout, kk, ld, &self.weight.value, false, &self.cols, false, 0.0, &mut y);
        let mut out = from_channel_major(&y, x.n, self.cout, ho, wo);
        if let Some(b) = &self.bias {
            add_bias(&mut out, b);
        }
        self.in_shape = x.shape();
        out
    }

    pub fn backward(&mut self, dy: &Tensor) -> Tensor {
        let [n, c, h, w] = self.in_shape;
        let (ho, wo) = (dy.h, dy.w);
        let kk = self.cin * self.k * self.k;
        let ld = n * ho * wo;
        let dym = to_channel_major(dy);
        gemm(self.cout, ld, kk, &dym, false, &self.cols, true, 1.0, &mut self.weight.grad);
        if let Some(b) = &mut self.bias {
            accumulate_bias_grad(dy, b);
        }
        let mut dcols = vec![0.0; kk * ld];
        gemm(kk, self.cout, ld, &self.weight.value, true, &dym, false, 0.0, &mut dcols);
        let mut dx = Tensor::zeros(n, c, h, w);
        let s = dx.sample_len();
        for i in 0..n {
            col2im(&dcols, (c, h, w), (self.k, self.stride, self.pad), (ho, wo), ld, i * ho * wo, &mut dx.data[i * s..(i + 1) * s]);
        }
        dx
    }
}

impl Module for Conv2d {
    fn params(&self) -> Vec<&Param> {
        std::iter::once(&self.weight).chain(self.bias.as_ref()).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        std::iter::once(&mut self.weight).chain(self.bias.as_mut()).collect()
    }
}

/// Transposed convolution (fractionally strided), square kernel.
#[derive(Clone, Debug)]
pub struct ConvTranspose2d {
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    /// `[cin, cout * k * k]`.
    pub weight: Param,
    pub bias: Option<Param>,
    x_cm: Vec<f32>,
    in_shape: [usize; 4],
}

impl ConvTranspose2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(cin: usize, cout: usize, k: usize, stride: usize, pad: usize, bias: bool, init: Init, rng: &mut impl Rng) -> Self {
        Self {
            cin,
            cout,
            k,
            stride,
            pad,
            weight: init.param(cin * cout * k * k, cin * k * k, rng),
            bias: bias.then(|| Param::constant(cout, 0.0)),
            x_cm: Vec::new(),
            in_shape: [0; 4],
        }
    }

    pub fn out_size(&self, h: usize, w: usize) -> (usize, usize) {
        ((h - 1) * self.stride + self.k - 2 * self.pad, (w - 1) * self.stride + self.k - 2 * self.pad)
    }

    pub fn forward(&mut self, x: &Tensor) -> Tensor {
        assert_eq!(x.c, self.cin, "transposed conv input channels");
        let (ho, wo) = self.out_size(x.h, x.w);
        let kk = self.cout * self.k * self.k;
        let ld = x.n * x.h * x.w;
        self.x_cm = to_channel_major(x);
        let mut cols = vec![0.0; kk * ld];
        gemm(kk, self.cin, ld, &self.weight.value, true, &self.x_cm, false, 0.0, &mut cols);
        let mut out = Tensor::zeros(x.n, self.cout, ho, wo);
        let s = out.sample_len();
        for i in 0..x.n {
            col2im(
                &cols,
                (self.cout, ho, wo),
                (self.k, self.stride, self.pad),
                (x.h, x.w),
                ld,
                i * x.h * x.w,
                &mut out.data[i * s..(i + 1) * s],
            );
        }
        if let Some(b) = &self.bias {
            add_bias(&mut out, b);
        }
        self.in_shape = x.shape();
        out
    }

    pub fn backward(&mut self, dy: &Tensor) -> Tensor {
        let [n, c, h, w] = self.in_shape;
        let kk = self.cout * self.k * self.k;
        let ld = n * h * w;
        let mut dcols = vec![0.0; kk * ld];
        for i in 0..n {
            im2col(dy.sample(i), (dy.c, dy.h, dy.w), (self.k, self.stride, self.pad), (h, w), &mut dcols, ld, i * h * w);
        }
        gemm(self.cin, ld, kk, &self.x_cm, false, &dcols, true, 1.0, &mut self.weight.grad);
        if let Some(b) = &mut self.bias {
            accumulate_bias_grad(dy, b);
        }
        let mut dx = vec![0.0; self.cin * ld];
        gemm(self.cin, kk, ld, &self.weight.value, false, &dcols, false, 0.0, &mut dx);
        from_channel_major(&dx, n, c, h, w)
    }
}

impl Module for ConvTranspose2d {
    fn params(&self) -> Vec<&Param> {
        std::iter::once(&self.weight).chain(self.bias.as_ref()).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        std::iter::once(&mut self.weight).chain(self.bias.as_mut()).collect()
    }
}

/// Per-sample, per-channel normalization with learned scale and shift.
#[derive(Clone, Debug)]
pub struct InstanceNorm2d {
    pub gamma: Param,
    pub beta: Param,
    eps: f32,
    xhat: Vec<f32>,
    inv_std: Vec<f32>,
}

impl InstanceNorm2d {
    /// Scale initialized from N(1, `gamma_std`), shift zero.
    pub fn new(c: usize, gamma_std: f32, rng: &mut impl Rng) -> Self {
        Self {
            gamma: Param::normal(c, 1.0, gamma_std, rng),
            beta: Param::constant(c, 0.0),
            eps: 1e-5,
            xhat: Vec::new(),
            inv_std: Vec::new(),
        }
    }

    pub fn forward(&mut self, x: &Tensor) -> Tensor {
        let hw = x.h * x.w;
        let mut out = x.clone();
        self.xhat.resize(x.len(), 0.0);
        self.inv_std.resize(x.n * x.c, 0.0);
        for n in 0..x.n {
            for c in 0..x.c {
                let base = (n * x.c + c) * hw;
                let v = &x.data[base..base + hw];
                let mean = v.iter().map(|&a| a as f64).sum::<f64>() / hw as f64;
                let var = v.iter().map(|&a| (a as f64 - mean).powi(2)).sum::<f64>() / hw as f64;
                let inv = 1.0 / (var + self.eps as f64).sqrt();
                self.inv_std[n * x.c + c] = inv as f32;
                let (g, b) = (self.gamma.value[c], self.beta.value[c]);
                for j in 0..hw {
                    let xh = ((v[j] as f64 - mean) * inv) as f32;
                    self.xhat[base + j] = xh;
                    out.data[base + j] = g * xh + b;
                }
            }
        }
        out
    }

    pub fn backward(&mut self, dy: &Tensor) -> Tensor {
        let hw = dy.h * dy.w;
        let mut dx = Tensor::zeros(dy.n, dy.c, dy.h, dy.w);
        for n in 0..dy.n {
            for c in 0..dy.c {
                let base = (n * dy.c + c) * hw;
                let g = &dy.data[base..base + hw];
                let xh = &self.xhat[base..base + hw];
                let (mut sum_g, mut sum_gx) = (0.0f64, 0.0f64);
                for j in 0..hw {
                    sum_g += g[j] as f64;
                    sum_gx += (g[j] * xh[j]) as f64;
                }
                self.beta.grad[c] += sum_g as f32;
                self.gamma.grad[c] += sum_gx as f32;
                let scale = self.gamma.value[c] * self.inv_std[n * dy.c + c] / hw as f32;
                let (mg, mgx) = (sum_g as f32, sum_gx as f32);
                for j in 0..hw {
                    dx.data[base + j] = scale * (hw as f32 * g[j] - mg - xh[j] * mgx);
                }
            }
        }
        dx
    }
}

impl Module for InstanceNorm2d {
    fn params(&self) -> Vec<&Param> {
        vec![&self.gamma, &self.beta]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.gamma, &mut self.beta]
    }
}

/// `max(x, 0) + slope * min(x, 0)`.
#[derive(Clone, Debug, Default)]
pub struct LeakyRelu {
    pub slope: f32,
    positive: Vec<bool>,
}

impl LeakyRelu {
    pub fn new(slope: f32) -> Self {
        Self { slope, positive: Vec::new() }
    }

    pub fn forward(&mut self, x: &Tensor) -> Tensor {
        self.positive.clear();
        self.positive.extend(x.data.iter().map(|&v| v > 0.0));
        let mut out = x.clone();
        out.data.iter_mut().for_each(|v| {
            if *v <= 0.0 {
                *v *= self.slope
            }
        });
        out
    }

    pub fn backward(&mut self, dy: &Tensor) -> Tensor {
        let mut dx = dy.clone();
        for (g, &p) in dx.data.iter_mut().zip(&self.positive) {
            if !p {
                *g *= self.slope;
            }
        }
        dx
    }
}

#[derive(Clone, Debug, Default)]
pub struct Relu(LeakyRelu);

impl Relu {
    pub fn new() -> Self {
        Self(LeakyRelu::new(0.0))
    }

    pub fn forward(&mut self, x: &Tensor) -> Tensor {
        self.0.forward(x)
    }

    pub fn backward(&mut self, dy: &Tensor) -> Tensor {
        self.0.backward(dy)
    }
}

#[derive(Clone, Debug, Default)]
pub struct Tanh {
    out: Vec<f32>,
}

impl Tanh {
    pub fn forward(&mut self, x: &Tensor) -> Tensor {
        let mut out = x.clone();
        out.data.iter_mut().for_each(|v| *v = v.tanh());
        self.out.clone_from(&out.data);
        out
    }

    pub fn backward(&mut self, dy: &Tensor) -> Tensor {
        let mut dx = dy.clone();
        for (g, &y) in dx.data.iter_mut().zip(&self.out) {
            *g *= 1.0 - y * y;
        }
        dx
    }
}

/// Inverted dropout; the identity outside training.
#[derive(Clone, Debug)]
pub struct Dropout {
    pub p: f32,
    mask: Vec<f32>,
}

impl Dropout {
    pub fn new(p: f32) -> Self {
        Self { p, mask: Vec::new() }
    }

    pub fn forward(&mut self, x: &Tensor, train: bool, rng: &mut impl Rng) -> Tensor {
        if !train || self.p == 0.0 {
            self.mask.clear();
            return x.clone();
        }
        let keep = 1.0 - self.p;
        self.mask.clear();
        self.mask.extend((0..x.len()).map(|_| if rng.random::<f32>() < keep { 1.0 / keep } else { 0.0 }));
        let mut out = x.clone();
        out.data.iter_mut().zip(&self.mask).for_each(|(v, m)| *v *= m);
        out
    }

    pub fn backward(&mut self, dy: &Tensor) -> Tensor {
        if self.mask.is_empty() {
            return dy.clone();
        }
        let mut dx = dy.clone();
        dx.data.iter_mut().zip(&self.mask).for_each(|(v, m)| *v *= m);
        dx
    }
}

/// Fully connected layer over flattened samples; output is `[n, out, 1, 1]`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub inputs: usize,
    pub outputs: usize,
    /// `[outputs, inputs]`.
    pub weight: Param,
    pub bias: Param,
    x: Vec<f32>,
    in_shape: [usize; 4],
}

impl Linear {
    pub fn new(inputs: usize, outputs: usize, init: Init, rng: &mut impl Rng) -> Self {
        Self {
            inputs,
            outputs,
            weight: init.param(inputs * outputs, inputs, rng),
            bias: Param::constant(outputs, 0.0),
            x: Vec::new(),
            in_shape: [0; 4],
        }
    }

    // Row-at-a-time loops: each weight row is read once per batch, which
    // beats a packed GEMM for the small batches used here.
    pub fn forward(&mut self, x: &Tensor) -> Tensor {
        assert_eq!(x.sample_len(), self.inputs, "linear input size");
        let mut out = Tensor::zeros(x.n, self.outputs, 1, 1);
        for (o, row) in self.weight.value.chunks_exact(self.inputs).enumerate() {
            for n in 0..x.n {
                out.data[n * self.outputs + o] = self.bias.value[o] + dot(x.sample(n), row);
            }
        }
        self.x.clone_from(&x.data);
        self.in_shape = x.shape();
        out
    }

    pub fn backward(&mut self, dy: &Tensor) -> Tensor {
        let [n, c, h, w] = self.in_shape;
        let mut dx = Tensor::zeros(n, c, h, w);
        let rows = self.weight.value.chunks_exact(self.inputs).zip(self.weight.grad.chunks_exact_mut(self.inputs));
        for (o, (row, grow)) in rows.enumerate() {
            for i in 0..n {
                let d = dy.data[i * self.outputs + o];
                self.bias.grad[o] += d;
                axpy(grow, d, &self.x[i * self.inputs..(i + 1) * self.inputs]);
                axpy(&mut dx.data[i * self.inputs..(i + 1) * self.inputs], d, row);
            }
        }
        dx
    }
}

impl Module for Linear {
    fn params(&self) -> Vec<&Param> {
        vec![&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.weight, &mut self.bias]
    }
}

/// Stacks `b`'s channels after `a`'s.
pub fn concat_channels(a: &Tensor, b: &Tensor) -> Tensor {
    assert_eq!((a.n, a.h, a.w), (b.n, b.h, b.w), "concat shapes");
    let mut out = Tensor::zeros(a.n, a.c + b.c, a.h, a.w);
    let (sa, sb) = (a.sample_len(), b.sample_len());
    for n in 0..a.n {
        let dst = &mut out.data[n * (sa + sb)..(n + 1) * (sa + sb)];
        dst[..sa].copy_from_slice(a.sample(n));
        dst[sa..].copy_from_slice(b.sample(n));
    }
    out
}

/// Gradient of [`concat_channels`]: the first `ca` channels and the rest.
pub fn split_channels(g: &Tensor, ca: usize) -> (Tensor, Tensor) {
    let hw = g.h * g.w;
    let cb = g.c - ca;
    let mut a = Tensor::zeros(g.n, ca, g.h, g.w);
    let mut b = Tensor::zeros(g.n, cb, g.h, g.w);
    for n in 0..g.n {
        let src = g.sample(n);
        a.data[n * ca * hw..(n + 1) * ca * hw].copy_from_slice(&src[..ca * hw]);
        b.data[n * cb * hw..(n + 1) * cb * hw].copy_from_slice(&src[ca * hw..]);
    }
    (a, b)
}
