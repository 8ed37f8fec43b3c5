use super::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn rng() -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(3)
}

fn random_tensor(n: usize, c: usize, h: usize, w: usize, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_vec(n, c, h, w, (0..n * c * h * w).map(|_| rng.random_range(-1.0..1.0)).collect())
}

fn dot(a: &Tensor, b: &Tensor) -> f64 {
    a.data.iter().zip(&b.data).map(|(&x, &y)| x as f64 * y as f64).sum()
}

/// Direct-loop convolution used as the reference.
fn naive_conv(x: &Tensor, w: &[f32], cout: usize, k: usize, s: usize, p: usize) -> Tensor {
    let ho = (x.h + 2 * p - k) / s + 1;
    let wo = (x.w + 2 * p - k) / s + 1;
    let mut out = Tensor::zeros(x.n, cout, ho, wo);
    for n in 0..x.n {
        for co in 0..cout {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = 0.0;
                    for ci in 0..x.c {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * s + ky) as isize - p as isize;
                                let ix = (ox * s + kx) as isize - p as isize;
                                if iy >= 0 && ix >= 0 && (iy as usize) < x.h && (ix as usize) < x.w {
                                    acc += w[((co * x.c + ci) * k + ky) * k + kx]
                                        * x.data[((n * x.c + ci) * x.h + iy as usize) * x.w + ix as usize];
                                }
                            }
                        }
                    }
                    out.data[((n * cout + co) * ho + oy) * wo + ox] = acc;
                }
            }
        }
    }
    out
}

fn assert_close(a: &[f32], b: &[f32], tol: f32) {
    assert_eq!(a.len(), b.len());
    for (i, (x, y)) in a.iter().zip(b).enumerate() {
        assert!((x - y).abs() <= tol * (1.0 + y.abs()), "index {i}: {x} vs {y}");
    }
}

#[test]
fn conv_matches_direct_loops() {
    let mut r = rng();
    for (k, s, p, h) in [(4, 2, 1, 8), (3, 2, 1, 9), (4, 1, 1, 6), (3, 1, 0, 5)] {
        let mut conv = Conv2d::new(3, 5, k, s, p, false, Init::Normal(0.5), &mut r);
        let x = random_tensor(2, 3, h, h, &mut r);
        let y = conv.forward(&x);
        let expected = naive_conv(&x, &conv.weight.value, 5, k, s, p);
        assert_eq!(y.shape(), expected.shape());
        assert_close(&y.data, &expected.data, 1e-4);
    }
}

#[test]
fn conv_backward_is_the_adjoint() {
    // <conv(x), g> == <x, conv^T(g)> and the weight gradient is <x-cols, g>
    let mut r = rng();
    let mut conv = Conv2d::new(3, 4, 4, 2, 1, true, Init::Normal(0.3), &mut r);
    let x = random_tensor(2, 3, 8, 8, &mut r);
    let y = conv.forward(&x);
    let g = random_tensor(y.n, y.c, y.h, y.w, &mut r);
    let dx = conv.backward(&g);
    let bias = conv.bias.as_ref().unwrap().value.clone();
    let mut y_nobias = y.clone();
    for n in 0..y.n {
        for c in 0..y.c {
            y_nobias.data[(n * y.c + c) * y.h * y.w..][..y.h * y.w].iter_mut().for_each(|v| *v -= bias[c]);
        }
    }
    assert!((dot(&y_nobias, &g) - dot(&x, &dx)).abs() < 1e-3);

    // finite-difference check on a few weights
    let w0 = conv.weight.value.clone();
    for idx in [0, 7, 33, w0.len() - 1] {
        let eps = 1e-2;
        conv.weight.value[idx] = w0[idx] + eps;
        let plus = dot(&conv.forward(&x), &g);
        conv.weight.value[idx] = w0[idx] - eps;
        let minus = dot(&conv.forward(&x), &g);
        conv.weight.value[idx] = w0[idx];
        let numeric = (plus - minus) / (2.0 * eps as f64);
        assert!((numeric - conv.weight.grad[idx] as f64).abs() < 1e-2, "weight {idx}");
    }
    let bias_grad: f32 = (0..g.n).map(|n| g.data[(n * g.c) * g.h * g.w..][..g.h * g.w].iter().sum::<f32>()).sum();
    assert!((conv.bias.as_ref().unwrap().grad[0] - bias_grad).abs() < 1e-3);
}

#[test]
fn transposed_conv_is_the_adjoint_of_conv() {
    let mut r = rng();
    let mut conv = Conv2d::new(3, 5, 4, 2, 1, false, Init::Normal(0.3), &mut r);
    let mut tconv = ConvTranspose2d::new(5, 3, 4, 2, 1, false, Init::Normal(0.3), &mut r);
    // conv weight [cout=5, cin*k*k]; transposed conv weight [cin=5, cout*k*k] holds the same numbers
    tconv.weight.value.clone_from(&conv.weight.value);
    let x = random_tensor(2, 3, 8, 8, &mut r);
    let y = random_tensor(2, 5, 4, 4, &mut r);
    let cx = conv.forward(&x);
    let ty = tconv.forward(&y);
    assert_eq!(ty.shape(), [2, 3, 8, 8]);
    assert!((dot(&cx, &y) - dot(&x, &ty)).abs() < 1e-3);

    // and its backward is the conv forward
    let back = tconv.backward(&x);
    assert_close(&back.data, &cx.data, 1e-4);
}

#[test]
fn transposed_conv_weight_gradient_matches_finite_differences() {
    let mut r = rng();
    let mut tconv = ConvTranspose2d::new(2, 3, 4, 2, 1, true, Init::Normal(0.3), &mut r);
    let x = random_tensor(1, 2, 3, 3, &mut r);
    let y = tconv.forward(&x);
    let g = random_tensor(y.n, y.c, y.h, y.w, &mut r);
    tconv.backward(&g);
    let w0 = tconv.weight.value.clone();
    for idx in [0, 5, 40, w0.len() - 1] {
        let eps = 1e-2;
        tconv.weight.value[idx] = w0[idx] + eps;
        let plus = dot(&tconv.forward(&x), &g);
        tconv.weight.value[idx] = w0[idx] - eps;
        let minus = dot(&tconv.forward(&x), &g);
        tconv.weight.value[idx] = w0[idx];
        let numeric = (plus - minus) / (2.0 * eps as f64);
        assert!((numeric - tconv.weight.grad[idx] as f64).abs() < 1e-2, "weight {idx}");
    }
}

fn numeric_input_grad(f: &mut dyn FnMut(&Tensor) -> f64, x: &Tensor, idx: usize) -> f64 {
    let eps = 1e-2;
    let mut xp = x.clone();
    xp.data[idx] += eps;
    let mut xm = x.clone();
    xm.data[idx] -= eps;
    (f(&xp) - f(&xm)) / (2.0 * eps as f64)
}

#[test]
fn instance_norm_gradients() {
    let mut r = rng();
    let mut norm = InstanceNorm2d::new(3, 0.5, &mut r);
    let x = random_tensor(2, 3, 4, 4, &mut r);
    let y = norm.forward(&x);
    // normalized per sample and channel
    let first: Vec<f32> = y.data[..16].iter().map(|v| (v - norm.beta.value[0]) / norm.gamma.value[0]).collect();
    let mean = first.iter().sum::<f32>() / 16.0;
    let var = first.iter().map(|v| (v - mean).powi(2)).sum::<f32>() / 16.0;
    assert!(mean.abs() < 1e-5 && (var - 1.0).abs() < 1e-3);
    let g = random_tensor(y.n, y.c, y.h, y.w, &mut r);
    let dx = norm.backward(&g);
    let mut probe = norm.clone();
    for idx in [0, 9, 50, 95] {
        let numeric = numeric_input_grad(&mut |t| dot(&probe.forward(t), &g), &x, idx);
        assert!((numeric - dx.data[idx] as f64).abs() < 2e-2, "input {idx}: {numeric} vs {}", dx.data[idx]);
    }
}

#[test]
fn linear_gradients() {
    let mut r = rng();
    let mut lin = Linear::new(12, 5, Init::He, &mut r);
    let x = random_tensor(3, 3, 2, 2, &mut r);
    let y = lin.forward(&x);
    assert_eq!(y.shape(), [3, 5, 1, 1]);
    let g = random_tensor(3, 5, 1, 1, &mut r);
    let dx = lin.backward(&g);
    let mut probe = lin.clone();
    for idx in [0, 11, 20, 35] {
        let numeric = numeric_input_grad(&mut |t| dot(&probe.forward(t), &g), &x, idx);
        assert!((numeric - dx.data[idx] as f64).abs() < 1e-2);
    }
    let w0 = lin.weight.value.clone();
    for idx in [0, 13, 59] {
        lin.weight.value[idx] = w0[idx] + 1e-2;
        let plus = dot(&lin.forward(&x), &g);
        lin.weight.value[idx] = w0[idx] - 1e-2;
        let minus = dot(&lin.forward(&x), &g);
        lin.weight.value[idx] = w0[idx];
        assert!(((plus - minus) / 2e-2 - lin.weight.grad[idx] as f64).abs() < 1e-2);
    }
}

#[test]
fn activations_and_concat() {
    let x = Tensor::from_vec(1, 2, 1, 2, vec![-2.0, -0.5, 0.5, 2.0]);
    let mut lr = LeakyRelu::new(0.2);
    assert_eq!(lr.forward(&x).data, vec![-0.4, -0.1, 0.5, 2.0]);
    assert_eq!(lr.backward(&Tensor::from_vec(1, 2, 1, 2, vec![1.0; 4])).data, vec![0.2, 0.2, 1.0, 1.0]);
    let mut relu = Relu::new();
    assert_eq!(relu.forward(&x).data, vec![0.0, 0.0, 0.5, 2.0]);
    let mut tanh = Tanh::default();
    let y = tanh.forward(&x);
    let d = tanh.backward(&Tensor::from_vec(1, 2, 1, 2, vec![1.0; 4]));
    assert!((d.data[3] - (1.0 - y.data[3] * y.data[3])).abs() < 1e-6);

    let a = Tensor::from_vec(2, 1, 1, 2, vec![1.0, 2.0, 3.0, 4.0]);
    let b = Tensor::from_vec(2, 2, 1, 2, vec![5.0, 6.0, 7.0, 8.0, 9.0, 10.0, 11.0, 12.0]);
    let c = concat_channels(&a, &b);
    assert_eq!(c.data, vec![1.0, 2.0, 5.0, 6.0, 7.0, 8.0, 3.0, 4.0, 9.0, 10.0, 11.0, 12.0]);
    assert_eq!(split_channels(&c, 1), (a, b));
}

#[test]
fn dropout_is_identity_at_inference() {
    let mut r = rng();
    let x = random_tensor(1, 4, 8, 8, &mut r);
    let mut d = Dropout::new(0.5);
    assert_eq!(d.forward(&x, false, &mut r), x);
    let y = d.forward(&x, true, &mut r);
    let zeros = y.data.iter().filter(|&&v| v == 0.0).count();
    assert!(zeros > 64 && zeros < 192);
}

#[test]
fn losses_and_their_gradients() {
    let p = Tensor::from_vec(1, 1, 1, 4, vec![0.0, 1.0, -1.0, 2.0]);
    let t = Tensor::from_vec(1, 1, 1, 4, vec![0.0, 0.0, 0.0, 0.0]);
    let (l1, g1) = l1_loss(&p, &t);
    assert_eq!(l1, 1.0);
    assert_eq!(g1.data, vec![0.0, 0.25, -0.25, 0.25]);
    let (l2, g2) = mse_loss(&p, &t);
    assert_eq!(l2, 1.5);
    assert_eq!(g2.data, vec![0.0, 0.5, -0.5, 1.0]);
    let (b, gb) = bce_with_logits(&Tensor::from_vec(1, 1, 1, 1, vec![0.0]), 1.0);
    assert!((b - std::f32::consts::LN_2).abs() < 1e-6);
    assert!((gb.data[0] + 0.5).abs() < 1e-6);
    // large logits stay finite
    let (big, _) = bce_with_logits(&Tensor::from_vec(1, 1, 1, 2, vec![80.0, -80.0]), 0.0);
    assert!(big.is_finite() && (big - 40.0).abs() < 1e-3);
}

#[test]
fn adam_minimizes_a_quadratic() {
    let mut p = Param::new(vec![3.0, -2.0]);
    let mut opt = Adam::new(0.1, 0.9, 0.999);
    for _ in 0..300 {
        p.grad = p.value.iter().map(|v| 2.0 * v).collect();
        opt.step(vec![&mut p]);
    }
    assert!(p.value.iter().all(|v| v.abs() < 0.05), "{:?}", p.value);
    assert_eq!(opt.steps(), 300);
}

#[test]
fn init_statistics() {
    let mut r = rng();
    let p = Init::Normal(0.02).param(50_000, 1, &mut r);
    let mean = p.value.iter().sum::<f32>() / p.len() as f32;
    let std = (p.value.iter().map(|v| (v - mean).powi(2)).sum::<f32>() / p.len() as f32).sqrt();
    assert!(mean.abs() < 1e-3 && (std - 0.02).abs() < 1e-3);
    let he = Init::He.param(50_000, 200, &mut r);
    let std = (he.value.iter().map(|v| v * v).sum::<f32>() / he.len() as f32).sqrt();
    assert!((std - 0.1).abs() < 3e-3);
}

#[test]
fn flat_params_round_trip() {
    let mut r = rng();
    let a = Conv2d::new(2, 3, 3, 1, 1, true, Init::He, &mut r);
    let mut b = Conv2d::new(2, 3, 3, 1, 1, true, Init::He, &mut r);
    assert_ne!(a.flat_params(), b.flat_params());
    assert!(b.load_flat_params(&a.flat_params()));
    assert_eq!(a.flat_params(), b.flat_params());
    assert!(!b.load_flat_params(&[0.0; 3]));
}
