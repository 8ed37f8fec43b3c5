use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::nn::{
    concat_channels, split_channels, Conv2d, ConvTranspose2d, Dropout, Init, InstanceNorm2d, LeakyRelu, Module, Param,
    Relu, Tanh, Tensor,
};

/// Landmark map in.
pub const GENERATOR_IN_CHANNELS: usize = 1;
/// RGB plus depth out.
pub const GENERATOR_OUT_CHANNELS: usize = 4;
/// RGBD candidate plus the conditioning landmark map.
pub const DISCRIMINATOR_IN_CHANNELS: usize = GENERATOR_OUT_CHANNELS + GENERATOR_IN_CHANNELS;

/// Everything needed to rebuild the generator graph.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchDescriptor {
    pub kind: String,
    pub resolution: u32,
    pub in_channels: usize,
    pub out_channels: usize,
    pub ngf: usize,
    /// Encoder depth; the bottleneck is 1x1.
    pub levels: usize,
    pub norm: String,
    pub objective: String,
}

impl ArchDescriptor {
    pub fn unet(resolution: u32, ngf: usize) -> Self {
        Self {
            kind: "unet-generator".into(),
            resolution,
            in_channels: GENERATOR_IN_CHANNELS,
            out_channels: GENERATOR_OUT_CHANNELS,
            ngf,
            levels: resolution.trailing_zeros() as usize,
            norm: "instance-affine".into(),
            objective: "bce-adversarial+l1".into(),
        }
    }

    /// Channels of encoder level `i`.
    fn width(&self, i: usize) -> usize {
        self.ngf * (1 << i.min(3))
    }
}

struct Down {
    act: Option<LeakyRelu>,
    conv: Conv2d,
    norm: Option<InstanceNorm2d>,
}

impl Down {
    fn forward(&mut self, x: &Tensor) -> Tensor {
        let mut h = match &mut self.act {
            Some(a) => self.conv.forward(&a.forward(x)),
            None => self.conv.forward(x),
        };
        if let Some(n) = &mut self.norm {
            h = n.forward(&h);
        }
        h
    }

    fn backward(&mut self, g: &Tensor) -> Tensor {
        let g = match &mut self.norm {
            Some(n) => n.backward(g),
            None => g.clone(),
        };
        let g = self.conv.backward(&g);
        match &mut self.act {
            Some(a) => a.backward(&g),
            None => g,
        }
    }
}

struct Up {
    act: Relu,
    conv: ConvTranspose2d,
    norm: Option<InstanceNorm2d>,
    dropout: Option<Dropout>,
    tanh: Option<Tanh>,
}

impl Up {
    fn forward(&mut self, x: &Tensor, train: bool, rng: &mut impl Rng) -> Tensor {
        let mut h = self.conv.forward(&self.act.forward(x));
        if let Some(n) = &mut self.norm {
            h = n.forward(&h);
        }
        if let Some(d) = &mut self.dropout {
            h = d.forward(&h, train, rng);
        }
        if let Some(t) = &mut self.tanh {
            h = t.forward(&h);
        }
        h
    }

    fn backward(&mut self, g: &Tensor) -> Tensor {
        let mut g = g.clone();
        if let Some(t) = &mut self.tanh {
            g = t.backward(&g);
        }
        if let Some(d) = &mut self.dropout {
            g = d.backward(&g);
        }
        if let Some(n) = &mut self.norm {
            g = n.backward(&g);
        }
        self.act.backward(&self.conv.backward(&g))
    }
}

/// Encoder-decoder with skip connections: 1-channel map to 4-channel RGBD
/// in `[-1, 1]`.
pub struct Generator {
    pub descriptor: ArchDescriptor,
    down: Vec<Down>,
    up: Vec<Up>,
    encoded: Vec<Tensor>,
}

impl Generator {
    pub fn new(descriptor: ArchDescriptor, init_std: f32, rng: &mut impl Rng) -> Self {
        assert!(descriptor.resolution.is_power_of_two() && descriptor.levels >= 3, "resolution must be 2^k >= 8");
        assert_eq!(descriptor.in_channels, GENERATOR_IN_CHANNELS);
        assert_eq!(descriptor.out_channels, GENERATOR_OUT_CHANNELS, "generator emits RGB plus depth");
        let levels = descriptor.levels;
        let init = Init::Normal(init_std);
        let mut down = Vec::with_capacity(levels);
        for i in 0..levels {
            let cin = if i == 0 { descriptor.in_channels } else { descriptor.width(i - 1) };
            let inner = i > 0 && i + 1 < levels;
            down.push(Down {
                act: (i > 0).then(|| LeakyRelu::new(0.2)),
                conv: Conv2d::new(cin, descriptor.width(i), 4, 2, 1, !inner, init, rng),
                norm: inner.then(|| InstanceNorm2d::new(descriptor.width(i), init_std, rng)),
            });
        }
        let mut up = Vec::with_capacity(levels);
        for i in 0..levels {
            let cin = if i + 1 == levels { descriptor.width(i) } else { 2 * descriptor.width(i) };
            let cout = if i == 0 { descriptor.out_channels } else { descriptor.width(i - 1) };
            up.push(Up {
                act: Relu::new(),
                conv: ConvTranspose2d::new(cin, cout, 4, 2, 1, i == 0, init, rng),
                norm: (i > 0).then(|| InstanceNorm2d::new(cout, init_std, rng)),
                dropout: (i >= 4 && i + 2 <= levels).then(|| Dropout::new(0.5)),
                tanh: (i == 0).then(Tanh::default),
            });
        }
        Self { descriptor, down, up, encoded: Vec::new() }
    }

    pub fn in_channels(&self) -> usize {
        self.down[0].conv.cin
    }

    pub fn out_channels(&self) -> usize {
        self.up[0].conv.cout
    }

    /// Convolution kernels only, in layer order.
    pub fn kernels(&self) -> Vec<&Param> {
        self.down.iter().map(|d| &d.conv.weight).chain(self.up.iter().map(|u| &u.conv.weight)).collect()
    }

    pub fn forward(&mut self, x: &Tensor, train: bool, rng: &mut impl Rng) -> Tensor {
        assert_eq!(x.c, self.in_channels());
        let levels = self.down.len();
        self.encoded.clear();
        let mut h = self.down[0].forward(x);
        for i in 1..levels {
            self.encoded.push(h.clone());
            h = self.down[i].forward(&h);
        }
        self.encoded.push(h);
        let mut d = self.up[levels - 1].forward(&self.encoded[levels - 1], train, rng);
        for i in (0..levels - 1).rev() {
            let input = concat_channels(&self.encoded[i], &d);
            d = self.up[i].forward(&input, train, rng);
        }
        d
    }

    /// Accumulates parameter gradients; returns the input gradient.
    pub fn backward(&mut self, grad: &Tensor) -> Tensor {
        let levels = self.down.len();
        let mut skip: Vec<Option<Tensor>> = vec![None; levels];
        let mut g = grad.clone();
        for i in 0..levels {
            let gin = self.up[i].backward(&g);
            if i + 1 == levels {
                skip[i] = Some(gin);
            } else {
                let (ge, gd) = split_channels(&gin, self.encoded[i].c);
                skip[i] = Some(ge);
                g = gd;
            }
        }
        let mut carry: Option<Tensor> = None;
        for i in (0..levels).rev() {
            let mut total = skip[i].take().expect("every level has a skip gradient");
            if let Some(c) = carry {
                total.data.iter_mut().zip(&c.data).for_each(|(a, b)| *a += b);
            }
            carry = Some(self.down[i].backward(&total));
        }
        carry.expect("at least one level")
    }
}

impl Module for Generator {
    fn params(&self) -> Vec<&Param> {
        let mut out = Vec::new();
        for d in &self.down {
            out.extend(d.conv.params());
            if let Some(n) = &d.norm {
                out.extend(n.params());
            }
        }
        for u in &self.up {
            out.extend(u.conv.params());
            if let Some(n) = &u.norm {
                out.extend(n.params());
            }
        }
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out = Vec::new();
        for d in &mut self.down {
            out.extend(d.conv.params_mut());
            if let Some(n) = &mut d.norm {
                out.extend(n.params_mut());
            }
        }
        for u in &mut self.up {
            out.extend(u.conv.params_mut());
            if let Some(n) = &mut u.norm {
                out.extend(n.params_mut());
            }
        }
        out
    }
}

/// 70x70-receptive-field patch critic over (landmark map, RGBD) pairs;
/// emits one logit per patch.
pub struct Discriminator {
    convs: Vec<Conv2d>,
    norms: Vec<Option<InstanceNorm2d>>,
    acts: Vec<LeakyRelu>,
}

impl Discriminator {
    pub fn new(ndf: usize, init_std: f32, rng: &mut impl Rng) -> Self {
        let init = Init::Normal(init_std);
        let widths = [DISCRIMINATOR_IN_CHANNELS, ndf, 2 * ndf, 4 * ndf, 8 * ndf, 1];
        let mut convs = Vec::new();
        let mut norms = Vec::new();
        for l in 0..5 {
            let stride = if l < 3 { 2 } else { 1 };
            let normed = l > 0 && l < 4;
            convs.push(Conv2d::new(widths[l], widths[l + 1], 4, stride, 1, !normed, init, rng));
            norms.push(normed.then(|| InstanceNorm2d::new(widths[l + 1], init_std, rng)));
        }
        let d = Self { convs, norms, acts: (0..4).map(|_| LeakyRelu::new(0.2)).collect() };
        assert_eq!(d.in_channels(), DISCRIMINATOR_IN_CHANNELS, "critic sees RGBD plus the landmark map");
        d
    }

    pub fn in_channels(&self) -> usize {
        self.convs[0].cin
    }

    pub fn kernels(&self) -> Vec<&Param> {
        self.convs.iter().map(|c| &c.weight).collect()
    }

    pub fn forward(&mut self, x: &Tensor) -> Tensor {
        let mut h = x.clone();
        for l in 0..5 {
            h = self.convs[l].forward(&h);
            if let Some(n) = &mut self.norms[l] {
                h = n.forward(&h);
            }
            if l < 4 {
                h = self.acts[l].forward(&h);
            }
        }
        h
    }

    pub fn backward(&mut self, grad: &Tensor) -> Tensor {
        let mut g = grad.clone();
        for l in (0..5).rev() {
            if l < 4 {
                g = self.acts[l].backward(&g);
            }
            if let Some(n) = &mut self.norms[l] {
                g = n.backward(&g);
            }
            g = self.convs[l].backward(&g);
        }
        g
    }
}

impl Module for Discriminator {
    fn params(&self) -> Vec<&Param> {
        let mut out = Vec::new();
        for (c, n) in self.convs.iter().zip(&self.norms) {
            out.extend(c.params());
            if let Some(n) = n {
                out.extend(n.params());
            }
        }
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out = Vec::new();
        for (c, n) in self.convs.iter_mut().zip(self.norms.iter_mut()) {
            out.extend(c.params_mut());
            if let Some(n) = n {
                out.extend(n.params_mut());
            }
        }
        out
    }
}
