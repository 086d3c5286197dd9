//! Layers with hand-written backward passes.
//!
//! Every layer exposes an inference forward (`&self`), a training forward
//! that returns a [`Cache`], and a backward that consumes the cache,
//! accumulates parameter gradients and returns the input gradient.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::tensor::{gemm, Param, Tensor};
use crate::error::{Error, Result};

const BN_EPS: f32 = 1e-5;
const BN_MOMENTUM: f32 = 0.1;

fn uniform_tensor(shape: &[usize], bound: f32, rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
    Tensor::from_vec(shape, data).expect("shape and data length agree")
}

/// Fully connected layer, `y = x·Wᵀ + b` with `W` stored `[out, in]`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: Param,
    pub bias: Param,
}

impl Linear {
    pub fn new(in_dim: usize, out_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / (in_dim as f32).sqrt();
        Self {
            weight: Param::new(uniform_tensor(&[out_dim, in_dim], bound, rng)),
            bias: Param::new(uniform_tensor(&[out_dim], bound, rng)),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.value.shape()[1]
    }

    pub fn out_dim(&self) -> usize {
        self.weight.value.shape()[0]
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        x.expect_rank(2, "linear")?;
        let (n, d) = (x.shape()[0], x.shape()[1]);
        if d != self.in_dim() {
            return Err(Error::shape(format!(
                "linear expects {} input features, got {d}",
                self.in_dim()
            )));
        }
        let o = self.out_dim();
        let mut y = vec![0.0; n * o];
        for row in y.chunks_mut(o) {
            row.copy_from_slice(self.bias.value.data());
        }
        gemm(n, d, o, x.data(), false, self.weight.value.data(), true, &mut y, 1.0);
        Tensor::from_vec(&[n, o], y)
    }

    fn backward(&mut self, input: &Tensor, grad: &Tensor) -> Result<Tensor> {
        let (n, d, o) = (input.shape()[0], self.in_dim(), self.out_dim());
        if grad.shape() != [n, o] {
            return Err(Error::shape(format!(
                "linear backward expects gradient [{n}, {o}], got {:?}",
                grad.shape()
            )));
        }
        gemm(
            o,
            n,
            d,
            grad.data(),
            true,
            input.data(),
            false,
            self.weight.grad.data_mut(),
            1.0,
        );
        let db = self.bias.grad.data_mut();
        for row in grad.data().chunks(o) {
            db.iter_mut().zip(row).for_each(|(b, g)| *b += g);
        }
        let mut dx = vec![0.0; n * d];
        gemm(
            n,
            o,
            d,
            grad.data(),
            false,
            self.weight.value.data(),
            false,
            &mut dx,
            0.0,
        );
        Tensor::from_vec(&[n, d], dx)
    }
}

/// 2-D convolution over `[N, C, H, W]` via im2col. Square kernels only.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: Param,
    pub bias: Option<Param>,
    in_channels: usize,
    out_channels: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
}

impl Conv2d {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        bias: bool,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let fan_in = in_channels * kernel * kernel;
        let bound = 1.0 / (fan_in as f32).sqrt();
        let weight = Param::new(uniform_tensor(&[out_channels, fan_in], bound, rng));
        let bias = bias.then(|| Param::new(uniform_tensor(&[out_channels], bound, rng)));
        Self {
            weight,
            bias,
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
        }
    }

    fn out_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let (hp, wp) = (h + 2 * self.padding, w + 2 * self.padding);
        if hp < self.kernel || wp < self.kernel {
            return Err(Error::shape(format!(
                "conv kernel {} larger than padded input {hp}x{wp}",
                self.kernel
            )));
        }
        Ok((
            (hp - self.kernel) / self.stride + 1,
            (wp - self.kernel) / self.stride + 1,
        ))
    }

    fn check_input(&self, x: &Tensor) -> Result<(usize, usize, usize, usize, usize)> {
        x.expect_rank(4, "conv2d")?;
        let s = x.shape();
        if s[1] != self.in_channels {
            return Err(Error::shape(format!(
                "conv2d expects {} channels, got {}",
                self.in_channels, s[1]
            )));
        }
        let (ho, wo) = self.out_hw(s[2], s[3])?;
        Ok((s[0], s[2], s[3], ho, wo))
    }

    fn im2col(&self, x: &[f32], h: usize, w: usize, ho: usize, wo: usize, cols: &mut [f32]) {
        let k = self.kernel;
        let plane = ho * wo;
        for ci in 0..self.in_channels {
            for ky in 0..k {
                for kx in 0..k {
                    let row = ((ci * k + ky) * k + kx) * plane;
                    for oy in 0..ho {
                        let iy = (oy * self.stride + ky) as isize - self.padding as isize;
                        for ox in 0..wo {
                            let ix = (ox * self.stride + kx) as isize - self.padding as isize;
                            cols[row + oy * wo + ox] = if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                                x[(ci * h + iy as usize) * w + ix as usize]
                            } else {
                                0.0
                            };
                        }
                    }
                }
            }
        }
    }

    fn col2im(&self, cols: &[f32], h: usize, w: usize, ho: usize, wo: usize, dx: &mut [f32]) {
        let k = self.kernel;
        let plane = ho * wo;
        for ci in 0..self.in_channels {
            for ky in 0..k {
                for kx in 0..k {
                    let row = ((ci * k + ky) * k + kx) * plane;
                    for oy in 0..ho {
                        let iy = (oy * self.stride + ky) as isize - self.padding as isize;
                        if iy < 0 || iy as usize >= h {
                            continue;
                        }
                        for ox in 0..wo {
                            let ix = (ox * self.stride + kx) as isize - self.padding as isize;
                            if ix >= 0 && (ix as usize) < w {
                                dx[(ci * h + iy as usize) * w + ix as usize] += cols[row + oy * wo + ox];
                            }
                        }
                    }
                }
            }
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (n, h, w, ho, wo) = self.check_input(x)?;
        let ckk = self.in_channels * self.kernel * self.kernel;
        let plane = ho * wo;
        let o = self.out_channels;
        let in_len = self.in_channels * h * w;
        let mut cols = vec![0.0; ckk * plane];
        let mut y = vec![0.0; n * o * plane];
        for (xi, yi) in x.data().chunks(in_len).zip(y.chunks_mut(o * plane)) {
            self.im2col(xi, h, w, ho, wo, &mut cols);
            if let Some(b) = &self.bias {
                for (ch, bv) in yi.chunks_mut(plane).zip(b.value.data()) {
                    ch.iter_mut().for_each(|v| *v = *bv);
                }
            }
            gemm(o, ckk, plane, self.weight.value.data(), false, &cols, false, yi, 1.0);
        }
        Tensor::from_vec(&[n, o, ho, wo], y)
    }

    fn backward(&mut self, input: &Tensor, grad: &Tensor) -> Result<Tensor> {
        let (n, h, w, ho, wo) = self.check_input(input)?;
        let o = self.out_channels;
        if grad.shape() != [n, o, ho, wo] {
            return Err(Error::shape(format!(
                "conv2d backward expects gradient {:?}, got {:?}",
                [n, o, ho, wo],
                grad.shape()
            )));
        }
        let ckk = self.in_channels * self.kernel * self.kernel;
        let plane = ho * wo;
        let in_len = self.in_channels * h * w;
        let mut cols = vec![0.0; ckk * plane];
        let mut dcols = vec![0.0; ckk * plane];
        let mut dx = vec![0.0; input.len()];
        for ((xi, gi), dxi) in input
            .data()
            .chunks(in_len)
            .zip(grad.data().chunks(o * plane))
            .zip(dx.chunks_mut(in_len))
        {
            self.im2col(xi, h, w, ho, wo, &mut cols);
            gemm(o, plane, ckk, gi, false, &cols, true, self.weight.grad.data_mut(), 1.0);
            if let Some(b) = &mut self.bias {
                for (bg, ch) in b.grad.data_mut().iter_mut().zip(gi.chunks(plane)) {
                    *bg += ch.iter().sum::<f32>();
                }
            }
            gemm(
                ckk,
                o,
                plane,
                self.weight.value.data(),
                true,
                gi,
                false,
                &mut dcols,
                0.0,
            );
            self.col2im(&dcols, h, w, ho, wo, dxi);
        }
        Tensor::from_vec(input.shape(), dx)
    }
}

/// Batch normalisation over the channel axis of `[N, C, H, W]` or `[N, C]`.
#[derive(Debug, Clone)]
pub struct BatchNorm2d {
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Tensor,
    pub running_var: Tensor,
}

impl BatchNorm2d {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Param::new(Tensor::filled(&[channels], 1.0)),
            beta: Param::new(Tensor::zeros(&[channels])),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::filled(&[channels], 1.0),
        }
    }

    fn dims(&self, x: &Tensor) -> Result<(usize, usize, usize)> {
        let s = x.shape();
        if s.len() < 2 || s[1] != self.gamma.value.len() {
            return Err(Error::shape(format!(
                "batch norm over {} channels got shape {s:?}",
                self.gamma.value.len()
            )));
        }
        Ok((s[0], s[1], s.iter().skip(2).product()))
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (n, c, plane) = self.dims(x)?;
        let mut y = x.clone();
        let data = y.data_mut();
        for ch in 0..c {
            let scale = self.gamma.value.data()[ch] / (self.running_var.data()[ch] + BN_EPS).sqrt();
            let shift = self.beta.value.data()[ch] - self.running_mean.data()[ch] * scale;
            for i in 0..n {
                let base = (i * c + ch) * plane;
                data[base..base + plane]
                    .iter_mut()
                    .for_each(|v| *v = *v * scale + shift);
            }
        }
        Ok(y)
    }

    fn forward_train(&mut self, x: &Tensor) -> Result<(Tensor, Cache)> {
        let (n, c, plane) = self.dims(x)?;
        let m = (n * plane) as f64;
        if n * plane < 2 {
            return Err(Error::shape(
                "batch norm needs more than one value per channel in training",
            ));
        }
        let mut xhat = x.clone();
        let mut inv_std = vec![0.0f32; c];
        let mut y = x.clone();
        for ch in 0..c {
            let mut sum = 0.0f64;
            let mut sq = 0.0f64;
            for i in 0..n {
                let base = (i * c + ch) * plane;
                for v in &x.data()[base..base + plane] {
                    sum += *v as f64;
                    sq += (*v as f64) * (*v as f64);
                }
            }
            let mean = sum / m;
            let var = (sq / m - mean * mean).max(0.0);
            let istd = 1.0 / (var + BN_EPS as f64).sqrt();
            inv_std[ch] = istd as f32;
            let (g, b) = (self.gamma.value.data()[ch], self.beta.value.data()[ch]);
            for i in 0..n {
                let base = (i * c + ch) * plane;
                for j in base..base + plane {
                    let xh = ((x.data()[j] as f64 - mean) * istd) as f32;
                    xhat.data_mut()[j] = xh;
                    y.data_mut()[j] = xh * g + b;
                }
            }
            let unbiased = var * m / (m - 1.0);
            let rm = &mut self.running_mean.data_mut()[ch];
            *rm = (1.0 - BN_MOMENTUM) * *rm + BN_MOMENTUM * mean as f32;
            let rv = &mut self.running_var.data_mut()[ch];
            *rv = (1.0 - BN_MOMENTUM) * *rv + BN_MOMENTUM * unbiased as f32;
        }
        Ok((y, Cache::BatchNorm { xhat, inv_std }))
    }

    fn backward(&mut self, xhat: &Tensor, inv_std: &[f32], grad: &Tensor) -> Result<Tensor> {
        let (n, c, plane) = self.dims(grad)?;
        let m = (n * plane) as f32;
        let mut dx = Tensor::zeros(grad.shape());
        for ch in 0..c {
            let mut sum_g = 0.0f32;
            let mut sum_gx = 0.0f32;
            for i in 0..n {
                let base = (i * c + ch) * plane;
                for j in base..base + plane {
                    sum_g += grad.data()[j];
                    sum_gx += grad.data()[j] * xhat.data()[j];
                }
            }
            self.beta.grad.data_mut()[ch] += sum_g;
            self.gamma.grad.data_mut()[ch] += sum_gx;
            let g = self.gamma.value.data()[ch];
            let k = g * inv_std[ch] / m;
            for i in 0..n {
                let base = (i * c + ch) * plane;
                for j in base..base + plane {
                    dx.data_mut()[j] = k * (m * grad.data()[j] - sum_g - xhat.data()[j] * sum_gx);
                }
            }
        }
        Ok(dx)
    }
}

/// Pre-activation residual block: BN-ReLU-conv3x3-BN-ReLU-conv3x3 plus a
/// 1x1 projection shortcut when the shape changes.
#[derive(Debug, Clone)]
pub struct PreActBlock {
    bn1: BatchNorm2d,
    conv1: Conv2d,
    bn2: BatchNorm2d,
    conv2: Conv2d,
    shortcut: Option<Conv2d>,
}

impl PreActBlock {
    pub fn new(in_planes: usize, planes: usize, stride: usize, rng: &mut ChaCha8Rng) -> Self {
        let shortcut =
            (stride != 1 || in_planes != planes).then(|| Conv2d::new(in_planes, planes, 1, stride, 0, false, rng));
        Self {
            bn1: BatchNorm2d::new(in_planes),
            conv1: Conv2d::new(in_planes, planes, 3, stride, 1, false, rng),
            bn2: BatchNorm2d::new(planes),
            conv2: Conv2d::new(planes, planes, 3, 1, 1, false, rng),
            shortcut,
        }
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let o1 = relu(&self.bn1.forward(x)?);
        let sc = match &self.shortcut {
            Some(conv) => conv.forward(&o1)?,
            None => x.clone(),
        };
        let o2 = relu(&self.bn2.forward(&self.conv1.forward(&o1)?)?);
        let mut out = self.conv2.forward(&o2)?;
        out.add_assign(&sc)?;
        Ok(out)
    }

    fn forward_train(&mut self, x: &Tensor) -> Result<(Tensor, Cache)> {
        let (a, bn1) = self.bn1.forward_train(x)?;
        let o1 = relu(&a);
        let sc = match &self.shortcut {
            Some(conv) => conv.forward(&o1)?,
            None => x.clone(),
        };
        let h = self.conv1.forward(&o1)?;
        let (b, bn2) = self.bn2.forward_train(&h)?;
        let o2 = relu(&b);
        let mut out = self.conv2.forward(&o2)?;
        out.add_assign(&sc)?;
        Ok((out, Cache::PreAct(Box::new(PreActCache { bn1, o1, bn2, o2 }))))
    }

    fn backward(&mut self, cache: PreActCache, grad: &Tensor) -> Result<Tensor> {
        let PreActCache { bn1, o1, bn2, o2 } = cache;
        let g_o2 = self.conv2.backward(&o2, grad)?;
        let g_b = relu_backward(&o2, &g_o2);
        let g_h = match bn2 {
            Cache::BatchNorm { xhat, inv_std } => self.bn2.backward(&xhat, &inv_std, &g_b)?,
            _ => unreachable!("bn2 cache variant"),
        };
        let mut g_o1 = self.conv1.backward(&o1, &g_h)?;
        if let Some(conv) = &mut self.shortcut {
            g_o1.add_assign(&conv.backward(&o1, grad)?)?;
        }
        let g_a = relu_backward(&o1, &g_o1);
        let mut g_x = match bn1 {
            Cache::BatchNorm { xhat, inv_std } => self.bn1.backward(&xhat, &inv_std, &g_a)?,
            _ => unreachable!("bn1 cache variant"),
        };
        if self.shortcut.is_none() {
            g_x.add_assign(grad)?;
        }
        Ok(g_x)
    }

    fn params(&self) -> Vec<&Param> {
        let mut v = vec![&self.bn1.gamma, &self.bn1.beta, &self.conv1.weight];
        v.extend([&self.bn2.gamma, &self.bn2.beta, &self.conv2.weight]);
        if let Some(sc) = &self.shortcut {
            v.push(&sc.weight);
        }
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = vec![
            &mut self.bn1.gamma,
            &mut self.bn1.beta,
            &mut self.conv1.weight,
            &mut self.bn2.gamma,
            &mut self.bn2.beta,
            &mut self.conv2.weight,
        ];
        if let Some(sc) = &mut self.shortcut {
            v.push(&mut sc.weight);
        }
        v
    }
}

#[derive(Debug)]
pub struct PreActCache {
    bn1: Cache,
    o1: Tensor,
    bn2: Cache,
    o2: Tensor,
}

fn relu(x: &Tensor) -> Tensor {
    let mut y = x.clone();
    y.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
    y
}

fn relu_backward(out: &Tensor, grad: &Tensor) -> Tensor {
    let mut g = grad.clone();
    g.data_mut().iter_mut().zip(out.data()).for_each(|(gv, o)| {
        if *o <= 0.0 {
            *gv = 0.0
        }
    });
    g
}

/// Saved activations for one module's backward pass.
#[derive(Debug)]
pub enum Cache {
    Linear(Tensor),
    Relu(Tensor),
    Conv2d(Tensor),
    BatchNorm { xhat: Tensor, inv_std: Vec<f32> },
    MaxPool { argmax: Vec<usize>, in_shape: Vec<usize> },
    GlobalAvgPool(Vec<usize>),
    Flatten(Vec<usize>),
    PreAct(Box<PreActCache>),
    Sequential(Vec<Cache>),
}

/// The closed set of layers used by the reference backbones.
#[derive(Debug, Clone)]
pub enum Module {
    Linear(Linear),
    Relu,
    Conv2d(Conv2d),
    BatchNorm2d(BatchNorm2d),
    /// 2x2 max pooling with stride 2.
    MaxPool2,
    GlobalAvgPool,
    Flatten,
    PreActBlock(Box<PreActBlock>),
    Sequential(Vec<Module>),
}

impl Module {
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        match self {
            Module::Linear(l) => l.forward(x),
            Module::Relu => Ok(relu(x)),
            Module::Conv2d(c) => c.forward(x),
            Module::BatchNorm2d(b) => b.forward(x),
            Module::MaxPool2 => Ok(max_pool2(x)?.0),
            Module::GlobalAvgPool => global_avg_pool(x),
            Module::Flatten => {
                let (n, w) = (x.rows(), x.row_len());
                x.clone().reshape(&[n, w])
            }
            Module::PreActBlock(b) => b.forward(x),
            Module::Sequential(mods) => {
                let mut h = x.clone();
                for m in mods {
                    h = m.forward(&h)?;
                }
                Ok(h)
            }
        }
    }

    pub fn forward_train(&mut self, x: &Tensor) -> Result<(Tensor, Cache)> {
        match self {
            Module::Linear(l) => Ok((l.forward(x)?, Cache::Linear(x.clone()))),
            Module::Relu => {
                let y = relu(x);
                Ok((y.clone(), Cache::Relu(y)))
            }
            Module::Conv2d(c) => Ok((c.forward(x)?, Cache::Conv2d(x.clone()))),
            Module::BatchNorm2d(b) => b.forward_train(x),
            Module::MaxPool2 => {
                let (y, argmax) = max_pool2(x)?;
                Ok((
                    y,
                    Cache::MaxPool {
                        argmax,
                        in_shape: x.shape().to_vec(),
                    },
                ))
            }
            Module::GlobalAvgPool => Ok((global_avg_pool(x)?, Cache::GlobalAvgPool(x.shape().to_vec()))),
            Module::Flatten => {
                let (n, w) = (x.rows(), x.row_len());
                Ok((x.clone().reshape(&[n, w])?, Cache::Flatten(x.shape().to_vec())))
            }
            Module::PreActBlock(b) => b.forward_train(x),
            Module::Sequential(mods) => {
                let mut caches = Vec::with_capacity(mods.len());
                let mut h = x.clone();
                for m in mods.iter_mut() {
                    let (y, c) = m.forward_train(&h)?;
                    caches.push(c);
                    h = y;
                }
                Ok((h, Cache::Sequential(caches)))
            }
        }
    }

    pub fn backward(&mut self, cache: Cache, grad: &Tensor) -> Result<Tensor> {
        match (self, cache) {
            (Module::Linear(l), Cache::Linear(x)) => l.backward(&x, grad),
            (Module::Relu, Cache::Relu(y)) => Ok(relu_backward(&y, grad)),
            (Module::Conv2d(c), Cache::Conv2d(x)) => c.backward(&x, grad),
            (Module::BatchNorm2d(b), Cache::BatchNorm { xhat, inv_std }) => b.backward(&xhat, &inv_std, grad),
            (Module::MaxPool2, Cache::MaxPool { argmax, in_shape }) => {
                let mut dx = Tensor::zeros(&in_shape);
                for (src, g) in argmax.iter().zip(grad.data()) {
                    dx.data_mut()[*src] += g;
                }
                Ok(dx)
            }
            (Module::GlobalAvgPool, Cache::GlobalAvgPool(shape)) => {
                let plane: usize = shape[2..].iter().product();
                let mut dx = Tensor::zeros(&shape);
                for (chunk, g) in dx.data_mut().chunks_mut(plane).zip(grad.data()) {
                    chunk.iter_mut().for_each(|v| *v = g / plane as f32);
                }
                Ok(dx)
            }
            (Module::Flatten, Cache::Flatten(shape)) => grad.clone().reshape(&shape),
            (Module::PreActBlock(b), Cache::PreAct(c)) => b.backward(*c, grad),
            (Module::Sequential(mods), Cache::Sequential(caches)) => {
                let mut g = grad.clone();
                for (m, c) in mods.iter_mut().zip(caches).rev() {
                    g = m.backward(c, &g)?;
                }
                Ok(g)
            }
            _ => Err(Error::invalid("cache does not belong to this module")),
        }
    }

    pub fn params(&self) -> Vec<&Param> {
        match self {
            Module::Linear(l) => vec![&l.weight, &l.bias],
            Module::Conv2d(c) => {
                let mut v = vec![&c.weight];
                v.extend(c.bias.as_ref());
                v
            }
            Module::BatchNorm2d(b) => vec![&b.gamma, &b.beta],
            Module::PreActBlock(b) => b.params(),
            Module::Sequential(mods) => mods.iter().flat_map(|m| m.params()).collect(),
            Module::Relu | Module::MaxPool2 | Module::GlobalAvgPool | Module::Flatten => vec![],
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        match self {
            Module::Linear(l) => vec![&mut l.weight, &mut l.bias],
            Module::Conv2d(c) => {
                let mut v = vec![&mut c.weight];
                v.extend(c.bias.as_mut());
                v
            }
            Module::BatchNorm2d(b) => vec![&mut b.gamma, &mut b.beta],
            Module::PreActBlock(b) => b.params_mut(),
            Module::Sequential(mods) => mods.iter_mut().flat_map(|m| m.params_mut()).collect(),
            Module::Relu | Module::MaxPool2 | Module::GlobalAvgPool | Module::Flatten => vec![],
        }
    }

    /// Non-trainable state (batch-norm running statistics).
    pub fn buffers(&self) -> Vec<&Tensor> {
        match self {
            Module::BatchNorm2d(b) => vec![&b.running_mean, &b.running_var],
            Module::PreActBlock(b) => vec![
                &b.bn1.running_mean,
                &b.bn1.running_var,
                &b.bn2.running_mean,
                &b.bn2.running_var,
            ],
            Module::Sequential(mods) => mods.iter().flat_map(|m| m.buffers()).collect(),
            _ => vec![],
        }
    }

    pub fn buffers_mut(&mut self) -> Vec<&mut Tensor> {
        match self {
            Module::BatchNorm2d(b) => vec![&mut b.running_mean, &mut b.running_var],
            Module::PreActBlock(b) => {
                let b = &mut **b;
                vec![
                    &mut b.bn1.running_mean,
                    &mut b.bn1.running_var,
                    &mut b.bn2.running_mean,
                    &mut b.bn2.running_var,
                ]
            }
            Module::Sequential(mods) => mods.iter_mut().flat_map(|m| m.buffers_mut()).collect(),
            _ => vec![],
        }
    }
}

fn max_pool2(x: &Tensor) -> Result<(Tensor, Vec<usize>)> {
    x.expect_rank(4, "max pool")?;
    let s = x.shape();
    let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
    let (ho, wo) = (h / 2, w / 2);
    if ho == 0 || wo == 0 {
        return Err(Error::shape(format!("max pool needs at least 2x2 input, got {h}x{w}")));
    }
    let mut y = Vec::with_capacity(n * c * ho * wo);
    let mut argmax = Vec::with_capacity(n * c * ho * wo);
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..ho {
            for ox in 0..wo {
                let mut best = base + (2 * oy) * w + 2 * ox;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = base + (2 * oy + dy) * w + 2 * ox + dx;
                    if x.data()[idx] > x.data()[best] {
                        best = idx;
                    }
                }
                y.push(x.data()[best]);
                argmax.push(best);
            }
        }
    }
    Ok((Tensor::from_vec(&[n, c, ho, wo], y)?, argmax))
}

fn global_avg_pool(x: &Tensor) -> Result<Tensor> {
    x.expect_rank(4, "global average pool")?;
    let s = x.shape();
    let plane = s[2] * s[3];
    let y = x
        .data()
        .chunks(plane)
        .map(|ch| ch.iter().sum::<f32>() / plane as f32)
        .collect();
    Tensor::from_vec(&[s[0], s[1]], y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream_rng, Stream};

    /// Finite-difference check of `sum(forward(x) * probe)` for a module.
    fn check_module(mut module: Module, input_shape: &[usize], tol: f32) {
        let mut rng = stream_rng(11, Stream::Init, 0, 0);
        let x = uniform_tensor(input_shape, 1.0, &mut rng);
        let (y, cache) = module.forward_train(&x).unwrap();
        let probe = uniform_tensor(y.shape(), 1.0, &mut rng);
        let dx = module.backward(cache, &probe).unwrap();

        let objective = |m: &mut Module, x: &Tensor| -> f64 {
            let mut m2 = m.clone();
            let (y, _) = m2.forward_train(x).unwrap();
            y.data()
                .iter()
                .zip(probe.data())
                .map(|(a, b)| *a as f64 * *b as f64)
                .sum()
        };

        let eps = 1e-2f32;
        for idx in [0, x.len() / 3, x.len() - 1] {
            let mut xp = x.clone();
            xp.data_mut()[idx] += eps;
            let mut xm = x.clone();
            xm.data_mut()[idx] -= eps;
            let fd = (objective(&mut module, &xp) - objective(&mut module, &xm)) / (2.0 * eps as f64);
            let an = dx.data()[idx] as f64;
            assert!(
                (fd - an).abs() <= tol as f64 * (1.0 + fd.abs()),
                "input grad {idx}: fd {fd} analytic {an}"
            );
        }

        let grads: Vec<Tensor> = module.params().iter().map(|p| p.grad.clone()).collect();
        for (pi, g) in grads.iter().enumerate() {
            let idx = g.len() / 2;
            let bump = |delta: f32| {
                let mut m = module.clone();
                m.params_mut()[pi].value.data_mut()[idx] += delta;
                objective(&mut m, &x)
            };
            let fd = (bump(eps) - bump(-eps)) / (2.0 * eps as f64);
            let an = g.data()[idx] as f64;
            assert!(
                (fd - an).abs() <= tol as f64 * (1.0 + fd.abs()),
                "param {pi} grad: fd {fd} analytic {an}"
            );
        }
    }

    #[test]
    fn linear_gradients() {
        let mut rng = stream_rng(1, Stream::Init, 0, 0);
        check_module(Module::Linear(Linear::new(4, 3, &mut rng)), &[5, 4], 2e-2);
    }

    #[test]
    fn conv_gradients() {
        let mut rng = stream_rng(2, Stream::Init, 0, 0);
        check_module(
            Module::Conv2d(Conv2d::new(2, 3, 3, 2, 1, true, &mut rng)),
            &[2, 2, 5, 5],
            2e-2,
        );
    }

    #[test]
    fn batch_norm_gradients() {
        check_module(Module::BatchNorm2d(BatchNorm2d::new(3)), &[4, 3, 2, 2], 3e-2);
    }

    #[test]
    fn preact_block_gradients() {
        let mut rng = stream_rng(3, Stream::Init, 0, 0);
        check_module(
            Module::PreActBlock(Box::new(PreActBlock::new(2, 4, 2, &mut rng))),
            &[3, 2, 4, 4],
            5e-2,
        );
        check_module(
            Module::PreActBlock(Box::new(PreActBlock::new(3, 3, 1, &mut rng))),
            &[3, 3, 4, 4],
            5e-2,
        );
    }

    #[test]
    fn pooling_and_flatten_gradients() {
        let mut rng = stream_rng(4, Stream::Init, 0, 0);
        let net = Module::Sequential(vec![
            Module::Conv2d(Conv2d::new(1, 2, 3, 1, 1, true, &mut rng)),
            Module::Relu,
            Module::MaxPool2,
            Module::GlobalAvgPool,
            Module::Linear(Linear::new(2, 3, &mut rng)),
        ]);
        check_module(net, &[2, 1, 4, 4], 2e-2);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let mut rng = stream_rng(5, Stream::Init, 0, 0);
        let l = Module::Linear(Linear::new(4, 2, &mut rng));
        assert!(l.forward(&Tensor::zeros(&[2, 3])).is_err());
        let c = Module::Conv2d(Conv2d::new(3, 2, 3, 1, 1, false, &mut rng));
        assert!(c.forward(&Tensor::zeros(&[1, 2, 4, 4])).is_err());
    }
}
