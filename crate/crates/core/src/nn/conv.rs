use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use super::{join, Module, Param, ParamGroup, Pass, Visitor};
use crate::gemm::{gemm, MatRef};
use crate::math;
use crate::tensor::Tensor;
use crate::{Error, Result};

/// Square-kernel 2-D convolution computed as im2col + GEMM per sample.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: Param,
    pub bias: Option<Param>,
    in_channels: usize,
    out_channels: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
    /// Skip the input gradient (first layer of a network).
    pub input_grad: bool,
    input: Option<Tensor>,
    cols: Vec<f64>,
}

impl Conv2d {
    /// Kaiming-normal (fan-out) initialized convolution without bias.
    pub fn new<R: Rng + ?Sized>(
        rng: &mut R,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        group: ParamGroup,
    ) -> Self {
        let fan_out = (out_channels * kernel * kernel) as f64;
        let std = math::sqrt(2.0 / fan_out);
        let w = (0..out_channels * in_channels * kernel * kernel)
            .map(|_| math::normal(rng) * std)
            .collect();
        Self::from_weights(w, None, in_channels, out_channels, kernel, stride, padding, group)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn from_weights(
        weight: Vec<f64>,
        bias: Option<Vec<f64>>,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        group: ParamGroup,
    ) -> Self {
        assert_eq!(weight.len(), out_channels * in_channels * kernel * kernel);
        assert!(stride >= 1 && kernel >= 1);
        if let Some(b) = &bias {
            assert_eq!(b.len(), out_channels);
        }
        Self {
            weight: Param::new(weight, group),
            bias: bias.map(|b| Param::new(b, group)),
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
            input_grad: true,
            input: None,
            cols: Vec::new(),
        }
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    pub fn output_size(&self, h: usize, w: usize) -> (usize, usize) {
        let k = self.kernel;
        let p = 2 * self.padding;
        ((h + p - k) / self.stride + 1, (w + p - k) / self.stride + 1)
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.padding == 0
    }

    fn im2col(&mut self, x: &[f64], h: usize, w: usize, oh: usize, ow: usize) {
        let (k, s, pad) = (self.kernel, self.stride, self.padding as isize);
        let p = oh * ow;
        self.cols.clear();
        self.cols.resize(self.in_channels * k * k * p, 0.0);
        for c in 0..self.in_channels {
            let plane = &x[c * h * w..(c + 1) * h * w];
            for ki in 0..k {
                for kj in 0..k {
                    let row = ((c * k + ki) * k + kj) * p;
                    for oy in 0..oh {
                        let iy = (oy * s + ki) as isize - pad;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                        let dst = &mut self.cols[row + oy * ow..row + (oy + 1) * ow];
                        for (ox, d) in dst.iter_mut().enumerate() {
                            let ix = (ox * s + kj) as isize - pad;
                            if ix >= 0 && ix < w as isize {
                                *d = src[ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }

    fn col2im(&self, dcols: &[f64], dx: &mut [f64], h: usize, w: usize, oh: usize, ow: usize) {
        let (k, s, pad) = (self.kernel, self.stride, self.padding as isize);
        let p = oh * ow;
        for c in 0..self.in_channels {
            let plane = &mut dx[c * h * w..(c + 1) * h * w];
            for ki in 0..k {
                for kj in 0..k {
                    let row = ((c * k + ki) * k + kj) * p;
                    for oy in 0..oh {
                        let iy = (oy * s + ki) as isize - pad;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                        let src = &dcols[row + oy * ow..row + (oy + 1) * ow];
                        for (ox, g) in src.iter().enumerate() {
                            let ix = (ox * s + kj) as isize - pad;
                            if ix >= 0 && ix < w as isize {
                                dst[ix as usize] += g;
                            }
                        }
                    }
                }
            }
        }
    }

    pub fn forward(&mut self, x: &Tensor, pass: Pass) -> Result<Tensor> {
        let [n, c, h, w] = x.shape();
        if c != self.in_channels {
            return Err(Error::Shape(format!(
                "convolution expects {} input channels, got {}",
                self.in_channels, c
            )));
        }
        if h + 2 * self.padding < self.kernel || w + 2 * self.padding < self.kernel {
            return Err(Error::Shape(format!(
                "{}x{} input smaller than {}x{} kernel",
                h, w, self.kernel, self.kernel
            )));
        }
        let (oh, ow) = self.output_size(h, w);
        let kdim = self.in_channels * self.kernel * self.kernel;
        let mut y = Tensor::zeros(n, self.out_channels, oh, ow);
        let weight = core::mem::take(&mut self.weight.value);
        for s in 0..n {
            let xs = x.sample(s);
            let cols: &[f64] = if self.is_pointwise() {
                xs
            } else {
                self.im2col(xs, h, w, oh, ow);
                &self.cols
            };
            gemm(
                1.0,
                MatRef::new(&weight, self.out_channels, kdim),
                MatRef::new(cols, kdim, oh * ow),
                0.0,
                y.sample_mut(s),
            );
        }
        self.weight.value = weight;
        if let Some(b) = &self.bias {
            let plane = oh * ow;
            for s in 0..n {
                for (co, chunk) in y.sample_mut(s).chunks_exact_mut(plane).enumerate() {
                    chunk.iter_mut().for_each(|v| *v += b.value[co]);
                }
            }
        }
        self.input = pass.record.then(|| x.clone());
        Ok(y)
    }

    /// Accumulates weight/bias gradients; returns the input gradient unless
    /// `input_grad` is off.
    pub fn backward(&mut self, dy: &Tensor) -> Option<Tensor> {
        let x = self.input.take().expect("backward without recorded forward");
        let [n, _, h, w] = x.shape();
        let (oh, ow) = self.output_size(h, w);
        assert_eq!(dy.shape(), [n, self.out_channels, oh, ow]);
        let kdim = self.in_channels * self.kernel * self.kernel;
        let p = oh * ow;
        let mut dx = self.input_grad.then(|| Tensor::zeros(n, self.in_channels, h, w));
        let mut dcols = vec![0.0; if self.is_pointwise() { 0 } else { kdim * p }];
        let weight = core::mem::take(&mut self.weight.value);
        for s in 0..n {
            let dys = dy.sample(s);
            let xs = x.sample(s);
            let cols: &[f64] = if self.is_pointwise() {
                xs
            } else {
                self.im2col(xs, h, w, oh, ow);
                &self.cols
            };
            // dW += dY * cols^T
            gemm(
                1.0,
                MatRef::new(dys, self.out_channels, p),
                MatRef::new(cols, kdim, p).t(),
                1.0,
                &mut self.weight.grad,
            );
            if let Some(dx) = dx.as_mut() {
                let wt = MatRef::new(&weight, self.out_channels, kdim).t();
                if self.is_pointwise() {
                    gemm(1.0, wt, MatRef::new(dys, self.out_channels, p), 0.0, dx.sample_mut(s));
                } else {
                    gemm(1.0, wt, MatRef::new(dys, self.out_channels, p), 0.0, &mut dcols);
                    self.col2im(&dcols, dx.sample_mut(s), h, w, oh, ow);
                }
            }
        }
        self.weight.value = weight;
        if let Some(b) = &mut self.bias {
            for s in 0..n {
                for (co, chunk) in dy.sample(s).chunks_exact(p).enumerate() {
                    b.grad[co] += chunk.iter().sum::<f64>();
                }
            }
        }
        dx
    }
}

impl Module for Conv2d {
    fn visit(&mut self, prefix: &str, v: &mut dyn Visitor) {
        v.param(&join(prefix, "weight"), &mut self.weight);
        if let Some(b) = &mut self.bias {
            v.param(&join(prefix, "bias"), b);
        }
    }
}
