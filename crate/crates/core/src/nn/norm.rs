use alloc::vec;
use alloc::vec::Vec;

use super::{join, Module, Param, ParamGroup, Pass, Visitor};
use crate::math;
use crate::tensor::Tensor;

/// Per-channel batch normalization over the `N x H x W` axes.
///
/// Also serves as 1-D batch norm for `N x D x 1 x 1` tensors.
#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub eps: f64,
    cache: Option<Cache>,
}

#[derive(Debug, Clone)]
struct Cache {
    xhat: Tensor,
    inv_std: Vec<f64>,
    batch_stats: bool,
}

impl BatchNorm {
    pub fn new(channels: usize, group: ParamGroup) -> Self {
        Self {
            gamma: Param::new(vec![1.0; channels], group),
            beta: Param::new(vec![0.0; channels], group),
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            momentum: 0.1,
            eps: 1e-5,
            cache: None,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    pub fn forward(&mut self, x: &Tensor, pass: Pass) -> Tensor {
        let [n, c, h, w] = x.shape();
        assert_eq!(c, self.channels(), "batch norm channel mismatch");
        let plane = h * w;
        let count = (n * plane) as f64;
        let (mean, var) = if pass.train {
            let mut mean = vec![0.0; c];
            let mut var = vec![0.0; c];
            for s in 0..n {
                for (ch, chunk) in x.sample(s).chunks_exact(plane).enumerate() {
                    mean[ch] += chunk.iter().sum::<f64>();
                }
            }
            mean.iter_mut().for_each(|m| *m /= count);
            for s in 0..n {
                for (ch, chunk) in x.sample(s).chunks_exact(plane).enumerate() {
                    var[ch] += chunk.iter().map(|v| (v - mean[ch]) * (v - mean[ch])).sum::<f64>();
                }
            }
            var.iter_mut().for_each(|v| *v /= count);
            let unbias = if count > 1.0 { count / (count - 1.0) } else { 1.0 };
            for ch in 0..c {
                self.running_mean[ch] = (1.0 - self.momentum) * self.running_mean[ch] + self.momentum * mean[ch];
                self.running_var[ch] = (1.0 - self.momentum) * self.running_var[ch] + self.momentum * var[ch] * unbias;
            }
            (mean, var)
        } else {
            (self.running_mean.clone(), self.running_var.clone())
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / math::sqrt(v + self.eps)).collect();
        let mut xhat = x.clone();
        for s in 0..n {
            for (ch, chunk) in xhat.sample_mut(s).chunks_exact_mut(plane).enumerate() {
                chunk.iter_mut().for_each(|v| *v = (*v - mean[ch]) * inv_std[ch]);
            }
        }
        let mut y = xhat.clone();
        for s in 0..n {
            for (ch, chunk) in y.sample_mut(s).chunks_exact_mut(plane).enumerate() {
                let (g, b) = (self.gamma.value[ch], self.beta.value[ch]);
                chunk.iter_mut().for_each(|v| *v = *v * g + b);
            }
        }
        self.cache = pass.record.then_some(Cache {
            xhat,
            inv_std,
            batch_stats: pass.train,
        });
        y
    }

    pub fn backward(&mut self, dy: &Tensor) -> Tensor {
        let cache = self.cache.take().expect("backward without recorded forward");
        let [n, c, h, w] = dy.shape();
        let plane = h * w;
        let count = (n * plane) as f64;
        let mut sum_dy = vec![0.0; c];
        let mut sum_dy_xhat = vec![0.0; c];
        for s in 0..n {
            let d = dy.sample(s).chunks_exact(plane);
            let xh = cache.xhat.sample(s).chunks_exact(plane);
            for (ch, (dc, xc)) in d.zip(xh).enumerate() {
                for (g, xv) in dc.iter().zip(xc) {
                    sum_dy[ch] += g;
                    sum_dy_xhat[ch] += g * xv;
                }
            }
        }
        for ch in 0..c {
            self.gamma.grad[ch] += sum_dy_xhat[ch];
            self.beta.grad[ch] += sum_dy[ch];
        }
        let mut dx = dy.clone();
        for s in 0..n {
            let xh = cache.xhat.sample(s);
            for (ch, chunk) in dx.sample_mut(s).chunks_exact_mut(plane).enumerate() {
                let k = self.gamma.value[ch] * cache.inv_std[ch];
                let xc = &xh[ch * plane..(ch + 1) * plane];
                if cache.batch_stats {
                    let mean_dy = sum_dy[ch] / count;
                    let mean_dy_xhat = sum_dy_xhat[ch] / count;
                    for (g, xv) in chunk.iter_mut().zip(xc) {
                        *g = k * (*g - mean_dy - xv * mean_dy_xhat);
                    }
                } else {
                    chunk.iter_mut().for_each(|g| *g *= k);
                }
            }
        }
        dx
    }
}

impl Module for BatchNorm {
    fn visit(&mut self, prefix: &str, v: &mut dyn Visitor) {
        v.param(&join(prefix, "gamma"), &mut self.gamma);
        v.param(&join(prefix, "beta"), &mut self.beta);
        v.buffer(&join(prefix, "running_mean"), &mut self.running_mean);
        v.buffer(&join(prefix, "running_var"), &mut self.running_var);
    }
}
