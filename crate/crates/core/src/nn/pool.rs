use alloc::vec;
use alloc::vec::Vec;

use crate::geometry::RegionMask;
use crate::math;
use crate::tensor::Tensor;
use crate::{Error, Result};

/// Inputs are clamped to this floor before the GeM power.
pub const GEM_EPS: f64 = 1e-6;

/// 3x3/stride-2/pad-1 style max pooling.
#[derive(Debug, Clone)]
pub struct MaxPool2d {
    kernel: usize,
    stride: usize,
    padding: usize,
    cache: Option<(usize, usize, Vec<usize>)>,
}

impl MaxPool2d {
    pub fn new(kernel: usize, stride: usize, padding: usize) -> Self {
        Self {
            kernel,
            stride,
            padding,
            cache: None,
        }
    }

    pub fn output_size(&self, h: usize, w: usize) -> (usize, usize) {
        let p = 2 * self.padding;
        (
            (h + p - self.kernel) / self.stride + 1,
            (w + p - self.kernel) / self.stride + 1,
        )
    }

    pub fn forward(&mut self, x: &Tensor, record: bool) -> Tensor {
        let [n, c, h, w] = x.shape();
        let (oh, ow) = self.output_size(h, w);
        let mut y = Tensor::zeros(n, c, oh, ow);
        let mut argmax = if record { vec![0usize; y.len()] } else { Vec::new() };
        let xd = x.data();
        let mut o = 0;
        for s in 0..n {
            for ch in 0..c {
                let base = (s * c + ch) * h * w;
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut best = f64::NEG_INFINITY;
                        let mut at = base;
                        for ki in 0..self.kernel {
                            let iy = (oy * self.stride + ki) as isize - self.padding as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for kj in 0..self.kernel {
                                let ix = (ox * self.stride + kj) as isize - self.padding as isize;
                                if ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                let i = base + iy as usize * w + ix as usize;
                                if xd[i] > best {
                                    best = xd[i];
                                    at = i;
                                }
                            }
                        }
                        y.data_mut()[o] = best;
                        if record {
                            argmax[o] = at;
                        }
                        o += 1;
                    }
                }
            }
        }
        self.cache = record.then_some((h, w, argmax));
        y
    }

    pub fn backward(&mut self, dy: &Tensor) -> Tensor {
        let (h, w, argmax) = self.cache.take().expect("backward without recorded forward");
        let [n, c, _, _] = dy.shape();
        let mut dx = Tensor::zeros(n, c, h, w);
        for (g, &i) in dy.data().iter().zip(&argmax) {
            dx.data_mut()[i] += g;
        }
        dx
    }
}

/// Spatial reduction used for the center and surround descriptors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PoolMethod {
    /// Generalized mean with exponent `p`.
    #[default]
    Gem,
    Avg,
    Max,
    Sum,
}

/// Generalized mean of every channel over the masked cells: `N x C x 1 x 1`.
pub fn gem_pool(x: &Tensor, mask: &RegionMask, p: f64) -> Result<Tensor> {
    pool_region(x, mask, PoolMethod::Gem, p)
}

pub fn pool_region(x: &Tensor, mask: &RegionMask, method: PoolMethod, p: f64) -> Result<Tensor> {
    let mut pool = RegionPool::new(method);
    pool.forward(x, mask, p, false)
}

fn check_region(x: &Tensor, mask: &RegionMask) -> Result<Vec<usize>> {
    if mask.height() != x.height() || mask.width() != x.width() {
        return Err(Error::Shape(alloc::format!(
            "{}x{} mask over {}x{} map",
            mask.height(),
            mask.width(),
            x.height(),
            x.width()
        )));
    }
    let idx = mask.indices();
    if idx.is_empty() {
        return Err(Error::EmptyRegion);
    }
    Ok(idx)
}

/// Region pooling with gradients for its input and for the GeM exponent.
#[derive(Debug, Clone)]
pub struct RegionPool {
    method: PoolMethod,
    cache: Option<PoolCache>,
}

#[derive(Debug, Clone)]
struct PoolCache {
    x: Tensor,
    cells: Vec<usize>,
    p: f64,
    out: Tensor,
}

impl RegionPool {
    pub fn new(method: PoolMethod) -> Self {
        Self { method, cache: None }
    }

    pub fn method(&self) -> PoolMethod {
        self.method
    }

    pub fn forward(&mut self, x: &Tensor, mask: &RegionMask, p: f64, record: bool) -> Result<Tensor> {
        if self.method == PoolMethod::Gem && !(p >= 1.0 && p.is_finite()) {
            return Err(Error::Config(alloc::format!(
                "GeM exponent must be finite and >= 1, got {}",
                p
            )));
        }
        let cells = check_region(x, mask)?;
        let [n, c, _, _] = x.shape();
        let plane = x.plane();
        let count = cells.len() as f64;
        let mut out = Tensor::zeros(n, c, 1, 1);
        for (o, chunk) in out.data_mut().iter_mut().zip(x.data().chunks_exact(plane)) {
            *o = match self.method {
                PoolMethod::Gem => {
                    // scale by the region maximum so large p cannot overflow
                    let top = cells.iter().map(|&i| chunk[i].max(GEM_EPS)).fold(GEM_EPS, f64::max);
                    let mean = cells
                        .iter()
                        .map(|&i| math::powf(chunk[i].max(GEM_EPS) / top, p))
                        .sum::<f64>()
                        / count;
                    top * math::powf(mean, 1.0 / p)
                }
                PoolMethod::Avg => cells.iter().map(|&i| chunk[i]).sum::<f64>() / count,
                PoolMethod::Sum => cells.iter().map(|&i| chunk[i]).sum::<f64>(),
                PoolMethod::Max => cells.iter().map(|&i| chunk[i]).fold(f64::NEG_INFINITY, f64::max),
            };
        }
        if record {
            self.cache = Some(PoolCache {
                x: x.clone(),
                cells,
                p,
                out: out.clone(),
            });
        }
        Ok(out)
    }

    /// Returns the input gradient and the gradient with respect to `p`.
    pub fn backward(&mut self, dy: &Tensor) -> (Tensor, f64) {
        let PoolCache { x, cells, p, out } = self.cache.take().expect("backward without recorded forward");
        let plane = x.plane();
        let count = cells.len() as f64;
        let mut dx = Tensor::zeros(x.batch(), x.channels(), x.height(), x.width());
        let mut dp = 0.0;
        let chunks = x.data().chunks_exact(plane).zip(dx.data_mut().chunks_exact_mut(plane));
        for (((xc, dc), &g), &f) in chunks.zip(dy.data()).zip(out.data()) {
            match self.method {
                PoolMethod::Gem => {
                    // df/dx_i = x_i^(p-1) f^(1-p) / |R| for unclamped cells
                    for &i in &cells {
                        if xc[i] > GEM_EPS {
                            dc[i] += g * math::powf(xc[i] / f, p - 1.0) / count;
                        }
                    }
                    // d ln f / dp = -ln f / p + E[t^p ln t] / (p f^p)
                    let weighted = cells
                        .iter()
                        .map(|&i| {
                            let t = xc[i].max(GEM_EPS);
                            math::powf(t / f, p) * math::ln(t)
                        })
                        .sum::<f64>()
                        / count;
                    dp += g * f * (weighted - math::ln(f)) / p;
                }
                PoolMethod::Avg => cells.iter().for_each(|&i| dc[i] += g / count),
                PoolMethod::Sum => cells.iter().for_each(|&i| dc[i] += g),
                PoolMethod::Max => {
                    let at = cells
                        .iter()
                        .copied()
                        .fold(cells[0], |best, i| if xc[i] > xc[best] { i } else { best });
                    dc[at] += g;
                }
            }
        }
        (dx, dp)
    }
}
