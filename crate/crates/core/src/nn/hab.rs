//! Hierarchical attention block.
//!
//! Two single-channel summaries of the input are stacked: the channel mean at
//! every position, and the channel max restricted to the center box (zero
//! outside it). A 5x5 convolution, batch norm and sigmoid turn them into a
//! spatial gate in `(0, 1)` that multiplies every channel of the input.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use super::{join, BatchNorm, Conv2d, Module, ParamGroup, Pass, Visitor};
use crate::geometry::{center_box, PartitionSpec, RegionBox};
use crate::math;
use crate::tensor::Tensor;
use crate::Result;

pub const HAB_KERNEL: usize = 5;

/// Sigmoid kept inside the open unit interval; in f64 it would otherwise
/// round to exactly 0 or 1 for large pre-activations.
fn gate(z: f64) -> f64 {
    math::sigmoid(z).clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

#[derive(Debug, Clone)]
pub struct Hab {
    pub conv: Conv2d,
    pub bn: BatchNorm,
    spec: PartitionSpec,
    attention: Option<Tensor>,
    cache: Option<Cache>,
}

#[derive(Debug, Clone)]
struct Cache {
    x: Tensor,
    region: RegionBox,
    /// Channel index of the max for each center cell, per sample.
    argmax: Vec<usize>,
}

impl Hab {
    pub fn new<R: Rng + ?Sized>(rng: &mut R, spec: PartitionSpec) -> Self {
        let w = (0..2 * HAB_KERNEL * HAB_KERNEL)
            .map(|_| math::normal(rng) * 0.01)
            .collect();
        Self::from_params(w, 0.0, spec)
    }

    /// Block with explicit `1 x 2 x 5 x 5` kernel (mean stream first, then
    /// center-max stream) and bias; batch norm starts as identity.
    pub fn from_params(kernel: Vec<f64>, bias: f64, spec: PartitionSpec) -> Self {
        let conv = Conv2d::from_weights(
            kernel,
            Some(vec![bias]),
            2,
            1,
            HAB_KERNEL,
            1,
            HAB_KERNEL / 2,
            ParamGroup::Head,
        );
        Self {
            conv,
            bn: BatchNorm::new(1, ParamGroup::Head),
            spec,
            attention: None,
            cache: None,
        }
    }

    pub fn spec(&self) -> PartitionSpec {
        self.spec
    }

    /// Gate of the most recent forward pass, `N x 1 x H x W`.
    pub fn attention(&self) -> Option<&Tensor> {
        self.attention.as_ref()
    }

    pub fn forward(&mut self, x: &Tensor, pass: Pass) -> Result<Tensor> {
        let [n, c, h, w] = x.shape();
        let region = center_box(h, w, self.spec)?;
        let plane = h * w;
        let mut cat = Tensor::zeros(n, 2, h, w);
        let mut argmax = vec![0usize; n * region.area()];
        for s in 0..n {
            let xs = x.sample(s);
            let out = cat.sample_mut(s);
            let (mean_map, max_map) = out.split_at_mut(plane);
            for ch in 0..c {
                for (m, v) in mean_map.iter_mut().zip(&xs[ch * plane..(ch + 1) * plane]) {
                    *m += v;
                }
            }
            mean_map.iter_mut().for_each(|m| *m /= c as f64);
            let mut k = s * region.area();
            for y in region.row_start..region.row_end {
                for xx in region.col_start..region.col_end {
                    let pos = y * w + xx;
                    let (mut best, mut at) = (xs[pos], 0);
                    for ch in 1..c {
                        if xs[ch * plane + pos] > best {
                            best = xs[ch * plane + pos];
                            at = ch;
                        }
                    }
                    max_map[pos] = best;
                    argmax[k] = at;
                    k += 1;
                }
            }
        }
        let z = self.conv.forward(&cat, pass)?;
        let mut a = self.bn.forward(&z, pass);
        a.data_mut().iter_mut().for_each(|v| *v = gate(*v));
        let mut out = x.clone();
        for s in 0..n {
            let gate = a.sample(s).to_vec();
            for chunk in out.sample_mut(s).chunks_exact_mut(plane) {
                chunk.iter_mut().zip(&gate).for_each(|(v, g)| *v *= g);
            }
        }
        if pass.record {
            self.cache = Some(Cache {
                x: x.clone(),
                region,
                argmax,
            });
        }
        self.attention = Some(a);
        Ok(out)
    }

    pub fn backward(&mut self, dy: &Tensor) -> Tensor {
        let Cache { x, region, argmax } = self.cache.take().expect("backward without recorded forward");
        let a = self.attention.as_ref().expect("attention recorded");
        let [n, c, h, w] = x.shape();
        let plane = h * w;
        let mut dx = dy.clone();
        let mut dpre = Tensor::zeros(n, 1, h, w);
        for s in 0..n {
            let gate = a.sample(s);
            let xs = x.sample(s);
            let dys = dy.sample(s);
            let dg = dpre.sample_mut(s);
            for ch in 0..c {
                let r = ch * plane..(ch + 1) * plane;
                for (i, (&g, &v)) in dys[r.clone()].iter().zip(&xs[r]).enumerate() {
                    dg[i] += g * v;
                }
            }
            // through the sigmoid
            for (d, &g) in dg.iter_mut().zip(gate) {
                *d *= g * (1.0 - g);
            }
            for chunk in dx.sample_mut(s).chunks_exact_mut(plane) {
                chunk.iter_mut().zip(gate).for_each(|(d, g)| *d *= g);
            }
        }
        let dz = self.bn.backward(&dpre);
        let dcat = self.conv.backward(&dz).expect("input gradient enabled");
        for s in 0..n {
            let dc = dcat.sample(s).to_vec();
            let (dmean, dmax) = dc.split_at(plane);
            let dxs = dx.sample_mut(s);
            for ch in 0..c {
                for (d, g) in dxs[ch * plane..(ch + 1) * plane].iter_mut().zip(dmean) {
                    *d += g / c as f64;
                }
            }
            let mut k = s * region.area();
            for y in region.row_start..region.row_end {
                for xx in region.col_start..region.col_end {
                    let pos = y * w + xx;
                    dxs[argmax[k] * plane + pos] += dmax[pos];
                    k += 1;
                }
            }
        }
        dx
    }
}

impl Module for Hab {
    fn visit(&mut self, prefix: &str, v: &mut dyn Visitor) {
        self.conv.visit(&join(prefix, "conv"), v);
        self.bn.visit(&join(prefix, "bn"), v);
    }
}
