//! Layers with explicit forward/backward passes.
//!
//! Each layer caches what its backward pass needs during `forward` (when the
//! pass asks for it) and accumulates parameter gradients into its [`Param`]s.
//! Gradients are never cleared implicitly; call [`zero_grads`] between steps.

mod activation;
mod conv;
mod hab;
mod linear;
mod model;
mod norm;
mod pool;
mod resnet;

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

pub use activation::{relu_backward, relu_inplace};
pub use conv::Conv2d;
pub use hab::Hab;
pub use linear::{classify, Linear};
pub use model::{Descriptor, DescriptorKind, ForwardOutput, Model, ModelConfig, ViewOutputs};
pub use norm::BatchNorm;
pub use pool::{gem_pool, pool_region, MaxPool2d, PoolMethod, RegionPool, GEM_EPS};
pub use resnet::{Arch, Backbone, BlockKind, Stage};

/// Forward-pass behavior.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Pass {
    /// Batch statistics in normalization layers (and running-stat updates).
    pub train: bool,
    /// Keep activations for a later backward pass.
    pub record: bool,
}

impl Pass {
    pub const TRAIN: Pass = Pass {
        train: true,
        record: true,
    };
    pub const INFER: Pass = Pass {
        train: false,
        record: false,
    };
    /// Running statistics, but differentiable.
    pub const EVAL_GRAD: Pass = Pass {
        train: false,
        record: true,
    };
}

/// Which learning-rate group a parameter belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamGroup {
    Backbone,
    Head,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub value: Vec<f64>,
    pub grad: Vec<f64>,
    pub velocity: Vec<f64>,
    pub group: ParamGroup,
    pub trainable: bool,
}

impl Param {
    pub fn new(value: Vec<f64>, group: ParamGroup) -> Self {
        let n = value.len();
        Self {
            value,
            grad: vec![0.0; n],
            velocity: vec![0.0; n],
            group,
            trainable: true,
        }
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

/// Walks named parameters and non-trainable state buffers.
pub trait Visitor {
    fn param(&mut self, name: &str, param: &mut Param);
    fn buffer(&mut self, _name: &str, _buffer: &mut Vec<f64>) {}
}

pub trait Module {
    fn visit(&mut self, prefix: &str, v: &mut dyn Visitor);
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        String::from(name)
    } else {
        format!("{}.{}", prefix, name)
    }
}

struct FnVisitor<F>(F);

impl<F: FnMut(&str, &mut Param)> Visitor for FnVisitor<F> {
    fn param(&mut self, name: &str, param: &mut Param) {
        (self.0)(name, param)
    }
}

/// Calls `f` for every parameter of `m`.
pub fn for_each_param(m: &mut dyn Module, f: impl FnMut(&str, &mut Param)) {
    m.visit("", &mut FnVisitor(f));
}

pub fn zero_grads(m: &mut dyn Module) {
    for_each_param(m, |_, p| p.zero_grad());
}

pub fn param_count(m: &mut dyn Module) -> usize {
    let mut n = 0;
    for_each_param(m, |_, p| n += p.len());
    n
}
