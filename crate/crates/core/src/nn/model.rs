//! The full observation network: backbone, center/surround pooling and the
//! classification head.
//!
//! ```text
//! image -> backbone (+HAB) -> C x H x W
//!       -> pool(center box) ‖ pool(surround ring)   2C
//!       -> BatchNorm                                 2C   (retrieval, center loss)
//!       -> FC 2C -> C                                C    (compressed)
//!       -> FC C -> classes                           logits
//! ```

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{join, BatchNorm, Linear, Module, Param, ParamGroup, Pass, PoolMethod, RegionPool, Visitor};
use super::{Arch, Backbone, Stage};
use crate::geometry::{center_box, partition_masks, PartitionSpec};
use crate::math;
use crate::tensor::Tensor;
use crate::{Error, Result};

/// Which vector is used for gallery matching.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DescriptorKind {
    /// Batch-normalized center ‖ surround vector.
    #[default]
    JointBn,
    /// Output of the compressing fully connected layer.
    Compressed,
}

impl DescriptorKind {
    pub fn name(self) -> &'static str {
        match self {
            DescriptorKind::JointBn => "joint_bn",
            DescriptorKind::Compressed => "compressed",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "joint_bn" => Some(DescriptorKind::JointBn),
            "compressed" => Some(DescriptorKind::Compressed),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub num_classes: usize,
    pub arch: Arch,
    pub gem_p: f64,
    pub learn_p: bool,
    pub pooling: PoolMethod,
    pub partition: PartitionSpec,
    pub hab_stages: Vec<Stage>,
    pub input_size: usize,
    pub descriptor: DescriptorKind,
}

impl ModelConfig {
    /// ResNet-50 backbone at 256 px, HAB after stages 3 and 5, GeM p = 3.
    pub fn standard(num_classes: usize) -> Self {
        Self {
            num_classes,
            arch: Arch::resnet50(),
            gem_p: 3.0,
            learn_p: false,
            pooling: PoolMethod::Gem,
            partition: PartitionSpec::default(),
            hab_stages: vec![Stage::Stage3, Stage::Stage5],
            input_size: 256,
            descriptor: DescriptorKind::JointBn,
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.arch.out_channels()
    }

    /// Length of the concatenated center/surround vector.
    pub fn joint_dim(&self) -> usize {
        2 * self.feature_dim()
    }

    pub fn descriptor_dim(&self) -> usize {
        match self.descriptor {
            DescriptorKind::JointBn => self.joint_dim(),
            DescriptorKind::Compressed => self.feature_dim(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: alloc::string::String| Err(Error::Config(m));
        if self.num_classes < 1 {
            return bad("num_classes must be positive".into());
        }
        if !(self.gem_p >= 1.0 && self.gem_p.is_finite()) {
            return bad(format!("model.gem_p must be >= 1, got {}", self.gem_p));
        }
        if self.hab_stages.contains(&Stage::Stage2) {
            return bad("model.hab_stages may only name stage3, stage4, stage5".into());
        }
        if self.arch.base_width == 0 || self.arch.blocks.contains(&0) {
            return bad("backbone needs a positive width and at least one block per stage".into());
        }
        if self.input_size == 0 || self.input_size % Arch::STRIDE != 0 {
            return bad(format!(
                "model.input_size must be a positive multiple of {}",
                Arch::STRIDE
            ));
        }
        let out = self.input_size / Arch::STRIDE;
        let b = center_box(out, out, self.partition)?;
        if b.area() == out * out {
            return bad(format!(
                "partition.ratio {} leaves no surround on a {}x{} map",
                self.partition.ratio(),
                out,
                out
            ));
        }
        for st in &self.hab_stages {
            let size = match st {
                Stage::Stage3 => self.input_size / 8,
                _ => out,
            };
            center_box(size, size, self.partition)?;
        }
        Ok(())
    }
}

/// Per-image vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct Descriptor {
    pub center: Vec<f64>,
    pub surround: Vec<f64>,
    pub joint: Vec<f64>,
    pub joint_bn: Vec<f64>,
    pub compressed: Vec<f64>,
}

impl Descriptor {
    pub fn retrieval(&self, kind: DescriptorKind) -> &[f64] {
        match kind {
            DescriptorKind::JointBn => &self.joint_bn,
            DescriptorKind::Compressed => &self.compressed,
        }
    }
}

/// Batch outputs, each an `N x D x 1 x 1` tensor.
#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub center: Tensor,
    pub surround: Tensor,
    pub joint: Tensor,
    pub joint_bn: Tensor,
    pub compressed: Tensor,
    pub logits: Tensor,
}

impl ForwardOutput {
    pub fn descriptors(&self) -> Vec<Descriptor> {
        (0..self.logits.batch())
            .map(|n| Descriptor {
                center: self.center.sample(n).to_vec(),
                surround: self.surround.sample(n).to_vec(),
                joint: self.joint.sample(n).to_vec(),
                joint_bn: self.joint_bn.sample(n).to_vec(),
                compressed: self.compressed.sample(n).to_vec(),
            })
            .collect()
    }

    fn slice(&self, start: usize, end: usize) -> ForwardOutput {
        ForwardOutput {
            center: self.center.slice_batch(start, end),
            surround: self.surround.slice_batch(start, end),
            joint: self.joint.slice_batch(start, end),
            joint_bn: self.joint_bn.slice_batch(start, end),
            compressed: self.compressed.slice_batch(start, end),
            logits: self.logits.slice_batch(start, end),
        }
    }
}

/// Result of one pass over a drone batch and a satellite batch together.
#[derive(Debug, Clone)]
pub struct ViewOutputs {
    /// Drone samples first, then satellite samples.
    pub combined: ForwardOutput,
    pub drone_count: usize,
}

impl ViewOutputs {
    pub fn drone(&self) -> ForwardOutput {
        self.combined.slice(0, self.drone_count)
    }

    pub fn satellite(&self) -> ForwardOutput {
        self.combined.slice(self.drone_count, self.combined.logits.batch())
    }
}

#[derive(Debug, Clone)]
pub struct Model {
    config: ModelConfig,
    pub backbone: Backbone,
    pub gem_p: Param,
    pool_center: RegionPool,
    pool_surround: RegionPool,
    pub neck: BatchNorm,
    pub compress: Linear,
    pub classifier: Linear,
}

impl Model {
    /// Randomly initialized model; identical seeds give identical weights.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let backbone = Backbone::new(&mut rng, config.arch, &config.hab_stages, config.partition);
        let c = config.feature_dim();
        let compress = Linear::new(&mut rng, 2 * c, c, math::sqrt(1.0 / (2 * c) as f64), ParamGroup::Head);
        let classifier = Linear::new(&mut rng, c, config.num_classes, 0.001, ParamGroup::Head);
        let mut gem_p = Param::new(vec![config.gem_p], ParamGroup::Head);
        gem_p.trainable = config.learn_p;
        Ok(Self {
            pool_center: RegionPool::new(config.pooling),
            pool_surround: RegionPool::new(config.pooling),
            neck: BatchNorm::new(2 * c, ParamGroup::Head),
            backbone,
            gem_p,
            compress,
            classifier,
            config,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn p(&self) -> f64 {
        self.gem_p.value[0]
    }

    pub fn feature_map(&mut self, images: &Tensor, pass: Pass) -> Result<Tensor> {
        self.backbone.forward(images, pass)
    }

    pub fn forward(&mut self, images: &Tensor, pass: Pass) -> Result<ForwardOutput> {
        let s = self.config.input_size;
        if images.height() != s || images.width() != s {
            return Err(Error::Shape(format!(
                "model expects {}x{} inputs, got {}x{}",
                s,
                s,
                images.height(),
                images.width()
            )));
        }
        let fm = self.backbone.forward(images, pass)?;
        self.head_forward(&fm, pass)
    }

    /// Pooling and head on an already computed backbone feature map.
    pub fn head_forward(&mut self, fm: &Tensor, pass: Pass) -> Result<ForwardOutput> {
        let (_, center_mask, surround_mask) = partition_masks(fm.height(), fm.width(), self.config.partition)?;
        let p = self.p();
        let center = self.pool_center.forward(fm, &center_mask, p, pass.record)?;
        let surround = self.pool_surround.forward(fm, &surround_mask, p, pass.record)?;
        let (n, c) = (fm.batch(), fm.channels());
        let mut joint = Tensor::zeros(n, 2 * c, 1, 1);
        for i in 0..n {
            let row = joint.sample_mut(i);
            row[..c].copy_from_slice(center.sample(i));
            row[c..].copy_from_slice(surround.sample(i));
        }
        let joint_bn = self.neck.forward(&joint, pass);
        let compressed = self.compress.forward(&joint_bn, pass.record)?;
        let logits = self.classifier.forward(&compressed, pass.record)?;
        Ok(ForwardOutput {
            center,
            surround,
            joint,
            joint_bn,
            compressed,
            logits,
        })
    }

    /// Backpropagates loss gradients taken at the normalized joint vector and
    /// at the logits, accumulating into every parameter.
    pub fn backward(&mut self, grad_joint_bn: Option<&Tensor>, grad_logits: &Tensor) {
        let dfm = self.head_backward(grad_joint_bn, grad_logits);
        self.backbone.backward(&dfm);
    }

    /// Head-only backward; returns the feature-map gradient.
    pub fn head_backward(&mut self, grad_joint_bn: Option<&Tensor>, grad_logits: &Tensor) -> Tensor {
        let dcomp = self.classifier.backward(grad_logits);
        let mut djbn = self.compress.backward(&dcomp);
        if let Some(g) = grad_joint_bn {
            djbn.add_assign(g);
        }
        let djoint = self.neck.backward(&djbn);
        let n = djoint.batch();
        let c = self.config.feature_dim();
        let mut dc = Tensor::zeros(n, c, 1, 1);
        let mut ds = Tensor::zeros(n, c, 1, 1);
        for i in 0..n {
            let row = djoint.sample(i);
            dc.sample_mut(i).copy_from_slice(&row[..c]);
            ds.sample_mut(i).copy_from_slice(&row[c..]);
        }
        let (mut dfm, dp_center) = self.pool_center.backward(&dc);
        let (dfm_s, dp_surround) = self.pool_surround.backward(&ds);
        dfm.add_assign(&dfm_s);
        if self.config.pooling == PoolMethod::Gem {
            self.gem_p.grad[0] += dp_center + dp_surround;
        }
        dfm
    }

    /// Inference-mode descriptors for a batch of preprocessed images.
    pub fn embed(&mut self, images: &Tensor) -> Result<Vec<Descriptor>> {
        Ok(self.forward(images, Pass::INFER)?.descriptors())
    }

    /// One pass with shared weights over both views.
    pub fn shared_forward(&mut self, drone: &Tensor, satellite: &Tensor, pass: Pass) -> Result<ViewOutputs> {
        let combined = Tensor::concat_batch(&[drone, satellite])?;
        Ok(ViewOutputs {
            combined: self.forward(&combined, pass)?,
            drone_count: drone.batch(),
        })
    }
}

impl Module for Model {
    fn visit(&mut self, prefix: &str, v: &mut dyn Visitor) {
        self.backbone.visit(&join(prefix, "backbone"), v);
        v.param(&join(prefix, "gem_p"), &mut self.gem_p);
        self.neck.visit(&join(prefix, "neck"), v);
        self.compress.visit(&join(prefix, "compress"), v);
        self.classifier.visit(&join(prefix, "classifier"), v);
    }
}
