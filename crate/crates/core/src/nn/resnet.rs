//! Residual backbone with the last downsampling removed (overall stride 16)
//! and optional attention blocks after stages 3-5.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use super::{join, relu_backward, relu_inplace, BatchNorm, Conv2d, Hab, MaxPool2d, Module, ParamGroup, Pass, Visitor};
use crate::geometry::PartitionSpec;
use crate::tensor::Tensor;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockKind {
    Basic,
    Bottleneck,
}

impl BlockKind {
    pub fn expansion(self) -> usize {
        match self {
            BlockKind::Basic => 1,
            BlockKind::Bottleneck => 4,
        }
    }
}

/// Residual stages after the stem, named after their conv groups.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    Stage2,
    Stage3,
    Stage4,
    Stage5,
}

impl Stage {
    pub const ALL: [Stage; 4] = [Stage::Stage2, Stage::Stage3, Stage::Stage4, Stage::Stage5];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Stage::Stage2 => "stage2",
            Stage::Stage3 => "stage3",
            Stage::Stage4 => "stage4",
            Stage::Stage5 => "stage5",
        }
    }

    pub fn parse(s: &str) -> Option<Stage> {
        Stage::ALL.into_iter().find(|st| st.name() == s)
    }

    /// First-block stride. Stage 5 keeps full resolution.
    pub fn stride(self) -> usize {
        match self {
            Stage::Stage2 | Stage::Stage5 => 1,
            Stage::Stage3 | Stage::Stage4 => 2,
        }
    }
}

/// Backbone shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Arch {
    pub kind: BlockKind,
    pub blocks: [usize; 4],
    pub base_width: usize,
}

impl Arch {
    pub fn resnet50() -> Self {
        Self {
            kind: BlockKind::Bottleneck,
            blocks: [3, 4, 6, 3],
            base_width: 64,
        }
    }

    pub fn resnet18() -> Self {
        Self {
            kind: BlockKind::Basic,
            blocks: [2, 2, 2, 2],
            base_width: 64,
        }
    }

    /// One basic block per stage; for CPU-scale experiments.
    pub fn tiny(base_width: usize) -> Self {
        Self {
            kind: BlockKind::Basic,
            blocks: [1, 1, 1, 1],
            base_width,
        }
    }

    pub fn by_name(name: &str, base_width: Option<usize>) -> Option<Self> {
        let mut arch = match name {
            "resnet50" => Self::resnet50(),
            "resnet18" => Self::resnet18(),
            "tiny" => Self::tiny(16),
            _ => return None,
        };
        if let Some(w) = base_width {
            arch.base_width = w;
        }
        Some(arch)
    }

    /// Channels of the final feature map.
    pub fn out_channels(&self) -> usize {
        self.base_width * 8 * self.kind.expansion()
    }

    /// Total spatial downsampling.
    pub const STRIDE: usize = 16;
}

#[derive(Debug, Clone)]
struct ConvBn {
    conv: Conv2d,
    bn: BatchNorm,
}

impl ConvBn {
    fn new<R: Rng + ?Sized>(rng: &mut R, cin: usize, cout: usize, k: usize, stride: usize) -> Self {
        Self {
            conv: Conv2d::new(rng, cin, cout, k, stride, k / 2, ParamGroup::Backbone),
            bn: BatchNorm::new(cout, ParamGroup::Backbone),
        }
    }

    fn forward(&mut self, x: &Tensor, pass: Pass) -> Result<Tensor> {
        let y = self.conv.forward(x, pass)?;
        Ok(self.bn.forward(&y, pass))
    }

    fn backward(&mut self, dy: &Tensor) -> Option<Tensor> {
        let d = self.bn.backward(dy);
        self.conv.backward(&d)
    }

    fn visit(&mut self, prefix: &str, v: &mut dyn Visitor) {
        self.conv.visit(&join(prefix, "conv"), v);
        self.bn.visit(&join(prefix, "bn"), v);
    }
}

/// Residual block: basic (3x3, 3x3) or bottleneck (1x1, 3x3 strided, 1x1).
#[derive(Debug, Clone)]
struct Block {
    layers: Vec<ConvBn>,
    shortcut: Option<ConvBn>,
    /// Post-ReLU outputs of the inner layers, then of the block.
    acts: Vec<Tensor>,
}

impl Block {
    fn new<R: Rng + ?Sized>(rng: &mut R, kind: BlockKind, cin: usize, width: usize, stride: usize) -> Self {
        let cout = width * kind.expansion();
        let layers = match kind {
            BlockKind::Basic => [
                ConvBn::new(rng, cin, width, 3, stride),
                ConvBn::new(rng, width, width, 3, 1),
            ]
            .into(),
            BlockKind::Bottleneck => [
                ConvBn::new(rng, cin, width, 1, 1),
                ConvBn::new(rng, width, width, 3, stride),
                ConvBn::new(rng, width, cout, 1, 1),
            ]
            .into(),
        };
        let shortcut = (stride != 1 || cin != cout).then(|| ConvBn::new(rng, cin, cout, 1, stride));
        Self {
            layers,
            shortcut,
            acts: Vec::new(),
        }
    }

    fn forward(&mut self, x: &Tensor, pass: Pass) -> Result<Tensor> {
        self.acts.clear();
        let last = self.layers.len() - 1;
        let mut h = x.clone();
        for (i, layer) in self.layers.iter_mut().enumerate() {
            h = layer.forward(&h, pass)?;
            if i < last {
                relu_inplace(&mut h);
                if pass.record {
                    self.acts.push(h.clone());
                }
            }
        }
        match &mut self.shortcut {
            Some(sc) => h.add_assign(&sc.forward(x, pass)?),
            None => h.add_assign(x),
        }
        relu_inplace(&mut h);
        if pass.record {
            self.acts.push(h.clone());
        }
        Ok(h)
    }

    fn backward(&mut self, dy: &Tensor) -> Tensor {
        let out = self.acts.pop().expect("backward without recorded forward");
        let mut d = dy.clone();
        relu_backward(&mut d, &out);
        let mut dx = match &mut self.shortcut {
            Some(sc) => sc.backward(&d).expect("input gradient"),
            None => d.clone(),
        };
        let mut g = d;
        for i in (0..self.layers.len()).rev() {
            g = self.layers[i].backward(&g).expect("input gradient");
            if i > 0 {
                let act = self.acts.pop().expect("recorded activation");
                relu_backward(&mut g, &act);
            }
        }
        dx.add_assign(&g);
        dx
    }

    fn visit(&mut self, prefix: &str, v: &mut dyn Visitor) {
        for (i, l) in self.layers.iter_mut().enumerate() {
            l.visit(&join(prefix, &format!("layer{}", i + 1)), v);
        }
        if let Some(sc) = &mut self.shortcut {
            sc.visit(&join(prefix, "shortcut"), v);
        }
    }
}

/// Stem (7x7/2 conv, BN, ReLU, 3x3/2 max pool) plus four residual stages.
#[derive(Debug, Clone)]
pub struct Backbone {
    arch: Arch,
    stem: ConvBn,
    stem_out: Option<Tensor>,
    pool: MaxPool2d,
    stages: Vec<Vec<Block>>,
    habs: [Option<Hab>; 4],
}

impl Backbone {
    pub fn new<R: Rng + ?Sized>(rng: &mut R, arch: Arch, hab_stages: &[Stage], spec: PartitionSpec) -> Self {
        let mut stem = ConvBn::new(rng, 3, arch.base_width, 7, 2);
        stem.conv.input_grad = false;
        let mut cin = arch.base_width;
        let mut stages = Vec::new();
        for stage in Stage::ALL {
            let width = arch.base_width << stage.index();
            let mut blocks = Vec::new();
            for b in 0..arch.blocks[stage.index()] {
                let stride = if b == 0 { stage.stride() } else { 1 };
                blocks.push(Block::new(rng, arch.kind, cin, width, stride));
                cin = width * arch.kind.expansion();
            }
            stages.push(blocks);
        }
        let mut habs: [Option<Hab>; 4] = Default::default();
        for &st in hab_stages {
            habs[st.index()] = Some(Hab::new(rng, spec));
        }
        Self {
            arch,
            stem,
            stem_out: None,
            pool: MaxPool2d::new(3, 2, 1),
            stages,
            habs,
        }
    }

    pub fn arch(&self) -> Arch {
        self.arch
    }

    pub fn hab(&self, stage: Stage) -> Option<&Hab> {
        self.habs[stage.index()].as_ref()
    }

    pub fn hab_mut(&mut self, stage: Stage) -> Option<&mut Hab> {
        self.habs[stage.index()].as_mut()
    }

    pub fn hab_stages(&self) -> Vec<Stage> {
        Stage::ALL
            .into_iter()
            .filter(|s| self.habs[s.index()].is_some())
            .collect()
    }

    /// Output spatial size for a square input.
    pub fn output_size(&self, input: usize) -> usize {
        let (h, _) = self.stem.conv.output_size(input, input);
        let (mut h, _) = self.pool.output_size(h, h);
        for stage in Stage::ALL {
            if stage.stride() == 2 {
                h = (h + 2 - 3) / 2 + 1;
            }
        }
        h
    }

    pub fn forward(&mut self, x: &Tensor, pass: Pass) -> Result<Tensor> {
        if x.channels() != 3 {
            return Err(Error::Shape(format!(
                "expected a 3-channel image, got {} channels",
                x.channels()
            )));
        }
        let mut h = self.stem.forward(x, pass)?;
        relu_inplace(&mut h);
        self.stem_out = pass.record.then(|| h.clone());
        h = self.pool.forward(&h, pass.record);
        for (i, blocks) in self.stages.iter_mut().enumerate() {
            for b in blocks.iter_mut() {
                h = b.forward(&h, pass)?;
            }
            if let Some(hab) = &mut self.habs[i] {
                h = hab.forward(&h, pass)?;
            }
        }
        Ok(h)
    }

    /// Accumulates parameter gradients; the image gradient is not computed.
    pub fn backward(&mut self, dy: &Tensor) {
        let mut g = dy.clone();
        for i in (0..self.stages.len()).rev() {
            if let Some(hab) = &mut self.habs[i] {
                g = hab.backward(&g);
            }
            for b in self.stages[i].iter_mut().rev() {
                g = b.backward(&g);
            }
        }
        g = self.pool.backward(&g);
        let out = self.stem_out.take().expect("recorded stem output");
        relu_backward(&mut g, &out);
        self.stem.backward(&g);
    }
}

impl Module for Backbone {
    fn visit(&mut self, prefix: &str, v: &mut dyn Visitor) {
        self.stem.visit(&join(prefix, "stem"), v);
        for (stage, blocks) in Stage::ALL.iter().zip(self.stages.iter_mut()) {
            for (i, b) in blocks.iter_mut().enumerate() {
                b.visit(&join(prefix, &format!("{}.{}", stage.name(), i)), v);
            }
        }
        for stage in Stage::ALL {
            if let Some(hab) = &mut self.habs[stage.index()] {
                hab.visit(&join(prefix, &format!("hab.{}", stage.name())), v);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn channel_counts() {
        assert_eq!(Arch::resnet50().out_channels(), 2048);
        assert_eq!(Arch::resnet18().out_channels(), 512);
        assert_eq!(Arch::tiny(16).out_channels(), 128);
    }

    #[test]
    fn tiny_backbone_downsamples_by_sixteen() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut bb = Backbone::new(
            &mut rng,
            Arch::tiny(4),
            &[Stage::Stage3, Stage::Stage5],
            PartitionSpec::default(),
        );
        for size in [32, 64, 96] {
            let y = bb.forward(&Tensor::zeros(1, 3, size, size), Pass::INFER).unwrap();
            assert_eq!(y.shape(), [1, 32, size / 16, size / 16]);
            assert_eq!(bb.output_size(size), size / 16);
        }
        assert!(bb.forward(&Tensor::zeros(1, 1, 32, 32), Pass::INFER).is_err());
    }

    #[test]
    fn bottleneck_blocks_have_projection_shortcuts() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut bb = Backbone::new(
            &mut rng,
            Arch {
                kind: BlockKind::Bottleneck,
                blocks: [1, 2, 1, 1],
                base_width: 2,
            },
            &[],
            PartitionSpec::default(),
        );
        let y = bb.forward(&Tensor::zeros(2, 3, 32, 32), Pass::INFER).unwrap();
        assert_eq!(y.shape(), [2, 64, 2, 2]);
    }
}
