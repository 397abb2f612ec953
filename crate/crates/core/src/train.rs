//! The training loop over in-memory images.
//!
//! Each step runs one shared forward pass over the drone batch followed by the
//! satellite images of the same classes, so every label appears twice. The
//! center loss and the optional triplet term act on the normalized joint
//! vector; cross-entropy and the deconstruction loss act on the logits of the
//! whole concatenated batch.

use alloc::format;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{augment, BatchSampler, Pair};
use crate::image::{to_input_tensor, RgbImage};
use crate::losses::{
    batch_hard_triplet, center_loss, cross_entropy, deconstruction_from_logits, total_loss, ClassCenters, LossParts,
    LossWeights,
};
use crate::math;
use crate::nn::{zero_grads, Descriptor, DescriptorKind, Model, ModelConfig, Pass};
use crate::optim::{sgd_step, SgdConfig};
use crate::retrieval::{evaluate, Direction, GalleryIndex, RetrievalReport, View};
use crate::tensor::Tensor;
use crate::{Error, Result};

/// Extra metric-learning term on the joint descriptor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AuxLoss {
    #[default]
    None,
    Triplet,
}

impl AuxLoss {
    pub fn name(self) -> &'static str {
        match self {
            AuxLoss::None => "none",
            AuxLoss::Triplet => "triplet",
        }
    }

    pub fn parse(s: &str) -> Option<AuxLoss> {
        match s {
            "none" => Some(AuxLoss::None),
            "triplet" => Some(AuxLoss::Triplet),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub loss: LossWeights,
    pub aux: AuxLoss,
    pub triplet_margin: f64,
    /// Step size of the class-center update.
    pub center_lr: f64,
    /// Largest L2 norm of the deconstruction-loss gradient on the logits;
    /// zero disables the bound.
    pub dc_clip: f64,
    pub optim: SgdConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub augment: bool,
    pub seed: u64,
}

impl TrainConfig {
    pub fn standard(num_classes: usize) -> Self {
        Self {
            model: ModelConfig::standard(num_classes),
            loss: LossWeights::default(),
            aux: AuxLoss::None,
            triplet_margin: 0.3,
            center_lr: 0.5,
            dc_clip: 0.0,
            optim: SgdConfig::default(),
            epochs: 200,
            batch_size: 32,
            augment: true,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.loss.validate()?;
        self.optim.validate()?;
        if self.epochs == 0 {
            return Err(Error::Config("optim.epochs must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("optim.batch_size must be positive".into()));
        }
        if !(self.center_lr.is_finite() && self.center_lr >= 0.0) {
            return Err(Error::Config("center learning rate must be non-negative".into()));
        }
        if !(self.dc_clip.is_finite() && self.dc_clip >= 0.0) {
            return Err(Error::Config(
                "deconstruction gradient bound must be non-negative".into(),
            ));
        }
        if !(self.triplet_margin.is_finite() && self.triplet_margin >= 0.0) {
            return Err(Error::Config("triplet margin must be non-negative".into()));
        }
        Ok(())
    }
}

/// Training images grouped by class index.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    pub satellite: Vec<Vec<RgbImage>>,
    pub drone: Vec<Vec<RgbImage>>,
}

impl TrainingSet {
    pub fn num_classes(&self) -> usize {
        self.satellite.len()
    }

    pub fn pairs(&self) -> Vec<Pair> {
        let mut out = Vec::new();
        for (k, (sats, drones)) in self.satellite.iter().zip(&self.drone).enumerate() {
            if sats.is_empty() {
                continue;
            }
            for d in 0..drones.len() {
                out.push(Pair {
                    class: k,
                    drone: d,
                    satellite: d % sats.len(),
                });
            }
        }
        out
    }
}

/// Mean unweighted loss components over one epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub lr: f64,
    pub center: f64,
    pub ce: f64,
    pub dc: f64,
    pub aux: f64,
    pub total: f64,
    /// Fraction of training samples whose logits pick their class.
    pub accuracy: f64,
}

impl EpochMetrics {
    pub const CSV_HEADER: &'static str = "epoch,lr,center,ce,dc,aux,total,accuracy";

    pub fn csv_row(&self) -> alloc::string::String {
        format!(
            "{},{:.6e},{:.8},{:.8},{:.8},{:.8},{:.8},{:.6}",
            self.epoch, self.lr, self.center, self.ce, self.dc, self.aux, self.total, self.accuracy
        )
    }
}

pub struct Trainer {
    pub config: TrainConfig,
    pub model: Model,
    pub centers: ClassCenters,
    sampler: BatchSampler,
    pairs: Vec<Pair>,
    epoch: usize,
    step: usize,
}

impl Trainer {
    pub fn new(config: TrainConfig, data: &TrainingSet) -> Result<Self> {
        config.validate()?;
        if data.num_classes() != config.model.num_classes || data.drone.len() != data.num_classes() {
            return Err(Error::Config(format!(
                "model has {} classes but the training set has {}",
                config.model.num_classes,
                data.num_classes()
            )));
        }
        let pairs = data.pairs();
        let sampler = BatchSampler::new(&pairs, config.batch_size, config.seed)?;
        let model = Model::new(config.model.clone(), config.seed)?;
        let centers = ClassCenters::zeros(config.model.num_classes, config.model.joint_dim());
        Ok(Self {
            config,
            model,
            centers,
            sampler,
            pairs,
            epoch: 0,
            step: 0,
        })
    }

    /// Resumes from an existing model (and optionally centers).
    pub fn with_model(
        config: TrainConfig,
        data: &TrainingSet,
        model: Model,
        centers: Option<ClassCenters>,
    ) -> Result<Self> {
        let mut t = Self::new(config, data)?;
        if model.config() != &t.config.model {
            return Err(Error::Config(
                "model configuration does not match the training configuration".into(),
            ));
        }
        t.model = model;
        if let Some(c) = centers {
            t.centers = c;
        }
        Ok(t)
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn steps_per_epoch(&self) -> usize {
        self.sampler.steps_per_epoch()
    }

    /// Runs the next epoch.
    pub fn run_epoch(&mut self, data: &TrainingSet) -> Result<EpochMetrics> {
        let epoch = self.epoch;
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed ^ 0x5eed_a11e);
        rng.set_stream(epoch as u64);
        let mut sum = LossParts::default();
        let (mut aux_sum, mut total_sum, mut correct, mut seen) = (0.0, 0.0, 0usize, 0usize);
        let steps = self.sampler.epoch(epoch);
        for step in &steps {
            let prepare = |img: &RgbImage, rng: &mut ChaCha8Rng| -> Result<RgbImage> {
                if self.config.augment {
                    augment(img, rng)
                } else {
                    Ok(img.clone())
                }
            };
            let mut images = Vec::with_capacity(2 * step.pairs.len());
            for &i in &step.pairs {
                let p = self.pairs[i];
                images.push(prepare(&data.drone[p.class][p.drone], &mut rng)?);
            }
            for &i in &step.pairs {
                let p = self.pairs[i];
                images.push(prepare(&data.satellite[p.class][p.satellite], &mut rng)?);
            }
            let refs: Vec<&RgbImage> = images.iter().collect();
            let x = to_input_tensor(&refs, self.config.model.input_size)?;
            let labels: Vec<usize> = step.labels.iter().chain(&step.labels).copied().collect();
            let out = self.train_step(&x, &labels, epoch)?;
            sum.center += out.parts.center;
            sum.ce += out.parts.ce;
            sum.dc += out.parts.dc;
            aux_sum += out.aux;
            total_sum += out.total;
            correct += out.correct;
            seen += labels.len();
        }
        self.epoch += 1;
        let n = steps.len() as f64;
        Ok(EpochMetrics {
            epoch,
            lr: self.config.optim.lr_at(epoch),
            center: sum.center / n,
            ce: sum.ce / n,
            dc: sum.dc / n,
            aux: aux_sum / n,
            total: total_sum / n,
            accuracy: correct as f64 / seen as f64,
        })
    }

    /// One forward/backward/update on a prepared batch.
    pub fn train_step(&mut self, x: &Tensor, labels: &[usize], epoch: usize) -> Result<StepOutput> {
        let cfg = &self.config;
        let classes = cfg.model.num_classes;
        let n = labels.len();
        let out = self.model.forward(x, Pass::TRAIN)?;
        let logits = out.logits.data();
        let jbn = out.joint_bn.data();
        let ce = cross_entropy(logits, classes, labels)?;
        let mut dc = deconstruction_from_logits(logits, n, classes, cfg.loss.lambda_dc)?;
        if cfg.dc_clip > 0.0 {
            let norm = math::sqrt(dc.grad.iter().map(|g| g * g).sum());
            if norm > cfg.dc_clip {
                dc.grad.iter_mut().for_each(|g| *g *= cfg.dc_clip / norm);
            }
        }
        let center = center_loss(jbn, labels, &self.centers, 1.0)?;
        let parts = LossParts {
            center: center.value,
            ce: ce.value,
            dc: dc.value,
        };
        let mut total = total_loss(&parts, &cfg.loss).map_err(|_| Error::DivergedAt { step: self.step })?;
        let mut grad_logits = Tensor::zeros(n, classes, 1, 1);
        for ((g, a), b) in grad_logits.data_mut().iter_mut().zip(&ce.grad).zip(&dc.grad) {
            *g = cfg.loss.w_ce * a + cfg.loss.w_dc * b;
        }
        let mut grad_jbn = Tensor::zeros(n, cfg.model.joint_dim(), 1, 1);
        grad_jbn
            .data_mut()
            .iter_mut()
            .zip(&center.grad)
            .for_each(|(g, c)| *g = cfg.loss.w_center * c);
        let mut aux = 0.0;
        if cfg.aux == AuxLoss::Triplet {
            let t = batch_hard_triplet(jbn, cfg.model.joint_dim(), labels, cfg.triplet_margin)?;
            aux = t.value;
            total += t.value;
            grad_jbn.data_mut().iter_mut().zip(&t.grad).for_each(|(g, t)| *g += t);
        }
        if !total.is_finite() {
            return Err(Error::DivergedAt { step: self.step });
        }
        let correct = logits
            .chunks_exact(classes)
            .zip(labels)
            .filter(|(row, &l)| argmax(row) == l)
            .count();
        let jbn = jbn.to_vec();
        zero_grads(&mut self.model);
        self.model.backward(Some(&grad_jbn), &grad_logits);
        sgd_step(&self.config.optim, &mut self.model, epoch);
        self.centers.update(&jbn, labels, self.config.center_lr)?;
        self.step += 1;
        Ok(StepOutput {
            parts,
            aux,
            total,
            correct,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutput {
    pub parts: LossParts,
    pub aux: f64,
    pub total: f64,
    pub correct: usize,
}

fn argmax(row: &[f64]) -> usize {
    row.iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map_or(0, |(i, _)| i)
}

/// Inference descriptors for many images, `batch` at a time.
pub fn embed_images(model: &mut Model, images: &[&RgbImage], batch: usize) -> Result<Vec<Descriptor>> {
    let size = model.config().input_size;
    let mut out = Vec::with_capacity(images.len());
    for chunk in images.chunks(batch.max(1)) {
        let x = to_input_tensor(chunk, size)?;
        out.extend(model.embed(&x)?);
    }
    Ok(out)
}

/// Builds a retrieval set from descriptors.
pub fn descriptor_index(
    descriptors: &[Descriptor],
    ids: Vec<usize>,
    kind: DescriptorKind,
    view: View,
) -> Result<GalleryIndex> {
    let rows: Vec<Vec<f64>> = descriptors.iter().map(|d| d.retrieval(kind).to_vec()).collect();
    GalleryIndex::from_rows(&rows, ids, view)
}

/// Drone-to-satellite retrieval over the (unaugmented) training images.
pub fn training_recall(model: &mut Model, data: &TrainingSet) -> Result<RetrievalReport> {
    let kind = model.config().descriptor;
    let (mut drones, mut drone_ids, mut sats, mut sat_ids) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for k in 0..data.num_classes() {
        for img in &data.drone[k] {
            drones.push(img);
            drone_ids.push(k);
        }
        for img in &data.satellite[k] {
            sats.push(img);
            sat_ids.push(k);
        }
    }
    let q = embed_images(model, &drones, 32)?;
    let g = embed_images(model, &sats, 32)?;
    evaluate(
        &descriptor_index(&q, drone_ids, kind, View::Drone)?,
        &descriptor_index(&g, sat_ids, kind, View::Satellite)?,
        Direction::DroneToSatellite,
    )
}
