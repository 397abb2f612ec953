//! Run configuration: a preset, then a TOML file of dotted keys, then
//! `GEOLOC_*` environment variables, then `--set key=value` flags.
//!
//! Every layer goes through [`RunConfig::set`], so all of them accept the same
//! keys and reject the same unknown ones.

use std::path::PathBuf;

use anyhow::Result;
use geoloc_core::nn::{Arch, DescriptorKind, PoolMethod, Stage};
use geoloc_core::train::{AuxLoss, TrainConfig};
use geoloc_core::PartitionSpec;

use crate::usage;

pub const ENV_PREFIX: &str = "GEOLOC_";

/// Every accepted key, in the order [`RunConfig::to_toml`] writes them.
pub const KEYS: &[&str] = &[
    "seed",
    "partition.ratio",
    "model.backbone",
    "model.base_width",
    "model.hab_stages",
    "model.pooling",
    "model.gem_p",
    "model.learn_p",
    "model.input_size",
    "model.descriptor",
    "loss.w_center",
    "loss.w_ce",
    "loss.w_dc",
    "loss.lambda_dc",
    "loss.dc_clip",
    "loss.center_lr",
    "loss.aux",
    "loss.triplet_margin",
    "optim.lr",
    "optim.head_lr_mult",
    "optim.momentum",
    "optim.weight_decay",
    "optim.step_epochs",
    "optim.gamma",
    "optim.clip_norm",
    "optim.epochs",
    "optim.batch_size",
    "data.satellite_dir",
    "data.drone_dir",
    "data.augment",
];

/// Keys that fix the network's shape; a checkpoint records them.
pub fn is_model_key(key: &str) -> bool {
    key.starts_with("model.") || key.starts_with("partition.")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Preset {
    /// ResNet-50 at 256 px for 200 epochs.
    Default,
    /// A tiny backbone at 64 px for 40 epochs; trains on a CPU in minutes.
    Toy,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// Class count is a placeholder until the dataset is scanned.
    pub train: TrainConfig,
    pub backbone: String,
    pub base_width: usize,
    pub satellite_dir: Option<PathBuf>,
    pub drone_dir: Option<PathBuf>,
}

fn bad_value(key: &str, value: &str, expected: &str) -> anyhow::Error {
    usage(format!("{key}: expected {expected}, got {value:?}"))
}

fn num<T: std::str::FromStr>(key: &str, value: &str, expected: &str) -> Result<T> {
    value.trim().parse().map_err(|_| bad_value(key, value, expected))
}

fn stage_list(value: &str) -> Option<Vec<Stage>> {
    let v = value.trim();
    if v.is_empty() || v == "none" {
        return Some(Vec::new());
    }
    v.split(',').map(|s| Stage::parse(s.trim())).collect()
}

fn pool_name(p: PoolMethod) -> &'static str {
    match p {
        PoolMethod::Gem => "gem",
        PoolMethod::Avg => "avg",
        PoolMethod::Max => "max",
        PoolMethod::Sum => "sum",
    }
}

fn parse_pool(s: &str) -> Option<PoolMethod> {
    [PoolMethod::Gem, PoolMethod::Avg, PoolMethod::Max, PoolMethod::Sum]
        .into_iter()
        .find(|p| pool_name(*p) == s)
}

impl RunConfig {
    pub fn preset(preset: Preset) -> Self {
        let mut train = TrainConfig::standard(1);
        let (backbone, base_width) = match preset {
            Preset::Default => ("resnet50", 64),
            Preset::Toy => {
                train.model.input_size = 64;
                train.epochs = 40;
                train.batch_size = 16;
                train.optim.lr = 0.02;
                // Absent classes give the deconstruction gradient a 1/std blow-up
                // that would otherwise crowd cross-entropy out of the global clip.
                train.dc_clip = 0.03;
                ("tiny", 16)
            }
        };
        train.model.arch = Arch::by_name(backbone, Some(base_width)).expect("known backbone");
        Self {
            train,
            backbone: backbone.to_string(),
            base_width,
            satellite_dir: None,
            drone_dir: None,
        }
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let t = &mut self.train;
        let v = value.trim();
        match key {
            "seed" => t.seed = num(key, v, "an unsigned integer")?,
            "partition.ratio" => {
                let r: f64 = num(key, v, "a number")?;
                t.model.partition = PartitionSpec::new(r).map_err(|e| usage(format!("{key}: {e}")))?;
            }
            "model.backbone" => {
                if Arch::by_name(v, None).is_none() {
                    return Err(bad_value(key, v, "resnet50, resnet18 or tiny"));
                }
                self.backbone = v.to_string();
            }
            "model.base_width" => self.base_width = num(key, v, "a positive integer")?,
            "model.hab_stages" => {
                t.model.hab_stages =
                    stage_list(v).ok_or_else(|| bad_value(key, v, "a comma list of stage3, stage4, stage5"))?
            }
            "model.pooling" => {
                t.model.pooling = parse_pool(v).ok_or_else(|| bad_value(key, v, "gem, avg, max or sum"))?
            }
            "model.gem_p" => t.model.gem_p = num(key, v, "a number")?,
            "model.learn_p" => t.model.learn_p = num(key, v, "true or false")?,
            "model.input_size" => t.model.input_size = num(key, v, "a positive integer")?,
            "model.descriptor" => {
                t.model.descriptor =
                    DescriptorKind::parse(v).ok_or_else(|| bad_value(key, v, "joint_bn or compressed"))?
            }
            "loss.w_center" => t.loss.w_center = num(key, v, "a number")?,
            "loss.w_ce" => t.loss.w_ce = num(key, v, "a number")?,
            "loss.w_dc" => t.loss.w_dc = num(key, v, "a number")?,
            "loss.lambda_dc" => t.loss.lambda_dc = num(key, v, "a number")?,
            "loss.dc_clip" => t.dc_clip = num(key, v, "a number")?,
            "loss.center_lr" => t.center_lr = num(key, v, "a number")?,
            "loss.aux" => t.aux = AuxLoss::parse(v).ok_or_else(|| bad_value(key, v, "none or triplet"))?,
            "loss.triplet_margin" => t.triplet_margin = num(key, v, "a number")?,
            "optim.lr" => t.optim.lr = num(key, v, "a number")?,
            "optim.head_lr_mult" => t.optim.head_lr_mult = num(key, v, "a number")?,
            "optim.momentum" => t.optim.momentum = num(key, v, "a number")?,
            "optim.weight_decay" => t.optim.weight_decay = num(key, v, "a number")?,
            "optim.step_epochs" => t.optim.step_epochs = num(key, v, "a positive integer")?,
            "optim.gamma" => t.optim.gamma = num(key, v, "a number")?,
            "optim.clip_norm" => t.optim.clip_norm = num(key, v, "a number")?,
            "optim.epochs" => t.epochs = num(key, v, "a positive integer")?,
            "optim.batch_size" => t.batch_size = num(key, v, "a positive integer")?,
            "data.satellite_dir" => self.satellite_dir = (!v.is_empty()).then(|| PathBuf::from(v)),
            "data.drone_dir" => self.drone_dir = (!v.is_empty()).then(|| PathBuf::from(v)),
            "data.augment" => t.augment = num(key, v, "true or false")?,
            _ => return Err(usage(format!("unknown config key {key:?}"))),
        }
        if key == "model.backbone" || key == "model.base_width" {
            if let Some(arch) = Arch::by_name(&self.backbone, Some(self.base_width)) {
                self.train.model.arch = arch;
            }
        }
        Ok(())
    }

    /// Current value of `key` in the form [`set`](Self::set) accepts.
    pub fn get(&self, key: &str) -> Option<String> {
        let t = &self.train;
        let path = |p: &Option<PathBuf>| p.as_ref().map_or(String::new(), |p| p.to_string_lossy().into_owned());
        Some(match key {
            "seed" => t.seed.to_string(),
            "partition.ratio" => format!("{:?}", t.model.partition.ratio()),
            "model.backbone" => self.backbone.clone(),
            "model.base_width" => self.base_width.to_string(),
            "model.hab_stages" => t
                .model
                .hab_stages
                .iter()
                .map(|s| s.name())
                .collect::<Vec<_>>()
                .join(","),
            "model.pooling" => pool_name(t.model.pooling).to_string(),
            "model.gem_p" => format!("{:?}", t.model.gem_p),
            "model.learn_p" => t.model.learn_p.to_string(),
            "model.input_size" => t.model.input_size.to_string(),
            "model.descriptor" => t.model.descriptor.name().to_string(),
            "loss.w_center" => format!("{:?}", t.loss.w_center),
            "loss.w_ce" => format!("{:?}", t.loss.w_ce),
            "loss.w_dc" => format!("{:?}", t.loss.w_dc),
            "loss.lambda_dc" => format!("{:?}", t.loss.lambda_dc),
            "loss.dc_clip" => format!("{:?}", t.dc_clip),
            "loss.center_lr" => format!("{:?}", t.center_lr),
            "loss.aux" => t.aux.name().to_string(),
            "loss.triplet_margin" => format!("{:?}", t.triplet_margin),
            "optim.lr" => format!("{:?}", t.optim.lr),
            "optim.head_lr_mult" => format!("{:?}", t.optim.head_lr_mult),
            "optim.momentum" => format!("{:?}", t.optim.momentum),
            "optim.weight_decay" => format!("{:?}", t.optim.weight_decay),
            "optim.step_epochs" => t.optim.step_epochs.to_string(),
            "optim.gamma" => format!("{:?}", t.optim.gamma),
            "optim.clip_norm" => format!("{:?}", t.optim.clip_norm),
            "optim.epochs" => t.epochs.to_string(),
            "optim.batch_size" => t.batch_size.to_string(),
            "data.satellite_dir" => path(&self.satellite_dir),
            "data.drone_dir" => path(&self.drone_dir),
            "data.augment" => t.augment.to_string(),
            _ => return None,
        })
    }

    /// Applies a TOML document; nested tables and dotted keys are equivalent.
    pub fn apply_toml(&mut self, text: &str) -> Result<()> {
        let table: toml::Table = text.parse().map_err(|e| usage(format!("config file: {e}")))?;
        let mut flat = Vec::new();
        flatten("", &toml::Value::Table(table), &mut flat)?;
        for (k, v) in flat {
            self.set(&k, &v)?;
        }
        Ok(())
    }

    /// Applies `GEOLOC_<KEY>` variables, where `<KEY>` is the dotted key
    /// upper-cased with dots turned into underscores.
    pub fn apply_env<I: IntoIterator<Item = (String, String)>>(&mut self, vars: I) -> Result<()> {
        let mut found: Vec<(String, String)> = vars.into_iter().filter(|(k, _)| k.starts_with(ENV_PREFIX)).collect();
        found.sort();
        for (var, value) in found {
            let key = KEYS
                .iter()
                .find(|k| env_name(k) == var)
                .ok_or_else(|| usage(format!("unknown config variable {var}")))?;
            self.set(key, &value)?;
        }
        Ok(())
    }

    /// Applies `key=value` strings.
    pub fn apply_overrides(&mut self, pairs: &[String]) -> Result<()> {
        for p in pairs {
            let (k, v) = p
                .split_once('=')
                .ok_or_else(|| usage(format!("override {p:?} is not key=value")))?;
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    /// Training configuration for `num_classes` classes, fully validated.
    pub fn resolve(&self, num_classes: usize) -> Result<TrainConfig> {
        let mut t = self.train.clone();
        t.model.num_classes = num_classes;
        t.model.arch = Arch::by_name(&self.backbone, Some(self.base_width)).expect("validated in set");
        t.validate().map_err(|e| usage(e.to_string()))?;
        Ok(t)
    }

    /// Every key as a TOML document that [`apply_toml`](Self::apply_toml) reads back.
    pub fn to_toml(&self) -> String {
        self.to_toml_filtered(|_| true)
    }

    pub fn to_toml_filtered(&self, keep: impl Fn(&str) -> bool) -> String {
        let mut s = String::new();
        for key in KEYS.iter().filter(|k| keep(k)) {
            let value = self.get(key).expect("listed key");
            s.push_str(&format!("{key} = {}\n", toml_literal(key, &value)));
        }
        s
    }
}

pub fn env_name(key: &str) -> String {
    format!("{ENV_PREFIX}{}", key.to_ascii_uppercase().replace('.', "_"))
}

fn is_string_key(key: &str) -> bool {
    matches!(
        key,
        "model.backbone"
            | "model.hab_stages"
            | "model.pooling"
            | "model.descriptor"
            | "loss.aux"
            | "data.satellite_dir"
            | "data.drone_dir"
    )
}

fn toml_literal(key: &str, value: &str) -> String {
    if is_string_key(key) {
        toml::Value::String(value.to_string()).to_string()
    } else {
        value.to_string()
    }
}

fn flatten(prefix: &str, value: &toml::Value, out: &mut Vec<(String, String)>) -> Result<()> {
    let scalar = match value {
        toml::Value::Table(t) => {
            for (k, v) in t {
                let key = if prefix.is_empty() {
                    k.clone()
                } else {
                    format!("{prefix}.{k}")
                };
                flatten(&key, v, out)?;
            }
            return Ok(());
        }
        toml::Value::String(s) => s.clone(),
        toml::Value::Integer(i) => i.to_string(),
        toml::Value::Float(f) => f.to_string(),
        toml::Value::Boolean(b) => b.to_string(),
        toml::Value::Array(items) => {
            let mut parts = Vec::new();
            for item in items {
                match item {
                    toml::Value::String(s) => parts.push(s.clone()),
                    other => parts.push(other.to_string()),
                }
            }
            parts.join(",")
        }
        toml::Value::Datetime(_) => return Err(usage(format!("{prefix}: dates are not supported"))),
    };
    out.push((prefix.to_string(), scalar));
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layers_apply_in_order() {
        let mut c = RunConfig::preset(Preset::Toy);
        c.apply_toml("[optim]\nlr = 0.1\nepochs = 7\n[model]\nhab_stages = [\"stage5\"]\n")
            .unwrap();
        c.apply_env([
            ("GEOLOC_OPTIM_LR".to_string(), "0.2".to_string()),
            ("PATH".to_string(), "x".to_string()),
        ])
        .unwrap();
        c.apply_overrides(&["loss.w_dc=0".to_string()]).unwrap();
        assert_eq!(c.train.optim.lr, 0.2);
        assert_eq!(c.train.epochs, 7);
        assert_eq!(c.train.loss.w_dc, 0.0);
        assert_eq!(c.train.model.hab_stages, vec![Stage::Stage5]);
    }

    #[test]
    fn unknown_keys_are_usage_errors() {
        let mut c = RunConfig::preset(Preset::Default);
        for err in [
            c.set("optim.learning_rate", "1").unwrap_err(),
            c.apply_toml("bogus = 1").unwrap_err(),
            c.apply_env([("GEOLOC_NOPE".to_string(), "1".to_string())]).unwrap_err(),
            c.set("optim.lr", "fast").unwrap_err(),
        ] {
            assert_eq!(crate::exit_code(&err), crate::EXIT_USAGE);
        }
    }

    #[test]
    fn negative_learning_rate_fails_validation() {
        let mut c = RunConfig::preset(Preset::Toy);
        c.set("optim.lr", "-0.01").unwrap();
        let err = c.resolve(20).unwrap_err();
        assert_eq!(crate::exit_code(&err), crate::EXIT_USAGE);
        assert!(err.to_string().contains("optim.lr"));
    }

    #[test]
    fn toml_round_trip() {
        let mut c = RunConfig::preset(Preset::Toy);
        c.set("data.drone_dir", "some dir/\"quoted\"").unwrap();
        c.set("model.hab_stages", "").unwrap();
        c.set("partition.ratio", "0.375").unwrap();
        let mut back = RunConfig::preset(Preset::Default);
        back.apply_toml(&c.to_toml()).unwrap();
        assert_eq!(back, c);
        assert!(KEYS.iter().all(|k| c.get(k).is_some()));
    }

    #[test]
    fn env_names() {
        assert_eq!(env_name("loss.w_dc"), "GEOLOC_LOSS_W_DC");
        assert_eq!(env_name("seed"), "GEOLOC_SEED");
    }
}
