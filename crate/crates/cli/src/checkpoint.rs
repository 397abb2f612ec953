//! Checkpoint files.
//!
//! ```text
//! geoloc-checkpoint 1
//! class <id>                 one line per class, in label order
//! <model key> = <value>      TOML lines for every model.* / partition.* key
//! end
//! <records>                  u32 name length, name, u64 count, count x f64 (all little-endian)
//! ```
//!
//! Records hold every parameter and state buffer of the model under its
//! visitor name, plus the class centers under `centers`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use geoloc_core::losses::ClassCenters;
use geoloc_core::nn::{Model, Module, Param, Visitor};

use crate::config::{is_model_key, Preset, RunConfig};
use crate::usage;

const MAGIC: &str = "geoloc-checkpoint 1";
const CENTERS: &str = "centers";

pub struct Checkpoint {
    /// Carries the model keys; everything else is at preset defaults.
    pub config: RunConfig,
    pub classes: Vec<String>,
    pub model: Model,
    pub centers: Option<ClassCenters>,
}

struct Collect(Vec<(String, Vec<f64>)>);

impl Visitor for Collect {
    fn param(&mut self, name: &str, param: &mut Param) {
        self.0.push((name.to_string(), param.value.clone()));
    }
    fn buffer(&mut self, name: &str, buffer: &mut Vec<f64>) {
        self.0.push((name.to_string(), buffer.clone()));
    }
}

struct Fill<'a> {
    records: &'a mut BTreeMap<String, Vec<f64>>,
    errors: Vec<String>,
}

impl Fill<'_> {
    fn take(&mut self, name: &str, dst: &mut Vec<f64>) {
        match self.records.remove(name) {
            Some(v) if v.len() == dst.len() => *dst = v,
            Some(v) => self
                .errors
                .push(format!("{name} has {} values, the model needs {}", v.len(), dst.len())),
            None => self.errors.push(format!("{name} is missing")),
        }
    }
}

impl Visitor for Fill<'_> {
    fn param(&mut self, name: &str, param: &mut Param) {
        self.take(name, &mut param.value);
    }
    fn buffer(&mut self, name: &str, buffer: &mut Vec<f64>) {
        self.take(name, buffer);
    }
}

pub fn save(
    path: &Path,
    config: &RunConfig,
    classes: &[String],
    model: &mut Model,
    centers: &ClassCenters,
) -> Result<()> {
    let mut header = format!("{MAGIC}\n");
    for c in classes {
        header.push_str(&format!("class {c}\n"));
    }
    header.push_str(&config.to_toml_filtered(is_model_key));
    header.push_str("end\n");
    let mut bytes = header.into_bytes();
    let mut records = Collect(Vec::new());
    model.visit("", &mut records);
    records.0.push((CENTERS.to_string(), centers.values().to_vec()));
    for (name, values) in &records.0 {
        bytes.extend_from_slice(&(name.len() as u32).to_le_bytes());
        bytes.extend_from_slice(name.as_bytes());
        bytes.extend_from_slice(&(values.len() as u64).to_le_bytes());
        for v in values {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    // Write then rename so a crash never leaves a truncated checkpoint.
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, &bytes).with_context(|| format!("writing {}", tmp.display()))?;
    fs::rename(&tmp, path).with_context(|| format!("writing {}", path.display()))
}

fn take<'a>(bytes: &mut &'a [u8], n: usize) -> Result<&'a [u8]> {
    if bytes.len() < n {
        bail!("checkpoint is truncated");
    }
    let (head, rest) = bytes.split_at(n);
    *bytes = rest;
    Ok(head)
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let data = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    parse(&data).with_context(|| format!("loading checkpoint {}", path.display()))
}

pub fn parse(data: &[u8]) -> Result<Checkpoint> {
    let mut rest = data;
    let mut lines = Vec::new();
    loop {
        let end = rest
            .iter()
            .position(|&b| b == b'\n')
            .context("checkpoint header is not terminated")?;
        let line = std::str::from_utf8(&rest[..end])
            .context("checkpoint header is not UTF-8")?
            .to_string();
        rest = &rest[end + 1..];
        if line == "end" {
            break;
        }
        lines.push(line);
    }
    if lines.first().map(String::as_str) != Some(MAGIC) {
        bail!("not a geoloc checkpoint");
    }
    let mut classes = Vec::new();
    let mut toml_text = String::new();
    for line in &lines[1..] {
        match line.strip_prefix("class ") {
            Some(id) => classes.push(id.to_string()),
            None => {
                toml_text.push_str(line);
                toml_text.push('\n');
            }
        }
    }
    let mut config = RunConfig::preset(Preset::Default);
    config.apply_toml(&toml_text)?;
    let train = config.resolve(classes.len())?;

    let mut records = BTreeMap::new();
    while !rest.is_empty() {
        let n = u32::from_le_bytes(take(&mut rest, 4)?.try_into().expect("4 bytes")) as usize;
        let name = std::str::from_utf8(take(&mut rest, n)?)
            .context("record name is not UTF-8")?
            .to_string();
        let count = u64::from_le_bytes(take(&mut rest, 8)?.try_into().expect("8 bytes")) as usize;
        let raw = take(&mut rest, count.checked_mul(8).context("record too large")?)?;
        let values = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        records.insert(name, values);
    }

    let mut model = Model::new(train.model.clone(), 0)?;
    let centers = records
        .remove(CENTERS)
        .map(|v| ClassCenters::from_vec(classes.len(), train.model.joint_dim(), v))
        .transpose()
        .context("class centers")?;
    let mut fill = Fill {
        records: &mut records,
        errors: Vec::new(),
    };
    model.visit("", &mut fill);
    let mut errors = fill.errors;
    errors.extend(records.keys().map(|k| format!("{k} is not part of the model")));
    if !errors.is_empty() {
        return Err(usage(format!("checkpoint/config mismatch: {}", errors.join("; "))));
    }
    Ok(Checkpoint {
        config,
        classes,
        model,
        centers,
    })
}

/// Fails when a model key of `requested` differs from the checkpoint's.
pub fn check_compatible(checkpoint: &RunConfig, requested: &RunConfig) -> Result<()> {
    let mut diffs = Vec::new();
    for key in crate::config::KEYS.iter().filter(|k| is_model_key(k)) {
        let (a, b) = (checkpoint.get(key), requested.get(key));
        if a != b {
            diffs.push(format!(
                "{key} is {} in the checkpoint but {} in the config",
                a.unwrap_or_default(),
                b.unwrap_or_default()
            ));
        }
    }
    if diffs.is_empty() {
        Ok(())
    } else {
        Err(usage(format!("checkpoint/config mismatch: {}", diffs.join("; "))))
    }
}
