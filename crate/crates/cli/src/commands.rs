//! Subcommand definitions and their implementations.

use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use geoloc_core::data::{generate_toy, StyleJitter, ToySpec};
use geoloc_core::retrieval::{evaluate, Direction, View};
use geoloc_core::style_align::{
    apply_mapping, format_mapping, parse_mapping, satellite_mapping, ColorMapping, SatelliteReduction,
};
use geoloc_core::train::{descriptor_index, embed_images, training_recall, EpochMetrics, Trainer};
use geoloc_core::{Error, RgbImage};

use crate::config::{Preset, RunConfig};
use crate::{checkpoint, dataset, imageio, plot, usage};

#[derive(Debug, Parser)]
#[command(name = "geoloc", version, about = "Drone/satellite cross-view geo-localization")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build the satellite color mapping and apply it to a drone image tree.
    Preprocess(PreprocessArgs),
    /// Train a model and write metrics and checkpoints.
    Train(TrainArgs),
    /// Rank a gallery for every query image and report Recall@K and AP.
    Evaluate(EvaluateArgs),
    /// Write the synthetic toy dataset as PNG class folders.
    GenToy(GenToyArgs),
    /// Draw the three channel curves of a mapping file.
    PlotMapping(PlotArgs),
}

#[derive(Debug, Args)]
pub struct PreprocessArgs {
    /// Satellite images (searched recursively) that define the target style.
    #[arg(long, conflicts_with = "mapping_in")]
    pub satellite_dir: Option<PathBuf>,
    /// Reuse a mapping file instead of building one.
    #[arg(long)]
    pub mapping_in: Option<PathBuf>,
    /// Drone image tree to map; mirrored under --out-dir.
    #[arg(long, requires = "out_dir")]
    pub drone_dir: Option<PathBuf>,
    #[arg(long, requires = "drone_dir")]
    pub out_dir: Option<PathBuf>,
    #[arg(long)]
    pub mapping_out: Option<PathBuf>,
    /// One mapping from the pooled satellite histogram instead of averaging per-image mappings.
    #[arg(long)]
    pub pooled: bool,
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// TOML file of dotted config keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "default")]
    pub preset: Preset,
    #[arg(long)]
    pub seed: Option<u64>,
    /// `key=value` override, applied after the file and the environment.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

impl ConfigArgs {
    fn explicit(&self) -> bool {
        self.config.is_some() || !self.overrides.is_empty()
    }

    pub fn load(&self) -> Result<RunConfig> {
        let mut c = RunConfig::preset(self.preset);
        if let Some(path) = &self.config {
            let text =
                fs::read_to_string(path).map_err(|e| usage(format!("reading config {}: {e}", path.display())))?;
            c.apply_toml(&text).with_context(|| format!("in {}", path.display()))?;
        }
        c.apply_env(std::env::vars())?;
        c.apply_overrides(&self.overrides)?;
        if let Some(seed) = self.seed {
            c.train.seed = seed;
        }
        Ok(c)
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Receives metrics.csv, best.ckpt, last.ckpt, config.toml, manifest.tsv and train_report.txt.
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Class-folder tree of query images.
    #[arg(long)]
    pub query_dir: PathBuf,
    /// Class-folder tree of gallery images.
    #[arg(long)]
    pub gallery_dir: PathBuf,
    #[arg(long, default_value = "drone-to-satellite", value_parser = parse_direction)]
    pub direction: Direction,
    /// Mapping applied to the drone-view side before embedding.
    #[arg(long)]
    pub mapping: Option<PathBuf>,
    /// Receives report.txt, report_table.txt and ranks.tsv.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long, default_value_t = 32)]
    pub batch: usize,
    /// Only checked against the checkpoint's model keys.
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct GenToyArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 20)]
    pub classes: usize,
    #[arg(long, default_value_t = 8)]
    pub drone_views: usize,
    #[arg(long, default_value_t = 8)]
    pub query_views: usize,
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// Render drone views without haze, tint or saturation changes.
    #[arg(long)]
    pub no_jitter: bool,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    #[arg(long)]
    pub mapping: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 512)]
    pub size: usize,
}

fn parse_direction(s: &str) -> std::result::Result<Direction, String> {
    Direction::parse(s).ok_or_else(|| format!("unknown direction {s:?}; use drone-to-satellite or satellite-to-drone"))
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Preprocess(a) => preprocess(&a),
        Command::Train(a) => train(&a),
        Command::Evaluate(a) => evaluate_cmd(&a),
        Command::GenToy(a) => gen_toy(&a),
        Command::PlotMapping(a) => plot_mapping(&a),
    }
}

fn read_mapping(path: &Path) -> Result<ColorMapping> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse_mapping(&text).with_context(|| format!("parsing mapping {}", path.display()))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn preprocess(a: &PreprocessArgs) -> Result<()> {
    if a.mapping_out.is_none() && a.drone_dir.is_none() {
        return Err(usage(
            "nothing to do: pass --mapping-out and/or --drone-dir with --out-dir",
        ));
    }
    let drone_images = match (&a.drone_dir, &a.out_dir) {
        (Some(d), Some(o)) => {
            if !d.is_dir() {
                return Err(usage(format!("drone directory {} does not exist", d.display())));
            }
            if o.starts_with(d) {
                return Err(usage("--out-dir must not lie inside --drone-dir"));
            }
            imageio::list_images(d)?
        }
        _ => Vec::new(),
    };
    let mapping = match (&a.satellite_dir, &a.mapping_in) {
        (_, Some(m)) => read_mapping(m)?,
        (Some(dir), None) => {
            if !dir.is_dir() {
                return Err(usage(format!(
                    "no satellite mappings: {} is not a directory",
                    dir.display()
                )));
            }
            let paths = imageio::list_images(dir)?;
            if paths.is_empty() {
                return Err(usage(format!(
                    "no satellite mappings: no images under {}",
                    dir.display()
                )));
            }
            let reduction = if a.pooled {
                SatelliteReduction::Pooled
            } else {
                SatelliteReduction::PerImageAverage
            };
            satellite_mapping(&imageio::load_all(&paths)?, reduction)?
        }
        (None, None) => return Err(usage("no satellite mappings: pass --satellite-dir or --mapping-in")),
    };
    if let Some(path) = &a.mapping_out {
        write_text(path, &format_mapping(&mapping))?;
        println!("mapping written to {}", path.display());
    }
    if let (Some(d), Some(o)) = (&a.drone_dir, &a.out_dir) {
        for src in &drone_images {
            let rel = src.strip_prefix(d).expect("listed below the drone dir");
            imageio::save(&o.join(rel), &apply_mapping(&imageio::load(src)?, &mapping))?;
        }
        println!("mapped {} drone images into {}", drone_images.len(), o.display());
    }
    Ok(())
}

pub fn train(a: &TrainArgs) -> Result<()> {
    let cfg = a.config.load()?;
    cfg.resolve(1)?;
    let sat_dir = cfg
        .satellite_dir
        .clone()
        .ok_or_else(|| usage("data.satellite_dir is not set"))?;
    let drone_dir = cfg
        .drone_dir
        .clone()
        .ok_or_else(|| usage("data.drone_dir is not set"))?;
    let manifest = dataset::training_manifest(&sat_dir, &drone_dir)?;
    let train_cfg = cfg.resolve(manifest.num_classes())?;
    let data = dataset::load_training_set(&manifest)?;
    let epochs = train_cfg.epochs;
    let mut trainer = Trainer::new(train_cfg, &data)?;
    let classes: Vec<String> = manifest.class_ids().into_iter().map(String::from).collect();

    let out = &a.out_dir;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    write_text(&out.join("config.toml"), &cfg.to_toml())?;
    write_text(&out.join("manifest.tsv"), &manifest.to_cache_text())?;
    let metrics_path = out.join("metrics.csv");
    let mut metrics =
        fs::File::create(&metrics_path).with_context(|| format!("creating {}", metrics_path.display()))?;
    writeln!(metrics, "{}", EpochMetrics::CSV_HEADER)?;
    println!(
        "training {} classes, {} pairs, {} steps per epoch, {} epochs",
        classes.len(),
        data.pairs().len(),
        trainer.steps_per_epoch(),
        epochs
    );

    let mut best = f64::NEG_INFINITY;
    for _ in 0..epochs {
        let m = trainer.run_epoch(&data).context("training")?;
        writeln!(metrics, "{}", m.csv_row())?;
        metrics.flush()?;
        println!(
            "epoch {:>3}/{} lr {:.2e} total {:.4} (center {:.2} ce {:.4} dc {:.4}) accuracy {:.3}",
            m.epoch + 1,
            epochs,
            m.lr,
            m.total,
            m.center,
            m.ce,
            m.dc,
            m.accuracy
        );
        // Later epochs win ties: the schedule only ever lowers the rate.
        if m.accuracy >= best {
            best = m.accuracy;
            checkpoint::save(
                &out.join("best.ckpt"),
                &cfg,
                &classes,
                &mut trainer.model,
                &trainer.centers,
            )?;
        }
    }
    checkpoint::save(
        &out.join("last.ckpt"),
        &cfg,
        &classes,
        &mut trainer.model,
        &trainer.centers,
    )?;
    let report = training_recall(&mut trainer.model, &data)?;
    write_text(&out.join("train_report.txt"), &report.to_key_values())?;
    println!(
        "training-set drone-to-satellite recall@1 {:.4}",
        report.recall(1).unwrap_or(0.0)
    );
    Ok(())
}

struct Side {
    paths: Vec<PathBuf>,
    ids: Vec<usize>,
    images: Vec<RgbImage>,
}

fn load_side(listed: Vec<(String, PathBuf)>, classes: &[String], mapping: Option<&ColorMapping>) -> Result<Side> {
    let mut side = Side {
        paths: Vec::new(),
        ids: Vec::new(),
        images: Vec::new(),
    };
    for (class, path) in listed {
        let img = imageio::load(&path)?;
        side.images.push(match mapping {
            Some(m) => apply_mapping(&img, m),
            None => img,
        });
        side.ids
            .push(classes.binary_search(&class).expect("class collected from both sides"));
        side.paths.push(path);
    }
    Ok(side)
}

pub fn evaluate_cmd(a: &EvaluateArgs) -> Result<()> {
    let requested = if a.config.explicit() {
        Some(a.config.load()?)
    } else {
        None
    };
    if a.batch == 0 {
        return Err(usage("--batch must be positive"));
    }
    let query_list = dataset::scan_classes(&a.query_dir)?;
    let gallery_list = dataset::scan_classes(&a.gallery_dir)?;
    if query_list.is_empty() {
        return Err(Error::NoQueries.into());
    }
    if gallery_list.is_empty() {
        return Err(anyhow::anyhow!("no gallery images under {}", a.gallery_dir.display()));
    }
    let mapping = a.mapping.as_deref().map(read_mapping).transpose()?;
    let mut ckpt = checkpoint::load(&a.checkpoint)?;
    if let Some(r) = &requested {
        checkpoint::check_compatible(&ckpt.config, r)?;
    }

    let classes: Vec<String> = query_list
        .iter()
        .chain(&gallery_list)
        .map(|(c, _)| c.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let (qv, gv) = (a.direction.query_view(), a.direction.gallery_view());
    let drone_map = |v: View| if v == View::Drone { mapping.as_ref() } else { None };
    let queries = load_side(query_list, &classes, drone_map(qv))?;
    let gallery = load_side(gallery_list, &classes, drone_map(gv))?;

    let model = &mut ckpt.model;
    let kind = model.config().descriptor;
    let qd = embed_images(model, &queries.images.iter().collect::<Vec<_>>(), a.batch)?;
    let gd = embed_images(model, &gallery.images.iter().collect::<Vec<_>>(), a.batch)?;
    let report = evaluate(
        &descriptor_index(&qd, queries.ids.clone(), kind, qv)?,
        &descriptor_index(&gd, gallery.ids.clone(), kind, gv)?,
        a.direction,
    )?;

    print!("{}", report.to_key_values());
    print!("{}", report.to_table());
    if let Some(out) = &a.out_dir {
        write_text(&out.join("report.txt"), &report.to_key_values())?;
        write_text(&out.join("report_table.txt"), &report.to_table())?;
        let mut ranks = String::from("query\tclass\tfirst_rank\tap\n");
        for o in &report.outcomes {
            ranks.push_str(&format!(
                "{}\t{}\t{}\t{:.6}\n",
                queries.paths[o.query].display(),
                classes[o.id],
                o.first_rank,
                o.ap
            ));
        }
        write_text(&out.join("ranks.tsv"), &ranks)?;
    }
    Ok(())
}

pub fn gen_toy(a: &GenToyArgs) -> Result<()> {
    let spec = ToySpec {
        num_classes: a.classes,
        drone_views: a.drone_views,
        query_views: a.query_views,
        image_size: a.size,
        seed: a.seed,
        style: if a.no_jitter {
            StyleJitter::NONE
        } else {
            StyleJitter::default()
        },
        ..ToySpec::default()
    };
    spec.validate().map_err(|e| usage(e.to_string()))?;
    let toy = generate_toy(&spec)?;
    let out = &a.out;
    for (k, sat) in toy.satellite.iter().enumerate() {
        let class = format!("{k:04}");
        for split in ["train", "query", "gallery"] {
            imageio::save(
                &out.join(split).join("satellite").join(&class).join("satellite.png"),
                sat,
            )?;
        }
        for (i, d) in toy.drone[k].iter().enumerate() {
            imageio::save(
                &out.join("train/drone").join(&class).join(format!("drone_{i:02}.png")),
                d,
            )?;
        }
        for (i, d) in toy.query[k].iter().enumerate() {
            let name = format!("drone_{i:02}.png");
            imageio::save(&out.join("query/drone").join(&class).join(&name), d)?;
            imageio::save(&out.join("gallery/drone").join(&class).join(&name), d)?;
        }
    }
    println!(
        "wrote {} classes ({} training and {} query drone views each) to {}",
        spec.num_classes,
        spec.drone_views,
        spec.query_views,
        out.display()
    );
    Ok(())
}

pub fn plot_mapping(a: &PlotArgs) -> Result<()> {
    if a.size < plot::MIN_SIZE {
        return Err(usage(format!("--size must be at least {}", plot::MIN_SIZE)));
    }
    let mapping = read_mapping(&a.mapping)?;
    imageio::save(&a.out, &plot::render(&mapping, a.size))?;
    println!("plot written to {}", a.out.display());
    Ok(())
}
