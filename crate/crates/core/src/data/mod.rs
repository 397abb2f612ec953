//! Dataset manifests, the paired batch sampler, train-time augmentation and
//! the synthetic toy corpus.
//!
//! Nothing here touches the filesystem: manifests are built from
//! `(class, view, path)` entries that the caller collected.

mod sampler;
pub mod toy;

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt::Write;

use rand::Rng;

use crate::image::RgbImage;
use crate::math;
use crate::retrieval::View;
use crate::{Error, Result};

pub use sampler::{BatchSampler, Step};
pub use toy::{generate_toy, StyleJitter, ToyDataset, ToySpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Query,
    Gallery,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Query, Split::Gallery];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Query => "query",
            Split::Gallery => "gallery",
        }
    }

    pub fn parse(s: &str) -> Option<Split> {
        Split::ALL.into_iter().find(|v| v.name() == s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub class: String,
    pub view: View,
    pub path: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassFiles {
    pub id: String,
    pub satellite: Vec<String>,
    pub drone: Vec<String>,
}

impl ClassFiles {
    pub fn files(&self, view: View) -> &[String] {
        match view {
            View::Drone => &self.drone,
            View::Satellite => &self.satellite,
        }
    }
}

/// A drone image and the satellite image of the same class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Pair {
    pub class: usize,
    pub drone: usize,
    pub satellite: usize,
}

/// Classes and their files for one split, in lexicographic order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetManifest {
    pub split: Split,
    pub classes: Vec<ClassFiles>,
}

impl DatasetManifest {
    /// Groups and sorts entries. The train split requires both views for
    /// every class; other splits only need some file per class.
    pub fn from_entries(split: Split, mut entries: Vec<ManifestEntry>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::EmptyInput);
        }
        entries.sort_by(|a, b| (&a.class, a.view.name(), &a.path).cmp(&(&b.class, b.view.name(), &b.path)));
        let mut classes: Vec<ClassFiles> = Vec::new();
        for e in entries {
            if classes.last().map_or(true, |c| c.id != e.class) {
                classes.push(ClassFiles {
                    id: e.class.clone(),
                    satellite: Vec::new(),
                    drone: Vec::new(),
                });
            }
            let c = classes.last_mut().expect("pushed above");
            match e.view {
                View::Drone => c.drone.push(e.path),
                View::Satellite => c.satellite.push(e.path),
            }
        }
        if split == Split::Train {
            for c in &classes {
                for view in [View::Satellite, View::Drone] {
                    if c.files(view).is_empty() {
                        return Err(Error::MissingView {
                            class: c.id.clone(),
                            view: view.name(),
                        });
                    }
                }
            }
        }
        Ok(Self { split, classes })
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn class_ids(&self) -> Vec<&str> {
        self.classes.iter().map(|c| c.id.as_str()).collect()
    }

    pub fn class_index(&self, id: &str) -> Option<usize> {
        self.classes.binary_search_by(|c| c.id.as_str().cmp(id)).ok()
    }

    pub fn file_count(&self) -> usize {
        self.classes.iter().map(|c| c.satellite.len() + c.drone.len()).sum()
    }

    pub fn view_count(&self, view: View) -> usize {
        self.classes.iter().map(|c| c.files(view).len()).sum()
    }

    /// Entries in manifest order.
    pub fn entries(&self) -> Vec<ManifestEntry> {
        let mut out = Vec::with_capacity(self.file_count());
        for c in &self.classes {
            for view in [View::Drone, View::Satellite] {
                for p in c.files(view) {
                    out.push(ManifestEntry {
                        class: c.id.clone(),
                        view,
                        path: p.clone(),
                    });
                }
            }
        }
        out
    }

    /// Every drone image paired with a satellite image of its class; classes
    /// with several satellite images cycle through them.
    pub fn pairs(&self) -> Vec<Pair> {
        let mut out = Vec::new();
        for (k, c) in self.classes.iter().enumerate() {
            if c.satellite.is_empty() {
                continue;
            }
            for d in 0..c.drone.len() {
                out.push(Pair {
                    class: k,
                    drone: d,
                    satellite: d % c.satellite.len(),
                });
            }
        }
        out
    }

    /// Cache text: one `class<TAB>view<TAB>path` line per file.
    pub fn to_cache_text(&self) -> String {
        let mut s = String::new();
        for e in self.entries() {
            let _ = writeln!(s, "{}\t{}\t{}", e.class, e.view.name(), e.path);
        }
        s
    }

    pub fn from_cache_text(split: Split, text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let bad = |msg: String| Error::ManifestParse { line: i + 1, msg };
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(bad(format!("expected 3 tab-separated fields, got {}", fields.len())));
            }
            let view = View::parse(fields[1]).ok_or_else(|| bad(format!("unknown view {:?}", fields[1])))?;
            entries.push(ManifestEntry {
                class: fields[0].to_string(),
                view,
                path: fields[2].to_string(),
            });
        }
        Self::from_entries(split, entries)
    }
}

/// Smallest side fraction kept by the random crop.
pub const MIN_CROP: f64 = 0.85;

/// Random horizontal flip and a random crop of at least [`MIN_CROP`] of each
/// side, resized back to the input size.
pub fn augment<R: Rng + ?Sized>(image: &RgbImage, rng: &mut R) -> Result<RgbImage> {
    let (w, h) = (image.width(), image.height());
    let flipped;
    let src = if rng.gen::<bool>() {
        flipped = image.flip_horizontal();
        &flipped
    } else {
        image
    };
    let scale = math::uniform(rng, MIN_CROP, 1.0);
    let cw = ((math::round(w as f64 * scale)) as usize).clamp(1, w);
    let ch = ((math::round(h as f64 * scale)) as usize).clamp(1, h);
    let x0 = rng.gen_range(0..=w - cw);
    let y0 = rng.gen_range(0..=h - ch);
    src.crop(x0, y0, cw, ch)?.resize(w, h)
}
