//! Class-folder trees: `<dir>/<class>/<image files>`.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use geoloc_core::data::{DatasetManifest, ManifestEntry, Split};
use geoloc_core::retrieval::View;
use geoloc_core::train::TrainingSet;
use geoloc_core::RgbImage;

use crate::{imageio, usage};

/// `(class, image)` for every image in a class-folder tree, sorted by class
/// then path. Files directly under `dir` are ignored.
pub fn scan_classes(dir: &Path) -> Result<Vec<(String, PathBuf)>> {
    if !dir.is_dir() {
        return Err(usage(format!("{} is not a directory", dir.display())));
    }
    let mut classes = Vec::new();
    for entry in fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
        let path = entry?.path();
        if path.is_dir() {
            let name = path
                .file_name()
                .and_then(|n| n.to_str())
                .with_context(|| format!("class folder {} is not valid UTF-8", path.display()))?
                .to_string();
            classes.push((name, path));
        }
    }
    classes.sort();
    let mut out = Vec::new();
    for (name, path) in classes {
        for img in imageio::list_images(&path)? {
            out.push((name.clone(), img));
        }
    }
    Ok(out)
}

fn entries(dir: &Path, view: View) -> Result<Vec<ManifestEntry>> {
    Ok(scan_classes(dir)?
        .into_iter()
        .map(|(class, path)| ManifestEntry {
            class,
            view,
            path: path.to_string_lossy().into_owned(),
        })
        .collect())
}

/// Training manifest from separate satellite and drone class trees.
pub fn training_manifest(satellite_dir: &Path, drone_dir: &Path) -> Result<DatasetManifest> {
    let mut all = entries(satellite_dir, View::Satellite)?;
    all.extend(entries(drone_dir, View::Drone)?);
    DatasetManifest::from_entries(Split::Train, all).context("building the training manifest")
}

pub fn load_training_set(manifest: &DatasetManifest) -> Result<TrainingSet> {
    let load =
        |paths: &[String]| -> Result<Vec<RgbImage>> { paths.iter().map(|p| imageio::load(Path::new(p))).collect() };
    let mut set = TrainingSet {
        satellite: Vec::new(),
        drone: Vec::new(),
    };
    for c in &manifest.classes {
        set.satellite.push(load(&c.satellite)?);
        set.drone.push(load(&c.drone)?);
    }
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn classes_come_from_folder_names() {
        let dir = tempfile::tempdir().unwrap();
        let img = RgbImage::filled(4, 4, [1, 2, 3]).unwrap();
        for (view, class, file) in [
            ("sat", "b", "s.png"),
            ("sat", "a", "s.png"),
            ("drone", "a", "1.png"),
            ("drone", "b", "2.png"),
        ] {
            imageio::save(&dir.path().join(view).join(class).join(file), &img).unwrap();
        }
        imageio::save(&dir.path().join("sat/stray.png"), &img).unwrap();
        let listed = scan_classes(&dir.path().join("sat")).unwrap();
        assert_eq!(listed.iter().map(|(c, _)| c.as_str()).collect::<Vec<_>>(), ["a", "b"]);
        let m = training_manifest(&dir.path().join("sat"), &dir.path().join("drone")).unwrap();
        assert_eq!(m.class_ids(), ["a", "b"]);
        let set = load_training_set(&m).unwrap();
        assert_eq!(set.pairs().len(), 2);
    }

    #[test]
    fn missing_tree_is_a_usage_error() {
        let err = scan_classes(Path::new("/nonexistent/tree")).unwrap_err();
        assert_eq!(crate::exit_code(&err), crate::EXIT_USAGE);
    }
}
