//! Image files on disk.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use geoloc_core::RgbImage;

pub const IMAGE_EXTENSIONS: [&str; 3] = ["png", "jpg", "jpeg"];

pub fn is_image(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
}

/// Decodes any supported format to 8-bit RGB.
pub fn load(path: &Path) -> Result<RgbImage> {
    let img = image::open(path)
        .with_context(|| format!("reading {}", path.display()))?
        .to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    RgbImage::new(w, h, img.into_raw()).with_context(|| format!("decoding {}", path.display()))
}

/// Encodes by extension, creating parent directories.
pub fn save(path: &Path, img: &RgbImage) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    image::save_buffer(
        path,
        img.as_bytes(),
        img.width() as u32,
        img.height() as u32,
        image::ExtendedColorType::Rgb8,
    )
    .with_context(|| format!("writing {}", path.display()))
}

/// Every image below `root`, sorted by path.
pub fn list_images(root: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).with_context(|| format!("listing {}", dir.display()))? {
            let path = entry?.path();
            if path.is_dir() {
                stack.push(path);
            } else if is_image(&path) {
                out.push(path);
            }
        }
    }
    out.sort();
    Ok(out)
}

pub fn load_all(paths: &[PathBuf]) -> Result<Vec<RgbImage>> {
    paths.iter().map(|p| load(p)).collect()
}
