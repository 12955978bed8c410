//! Image folders and the pair manifest written by `mixsr prep`.

use std::path::{Path, PathBuf};

use anyhow::Context;
use mixsr_core::imaging::{load_image, rgb_to_y, PlanarImage};
use mixsr_core::training::NamedImage;

use crate::UsageError;

pub const MANIFEST: &str = "manifest.csv";
pub const MANIFEST_HEADER: &str =
    "name,hr,lr,bicubic,original_width,original_height,width,height,cropped";

const EXTENSIONS: [&str; 4] = ["png", "pgm", "ppm", "pnm"];

/// Image files directly inside `dir`, sorted by file name.
pub fn list_images(dir: &Path) -> anyhow::Result<Vec<PathBuf>> {
    let entries =
        std::fs::read_dir(dir).with_context(|| format!("reading directory `{}`", dir.display()))?;
    let mut paths = Vec::new();
    for entry in entries {
        let path = entry?.path();
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(|e| e.to_ascii_lowercase());
        if path.is_file() && ext.is_some_and(|e| EXTENSIONS.contains(&e.as_str())) {
            paths.push(path);
        }
    }
    paths.sort();
    Ok(paths)
}

pub fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

pub fn luminance(img: &PlanarImage) -> anyhow::Result<PlanarImage> {
    Ok(if img.channels() == 3 {
        rgb_to_y(img)?
    } else {
        img.clone()
    })
}

/// Ground-truth images of a dataset: the `hr` column of a prep manifest when
/// one exists, otherwise every image in the directory.
pub fn ground_truth(dir: &Path) -> anyhow::Result<Vec<NamedImage>> {
    let manifest = dir.join(MANIFEST);
    let entries: Vec<(String, PathBuf)> = if manifest.is_file() {
        let text = std::fs::read_to_string(&manifest)
            .with_context(|| format!("reading `{}`", manifest.display()))?;
        text.lines()
            .skip(1)
            .filter(|l| !l.is_empty())
            .map(|line| {
                let fields: Vec<&str> = line.split(',').collect();
                if fields.len() < 2 {
                    anyhow::bail!(
                        "malformed manifest line `{line}` in `{}`",
                        manifest.display()
                    );
                }
                Ok((fields[0].to_string(), dir.join(fields[1])))
            })
            .collect::<anyhow::Result<_>>()?
    } else {
        list_images(dir)?
            .into_iter()
            .map(|p| (stem(&p), p))
            .collect()
    };
    if entries.is_empty() {
        return Err(UsageError(format!("no images found in `{}`", dir.display())).into());
    }
    entries
        .into_iter()
        .map(|(name, path)| Ok(NamedImage::new(name, load_image(&path)?)))
        .collect()
}
