//! Loader for datasets laid out like the HC18 ultrasound challenge export:
//! `images/` and `masks/` holding equal-named 8-bit grayscale files.

use std::fs;
use std::path::Path;

use image::imageops::FilterType;

use super::{Dataset, Sample, Split};
use crate::error::{AruError, Result};

/// Loads, resizes (bilinear image / nearest mask), normalizes to [0,1], and
/// binarizes masks at 0.5 with polarity auto-correction. Degenerate masks
/// (empty or full after correction) are skipped and reported in the returned
/// warning list. Every sample lands in the train split; use
/// [`super::assign_split`] afterwards.
pub fn load_hc18_layout(dir: &Path, size: (usize, usize)) -> Result<(Dataset, Vec<String>)> {
    let images_dir = dir.join("images");
    let masks_dir = dir.join("masks");
    if !images_dir.is_dir() || !masks_dir.is_dir() {
        return Err(AruError::Data(format!(
            "{} must contain images/ and masks/ subdirectories",
            dir.display()
        )));
    }
    let mut names: Vec<String> = fs::read_dir(&images_dir)?
        .collect::<std::io::Result<Vec<_>>>()?
        .into_iter()
        .filter(|e| e.path().is_file())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    if names.is_empty() {
        return Err(AruError::Data(format!("{} holds no images", images_dir.display())));
    }

    let (h, w) = size;
    let mut samples = Vec::new();
    let mut warnings = Vec::new();
    for name in names {
        let img_path = images_dir.join(&name);
        let mask_path = masks_dir.join(&name);
        if !mask_path.is_file() {
            return Err(AruError::Data(format!(
                "missing mask counterpart for {}",
                img_path.display()
            )));
        }
        let img = image::open(&img_path)
            .map_err(|e| AruError::Data(format!("cannot read {}: {e}", img_path.display())))?
            .into_luma8();
        let msk = image::open(&mask_path)
            .map_err(|e| AruError::Data(format!("cannot read {}: {e}", mask_path.display())))?
            .into_luma8();
        let img = image::imageops::resize(&img, w as u32, h as u32, FilterType::Triangle);
        let msk = image::imageops::resize(&msk, w as u32, h as u32, FilterType::Nearest);

        let image: Vec<f32> = img.into_raw().iter().map(|&b| b as f32 / 255.0).collect();
        let mut mask: Vec<u8> = msk.into_raw().iter().map(|&b| u8::from(b >= 128)).collect();
        let fg = mask.iter().map(|&m| m as usize).sum::<usize>() as f64 / mask.len() as f64;
        if fg > 0.5 {
            for m in mask.iter_mut() {
                *m = 1 - *m;
            }
            warnings.push(format!("{name}: foreground fraction {fg:.3} > 0.5, polarity inverted"));
        }
        let fg = mask.iter().map(|&m| m as usize).sum::<usize>() as f64 / mask.len() as f64;
        if fg == 0.0 || fg == 1.0 {
            warnings.push(format!("{name}: degenerate mask after polarity correction, skipped"));
            continue;
        }
        let id = name.rsplit_once('.').map(|(stem, _)| stem).unwrap_or(&name).to_string();
        samples.push(Sample {
            id,
            image,
            mask,
            split: Split::Train,
            source: img_path.display().to_string(),
            meta: Vec::new(),
        });
    }
    if samples.is_empty() {
        return Err(AruError::Data("no usable samples (all masks degenerate)".into()));
    }
    Ok((Dataset { size, samples }, warnings))
}
