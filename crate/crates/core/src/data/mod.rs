//! Datasets: synthetic phantom generation, HC18-layout ingestion, on-disk
//! layout, and train-time augmentation.
//!
//! On disk a dataset is `images/<id>.pgm` + `masks/<id>.pgm` (binary 8-bit
//! PGM), a `manifest.csv` with `id,split,source,foreground_fraction`, and
//! per-sample generator parameters under `meta/<id>.txt`.

pub mod augment;
pub mod hc18;
pub mod pgm;
pub mod phantom;

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{AruError, Result};
use crate::tensor::{Element, Tensor};

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(AruError::Data(format!("unknown split {other:?}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Difficulty {
    Easy,
    Hard,
}

impl Difficulty {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "easy" => Ok(Difficulty::Easy),
            "hard" => Ok(Difficulty::Hard),
            other => Err(AruError::InvalidArgument(format!(
                "unknown difficulty {other:?}; expected easy or hard"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Difficulty::Easy => "easy",
            Difficulty::Hard => "hard",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: String,
    /// Row-major H*W intensities in [0,1], snapped to the 8-bit grid.
    pub image: Vec<f32>,
    /// Row-major H*W labels in {0,1}.
    pub mask: Vec<u8>,
    pub split: Split,
    /// "phantom" for generated samples, otherwise the source image path.
    pub source: String,
    pub meta: Vec<(String, String)>,
}

impl Sample {
    pub fn foreground_fraction(&self) -> f64 {
        self.mask.iter().map(|&m| m as usize).sum::<usize>() as f64 / self.mask.len() as f64
    }
}

pub struct Dataset {
    /// (height, width) shared by every sample.
    pub size: (usize, usize),
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn split(&self, split: Split) -> Vec<&Sample> {
        self.samples.iter().filter(|s| s.split == split).collect()
    }

    /// Stacks the given samples into `[B,1,H,W]` image and mask tensors.
    pub fn batch<T: Element>(&self, samples: &[&Sample]) -> Result<(Tensor<T>, Tensor<T>)> {
        if samples.is_empty() {
            return Err(AruError::InvalidArgument("empty batch".into()));
        }
        let (h, w) = self.size;
        let mut images = Vec::with_capacity(samples.len() * h * w);
        let mut masks = Vec::with_capacity(samples.len() * h * w);
        for s in samples {
            images.extend(s.image.iter().map(|&v| T::from_f64(v as f64)));
            masks.extend(s.mask.iter().map(|&m| T::from_f64(m as f64)));
        }
        let shape = [samples.len(), 1, h, w];
        Ok((
            Tensor::from_vec(images, shape)?,
            Tensor::from_vec(masks, shape)?,
        ))
    }

    /// Writes the directory layout. The caller decides whether an existing
    /// non-empty directory is acceptable (see the CLI's --force flag).
    pub fn save_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir.join("images"))?;
        fs::create_dir_all(dir.join("masks"))?;
        fs::create_dir_all(dir.join("meta"))?;
        let (h, w) = self.size;
        let mut manifest = String::from("id,split,source,foreground_fraction\n");
        for s in &self.samples {
            let img_bytes: Vec<u8> = s
                .image
                .iter()
                .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
                .collect();
            let mask_bytes: Vec<u8> = s.mask.iter().map(|&m| if m != 0 { 255 } else { 0 }).collect();
            pgm::write_pgm(&dir.join("images").join(format!("{}.pgm", s.id)), w, h, &img_bytes)?;
            pgm::write_pgm(&dir.join("masks").join(format!("{}.pgm", s.id)), w, h, &mask_bytes)?;
            manifest.push_str(&format!(
                "{},{},{},{:.6}\n",
                s.id,
                s.split,
                s.source,
                s.foreground_fraction()
            ));
            if !s.meta.is_empty() {
                let mut f = fs::File::create(dir.join("meta").join(format!("{}.txt", s.id)))?;
                for (k, v) in &s.meta {
                    writeln!(f, "{k}={v}")?;
                }
            }
        }
        fs::write(dir.join("manifest.csv"), manifest)?;
        Ok(())
    }

    /// Reads a dataset directory back in manifest order.
    pub fn load_dir(dir: &Path) -> Result<Dataset> {
        let manifest_path = dir.join("manifest.csv");
        let manifest = fs::read_to_string(&manifest_path)
            .map_err(|e| AruError::Data(format!("cannot read {}: {e}", manifest_path.display())))?;
        let mut lines = manifest.lines();
        match lines.next() {
            Some("id,split,source,foreground_fraction") => {}
            other => {
                return Err(AruError::Data(format!(
                    "unexpected manifest header {other:?}"
                )))
            }
        }
        let mut samples = Vec::new();
        let mut size: Option<(usize, usize)> = None;
        for (lineno, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 4 {
                return Err(AruError::Data(format!(
                    "manifest line {}: expected 4 fields, got {}",
                    lineno + 2,
                    fields.len()
                )));
            }
            let id = fields[0].to_string();
            let split = Split::parse(fields[1])?;
            let (iw, ih, img) = pgm::read_gray(&dir.join("images").join(format!("{id}.pgm")))?;
            let (mw, mh, msk) = pgm::read_gray(&dir.join("masks").join(format!("{id}.pgm")))?;
            if (iw, ih) != (mw, mh) {
                return Err(AruError::Data(format!(
                    "{id}: image {iw}x{ih} but mask {mw}x{mh}"
                )));
            }
            match size {
                None => size = Some((ih, iw)),
                Some(s) if s == (ih, iw) => {}
                Some((sh, sw)) => {
                    return Err(AruError::Data(format!(
                        "{id}: size {iw}x{ih} differs from dataset {sw}x{sh}"
                    )))
                }
            }
            samples.push(Sample {
                id,
                image: img.iter().map(|&b| b as f32 / 255.0).collect(),
                mask: msk.iter().map(|&b| u8::from(b >= 128)).collect(),
                split,
                source: fields[2].to_string(),
                meta: Vec::new(),
            });
        }
        let size = size.ok_or_else(|| AruError::Data("manifest lists no samples".into()))?;
        Ok(Dataset { size, samples })
    }
}

/// Reassigns an 80/20 train/val split with a seeded shuffle.
pub fn assign_split(dataset: &mut Dataset, seed: u64) {
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    let n = dataset.samples.len();
    let n_val = n / 5;
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    for (rank, &i) in order.iter().enumerate() {
        dataset.samples[i].split = if rank < n_val { Split::Val } else { Split::Train };
    }
}
