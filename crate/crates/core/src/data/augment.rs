//! Train-time augmentation. Geometric transforms are applied with identical
//! parameters to image and mask (bilinear vs nearest resampling), so a
//! flipped image with an unflipped mask is unrepresentable. Intensity
//! adjustments touch the image only.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Sample;

pub const MAX_ROT_DEG: f64 = 30.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugParams {
    pub flip_h: bool,
    pub flip_v: bool,
    /// Rotation in radians, drawn from +-30 degrees.
    pub angle: f64,
    /// Isotropic zoom about the center; output keeps the input size, so
    /// upscaling crops and downscaling zero-pads.
    pub scale: f64,
    /// Additive intensity offset in [-0.1, 0.1].
    pub brightness: f64,
    /// Multiplicative intensity gain in [0.9, 1.1].
    pub contrast: f64,
}

impl AugParams {
    pub fn identity() -> Self {
        AugParams {
            flip_h: false,
            flip_v: false,
            angle: 0.0,
            scale: 1.0,
            brightness: 0.0,
            contrast: 1.0,
        }
    }

    pub fn sample<R: Rng>(rng: &mut R) -> Self {
        AugParams {
            flip_h: rng.random_range(0.0..1.0) < 0.5,
            flip_v: rng.random_range(0.0..1.0) < 0.5,
            angle: rng.random_range(-MAX_ROT_DEG..MAX_ROT_DEG).to_radians(),
            scale: rng.random_range(0.9..1.1),
            brightness: rng.random_range(-0.1..0.1),
            contrast: rng.random_range(0.9..1.1),
        }
    }
}

fn bilinear_zero(img: &[f32], h: usize, w: usize, xf: f64, yf: f64) -> f32 {
    let x0 = xf.floor();
    let y0 = yf.floor();
    let fx = xf - x0;
    let fy = yf - y0;
    let mut acc = 0.0f64;
    for (dy, wy) in [(0i64, 1.0 - fy), (1, fy)] {
        for (dx, wx) in [(0i64, 1.0 - fx), (1, fx)] {
            let x = x0 as i64 + dx;
            let y = y0 as i64 + dy;
            if x >= 0 && y >= 0 && (x as usize) < w && (y as usize) < h {
                acc += wy * wx * img[y as usize * w + x as usize] as f64;
            }
        }
    }
    acc as f32
}

fn nearest_zero(mask: &[u8], h: usize, w: usize, xf: f64, yf: f64) -> u8 {
    let x = xf.round() as i64;
    let y = yf.round() as i64;
    if x >= 0 && y >= 0 && (x as usize) < w && (y as usize) < h {
        mask[y as usize * w + x as usize]
    } else {
        0
    }
}

/// Applies the transform. Identity parameters return the sample unchanged,
/// bit for bit: flips and the warp are skipped outright and the intensity map
/// v*1 + 0 is exact.
pub fn apply(sample: &Sample, h: usize, w: usize, params: &AugParams) -> Sample {
    let mut image = sample.image.clone();
    let mut mask = sample.mask.clone();

    if params.flip_h {
        for y in 0..h {
            image[y * w..(y + 1) * w].reverse();
            mask[y * w..(y + 1) * w].reverse();
        }
    }
    if params.flip_v {
        for y in 0..h / 2 {
            for x in 0..w {
                image.swap(y * w + x, (h - 1 - y) * w + x);
                mask.swap(y * w + x, (h - 1 - y) * w + x);
            }
        }
    }

    if params.angle != 0.0 || params.scale != 1.0 {
        let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
        let (sin, cos) = params.angle.sin_cos();
        let inv_s = 1.0 / params.scale;
        let src_img = image;
        let src_msk = mask;
        image = vec![0.0; h * w];
        mask = vec![0; h * w];
        for y in 0..h {
            for x in 0..w {
                // inverse map of "rotate by angle, scale about the center"
                let dx = x as f64 - cx;
                let dy = y as f64 - cy;
                let sx = (dx * cos + dy * sin) * inv_s + cx;
                let sy = (-dx * sin + dy * cos) * inv_s + cy;
                image[y * w + x] = bilinear_zero(&src_img, h, w, sx, sy);
                mask[y * w + x] = nearest_zero(&src_msk, h, w, sx, sy);
            }
        }
    }

    for v in image.iter_mut() {
        *v = (*v * params.contrast as f32 + params.brightness as f32).clamp(0.0, 1.0);
    }

    Sample {
        id: sample.id.clone(),
        image,
        mask,
        split: sample.split,
        source: sample.source.clone(),
        meta: sample.meta.clone(),
    }
}

/// Seeded random augmentation: one ChaCha8 stream drives all parameter draws.
pub fn augment(sample: &Sample, h: usize, w: usize, seed: u64) -> Sample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    apply(sample, h, w, &AugParams::sample(&mut rng))
}
