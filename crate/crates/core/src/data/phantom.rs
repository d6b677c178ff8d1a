//! Synthetic fetal-head phantoms: a bright elliptical "skull" ring around a
//! dimmer interior, degraded by speckle, blur, and (optionally) an acoustic
//! shadow sector.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{Difficulty, Sample, Split};
use crate::error::{AruError, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ShadowArc {
    /// Start angle in the ellipse frame, radians.
    pub start: f64,
    /// Angular extent, radians.
    pub extent: f64,
    /// Multiplicative attenuation applied inside the sector, in (0, 1).
    pub attenuation: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PhantomParams {
    pub size: (usize, usize),
    /// Ellipse center (cx, cy) in pixel coordinates.
    pub center: (f64, f64),
    /// Semi-axes (a, b) with a >= b > 0, pixels.
    pub semi_axes: (f64, f64),
    /// Rotation of the major axis, radians.
    pub theta: f64,
    /// Skull ring thickness, pixels.
    pub ring_thickness: f64,
    pub ring_brightness: f64,
    pub interior_level: f64,
    pub background_level: f64,
    /// Multiplicative speckle strength (unit-variance noise scale).
    pub speckle_sigma: f64,
    /// Gaussian blur standard deviation, pixels. Zero disables blur.
    pub blur_sigma: f64,
    pub shadow: Option<ShadowArc>,
}

impl PhantomParams {
    pub fn validate(&self) -> Result<()> {
        let (a, b) = self.semi_axes;
        if !(a >= b && b > 0.0) {
            return Err(AruError::InvalidArgument(format!(
                "semi-axes must satisfy a >= b > 0, got a={a} b={b}"
            )));
        }
        if self.speckle_sigma < 0.0 || self.blur_sigma < 0.0 {
            return Err(AruError::InvalidArgument(
                "noise parameters must be non-negative".into(),
            ));
        }
        if self.ring_thickness <= 0.0 || self.ring_thickness >= 2.0 * b {
            return Err(AruError::InvalidArgument(format!(
                "ring thickness {} must be positive and below the minor diameter",
                self.ring_thickness
            )));
        }
        if let Some(s) = self.shadow {
            if !(s.attenuation > 0.0 && s.attenuation < 1.0) || s.extent <= 0.0 {
                return Err(AruError::InvalidArgument(
                    "shadow needs attenuation in (0,1) and positive extent".into(),
                ));
            }
        }
        // the outer ring edge must stay inside the frame with a 1px margin
        let (h, w) = self.size;
        let half_t = self.ring_thickness / 2.0;
        let (sin, cos) = self.theta.sin_cos();
        let ext_x = ((a * cos).powi(2) + (b * sin).powi(2)).sqrt() + half_t;
        let ext_y = ((a * sin).powi(2) + (b * cos).powi(2)).sqrt() + half_t;
        let (cx, cy) = self.center;
        if cx - ext_x < 1.0 || cx + ext_x > w as f64 - 1.0 || cy - ext_y < 1.0 || cy + ext_y > h as f64 - 1.0
        {
            return Err(AruError::InvalidArgument(format!(
                "ellipse (center {cx:.1},{cy:.1}, extent {ext_x:.1}x{ext_y:.1}) leaves the {w}x{h} frame"
            )));
        }
        Ok(())
    }

    pub fn to_meta(&self) -> Vec<(String, String)> {
        let mut m = vec![
            ("cx".into(), self.center.0.to_string()),
            ("cy".into(), self.center.1.to_string()),
            ("a".into(), self.semi_axes.0.to_string()),
            ("b".into(), self.semi_axes.1.to_string()),
            ("theta".into(), self.theta.to_string()),
            ("ring_thickness".into(), self.ring_thickness.to_string()),
            ("ring_brightness".into(), self.ring_brightness.to_string()),
            ("interior_level".into(), self.interior_level.to_string()),
            ("background_level".into(), self.background_level.to_string()),
            ("speckle_sigma".into(), self.speckle_sigma.to_string()),
            ("blur_sigma".into(), self.blur_sigma.to_string()),
        ];
        if let Some(s) = self.shadow {
            m.push(("shadow_start".into(), s.start.to_string()));
            m.push(("shadow_extent".into(), s.extent.to_string()));
            m.push(("shadow_attenuation".into(), s.attenuation.to_string()));
        }
        m
    }
}

/// Membership test for the (possibly scaled) ellipse: true iff the point lies
/// inside the ellipse with semi-axes (a+grow, b+grow).
fn inside(params: &PhantomParams, x: f64, y: f64, grow: f64) -> bool {
    let (cx, cy) = params.center;
    let (a, b) = (params.semi_axes.0 + grow, params.semi_axes.1 + grow);
    let (dx, dy) = (x - cx, y - cy);
    let (sin, cos) = params.theta.sin_cos();
    let u = dx * cos + dy * sin;
    let v = -dx * sin + dy * cos;
    (u / a).powi(2) + (v / b).powi(2) <= 1.0
}

/// Angle of the point in the ellipse frame, in [0, 2pi).
fn frame_angle(params: &PhantomParams, x: f64, y: f64) -> f64 {
    let (cx, cy) = params.center;
    let (dx, dy) = (x - cx, y - cy);
    let (sin, cos) = params.theta.sin_cos();
    let u = dx * cos + dy * sin;
    let v = -dx * sin + dy * cos;
    let phi = v.atan2(u);
    if phi < 0.0 {
        phi + std::f64::consts::TAU
    } else {
        phi
    }
}

fn in_arc(arc: &ShadowArc, phi: f64) -> bool {
    let rel = (phi - arc.start).rem_euclid(std::f64::consts::TAU);
    rel <= arc.extent
}

/// Separable Gaussian blur with edge replication; sigma <= 0 is a no-op.
fn gaussian_blur(img: &mut [f64], h: usize, w: usize, sigma: f64) {
    if sigma <= 0.0 {
        return;
    }
    let radius = (3.0 * sigma).ceil() as i64;
    let mut kernel = Vec::with_capacity((2 * radius + 1) as usize);
    for i in -radius..=radius {
        kernel.push((-(i as f64).powi(2) / (2.0 * sigma * sigma)).exp());
    }
    let norm: f64 = kernel.iter().sum();
    for k in &mut kernel {
        *k /= norm;
    }
    let mut tmp = vec![0.0f64; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (ki, kv) in kernel.iter().enumerate() {
                let sx = (x as i64 + ki as i64 - radius).clamp(0, w as i64 - 1) as usize;
                acc += kv * img[y * w + sx];
            }
            tmp[y * w + x] = acc;
        }
    }
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (ki, kv) in kernel.iter().enumerate() {
                let sy = (y as i64 + ki as i64 - radius).clamp(0, h as i64 - 1) as usize;
                acc += kv * tmp[sy * w + x];
            }
            img[y * w + x] = acc;
        }
    }
}

/// Renders one phantom. The mask is the filled ellipse; the image layers the
/// skull ring and interior over the background, then applies shadow, speckle,
/// blur, a [0,1] clamp, and finally snaps to the 8-bit grid so the in-memory
/// sample equals what a round trip through the PGM files yields.
pub fn generate_phantom(params: &PhantomParams, seed: u64) -> Result<(Vec<f32>, Vec<u8>)> {
    params.validate()?;
    let (h, w) = params.size;
    let half_t = params.ring_thickness / 2.0;
    let mut img = vec![0.0f64; h * w];
    let mut mask = vec![0u8; h * w];
    for y in 0..h {
        for x in 0..w {
            let (xf, yf) = (x as f64, y as f64);
            let idx = y * w + x;
            if inside(params, xf, yf, 0.0) {
                mask[idx] = 1;
            }
            let in_outer = inside(params, xf, yf, half_t);
            let in_inner = inside(params, xf, yf, -half_t);
            let mut v = if in_inner {
                params.interior_level
            } else if in_outer {
                params.ring_brightness
            } else {
                params.background_level
            };
            if let Some(arc) = &params.shadow {
                if !in_inner && in_arc(arc, frame_angle(params, xf, yf)) {
                    v *= arc.attenuation;
                }
            }
            img[idx] = v;
        }
    }
    if params.speckle_sigma > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for v in img.iter_mut() {
            let n: f64 = StandardNormal.sample(&mut rng);
            *v *= 1.0 + params.speckle_sigma * n;
        }
    }
    gaussian_blur(&mut img, h, w, params.blur_sigma);
    let quantized = img
        .iter()
        .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8 as f32 / 255.0)
        .collect();
    Ok((quantized, mask))
}

/// Draws per-sample parameters for the given difficulty and renders the set.
/// The split is an 80/20 shuffle of sample indices; both the parameter draws
/// and the shuffle come from one ChaCha8 stream seeded with `seed`.
pub fn generate_dataset(
    n: usize,
    size: (usize, usize),
    difficulty: Difficulty,
    seed: u64,
) -> Result<super::Dataset> {
    if n == 0 {
        return Err(AruError::InvalidArgument("need at least one sample".into()));
    }
    let (h, w) = size;
    let unit = h.min(w) as f64;
    if unit < 32.0 {
        return Err(AruError::InvalidArgument(format!(
            "image size {w}x{h} too small for phantom geometry (min side 32)"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut all = Vec::with_capacity(n);
    for i in 0..n {
        let a = rng.random_range(0.22..0.38) * unit;
        let b = rng.random_range(0.55..0.85) * a;
        let theta = rng.random_range(0.0..std::f64::consts::PI);
        let t = (rng.random_range(0.03..0.06) * unit).max(1.5);
        let half_t = t / 2.0;
        let (sin, cos) = theta.sin_cos();
        let ext_x = ((a * cos).powi(2) + (b * sin).powi(2)).sqrt() + half_t + 1.5;
        let ext_y = ((a * sin).powi(2) + (b * cos).powi(2)).sqrt() + half_t + 1.5;
        let cx = rng.random_range(ext_x..(w as f64 - ext_x));
        let cy = rng.random_range(ext_y..(h as f64 - ext_y));
        let ring_brightness = rng.random_range(0.85..0.95);
        let interior_level = rng.random_range(0.35..0.50);
        let (speckle, blur) = match difficulty {
            Difficulty::Easy => (rng.random_range(0.05..0.15), rng.random_range(0.5..1.0)),
            Difficulty::Hard => (rng.random_range(0.25..0.45), rng.random_range(0.8..1.6)),
        };
        let shadow = match difficulty {
            Difficulty::Easy => None,
            Difficulty::Hard => (rng.random_range(0.0..1.0) < 0.7).then(|| ShadowArc {
                start: rng.random_range(0.0..std::f64::consts::TAU),
                extent: rng.random_range(0.5..1.6),
                attenuation: rng.random_range(0.3..0.6),
            }),
        };
        let params = PhantomParams {
            size,
            center: (cx, cy),
            semi_axes: (a, b),
            theta,
            ring_thickness: t,
            ring_brightness,
            interior_level,
            background_level: 0.1,
            speckle_sigma: speckle,
            blur_sigma: blur,
            shadow,
        };
        let sample_seed = seed
            .wrapping_mul(0x9e37_79b9_7f4a_7c15)
            .wrapping_add(i as u64);
        all.push((params, sample_seed));
    }

    let n_val = n / 5;
    let mut order: Vec<usize> = (0..n).collect();
    use rand::seq::SliceRandom;
    order.shuffle(&mut rng);
    let mut splits = vec![Split::Train; n];
    for &i in order.iter().take(n_val) {
        splits[i] = Split::Val;
    }

    let mut samples = Vec::with_capacity(n);
    for (i, (params, sample_seed)) in all.iter().enumerate() {
        let (image, mask) = generate_phantom(params, *sample_seed)?;
        let mut meta = params.to_meta();
        meta.push(("seed".into(), sample_seed.to_string()));
        samples.push(Sample {
            id: format!("phantom_{i:04}"),
            image,
            mask,
            split: splits[i],
            source: "phantom".into(),
            meta,
        });
    }
    Ok(super::Dataset { size, samples })
}
