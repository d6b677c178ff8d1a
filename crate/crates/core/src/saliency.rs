//! Grad-CAM saliency over decoder features, attention-coefficient maps, and
//! the spatial concentration index.
//!
//! The Grad-CAM target score for dense prediction is the mean logit over
//! pixels the model currently calls foreground (probability > 0.5), falling
//! back to the mean over all pixels when nothing crosses the threshold.
//! Channel weights are the spatial means of the score gradient at the chosen
//! decoder stage; the map is the ReLU of the weighted channel sum, bilinearly
//! upsampled to input resolution and normalized by its maximum.

use crate::error::{AruError, Result};
use crate::eval::distance::boundary;
use crate::nn::Network;
use crate::tensor::tape::Tape;
use crate::tensor::{Element, Mode, Tensor};

/// A single-image saliency (or attention-coefficient) map at input resolution.
#[derive(Debug, Clone)]
pub struct SaliencyMap {
    /// Canonical layer name the map was computed from (`d1`..`dL`, or
    /// `alpha1`..`alphaG` for gate coefficients).
    pub layer: String,
    /// Input resolution (height, width); `values` has `h * w` entries.
    pub size: (usize, usize),
    pub values: Vec<f64>,
    /// Set when every value is zero. Grad-CAM maps are otherwise
    /// max-normalized so the largest value is exactly 1.
    pub all_zero: bool,
}

/// Canonical name of the finest decoder stage, the default Grad-CAM target.
pub fn default_layer(levels: usize) -> String {
    format!("d{levels}")
}

/// Resolve a decoder-stage name (`d1`..`dL`, `dec1`..`decL`) to its index,
/// coarsest first.
fn parse_layer(name: &str, levels: usize) -> Result<usize> {
    let digits = name
        .strip_prefix("dec")
        .or_else(|| name.strip_prefix('d'))
        .unwrap_or("");
    if let Ok(i) = digits.parse::<usize>() {
        if i >= 1 && i <= levels {
            return Ok(i - 1);
        }
    }
    let valid: Vec<String> = (1..=levels).map(|i| format!("d{i}")).collect();
    Err(AruError::InvalidArgument(format!(
        "unknown saliency layer {name:?}; expected one of {}",
        valid.join(", ")
    )))
}

/// ReLU-ed weighted channel sum at the activation's own resolution.
/// `act` and `grad` are laid out `[c][hw]`; weights are the per-channel
/// spatial means of `grad`.
fn weighted_cam(act: &[f64], grad: &[f64], channels: usize, hw: usize) -> Vec<f64> {
    let mut cam = vec![0.0; hw];
    for c in 0..channels {
        let g = &grad[c * hw..(c + 1) * hw];
        let a = &act[c * hw..(c + 1) * hw];
        let w = g.iter().sum::<f64>() / hw as f64;
        for (m, &v) in cam.iter_mut().zip(a) {
            *m += w * v;
        }
    }
    for m in &mut cam {
        if *m < 0.0 {
            *m = 0.0;
        }
    }
    cam
}

/// Bilinear resize with pixel-center alignment and edge clamping.
pub fn upsample_bilinear(src: &[f64], from: (usize, usize), to: (usize, usize)) -> Vec<f64> {
    let (sh, sw) = from;
    let (dh, dw) = to;
    assert_eq!(src.len(), sh * sw, "source size mismatch");
    if (sh, sw) == (dh, dw) {
        return src.to_vec();
    }
    let mut out = vec![0.0; dh * dw];
    let sy = sh as f64 / dh as f64;
    let sx = sw as f64 / dw as f64;
    for dy in 0..dh {
        let fy = ((dy as f64 + 0.5) * sy - 0.5).clamp(0.0, (sh - 1) as f64);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(sh - 1);
        let wy = fy - y0 as f64;
        for dx in 0..dw {
            let fx = ((dx as f64 + 0.5) * sx - 0.5).clamp(0.0, (sw - 1) as f64);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(sw - 1);
            let wx = fx - x0 as f64;
            let top = src[y0 * sw + x0] * (1.0 - wx) + src[y0 * sw + x1] * wx;
            let bot = src[y1 * sw + x0] * (1.0 - wx) + src[y1 * sw + x1] * wx;
            out[dy * dw + dx] = top * (1.0 - wy) + bot * wy;
        }
    }
    out
}

/// Divide by the maximum in place; returns true when the map is identically
/// zero (left untouched).
fn normalize_max(map: &mut [f64]) -> bool {
    let max = map.iter().cloned().fold(0.0f64, f64::max);
    if max <= 0.0 {
        return true;
    }
    for v in map.iter_mut() {
        *v /= max;
    }
    false
}

/// Full Grad-CAM pipeline on pre-pooled `act`/`grad` of one decoder stage:
/// weighted sum, ReLU, upsample, max-normalize.
fn cam_pipeline(
    act: &[f64],
    grad: &[f64],
    channels: usize,
    from: (usize, usize),
    to: (usize, usize),
) -> (Vec<f64>, bool) {
    let low = weighted_cam(act, grad, channels, from.0 * from.1);
    let mut up = upsample_bilinear(&low, from, to);
    let all_zero = normalize_max(&mut up);
    (up, all_zero)
}

/// Compute a Grad-CAM map for one image at the named decoder stage.
///
/// The image must match the network's configured input resolution. Needs a
/// mutable network because the forward pass updates nothing in eval mode but
/// shares the training entry point.
pub fn grad_cam<T: Element>(
    net: &mut Network<T>,
    image: &[T],
    layer: &str,
) -> Result<SaliencyMap> {
    let (ih, iw) = net.config.input_size;
    if image.len() != ih * iw {
        return Err(AruError::InvalidArgument(format!(
            "image has {} pixels, network expects {}x{}",
            image.len(),
            ih,
            iw
        )));
    }
    let idx = parse_layer(layer, net.config.levels())?;

    let x = Tensor::from_vec(image.to_vec(), [1, 1, ih, iw])?;
    let tape = Tape::new();
    let (probs, trace) = net.forward(&x, Mode::Eval, Some(&tape))?;

    // Mean logit over predicted-foreground pixels; all pixels if none.
    let half = T::from_f64(0.5);
    let mut sel: Vec<T> = probs
        .data()
        .iter()
        .map(|&p| if p > half { T::one() } else { T::zero() })
        .collect();
    let mut count = sel.iter().filter(|&&v| v > T::zero()).count();
    if count == 0 {
        sel.iter_mut().for_each(|v| *v = T::one());
        count = sel.len();
    }
    let sel_t = Tensor::from_vec(sel, trace.logits.shape().clone())?;
    let score = trace
        .logits
        .mul(&sel_t)?
        .sum_all()?
        .scale(T::from_f64(1.0 / count as f64));
    let grads = tape.backward(&score)?;

    let act = &trace.decoder[idx];
    let (_, c, h, w) = act.shape().dims4("grad_cam activation")?;
    let gid = act.node_id().ok_or_else(|| {
        AruError::InvalidArgument("saliency requires a tape-attached forward pass".into())
    })?;
    let grad = grads
        .get(gid)
        .ok_or_else(|| AruError::InvalidArgument("no gradient recorded for layer".into()))?;

    let act_f: Vec<f64> = act.data().iter().map(|v| v.as_f64()).collect();
    let grad_f: Vec<f64> = grad.iter().map(|v| v.as_f64()).collect();
    let (values, all_zero) = cam_pipeline(&act_f, &grad_f, c, (h, w), (ih, iw));
    Ok(SaliencyMap {
        layer: format!("d{}", idx + 1),
        size: (ih, iw),
        values,
        all_zero,
    })
}

/// Share of total map mass that falls inside the ground-truth mask.
/// `Ok(None)` for an identically-zero map, where the ratio is undefined.
pub fn concentration_index(map: &SaliencyMap, mask: &[u8]) -> Result<Option<f64>> {
    let (h, w) = map.size;
    if mask.len() != h * w {
        return Err(AruError::InvalidArgument(format!(
            "mask has {} pixels, map has {}",
            mask.len(),
            h * w
        )));
    }
    if mask.iter().any(|&m| m > 1) {
        return Err(AruError::InvalidArgument(
            "mask must be binary (0/1)".into(),
        ));
    }
    let total: f64 = map.values.iter().sum();
    if total <= 0.0 {
        return Ok(None);
    }
    let inside: f64 = map
        .values
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m == 1)
        .map(|(v, _)| v)
        .sum();
    Ok(Some(inside / total))
}

/// Count-based variant: of the pixels whose map value exceeds `threshold`,
/// the fraction lying inside the mask. `Ok(None)` when nothing exceeds it.
pub fn concentration_count(map: &SaliencyMap, mask: &[u8], threshold: f64) -> Result<Option<f64>> {
    let (h, w) = map.size;
    if mask.len() != h * w {
        return Err(AruError::InvalidArgument(format!(
            "mask has {} pixels, map has {}",
            mask.len(),
            h * w
        )));
    }
    let mut hot = 0usize;
    let mut hot_inside = 0usize;
    for (v, &m) in map.values.iter().zip(mask) {
        if *v > threshold {
            hot += 1;
            if m == 1 {
                hot_inside += 1;
            }
        }
    }
    if hot == 0 {
        return Ok(None);
    }
    Ok(Some(hot_inside as f64 / hot as f64))
}

/// Attention-gate coefficient maps (coarsest gate first), each bilinearly
/// upsampled to input resolution with values untouched — gates emit through a
/// sigmoid so they are already in [0, 1].
pub fn attention_coefficient_maps<T: Element>(
    net: &mut Network<T>,
    image: &[T],
) -> Result<Vec<SaliencyMap>> {
    if net.num_gates() == 0 {
        return Err(AruError::Unsupported(format!(
            "{} has no attention gates to visualize",
            net.config.arch_kind().name()
        )));
    }
    let (ih, iw) = net.config.input_size;
    if image.len() != ih * iw {
        return Err(AruError::InvalidArgument(format!(
            "image has {} pixels, network expects {}x{}",
            image.len(),
            ih,
            iw
        )));
    }
    let x = Tensor::from_vec(image.to_vec(), [1, 1, ih, iw])?;
    let (_, trace) = net.forward(&x, Mode::Eval, None)?;
    let mut maps = Vec::with_capacity(trace.alphas.len());
    for (i, alpha) in trace.alphas.iter().enumerate() {
        let (_, c, h, w) = alpha.shape().dims4("attention coefficients")?;
        debug_assert_eq!(c, 1);
        let low: Vec<f64> = alpha.data().iter().map(|v| v.as_f64()).collect();
        let values = upsample_bilinear(&low, (h, w), (ih, iw));
        let all_zero = values.iter().all(|&v| v == 0.0);
        maps.push(SaliencyMap {
            layer: format!("alpha{}", i + 1),
            size: (ih, iw),
            values,
            all_zero,
        });
    }
    Ok(maps)
}

/// Render the image as 8-bit grayscale with the outline of the thresholded
/// map painted white, for a quick visual sanity check.
pub fn overlay(image: &[f32], map: &SaliencyMap, threshold: f64) -> Result<Vec<u8>> {
    let (h, w) = map.size;
    if image.len() != h * w {
        return Err(AruError::InvalidArgument(format!(
            "image has {} pixels, map has {}",
            image.len(),
            h * w
        )));
    }
    let hot: Vec<u8> = map
        .values
        .iter()
        .map(|&v| u8::from(v >= threshold))
        .collect();
    let mut out: Vec<u8> = image
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    for (x, y) in boundary(&hot, h, w) {
        out[y * w + x] = 255;
    }
    Ok(out)
}
