//! Class-activation heat maps.
//!
//! [`gradcam`] weights each channel of the last full-resolution feature
//! block by the spatial mean of the class logit's gradient and keeps the
//! positive part of the weighted sum. [`occlusion_map`] is a model-agnostic
//! cross-check: it slides a mean-filled patch over the image and records how
//! much the class probability drops.

use std::fs;
use std::path::Path;

use image::{Rgb, RgbImage};
use rayon::prelude::*;

use crate::arch::ModelGraph;
use crate::autodiff::Graph;
use crate::error::{Error, Result};
use crate::layers::chw;
use crate::tensor::{Element, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HeatMapMethod {
    GradCam,
    Occlusion,
}

/// An `[S, S]` map with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct HeatMap {
    pub values: Tensor<f32>,
    pub class_index: usize,
    pub method: HeatMapMethod,
}

impl HeatMap {
    pub fn size(&self) -> (usize, usize) {
        (self.values.shape()[1], self.values.shape()[0])
    }
}

/// Scales by the maximum so the peak is 1; an all-zero map stays zero.
fn normalize(raw: Vec<f64>, h: usize, w: usize) -> Tensor<f32> {
    let max = raw.iter().copied().fold(0.0f64, f64::max);
    let data = raw
        .into_iter()
        .map(|v| if max > 0.0 { (v.max(0.0) / max) as f32 } else { 0.0 })
        .collect();
    Tensor::new(&[h, w], data).expect("h * w values")
}

fn check_class<T: Element>(model: &ModelGraph<T>, class_index: usize) -> Result<()> {
    let k = model.config().num_classes;
    if class_index >= k {
        return Err(Error::Usage(format!("class {class_index} out of range for {k} classes")));
    }
    Ok(())
}

pub fn gradcam<T: Element>(model: &ModelGraph<T>, image: &Tensor<T>, class_index: usize) -> Result<HeatMap> {
    check_class(model, class_index)?;
    let mut g = Graph::new();
    let nodes = model.record(&mut g, image)?;
    let logit = g.select(nodes.logits, class_index)?;
    g.backward(logit)?;

    let acts = g.value(nodes.features);
    let grads = g.gradient(nodes.features).expect("backward ran");
    let (c, h, w) = chw(acts)?;
    let plane = h * w;
    let mut raw = vec![0.0f64; plane];
    for k in 0..c {
        let gk = &grads.data()[k * plane..(k + 1) * plane];
        let weight = gk.iter().map(|&v| Element::to_f64(v)).sum::<f64>() / plane as f64;
        if weight == 0.0 {
            continue;
        }
        for (r, a) in raw.iter_mut().zip(&acts.data()[k * plane..(k + 1) * plane]) {
            *r += weight * Element::to_f64(*a);
        }
    }
    Ok(HeatMap {
        values: normalize(raw.into_iter().map(|v| v.max(0.0)).collect(), h, w),
        class_index,
        method: HeatMapMethod::GradCam,
    })
}

/// Patch origins along one axis: every `stride` from 0, plus a final origin
/// flush with the far edge if the stride skips it.
fn patch_origins(size: usize, patch: usize, stride: usize) -> Vec<usize> {
    let mut v: Vec<usize> = (0..=size - patch).step_by(stride).collect();
    if *v.last().expect("patch <= size") != size - patch {
        v.push(size - patch);
    }
    v
}

/// Occlusion sensitivity of `class_index`.
///
/// Each `patch x patch` window (stepping by `stride`) is replaced by `fill`
/// (the image mean when `None`) in every channel and the drop in the class
/// probability is recorded. A pixel's score is the mean drop over the
/// windows covering it; negative scores are clipped before normalizing.
pub fn occlusion_map(
    model: &ModelGraph<f32>,
    image: &Tensor<f32>,
    class_index: usize,
    patch: usize,
    stride: usize,
    fill: Option<f32>,
) -> Result<HeatMap> {
    check_class(model, class_index)?;
    let (c, h, w) = chw(image)?;
    if patch == 0 || patch > h.min(w) || stride == 0 {
        return Err(Error::Usage(format!(
            "occlusion needs 1 <= patch <= {} and stride >= 1, got patch {patch}, stride {stride}",
            h.min(w)
        )));
    }
    let base = model.forward_classify(image)?.data()[class_index] as f64;
    let fill = fill.unwrap_or_else(|| image.sum() / image.len() as f32);

    let windows: Vec<(usize, usize)> = patch_origins(h, patch, stride)
        .into_iter()
        .flat_map(|y| patch_origins(w, patch, stride).into_iter().map(move |x| (y, x)))
        .collect();
    let drops = windows
        .par_iter()
        .map(|&(y0, x0)| {
            let mut occluded = image.clone();
            let d = occluded.data_mut();
            for ch in 0..c {
                for y in y0..y0 + patch {
                    let row = (ch * h + y) * w;
                    d[row + x0..row + x0 + patch].iter_mut().for_each(|v| *v = fill);
                }
            }
            let p = model.forward_classify(&occluded)?.data()[class_index] as f64;
            Ok(base - p)
        })
        .collect::<Result<Vec<f64>>>()?;

    let mut sum = vec![0.0f64; h * w];
    let mut cover = vec![0u32; h * w];
    for (&(y0, x0), &drop) in windows.iter().zip(&drops) {
        for y in y0..y0 + patch {
            for x in x0..x0 + patch {
                sum[y * w + x] += drop;
                cover[y * w + x] += 1;
            }
        }
    }
    let raw = sum
        .into_iter()
        .zip(cover)
        .map(|(s, n)| if n > 0 { (s / n as f64).max(0.0) } else { 0.0 })
        .collect();
    Ok(HeatMap {
        values: normalize(raw, h, w),
        class_index,
        method: HeatMapMethod::Occlusion,
    })
}

/// Overlay colour for heat `h`: from orange at low heat to pure red at 1.
fn warm(h: f32) -> [f32; 3] {
    [255.0, 165.0 * (1.0 - h), 0.0]
}

/// Blends a warm overlay onto a grayscale base. Alpha equals the heat value,
/// so a zero map reproduces the base and a saturated map is fully tinted.
/// `base` is `[S, S]` or `[C, S, S]` in `[0, 1]` (channels are averaged).
pub fn overlay(map: &HeatMap, base: &Tensor<f32>) -> Result<RgbImage> {
    let (h, w) = (map.values.shape()[0], map.values.shape()[1]);
    let gray: Vec<f32> = match *base.shape() {
        [bh, bw] if (bh, bw) == (h, w) => base.data().to_vec(),
        [c, bh, bw] if (bh, bw) == (h, w) => (0..h * w)
            .map(|i| (0..c).map(|ch| base.data()[ch * h * w + i]).sum::<f32>() / c as f32)
            .collect(),
        ref s => {
            return Err(Error::Shape(format!(
                "heat map is {h}x{w} but the base image has shape {s:?}"
            )))
        }
    };
    let mut img = RgbImage::new(w as u32, h as u32);
    for (i, (&heat, &g)) in map.values.data().iter().zip(&gray).enumerate() {
        let a = heat.clamp(0.0, 1.0);
        let g = g.clamp(0.0, 1.0) * 255.0;
        let c = warm(a);
        let px = [0, 1, 2].map(|k| ((1.0 - a) * g + a * c[k]).round() as u8);
        img.put_pixel((i % w) as u32, (i / w) as u32, Rgb(px));
    }
    Ok(img)
}

/// Writes the overlay as a PNG.
pub fn render_heatmap(map: &HeatMap, base: &Tensor<f32>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let img = overlay(map, base)?;
    let mut bytes = Vec::new();
    img.write_to(&mut std::io::Cursor::new(&mut bytes), image::ImageFormat::Png)
        .map_err(|e| Error::Data(format!("cannot encode heat map: {e}")))?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Raw map as CSV, one image row per line.
pub fn write_heatmap_csv(map: &HeatMap, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let w = map.values.shape()[1];
    let text: String = map
        .values
        .data()
        .chunks(w)
        .map(|row| row.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",") + "\n")
        .collect();
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Ranks with ties sharing their average rank.
fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && v[order[j + 1]] == v[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation (Pearson correlation of average ranks).
/// Returns 0 when either side is constant.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "spearman of unequal lengths");
    let (ra, rb) = (average_ranks(a), average_ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
    for (x, y) in ra.iter().zip(&rb) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va == 0.0 || vb == 0.0 {
        0.0
    } else {
        cov / (va * vb).sqrt()
    }
}

/// Share of the heat carried by the top 10% of pixels that falls inside
/// `[x0, y0, x1, y1)`.
pub fn top_decile_mass_in_box(map: &HeatMap, feature_box: [usize; 4]) -> f64 {
    let w = map.values.shape()[1];
    let vals = map.values.data();
    let mut idx: Vec<usize> = (0..vals.len()).collect();
    idx.sort_by(|&a, &b| vals[b].total_cmp(&vals[a]).then(a.cmp(&b)));
    let top = &idx[..(vals.len() / 10).max(1)];
    let total: f64 = top.iter().map(|&i| vals[i] as f64).sum();
    if total == 0.0 {
        return 0.0;
    }
    let [x0, y0, x1, y1] = feature_box;
    let inside: f64 = top
        .iter()
        .filter(|&&i| (x0..x1).contains(&(i % w)) && (y0..y1).contains(&(i / w)))
        .map(|&i| vals[i] as f64)
        .sum();
    inside / total
}
