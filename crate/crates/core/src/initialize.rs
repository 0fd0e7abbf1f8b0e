//! Deterministic initial guess for one word: a soft text mask from color
//! clustering, fast-marching inpainting of the background under it, and
//! starting parameters (font ranking by correlation, box-fit affine, fill
//! color by decompositing against the inpainted background).

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::atlas::{dilate_disk, GlyphAtlas, BORDER_BINS};
use crate::compositor::{layout, render_effect_alphas, EffectSet, Layout, TextElement};
use crate::decompose::{invert_layer, modal_color};
use crate::diffrender::{color_to_logits, word_crop, DiffConfig, RefinableParams};
use crate::error::{Error, Result};
use crate::imaging::{AlphaMap, PixelRegion, RasterImage, Rect, Rgb};

/// Mask values above this join the inpainting hole.
pub const HOLE_THRESHOLD: f32 = 0.05;
/// Hole dilation radius in pixels.
pub const HOLE_DILATION: usize = 3;
/// Neighborhood radius of the inpainting average.
pub const INPAINT_RADIUS: f64 = 5.0;
/// Smallest accepted word box side in pixels.
pub const MIN_BOX_SIDE: usize = 4;
/// Cluster centers closer than this (L-infinity) count as a single cluster.
pub const MIN_SEPARATION: f32 = 0.1;
/// Residuals below this norm are treated as background noise.
const NOISE_FLOOR: f32 = 0.02;

/// Logit scale applied to font correlations.
const FONT_LOGIT_SCALE: f64 = 10.0;
/// Extra logit for the best-correlated font.
const TOP_FONT_BONUS: f64 = 2.0;
/// Starting preference for the middle border bin.
const BORDER_BIN_BIAS: f64 = 2.0;
const START_BORDER_BIN: usize = 3;
/// Minimum depth inside the crisp fill for fill color samples, in pixels.
const CORE_DEPTH: f32 = 1.5;

/// Per-field confidences in [0, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct Confidence {
    /// Correlation margin between the best and second best font.
    pub font: f64,
    /// Share of the color samples in the modal histogram cell.
    pub fill_color: f64,
    /// Foreground/background separation relative to full contrast.
    pub mask: f64,
}

#[derive(Clone, Debug)]
pub struct InitGuess {
    pub params: RefinableParams,
    /// Inpainted full canvas.
    pub background: RasterImage,
    pub mask: AlphaMap,
    /// Fonts by decreasing correlation.
    pub font_ranking: Vec<usize>,
    pub confidence: Confidence,
}

fn dist_inf(a: Rgb, b: Rgb) -> f32 {
    (0..3).map(|c| (a[c] - b[c]).abs()).fold(0.0, f32::max)
}

fn norm2(a: Rgb, b: Rgb) -> f32 {
    (0..3).map(|c| (a[c] - b[c]).powi(2)).sum::<f32>().sqrt()
}

/// Region analysed for a word box: the box grown by a fifth of its height
/// plus two pixels, clipped to the image.
fn analysis_region(image: &RasterImage, word_box: &Rect) -> Result<PixelRegion> {
    let (w, h) = image.dims();
    let inner = PixelRegion::covering(word_box, w, h);
    if inner.width() < MIN_BOX_SIDE || inner.height() < MIN_BOX_SIDE {
        return Err(Error::InvalidArgument(format!(
            "word box {word_box:?} is smaller than {MIN_BOX_SIDE}x{MIN_BOX_SIDE} inside the image"
        )));
    }
    let m = word_box.height() * 0.2 + 2.0;
    Ok(PixelRegion::covering(
        &Rect::new(word_box.x0 - m, word_box.y0 - m, word_box.x1 + m, word_box.y1 + m),
        w,
        h,
    ))
}

/// Background model over `r`: transfinite interpolation of the region's
/// outermost rows and columns (exact for bilinear fields).
fn frame_background(image: &RasterImage, r: &PixelRegion) -> Vec<Rgb> {
    let (rw, rh) = (r.width(), r.height());
    let (xl, xr, yt, yb) = (r.x0, r.x1 - 1, r.y0, r.y1 - 1);
    let mut out = Vec::with_capacity(rw * rh);
    for j in 0..rh {
        let v = if rh > 1 { j as f32 / (rh - 1) as f32 } else { 0.0 };
        let y = r.y0 + j;
        for i in 0..rw {
            let u = if rw > 1 { i as f32 / (rw - 1) as f32 } else { 0.0 };
            let x = r.x0 + i;
            let (left, right) = (image.pixel(xl, y), image.pixel(xr, y));
            let (top, bottom) = (image.pixel(x, yt), image.pixel(x, yb));
            let c = [
                image.pixel(xl, yt),
                image.pixel(xr, yt),
                image.pixel(xl, yb),
                image.pixel(xr, yb),
            ];
            out.push(std::array::from_fn(|k| {
                let lr = (1.0 - u) * left[k] + u * right[k];
                let tb = (1.0 - v) * top[k] + v * bottom[k];
                let bi = (1.0 - u) * (1.0 - v) * c[0][k]
                    + u * (1.0 - v) * c[1][k]
                    + (1.0 - u) * v * c[2][k]
                    + u * v * c[3][k];
                lr + tb - bi
            }));
        }
    }
    out
}

/// Soft text mask (full image size, zero outside the analysed region).
///
/// Pixels are compared with a background model interpolated from the frame
/// around the box; the residuals are split into two clusters (seeded at zero
/// and at the largest residual) and alpha is the distance from the
/// background model normalized by the foreground cluster's distance.
pub fn estimate_mask(image: &RasterImage, word_box: &Rect) -> Result<AlphaMap> {
    let (w, h) = image.dims();
    let r = analysis_region(image, word_box)?;
    let bg = frame_background(image, &r);
    let resid: Vec<Rgb> = r
        .pixels()
        .zip(&bg)
        .map(|((x, y), b)| {
            let p = image.pixel(x, y);
            [p[0] - b[0], p[1] - b[1], p[2] - b[2]]
        })
        .collect();
    let zero = [0.0f32; 3];
    let far = resid
        .iter()
        .copied()
        .max_by(|a, b| norm2(*a, zero).total_cmp(&norm2(*b, zero)))
        .unwrap_or(zero);
    let mut centers = [zero, far];
    for _ in 0..16 {
        let mut sums = [[0.0f64; 3]; 2];
        let mut counts = [0usize; 2];
        for p in &resid {
            let k = (norm2(*p, centers[1]) < norm2(*p, centers[0])) as usize;
            counts[k] += 1;
            for c in 0..3 {
                sums[k][c] += p[c] as f64;
            }
        }
        let mut next = centers;
        for k in 0..2 {
            if counts[k] > 0 {
                next[k] = sums[k].map(|s| (s / counts[k] as f64) as f32);
            }
        }
        if next == centers {
            break;
        }
        centers = next;
    }
    // The foreground cluster is the one farther from the background model.
    if norm2(centers[0], zero) > norm2(centers[1], zero) {
        centers.swap(0, 1);
    }
    let mut mask = AlphaMap::zeros(w, h);
    if dist_inf(centers[1], centers[0]) < MIN_SEPARATION {
        return Ok(mask);
    }
    // Distances are taken from the background model itself so that effects
    // lying between the clusters still count as text.
    let sep = norm2(centers[1], zero);
    for ((x, y), p) in r.pixels().zip(&resid) {
        let a = ((norm2(*p, zero) - NOISE_FLOOR) / (sep - NOISE_FLOOR)).clamp(0.0, 1.0);
        mask.set(x, y, a);
    }
    Ok(mask)
}

/// Hole of [`inpaint`]: mask above the threshold, dilated by a disk.
pub fn inpaint_hole(mask: &AlphaMap) -> Vec<bool> {
    let hard = mask.map(|a| if a > HOLE_THRESHOLD { 1.0 } else { 0.0 });
    dilate_disk(&hard, HOLE_DILATION)
        .data()
        .iter()
        .map(|&v| v >= 0.5)
        .collect()
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Flag {
    Known,
    Band,
    Inside,
}

#[derive(PartialEq)]
struct HeapItem(f64, usize);

impl Eq for HeapItem {}

impl PartialOrd for HeapItem {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for HeapItem {
    // min-heap on arrival time, then on index for determinism
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.total_cmp(&self.0).then(other.1.cmp(&self.1))
    }
}

/// Fast-marching inpainting: hole pixels are filled in order of distance
/// from the hole boundary, each as a normalized weighted average of known
/// pixels within [`INPAINT_RADIUS`] (weights: alignment with the distance
/// gradient, inverse squared distance, level-set proximity).
pub fn inpaint(image: &RasterImage, mask: &AlphaMap) -> Result<RasterImage> {
    let (w, h) = image.dims();
    if mask.dims() != (w, h) {
        return Err(Error::DimensionMismatch {
            expected: (w, h),
            actual: mask.dims(),
        });
    }
    let hole = inpaint_hole(mask);
    let holes = hole.iter().filter(|&&b| b).count();
    if holes == 0 {
        return Ok(image.clone());
    }
    if holes == w * h {
        return Err(Error::InvalidArgument("inpainting hole covers the whole image".into()));
    }
    const FAR: f64 = 1e6;
    let mut flag: Vec<Flag> = hole.iter().map(|&b| if b { Flag::Inside } else { Flag::Known }).collect();
    let mut t: Vec<f64> = hole.iter().map(|&b| if b { FAR } else { 0.0 }).collect();
    let mut data: Vec<[f64; 3]> = image
        .data()
        .chunks_exact(3)
        .map(|p| [p[0] as f64, p[1] as f64, p[2] as f64])
        .collect();
    let neighbors = |i: usize| {
        let (x, y) = ((i % w) as isize, (i / w) as isize);
        [(x - 1, y), (x + 1, y), (x, y - 1), (x, y + 1)]
            .into_iter()
            .filter(move |&(nx, ny)| nx >= 0 && ny >= 0 && nx < w as isize && ny < h as isize)
            .map(move |(nx, ny)| ny as usize * w + nx as usize)
    };
    let mut heap = BinaryHeap::new();
    for i in 0..w * h {
        if flag[i] == Flag::Known && neighbors(i).any(|n| hole[n]) {
            flag[i] = Flag::Band;
            heap.push(HeapItem(0.0, i));
        }
    }
    let radius = INPAINT_RADIUS.ceil() as isize;
    while let Some(HeapItem(_, i)) = heap.pop() {
        if flag[i] == Flag::Known {
            continue;
        }
        flag[i] = Flag::Known;
        for n in neighbors(i).collect::<Vec<_>>() {
            if flag[n] != Flag::Inside {
                continue;
            }
            let (x, y) = ((n % w) as isize, (n / w) as isize);
            let at = |dx: isize, dy: isize| -> Option<f64> {
                let (px, py) = (x + dx, y + dy);
                if px < 0 || py < 0 || px >= w as isize || py >= h as isize {
                    return None;
                }
                let k = py as usize * w + px as usize;
                (flag[k] != Flag::Inside).then_some(t[k])
            };
            let (left, right, up, down) = (at(-1, 0), at(1, 0), at(0, -1), at(0, 1));
            let mut tn = FAR;
            for (a, b) in [(up, left), (up, right), (down, left), (down, right)] {
                tn = tn.min(eikonal(a, b));
            }
            t[n] = tn;
            let grad = |m: Option<f64>, p: Option<f64>| match (m, p) {
                (Some(m), Some(p)) => (p - m) * 0.5,
                (Some(m), None) => tn - m,
                (None, Some(p)) => p - tn,
                (None, None) => 0.0,
            };
            let g = [grad(left, right), grad(up, down)];
            let gl = (g[0] * g[0] + g[1] * g[1]).sqrt();
            let mut acc = [0.0f64; 3];
            let mut wsum = 0.0;
            for dy in -radius..=radius {
                for dx in -radius..=radius {
                    let r2 = (dx * dx + dy * dy) as f64;
                    if r2 == 0.0 || r2 > INPAINT_RADIUS * INPAINT_RADIUS {
                        continue;
                    }
                    let (qx, qy) = (x + dx, y + dy);
                    if qx < 0 || qy < 0 || qx >= w as isize || qy >= h as isize {
                        continue;
                    }
                    let q = qy as usize * w + qx as usize;
                    if flag[q] == Flag::Inside {
                        continue;
                    }
                    // r points from the neighbor to the filled pixel
                    let (rx, ry) = (-dx as f64, -dy as f64);
                    let rl = r2.sqrt();
                    let mut dir = if gl > 0.0 { (rx * g[0] + ry * g[1]).abs() / (rl * gl) } else { 0.0 };
                    if dir < 1e-6 {
                        dir = 1e-6;
                    }
                    let wgt = dir / r2 / (1.0 + (t[q] - tn).abs());
                    for c in 0..3 {
                        acc[c] += wgt * data[q][c];
                    }
                    wsum += wgt;
                }
            }
            // at least one neighbor is known, so wsum > 0
            data[n] = acc.map(|v| (v / wsum).clamp(0.0, 1.0));
            flag[n] = Flag::Band;
            heap.push(HeapItem(tn, n));
        }
    }
    let mut out = image.clone();
    for (i, p) in data.iter().enumerate() {
        if hole[i] {
            out.set_pixel(i % w, i / w, p.map(|v| v as f32));
        }
    }
    Ok(out)
}

/// Upwind solution of |grad T| = 1 from two orthogonal neighbors.
fn eikonal(a: Option<f64>, b: Option<f64>) -> f64 {
    match (a, b) {
        (Some(a), Some(b)) => {
            let d = a - b;
            if d.abs() >= 1.0 {
                a.min(b) + 1.0
            } else {
                (a + b + (2.0 - d * d).sqrt()) * 0.5
            }
        }
        (Some(a), None) | (None, Some(a)) => a + 1.0,
        (None, None) => f64::INFINITY,
    }
}

/// Size and origin placing the text's ink hull on `word_box`: height and
/// width ratios share the misfit geometrically, centers coincide.
fn box_fit_element(text: &str, font: usize, word_box: &Rect, atlas: &GlyphAtlas) -> Result<TextElement> {
    let mut e = TextElement {
        text: text.to_string(),
        font_index: font,
        font_size: 1.0,
        origin: [0.0, 0.0],
        per_char_offsets: None,
        effects: EffectSet::plain([1.0; 3]),
    };
    let unit = layout(&e, atlas)?.word_box;
    if !(unit.width() > 0.0 && unit.height() > 0.0) {
        return Err(Error::InvalidArgument(format!("text {text:?} has no ink")));
    }
    let s = ((word_box.width() / unit.width()) * (word_box.height() / unit.height())).sqrt();
    let [ux, uy] = unit.center();
    let [bx, by] = word_box.center();
    e.font_size = s;
    e.origin = [bx - ux * s, by - uy * s];
    Ok(e)
}

/// Affine (in the reconstruction's displacement form) that maps the layout
/// hull onto `word_box`.
fn box_fit_affine(layout: &Layout, word_box: &Rect, params: &RefinableParams) -> [f64; 6] {
    let l = &layout.word_box;
    let sx = l.width() / word_box.width();
    let sy = l.height() / word_box.height();
    let [lx, ly] = l.center();
    let [bx, by] = word_box.center();
    let ext = params.word_extent;
    [
        (sx - 1.0) * ext,
        0.0,
        sx * (bx - lx),
        0.0,
        (sy - 1.0) * ext,
        sy * (by - ly),
    ]
}

fn ncc(a: &[f32], b: &[f32]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().map(|&v| v as f64).sum::<f64>() / n;
    let mb = b.iter().map(|&v| v as f64).sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (x as f64 - ma, y as f64 - mb);
        sab += x * y;
        saa += x * x;
        sbb += y * y;
    }
    if saa <= 0.0 || sbb <= 0.0 {
        0.0
    } else {
        sab / (saa * sbb).sqrt()
    }
}

fn crop_alpha(map: &AlphaMap, r: &PixelRegion) -> Vec<f32> {
    r.pixels().map(|(x, y)| map.get(x, y)).collect()
}

/// Chamfer (3-4) depth of each pixel inside `inside`, in pixels.
fn depth(inside: &[bool], w: usize, h: usize) -> Vec<f32> {
    const BIG: u32 = u32::MAX / 2;
    let mut d: Vec<u32> = inside.iter().map(|&b| if b { BIG } else { 0 }).collect();
    let get = |d: &[u32], x: isize, y: isize| {
        if x < 0 || y < 0 || x >= w as isize || y >= h as isize {
            0
        } else {
            d[y as usize * w + x as usize]
        }
    };
    for y in 0..h as isize {
        for x in 0..w as isize {
            let i = y as usize * w + x as usize;
            if d[i] == 0 {
                continue;
            }
            let m = (get(&d, x - 1, y) + 3)
                .min(get(&d, x, y - 1) + 3)
                .min(get(&d, x - 1, y - 1) + 4)
                .min(get(&d, x + 1, y - 1) + 4);
            d[i] = d[i].min(m);
        }
    }
    for y in (0..h as isize).rev() {
        for x in (0..w as isize).rev() {
            let i = y as usize * w + x as usize;
            if d[i] == 0 {
                continue;
            }
            let m = (get(&d, x + 1, y) + 3)
                .min(get(&d, x, y + 1) + 3)
                .min(get(&d, x + 1, y + 1) + 4)
                .min(get(&d, x - 1, y + 1) + 4);
            d[i] = d[i].min(m);
        }
    }
    d.into_iter().map(|v| v as f32 / 3.0).collect()
}

/// Starting parameters for the word in `word_box` reading `text`.
pub fn initial_guess(
    image: &RasterImage,
    word_box: &Rect,
    text: &str,
    atlas: &GlyphAtlas,
    config: &DiffConfig,
) -> Result<InitGuess> {
    if text.is_empty() {
        return Err(Error::Empty("text"));
    }
    atlas.contains_text(text)?;
    let mask = estimate_mask(image, word_box)?;
    let background = inpaint(image, &mask)?;
    guess_with_background(image, background, mask, word_box, text, atlas, config)
}

/// Like [`initial_guess`], with the text mask and inpainted background
/// supplied by the caller. Multi-word images share one background built from
/// the union of all word masks, so no word's ink leaks into another's
/// background estimate.
pub fn guess_with_background(
    image: &RasterImage,
    background: RasterImage,
    mask: AlphaMap,
    word_box: &Rect,
    text: &str,
    atlas: &GlyphAtlas,
    config: &DiffConfig,
) -> Result<InitGuess> {
    if text.is_empty() {
        return Err(Error::Empty("text"));
    }
    atlas.contains_text(text)?;
    config.validate(atlas)?;
    let (w, h) = image.dims();
    if background.dims() != (w, h) {
        return Err(Error::DimensionMismatch { expected: (w, h), actual: background.dims() });
    }
    if mask.dims() != (w, h) {
        return Err(Error::DimensionMismatch { expected: (w, h), actual: mask.dims() });
    }
    let crop = word_crop(word_box, w, h, config);

    // Font ranking: correlation of each font's crisp fill with the mask.
    let target = crop_alpha(&mask, &crop);
    let scores = (0..atlas.num_fonts())
        .map(|f| {
            let mut e = box_fit_element(text, f, word_box, atlas)?;
            e.origin = [e.origin[0] - crop.x0 as f64, e.origin[1] - crop.y0 as f64];
            let alphas = render_effect_alphas(&e, atlas, crop.width(), crop.height())?;
            Ok(ncc(&target, alphas.fill.data()))
        })
        .collect::<Result<Vec<f64>>>()?;
    let mut ranking: Vec<usize> = (0..scores.len()).collect();
    ranking.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let top = ranking[0];
    let margin = ranking.get(1).map_or(1.0, |&s| scores[top] - scores[s]);

    let element = box_fit_element(text, top, word_box, atlas)?;
    let l = layout(&element, atlas)?;
    let mut params = RefinableParams::from_layout(text, &l, crop, atlas.num_fonts(), atlas.cell_resolution());
    params.font_logits = scores.iter().map(|s| FONT_LOGIT_SCALE * s).collect();
    params.font_logits[top] += TOP_FONT_BONUS;
    params.word_affine = box_fit_affine(&l, word_box, &params);

    // Fill color: the mask also covers borders and shadows and can be hollow
    // when the fill is close to the background, so the fill alpha comes from
    // the crisp render of the top font, shrunk to its interior.
    let mut placed = element.clone();
    placed.origin = [placed.origin[0] - crop.x0 as f64, placed.origin[1] - crop.y0 as f64];
    let crisp = render_effect_alphas(&placed, atlas, crop.width(), crop.height())?.fill;
    let inside: Vec<bool> = crisp.data().iter().map(|&a| a >= 0.5).collect();
    let deep = depth(&inside, crop.width(), crop.height());
    let mut core = AlphaMap::zeros(w, h);
    let mut any = false;
    for (i, (x, y)) in crop.pixels().enumerate() {
        if crisp.data()[i] >= 0.99 && deep[i] >= CORE_DEPTH {
            core.set(x, y, 1.0);
            any = true;
        }
    }
    if !any {
        for (i, (x, y)) in crop.pixels().enumerate() {
            core.set(x, y, crisp.data()[i]);
        }
    }
    let samples = invert_layer(image, &background, &core, &crop)?;
    let colors: Vec<Rgb> = samples.into_iter().map(|(_, c)| c).collect();
    let fill = modal_color(&colors)?;
    let f = fill.color;
    params.fill_color_logits = color_to_logits(f);
    params.border_color_logits = color_to_logits([1.0 - f[0], 1.0 - f[1], 1.0 - f[2]]);
    params.shadow_color_logits = color_to_logits(f.map(|v| 0.5 * v));
    params.border_visibility_logit = 0.0;
    params.shadow_visibility_logit = 0.0;
    params.border_bin_logits = [0.0; BORDER_BINS];
    params.border_bin_logits[START_BORDER_BIN - 1] = BORDER_BIN_BIAS;

    let region = analysis_region(image, word_box)?;
    let peak = region.pixels().map(|(x, y)| mask.get(x, y)).fold(0.0f32, f32::max);
    Ok(InitGuess {
        params,
        background,
        mask,
        font_ranking: ranking,
        confidence: Confidence {
            font: (margin * FONT_LOGIT_SCALE).clamp(0.0, 1.0),
            fill_color: fill.histogram_peak_mass as f64,
            mask: peak as f64,
        },
    })
}

