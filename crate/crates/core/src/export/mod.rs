//! Converts refined parameters back into a discrete document element and
//! reads/writes the document file format.

mod document;

pub use document::{
    apply_patch, document_from_json, document_from_value, document_to_json, document_value_inline, load_document, save_document,
    save_document_with_background, BackgroundStorage, DOCUMENT_VERSION,
};

use crate::atlas::GlyphAtlas;
use crate::compositor::{layout, BorderEffect, EffectSet, FillEffect, ShadowEffect, TextElement};
use crate::diffrender::{DiffConfig, RefinableParams};
use crate::error::{Error, Result};
use crate::imaging::{Affine2, Rect};

/// Relative half-width of the font size search window.
pub const SIZE_WINDOW: f64 = 0.2;
/// Origin search radius in pixels.
pub const ORIGIN_RADIUS: i32 = 3;
/// Per-character residuals below this many pixels are dropped on export.
pub const OFFSET_TOLERANCE: f64 = 0.01;

/// Discrete style of an element: everything but text placement.
#[derive(Clone, Debug, PartialEq)]
pub struct HardStyle {
    pub font_index: usize,
    pub effects: EffectSet,
}

/// Snaps soft parameters to discrete values.
pub fn harden(params: &RefinableParams, config: &DiffConfig) -> HardStyle {
    let d = params.decode(config);
    HardStyle {
        font_index: d.top_font,
        effects: EffectSet {
            fill: FillEffect { color: d.fill_color },
            border: BorderEffect {
                visible: d.border_visibility > 0.5,
                width_bin: d.top_border_bin(),
                color: d.border_color,
            },
            shadow: ShadowEffect {
                visible: d.shadow_visibility > 0.5,
                blur: d.shadow_blur,
                offset_x: d.shadow_offset[0],
                offset_y: d.shadow_offset[1],
                color: d.shadow_color,
            },
        },
    }
}

/// Inverse of the reconstruction warp `P -> M (P - C) + C - t`.
fn warp_inverse(affine: &[f64; 6], center: [f64; 2], extent: f64, context: &str) -> Result<Affine2> {
    let inv = 1.0 / extent;
    let m = [1.0 + affine[0] * inv, affine[1] * inv, affine[3] * inv, 1.0 + affine[4] * inv];
    // forward as an Affine2: M P + (C - M C - t)
    let fwd = Affine2([
        m[0],
        m[1],
        center[0] - m[0] * center[0] - m[1] * center[1] - affine[2],
        m[2],
        m[3],
        center[1] - m[2] * center[0] - m[3] * center[1] - affine[5],
    ]);
    fwd.inverse().ok_or_else(|| Error::DegenerateAffine {
        det: fwd.det(),
        context: context.to_string(),
    })
}

/// Canvas-space ink boxes of each character of `font` after the refined
/// word and character affines.
pub fn observed_char_boxes(
    params: &RefinableParams,
    atlas: &GlyphAtlas,
    font: usize,
) -> Result<Vec<Rect>> {
    let half = atlas.cell_resolution() as f64 * 0.5;
    let em = atlas.em_px() as f64;
    let word = warp_inverse(&params.word_affine, params.word_center, params.word_extent, "word_affine")?;
    let off = [params.crop.x0 as f64, params.crop.y0 as f64];
    params
        .glyphs
        .iter()
        .zip(&params.frames)
        .enumerate()
        .map(|(i, (&g, frame))| {
            let m = atlas.entry(font, g)?.metrics;
            let ch = warp_inverse(
                &params.char_affines[i],
                frame.center,
                half * frame.scale,
                &format!("char_affines[{i}]"),
            )?;
            let (w, h) = (m.width as f64 * em * frame.scale, m.height as f64 * em * frame.scale);
            let ink = Rect::from_xywh(frame.center[0] - w * 0.5, frame.center[1] - h * 0.5, w, h);
            let pts: Vec<[f64; 2]> = ink
                .corners()
                .iter()
                .map(|&[x, y]| {
                    let [x, y] = ch.apply(x, y);
                    let [x, y] = word.apply(x, y);
                    [x + off[0], y + off[1]]
                })
                .collect();
            Ok(Rect::bounding(&pts).expect("four corners"))
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct GeometryFit {
    pub font_size: f64,
    pub origin: [f64; 2],
    /// Hull of the observed character boxes and the supplied word box.
    pub word_box: Rect,
    /// Observed minus laid-out box centers, per character.
    pub per_char_offsets: Vec<[f64; 2]>,
    /// Summed squared corner distance at the optimum.
    pub residual: f64,
}

fn corner_cost(a: &Rect, b: &Rect) -> f64 {
    (a.x0 - b.x0).powi(2) + (a.y0 - b.y0).powi(2) + (a.x1 - b.x1).powi(2) + (a.y1 - b.y1).powi(2)
}

/// Grid search for the font size and origin whose layout best matches the
/// observed character boxes.
pub fn fit_geometry(
    char_boxes: &[Rect],
    word_box: Option<&Rect>,
    font: usize,
    text: &str,
    atlas: &GlyphAtlas,
) -> Result<GeometryFit> {
    let glyphs: Vec<char> = text.chars().collect();
    if char_boxes.is_empty() {
        return Err(Error::Empty("character boxes"));
    }
    if char_boxes.len() != glyphs.len() {
        return Err(Error::InvalidArgument(format!(
            "{} boxes for {} characters",
            char_boxes.len(),
            glyphs.len()
        )));
    }
    let metrics = glyphs
        .iter()
        .map(|&g| atlas.metrics(font, g))
        .collect::<Result<Vec<_>>>()?;
    // Characters without ink carry no geometry.
    let inked: Vec<bool> = metrics.iter().map(|m| m.width > 0.0 && m.height > 0.0).collect();
    for (i, b) in char_boxes.iter().enumerate() {
        let finite = [b.x0, b.y0, b.x1, b.y1].iter().all(|v| v.is_finite());
        if !finite || (inked[i] && !(b.area() > 1e-9)) {
            return Err(Error::InvalidArgument(format!(
                "character box {i} is degenerate: {b:?}"
            )));
        }
    }
    let best = (0..glyphs.len())
        .filter(|&i| inked[i])
        .fold(None::<usize>, |acc, i| match acc {
            Some(j) if char_boxes[j].area() >= char_boxes[i].area() => Some(j),
            _ => Some(i),
        })
        .ok_or(Error::Empty("inked characters"))?;

    let bm = metrics[best];
    let implied = 0.5
        * (char_boxes[best].width() / bm.width as f64 + char_boxes[best].height() / bm.height as f64);
    let pen_before: f64 = metrics[..best].iter().map(|m| m.advance as f64).sum();

    let mut element = TextElement {
        text: text.to_string(),
        font_index: font,
        font_size: implied,
        origin: [0.0, 0.0],
        per_char_offsets: None,
        effects: EffectSet::plain([0.0; 3]),
    };
    let steps = (implied * SIZE_WINDOW).floor() as i32;
    let mut winner: Option<(f64, f64, [f64; 2])> = None;
    for ds in -steps..=steps {
        let size = implied + ds as f64;
        if size <= 0.0 {
            continue;
        }
        let b = &char_boxes[best];
        let ox = b.x0 - (bm.bearing_x as f64 + pen_before) * size;
        let oy = b.y0 + bm.bearing_y as f64 * size;
        for ix in -ORIGIN_RADIUS..=ORIGIN_RADIUS {
            for iy in -ORIGIN_RADIUS..=ORIGIN_RADIUS {
                element.font_size = size;
                element.origin = [ox + ix as f64, oy + iy as f64];
                let l = layout(&element, atlas)?;
                let cost: f64 = l
                    .chars
                    .iter()
                    .zip(char_boxes)
                    .zip(&inked)
                    .filter(|(_, &ink)| ink)
                    .map(|((c, o), _)| corner_cost(&c.ink, o))
                    .sum();
                // Strict improvement keeps the smallest size, then the
                // lexicographically smallest origin.
                if winner.map_or(true, |(c, _, _)| cost < c - 1e-9) {
                    winner = Some((cost, size, element.origin));
                }
            }
        }
    }
    let (residual, font_size, origin) = winner.ok_or(Error::Empty("size window"))?;
    element.font_size = font_size;
    element.origin = origin;
    let l = layout(&element, atlas)?;
    let per_char_offsets = l
        .chars
        .iter()
        .zip(char_boxes)
        .zip(&inked)
        .map(|((c, o), &ink)| {
            if !ink {
                return [0.0, 0.0];
            }
            let [ax, ay] = c.ink.center();
            let [bx, by] = o.center();
            [bx - ax, by - ay]
        })
        .collect();
    let hull = Rect::hull(char_boxes.iter().chain(word_box)).expect("nonempty");
    Ok(GeometryFit {
        font_size,
        origin,
        word_box: hull,
        per_char_offsets,
        residual,
    })
}

/// Full export of one refined word: hardened style plus fitted geometry.
pub fn export_element(
    params: &RefinableParams,
    atlas: &GlyphAtlas,
    config: &DiffConfig,
    word_box: Option<&Rect>,
) -> Result<TextElement> {
    let style = harden(params, config);
    let boxes = observed_char_boxes(params, atlas, style.font_index)?;
    let fit = fit_geometry(&boxes, word_box, style.font_index, &params.text, atlas)?;
    let offsets = fit
        .per_char_offsets
        .iter()
        .any(|o| o[0].abs() > OFFSET_TOLERANCE || o[1].abs() > OFFSET_TOLERANCE)
        .then(|| fit.per_char_offsets.clone());
    Ok(TextElement {
        text: params.text.clone(),
        font_index: style.font_index,
        font_size: fit.font_size,
        origin: fit.origin,
        per_char_offsets: offsets,
        effects: style.effects,
    })
}

#[cfg(test)]
mod tests;
