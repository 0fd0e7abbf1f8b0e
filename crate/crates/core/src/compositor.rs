//! Crisp forward renderer: text layout, per-effect alpha generation and
//! source-over compositing of shadow, fill and border over a background.

use crate::atlas::{GlyphAtlas, BORDER_BINS};
use crate::error::{Error, Result};
use crate::imaging::{affine_sample, gaussian_blur, Affine2, AlphaMap, RasterImage, Rect, Rgb};

/// Largest canvas side accepted by [`render_document`].
pub const MAX_CANVAS_SIDE: usize = 16384;

#[derive(Clone, Debug, PartialEq)]
pub struct FillEffect {
    pub color: Rgb,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BorderEffect {
    pub visible: bool,
    /// Stroke width bin, `1..=5` cell pixels.
    pub width_bin: usize,
    pub color: Rgb,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ShadowEffect {
    pub visible: bool,
    /// Gaussian sigma in pixels.
    pub blur: f64,
    pub offset_x: f64,
    pub offset_y: f64,
    pub color: Rgb,
}

/// Effects of one text element, composited as shadow, fill, border.
#[derive(Clone, Debug, PartialEq)]
pub struct EffectSet {
    pub fill: FillEffect,
    pub border: BorderEffect,
    pub shadow: ShadowEffect,
}

impl EffectSet {
    pub fn plain(color: Rgb) -> Self {
        Self {
            fill: FillEffect { color },
            border: BorderEffect {
                visible: false,
                width_bin: 1,
                color: [0.0; 3],
            },
            shadow: ShadowEffect {
                visible: false,
                blur: 0.0,
                offset_x: 0.0,
                offset_y: 0.0,
                color: [0.0; 3],
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TextElement {
    pub text: String,
    pub font_index: usize,
    /// Em size in pixels.
    pub font_size: f64,
    /// Baseline-left pen position.
    pub origin: [f64; 2],
    /// Per-character displacement; does not move the following characters.
    pub per_char_offsets: Option<Vec<[f64; 2]>>,
    pub effects: EffectSet,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Document {
    pub canvas_width: usize,
    pub canvas_height: usize,
    pub background: RasterImage,
    pub elements: Vec<TextElement>,
}

fn check_color(color: &Rgb, what: &str) -> Result<()> {
    if color.iter().all(|c| (0.0..=1.0).contains(c)) {
        Ok(())
    } else {
        Err(Error::Invariant(format!("{what} color {color:?} outside [0, 1]")))
    }
}

impl TextElement {
    /// Checks the element's own invariants and, if given, atlas membership.
    pub fn validate(&self, atlas: Option<&GlyphAtlas>) -> Result<()> {
        if self.text.is_empty() {
            return Err(Error::Invariant("text is empty".into()));
        }
        if !(self.font_size.is_finite() && self.font_size > 0.0) {
            return Err(Error::Invariant(format!(
                "font_size must be > 0, got {}",
                self.font_size
            )));
        }
        if !self.origin.iter().all(|v| v.is_finite()) {
            return Err(Error::Invariant("origin is not finite".into()));
        }
        if let Some(offsets) = &self.per_char_offsets {
            if offsets.len() != self.text.chars().count() {
                return Err(Error::Invariant(format!(
                    "{} per-char offsets for {} characters",
                    offsets.len(),
                    self.text.chars().count()
                )));
            }
            if !offsets.iter().flatten().all(|v| v.is_finite()) {
                return Err(Error::Invariant("per-char offset is not finite".into()));
            }
        }
        let e = &self.effects;
        check_color(&e.fill.color, "fill")?;
        check_color(&e.border.color, "border")?;
        check_color(&e.shadow.color, "shadow")?;
        if !(1..=BORDER_BINS).contains(&e.border.width_bin) {
            return Err(Error::Invariant(format!(
                "border width_bin {} outside 1..={BORDER_BINS}",
                e.border.width_bin
            )));
        }
        if !(e.shadow.blur.is_finite() && e.shadow.blur >= 0.0) {
            return Err(Error::Invariant(format!(
                "shadow blur must be >= 0, got {}",
                e.shadow.blur
            )));
        }
        if !(e.shadow.offset_x.is_finite() && e.shadow.offset_y.is_finite()) {
            return Err(Error::Invariant("shadow offset is not finite".into()));
        }
        if let Some(atlas) = atlas {
            if self.font_index >= atlas.num_fonts() {
                return Err(Error::UnknownFont {
                    index: self.font_index,
                    count: atlas.num_fonts(),
                });
            }
            atlas.contains_text(&self.text)?;
        }
        Ok(())
    }

    /// Copy with every geometric quantity multiplied by `scale`.
    pub fn scaled(&self, scale: f64) -> TextElement {
        let mut e = self.clone();
        e.font_size *= scale;
        e.origin = self.origin.map(|v| v * scale);
        e.per_char_offsets = self
            .per_char_offsets
            .as_ref()
            .map(|o| o.iter().map(|d| d.map(|v| v * scale)).collect());
        e.effects.shadow.blur *= scale;
        e.effects.shadow.offset_x *= scale;
        e.effects.shadow.offset_y *= scale;
        e
    }
}

impl Document {
    pub fn validate(&self, atlas: Option<&GlyphAtlas>) -> Result<()> {
        if self.canvas_width == 0 || self.canvas_height == 0 {
            return Err(Error::Invariant("canvas has zero area".into()));
        }
        if self.background.dims() != (self.canvas_width, self.canvas_height) {
            return Err(Error::Invariant(format!(
                "background {:?} does not match canvas {}x{}",
                self.background.dims(),
                self.canvas_width,
                self.canvas_height
            )));
        }
        for (i, e) in self.elements.iter().enumerate() {
            e.validate(atlas)
                .map_err(|err| Error::Invariant(format!("elements[{i}]: {err}")))?;
        }
        Ok(())
    }
}

/// Where one character lands on the canvas.
#[derive(Clone, Debug, PartialEq)]
pub struct CharPlacement {
    pub glyph: char,
    pub glyph_index: usize,
    /// Ink bounding box.
    pub ink: Rect,
    /// Canvas footprint of the glyph's atlas cell.
    pub cell: Rect,
}

impl CharPlacement {
    /// Canvas pixels per cell pixel.
    pub fn cell_scale(&self, cell_resolution: usize) -> f64 {
        self.cell.width() / cell_resolution as f64
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layout {
    pub chars: Vec<CharPlacement>,
    /// Min/max hull of the character ink boxes.
    pub word_box: Rect,
}

/// Places characters left to right along the baseline.
pub fn layout(element: &TextElement, atlas: &GlyphAtlas) -> Result<Layout> {
    if element.font_index >= atlas.num_fonts() {
        return Err(Error::UnknownFont {
            index: element.font_index,
            count: atlas.num_fonts(),
        });
    }
    let size = element.font_size;
    let cell_side = atlas.cell_resolution() as f64 * size / atlas.em_px() as f64;
    let mut pen = element.origin[0];
    let mut chars = Vec::with_capacity(element.text.len());
    for (i, glyph) in element.text.chars().enumerate() {
        let glyph_index = atlas.glyph_index(glyph)?;
        let m = atlas.entry(element.font_index, glyph_index)?.metrics;
        let [dx, dy] = element
            .per_char_offsets
            .as_ref()
            .and_then(|o| o.get(i).copied())
            .unwrap_or([0.0, 0.0]);
        let x0 = pen + m.bearing_x as f64 * size + dx;
        let y0 = element.origin[1] - m.bearing_y as f64 * size + dy;
        let ink = Rect::from_xywh(x0, y0, m.width as f64 * size, m.height as f64 * size);
        let [cx, cy] = ink.center();
        let cell = Rect::new(
            cx - cell_side * 0.5,
            cy - cell_side * 0.5,
            cx + cell_side * 0.5,
            cy + cell_side * 0.5,
        );
        chars.push(CharPlacement {
            glyph,
            glyph_index,
            ink,
            cell,
        });
        pen += m.advance as f64 * size;
    }
    let word_box = Rect::hull(chars.iter().map(|c| &c.ink))
        .ok_or_else(|| Error::Invariant("text is empty".into()))?;
    Ok(Layout { chars, word_box })
}

/// Maps canvas pixel indices to cell pixel indices for a cell whose
/// footprint is `cell`.
pub fn cell_sampling_transform(cell: &Rect, cell_resolution: usize) -> Affine2 {
    let k = cell.width() / cell_resolution as f64;
    let [cx, cy] = cell.center();
    let half = cell_resolution as f64 * 0.5;
    Affine2([
        1.0 / k,
        0.0,
        half - 0.5 + (0.5 - cx) / k,
        0.0,
        1.0 / k,
        half - 0.5 + (0.5 - cy) / k,
    ])
}

/// Integer pixel window covering `rect` (plus one pixel), clipped to `w`x`h`.
pub(crate) fn pixel_window(rect: &Rect, w: usize, h: usize) -> Option<(usize, usize, usize, usize)> {
    let x0 = (rect.x0.floor() - 1.0).max(0.0);
    let y0 = (rect.y0.floor() - 1.0).max(0.0);
    let x1 = (rect.x1.ceil() + 1.0).min(w as f64);
    let y1 = (rect.y1.ceil() + 1.0).min(h as f64);
    if x1 <= x0 || y1 <= y0 {
        return None;
    }
    Some((x0 as usize, y0 as usize, x1 as usize, y1 as usize))
}

/// Per-effect alpha maps of one element on the canvas.
#[derive(Clone, Debug, PartialEq)]
pub struct EffectAlphas {
    pub shadow: AlphaMap,
    pub fill: AlphaMap,
    pub border: AlphaMap,
}

/// Accumulates `1 - Π(1 - α_c)` over characters.
struct UnionAccumulator {
    width: usize,
    transmittance: Vec<f64>,
}

impl UnionAccumulator {
    fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            transmittance: vec![1.0; width * height],
        }
    }

    fn add(&mut self, cell: &AlphaMap, transform: &Affine2, window: (usize, usize, usize, usize)) {
        let (x0, y0, x1, y1) = window;
        for y in y0..y1 {
            for x in x0..x1 {
                let [sx, sy] = transform.apply(x as f64, y as f64);
                let a = cell.sample_f64(sx, sy);
                if a > 0.0 {
                    self.transmittance[y * self.width + x] *= 1.0 - a;
                }
            }
        }
    }

    fn finish(self, height: usize) -> AlphaMap {
        let data = self.transmittance.into_iter().map(|t| (1.0 - t) as f32).collect();
        AlphaMap::from_data_clamped(self.width, height, data).expect("same dimensions")
    }
}

/// Shadow, fill and border alphas of `element` on a `width`x`height` canvas.
pub fn render_effect_alphas(
    element: &TextElement,
    atlas: &GlyphAtlas,
    width: usize,
    height: usize,
) -> Result<EffectAlphas> {
    let placement = layout(element, atlas)?;
    let res = atlas.cell_resolution();
    let effects = &element.effects;
    let mut fill = UnionAccumulator::new(width, height);
    let mut border = effects.border.visible.then(|| UnionAccumulator::new(width, height));
    for ch in &placement.chars {
        let Some(window) = pixel_window(&ch.cell, width, height) else {
            continue;
        };
        let entry = atlas.entry(element.font_index, ch.glyph_index)?;
        let transform = cell_sampling_transform(&ch.cell, res);
        fill.add(&entry.fill, &transform, window);
        if let Some(border) = border.as_mut() {
            let ring = AlphaMap::from_data_clamped(res, res, entry.ring(effects.border.width_bin))?;
            border.add(&ring, &transform, window);
        }
    }
    let fill = fill.finish(height);
    let border = match border {
        Some(b) => b.finish(height),
        None => AlphaMap::zeros(width, height),
    };
    let shadow = if effects.shadow.visible {
        let shifted = affine_sample(
            &fill,
            &Affine2::translation(-effects.shadow.offset_x, -effects.shadow.offset_y),
            width,
            height,
        )?;
        gaussian_blur(&shifted, effects.shadow.blur)
    } else {
        AlphaMap::zeros(width, height)
    };
    Ok(EffectAlphas {
        shadow,
        fill,
        border,
    })
}

/// Source-over compositing: `c ← (1 − α)·c + α·color` for each layer in order.
pub fn composite(background: &RasterImage, layers: &[(&AlphaMap, Rgb)]) -> Result<RasterImage> {
    let dims = background.dims();
    for (alpha, _) in layers {
        if alpha.dims() != dims {
            return Err(Error::DimensionMismatch {
                expected: dims,
                actual: alpha.dims(),
            });
        }
    }
    // accumulate in f64 so a single rounding happens at the end
    let mut data: Vec<f64> = background.data().iter().map(|&v| v as f64).collect();
    for (alpha, color) in layers {
        for (i, &a) in alpha.data().iter().enumerate() {
            if a == 0.0 {
                continue;
            }
            let a = a as f64;
            for c in 0..3 {
                let v = &mut data[i * 3 + c];
                *v = (1.0 - a) * *v + a * color[c] as f64;
            }
        }
    }
    RasterImage::from_data_clamped(dims.0, dims.1, data.into_iter().map(|v| v as f32).collect())
}

/// Composites one element's effects (shadow, fill, border) onto `canvas`.
pub fn composite_element(
    canvas: &RasterImage,
    element: &TextElement,
    alphas: &EffectAlphas,
) -> Result<RasterImage> {
    let e = &element.effects;
    let mut layers: Vec<(&AlphaMap, Rgb)> = Vec::with_capacity(3);
    if e.shadow.visible {
        layers.push((&alphas.shadow, e.shadow.color));
    }
    layers.push((&alphas.fill, e.fill.color));
    if e.border.visible {
        layers.push((&alphas.border, e.border.color));
    }
    composite(canvas, &layers)
}

/// Renders a document with all geometry multiplied by `scale`.
pub fn render_document(doc: &Document, atlas: &GlyphAtlas, scale: f64) -> Result<RasterImage> {
    if !(scale.is_finite() && scale > 0.0) {
        return Err(Error::InvalidArgument(format!("scale must be > 0, got {scale}")));
    }
    doc.validate(Some(atlas))?;
    let width = (doc.canvas_width as f64 * scale).round() as usize;
    let height = (doc.canvas_height as f64 * scale).round() as usize;
    if width > MAX_CANVAS_SIDE || height > MAX_CANVAS_SIDE {
        return Err(Error::InvalidArgument(format!(
            "scaled canvas {width}x{height} exceeds {MAX_CANVAS_SIDE} px per side"
        )));
    }
    if width == 0 || height == 0 {
        return Err(Error::InvalidArgument("scaled canvas has zero area".into()));
    }
    let mut canvas = doc.background.resize_bilinear(width, height)?;
    for element in &doc.elements {
        let element = if scale == 1.0 {
            element.clone()
        } else {
            element.scaled(scale)
        };
        let alphas = render_effect_alphas(&element, atlas, width, height)?;
        canvas = composite_element(&canvas, &element, &alphas)?;
    }
    Ok(canvas)
}
