use std::ops::Range;

use crate::atlas::{GlyphAtlas, BORDER_BINS};
use crate::compositor::{layout, Layout, TextElement};
use crate::error::{Error, Result};
use crate::imaging::{PixelRegion, Rgb};

use super::{db_visibility, font_attention, sigmoid, softmax, softplus, DiffConfig};

/// Logit magnitude used when decoding hard choices (font, border bin).
pub const HARD_LOGIT: f64 = 10.0;
/// Visibility logit used for a hard on/off decision.
pub const HARD_VISIBILITY_LOGIT: f64 = 6.0;
/// Colors are clamped into `[COLOR_CLAMP, 1 - COLOR_CLAMP]` before the logit.
pub const COLOR_CLAMP: f64 = 1e-3;
/// Smallest representable blur sigma when encoding.
const MIN_SIGMA: f64 = 1e-3;

/// Fixed placement of one character's atlas cell in crop coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CharFrame {
    /// Cell center.
    pub center: [f64; 2],
    /// Crop pixels per cell pixel.
    pub scale: f64,
}

/// Continuous parameters refined for one word, plus the fixed frame they act in.
///
/// Affines are displacement-parameterized `[d11, d12, tx, d21, d22, ty]`:
/// a canvas point `P` samples at `P - t + D (P - C) / L`, so all zeros is
/// the identity, `t` moves content by `+t` pixels and `D` is relative to the
/// frame's center `C` and half extent `L`.
#[derive(Clone, Debug, PartialEq)]
pub struct RefinableParams {
    pub text: String,
    /// Canvas window the crop covers.
    pub crop: PixelRegion,
    pub glyphs: Vec<usize>,
    pub frames: Vec<CharFrame>,
    pub word_center: [f64; 2],
    pub word_extent: f64,

    pub font_logits: Vec<f64>,
    pub word_affine: [f64; 6],
    pub char_affines: Vec<[f64; 6]>,
    pub fill_color_logits: [f64; 3],
    pub border_visibility_logit: f64,
    pub shadow_visibility_logit: f64,
    pub border_bin_logits: [f64; BORDER_BINS],
    pub border_color_logits: [f64; 3],
    pub shadow_color_logits: [f64; 3],
    pub shadow_blur_raw: f64,
    pub shadow_dx: f64,
    pub shadow_dy: f64,
}

pub fn color_to_logits(color: Rgb) -> [f64; 3] {
    color.map(|c| {
        let c = (c as f64).clamp(COLOR_CLAMP, 1.0 - COLOR_CLAMP);
        (c / (1.0 - c)).ln()
    })
}

pub fn logits_to_color(logits: &[f64; 3]) -> Rgb {
    logits.map(|l| sigmoid(l) as f32)
}

/// Inverse of softplus.
pub fn sigma_to_raw(sigma: f64) -> f64 {
    let s = sigma.max(MIN_SIGMA);
    if s > 30.0 {
        s
    } else {
        s.exp_m1().ln()
    }
}

/// One-hot-dominant logits.
pub fn hard_logits(n: usize, index: usize) -> Vec<f64> {
    (0..n)
        .map(|i| if i == index { HARD_LOGIT } else { -HARD_LOGIT })
        .collect()
}

fn hard_visibility(visible: bool) -> f64 {
    if visible {
        HARD_VISIBILITY_LOGIT
    } else {
        -HARD_VISIBILITY_LOGIT
    }
}

/// Decoded, range-respecting view of [`RefinableParams`].
#[derive(Clone, Debug, PartialEq)]
pub struct DecodedParams {
    pub font_attention: Vec<f64>,
    pub top_font: usize,
    pub fill_color: Rgb,
    pub border_color: Rgb,
    pub shadow_color: Rgb,
    pub border_visibility: f64,
    pub shadow_visibility: f64,
    pub border_bins: [f64; BORDER_BINS],
    pub shadow_blur: f64,
    pub shadow_offset: [f64; 2],
}

impl DecodedParams {
    /// Most probable border bin, `1..=BORDER_BINS`.
    pub fn top_border_bin(&self) -> usize {
        argmax(&self.border_bins) + 1
    }
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Flat layout of the optimized fields, in [`RefinableParams::to_flat`] order.
pub const SPAN_NAMES: [&str; 12] = [
    "font_logits",
    "word_affine",
    "char_affines",
    "fill_color_logits",
    "border_visibility_logit",
    "shadow_visibility_logit",
    "border_bin_logits",
    "border_color_logits",
    "shadow_color_logits",
    "shadow_blur_raw",
    "shadow_dx",
    "shadow_dy",
];

impl RefinableParams {
    /// Neutral parameters around a given layout: uniform font logits, identity
    /// affines, mid-gray colors, undecided visibilities.
    pub fn from_layout(
        text: &str,
        layout: &Layout,
        crop: PixelRegion,
        num_fonts: usize,
        cell_resolution: usize,
    ) -> Self {
        let off = [crop.x0 as f64, crop.y0 as f64];
        let frames: Vec<CharFrame> = layout
            .chars
            .iter()
            .map(|c| {
                let [cx, cy] = c.cell.center();
                CharFrame {
                    center: [cx - off[0], cy - off[1]],
                    scale: c.cell_scale(cell_resolution),
                }
            })
            .collect();
        let wb = &layout.word_box;
        let [wx, wy] = wb.center();
        let n = frames.len();
        Self {
            text: text.to_string(),
            crop,
            glyphs: layout.chars.iter().map(|c| c.glyph_index).collect(),
            frames,
            word_center: [wx - off[0], wy - off[1]],
            word_extent: (wb.width().max(wb.height()) * 0.5).max(1.0),
            font_logits: vec![0.0; num_fonts],
            word_affine: [0.0; 6],
            char_affines: vec![[0.0; 6]; n],
            fill_color_logits: [0.0; 3],
            border_visibility_logit: 0.0,
            shadow_visibility_logit: 0.0,
            border_bin_logits: [0.0; BORDER_BINS],
            border_color_logits: [0.0; 3],
            shadow_color_logits: [0.0; 3],
            shadow_blur_raw: sigma_to_raw(1.0),
            shadow_dx: 0.0,
            shadow_dy: 0.0,
        }
    }

    /// Hard decode of a ground-truth element: dominant font and bin logits,
    /// saturated visibilities, identity affines.
    pub fn from_element(element: &TextElement, atlas: &GlyphAtlas, crop: PixelRegion) -> Result<Self> {
        element.validate(Some(atlas))?;
        let l = layout(element, atlas)?;
        let mut p = Self::from_layout(
            &element.text,
            &l,
            crop,
            atlas.num_fonts(),
            atlas.cell_resolution(),
        );
        let e = &element.effects;
        p.font_logits = hard_logits(atlas.num_fonts(), element.font_index);
        p.fill_color_logits = color_to_logits(e.fill.color);
        p.border_visibility_logit = hard_visibility(e.border.visible);
        p.shadow_visibility_logit = hard_visibility(e.shadow.visible);
        let bins = hard_logits(BORDER_BINS, e.border.width_bin - 1);
        p.border_bin_logits.copy_from_slice(&bins);
        p.border_color_logits = color_to_logits(e.border.color);
        p.shadow_color_logits = color_to_logits(e.shadow.color);
        p.shadow_blur_raw = sigma_to_raw(e.shadow.blur);
        p.shadow_dx = e.shadow.offset_x;
        p.shadow_dy = e.shadow.offset_y;
        Ok(p)
    }

    pub fn num_chars(&self) -> usize {
        self.glyphs.len()
    }

    pub fn decode(&self, config: &DiffConfig) -> DecodedParams {
        let top_k = config.top_k_fonts.min(self.font_logits.len()).max(1);
        let font_attention = font_attention(&self.font_logits, top_k);
        let top_font = argmax(&font_attention);
        let bins = softmax(&self.border_bin_logits);
        DecodedParams {
            top_font,
            font_attention,
            fill_color: logits_to_color(&self.fill_color_logits),
            border_color: logits_to_color(&self.border_color_logits),
            shadow_color: logits_to_color(&self.shadow_color_logits),
            border_visibility: db_visibility(self.border_visibility_logit, config.db_steepness),
            shadow_visibility: db_visibility(self.shadow_visibility_logit, config.db_steepness),
            border_bins: std::array::from_fn(|i| bins[i]),
            shadow_blur: softplus(self.shadow_blur_raw),
            shadow_offset: [self.shadow_dx, self.shadow_dy],
        }
    }

    fn span_lengths(&self) -> [usize; 12] {
        [
            self.font_logits.len(),
            6,
            6 * self.char_affines.len(),
            3,
            1,
            1,
            BORDER_BINS,
            3,
            3,
            1,
            1,
            1,
        ]
    }

    /// Named spans over the flat vector; disjoint and exhaustive.
    pub fn spans(&self) -> Vec<(String, Range<usize>)> {
        let mut start = 0;
        SPAN_NAMES
            .iter()
            .zip(self.span_lengths())
            .map(|(name, len)| {
                let r = start..start + len;
                start += len;
                (name.to_string(), r)
            })
            .collect()
    }

    pub fn num_values(&self) -> usize {
        self.span_lengths().iter().sum()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.num_values());
        v.extend_from_slice(&self.font_logits);
        v.extend_from_slice(&self.word_affine);
        for a in &self.char_affines {
            v.extend_from_slice(a);
        }
        v.extend_from_slice(&self.fill_color_logits);
        v.push(self.border_visibility_logit);
        v.push(self.shadow_visibility_logit);
        v.extend_from_slice(&self.border_bin_logits);
        v.extend_from_slice(&self.border_color_logits);
        v.extend_from_slice(&self.shadow_color_logits);
        v.push(self.shadow_blur_raw);
        v.push(self.shadow_dx);
        v.push(self.shadow_dy);
        v
    }

    pub fn set_flat(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.num_values() {
            return Err(Error::DimensionMismatch {
                expected: (self.num_values(), 1),
                actual: (values.len(), 1),
            });
        }
        let mut it = values.iter().copied();
        let mut take = |dst: &mut [f64]| {
            for d in dst {
                *d = it.next().expect("length checked");
            }
        };
        take(&mut self.font_logits);
        take(&mut self.word_affine);
        for a in &mut self.char_affines {
            take(a);
        }
        take(&mut self.fill_color_logits);
        take(std::slice::from_mut(&mut self.border_visibility_logit));
        take(std::slice::from_mut(&mut self.shadow_visibility_logit));
        take(&mut self.border_bin_logits);
        take(&mut self.border_color_logits);
        take(&mut self.shadow_color_logits);
        take(std::slice::from_mut(&mut self.shadow_blur_raw));
        take(std::slice::from_mut(&mut self.shadow_dx));
        take(std::slice::from_mut(&mut self.shadow_dy));
        Ok(())
    }

    /// Name of the span holding flat index `i`.
    pub fn span_name(&self, i: usize) -> &'static str {
        let mut start = 0;
        for (name, len) in SPAN_NAMES.iter().zip(self.span_lengths()) {
            if i < start + len {
                return name;
            }
            start += len;
        }
        "out_of_range"
    }

    pub(crate) fn check_consistent(&self, atlas: &GlyphAtlas) -> Result<()> {
        let n = self.glyphs.len();
        if self.frames.len() != n || self.char_affines.len() != n || n == 0 {
            return Err(Error::Invariant(format!(
                "{} glyphs, {} frames, {} char affines",
                n,
                self.frames.len(),
                self.char_affines.len()
            )));
        }
        if self.font_logits.len() != atlas.num_fonts() {
            return Err(Error::Invariant(format!(
                "{} font logits for {} fonts",
                self.font_logits.len(),
                atlas.num_fonts()
            )));
        }
        if let Some(&g) = self.glyphs.iter().find(|&&g| g >= atlas.glyphs().len()) {
            return Err(Error::InvalidArgument(format!("glyph index {g} out of range")));
        }
        for (i, v) in self.to_flat().iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFinite(self.span_name(i).to_string()));
            }
        }
        Ok(())
    }
}

/// Gradient of the loss with respect to the flat parameter vector.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientVector {
    pub values: Vec<f64>,
    pub index_map: Vec<(String, Range<usize>)>,
}

impl GradientVector {
    pub fn span(&self, name: &str) -> Option<&[f64]> {
        self.index_map
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, r)| &self.values[r.clone()])
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}
