//! Pre-rendered glyph alpha maps for a fixed font set.
//!
//! Every (font, glyph) pair stores a fill mask plus one stroked variant per
//! border-width bin. Glyphs are centred in their cell by ink bounding box;
//! [`GlyphMetrics`] carries what layout needs to put them back on a baseline.

mod build;
mod io;

use std::collections::HashMap;

pub use build::{build_atlas, dilate_disk, load_font_manifest, FontSource};
pub use io::{
    load_atlas, load_atlas_sharded, load_atlas_subset, save_atlas, save_atlas_sharded,
    ATLAS_MAGIC, ATLAS_VERSION,
};

use crate::error::{Error, Result};
use crate::imaging::AlphaMap;

/// Number of border-width bins; bin `w` strokes `w` cell pixels.
pub const BORDER_BINS: usize = 5;

/// Default cell edge length in pixels.
pub const DEFAULT_CELL_RESOLUTION: usize = 64;

/// Manifest of the fonts shipped with this crate.
pub fn bundled_font_manifest() -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("assets/fonts/fonts.txt")
}

/// Atlas of every bundled font over printable ASCII at the default
/// resolution.
pub fn build_bundled_atlas() -> Result<GlyphAtlas> {
    let fonts = load_font_manifest(bundled_font_manifest())?;
    build_atlas(&fonts, &printable_ascii(), DEFAULT_CELL_RESOLUTION)
}

/// The 94 printable ASCII characters, space excluded.
pub fn printable_ascii() -> Vec<char> {
    ('!'..='~').collect()
}

/// Per-glyph layout metrics, all in fractions of the em.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GlyphMetrics {
    pub advance: f32,
    /// Left edge of the ink box relative to the pen position.
    pub bearing_x: f32,
    /// Top edge of the ink box above the baseline.
    pub bearing_y: f32,
    pub width: f32,
    pub height: f32,
    pub ascent: f32,
    pub descent: f32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FontInfo {
    pub name: String,
    pub ascent: f32,
    pub descent: f32,
}

/// Which pre-rendered map to fetch.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    Fill,
    /// Dilated mask for border bin `1..=BORDER_BINS`.
    Border(usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct GlyphEntry {
    pub fill: AlphaMap,
    /// Fill mask dilated by a disk of radius `bin` cell pixels; contains the
    /// fill support. The stroke ring drawn over the fill is `border - fill`.
    pub border: Vec<AlphaMap>,
    pub metrics: GlyphMetrics,
}

impl GlyphEntry {
    pub fn variant(&self, variant: Variant) -> Result<&AlphaMap> {
        match variant {
            Variant::Fill => Ok(&self.fill),
            Variant::Border(bin) if (1..=BORDER_BINS).contains(&bin) => Ok(&self.border[bin - 1]),
            Variant::Border(bin) => Err(Error::InvalidArgument(format!(
                "border bin {bin} outside 1..={BORDER_BINS}"
            ))),
        }
    }

    /// Stroke ring for a border bin: dilated mask minus the fill.
    pub fn ring(&self, bin: usize) -> Vec<f32> {
        self.border[bin - 1]
            .data()
            .iter()
            .zip(self.fill.data())
            .map(|(&d, &z)| (d - z).max(0.0))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GlyphAtlas {
    fonts: Vec<FontInfo>,
    glyphs: Vec<char>,
    glyph_lookup: HashMap<char, usize>,
    cell_resolution: usize,
    /// Cell pixels per em.
    em_px: f32,
    /// Font-major: `entries[font * glyphs.len() + glyph]`.
    entries: Vec<GlyphEntry>,
}

impl GlyphAtlas {
    pub(crate) fn from_parts(
        fonts: Vec<FontInfo>,
        glyphs: Vec<char>,
        cell_resolution: usize,
        em_px: f32,
        entries: Vec<GlyphEntry>,
    ) -> Result<Self> {
        if entries.len() != fonts.len() * glyphs.len() {
            return Err(Error::AtlasFormat(format!(
                "{} entries for {} fonts x {} glyphs",
                entries.len(),
                fonts.len(),
                glyphs.len()
            )));
        }
        let glyph_lookup = glyphs.iter().enumerate().map(|(i, &c)| (c, i)).collect();
        Ok(Self {
            fonts,
            glyphs,
            glyph_lookup,
            cell_resolution,
            em_px,
            entries,
        })
    }

    pub fn fonts(&self) -> &[FontInfo] {
        &self.fonts
    }

    pub fn font_names(&self) -> Vec<String> {
        self.fonts.iter().map(|f| f.name.clone()).collect()
    }

    pub fn num_fonts(&self) -> usize {
        self.fonts.len()
    }

    pub fn glyphs(&self) -> &[char] {
        &self.glyphs
    }

    pub fn cell_resolution(&self) -> usize {
        self.cell_resolution
    }

    pub fn em_px(&self) -> f32 {
        self.em_px
    }

    pub fn glyph_index(&self, glyph: char) -> Result<usize> {
        self.glyph_lookup
            .get(&glyph)
            .copied()
            .ok_or(Error::UnknownGlyph(glyph))
    }

    pub fn contains_text(&self, text: &str) -> Result<()> {
        text.chars().try_for_each(|c| self.glyph_index(c).map(|_| ()))
    }

    fn check_font(&self, font: usize) -> Result<()> {
        if font >= self.fonts.len() {
            return Err(Error::UnknownFont {
                index: font,
                count: self.fonts.len(),
            });
        }
        Ok(())
    }

    pub fn entry(&self, font: usize, glyph_index: usize) -> Result<&GlyphEntry> {
        self.check_font(font)?;
        if glyph_index >= self.glyphs.len() {
            return Err(Error::InvalidArgument(format!(
                "glyph index {glyph_index} out of range"
            )));
        }
        Ok(&self.entries[font * self.glyphs.len() + glyph_index])
    }

    pub fn entry_for(&self, font: usize, glyph: char) -> Result<&GlyphEntry> {
        let g = self.glyph_index(glyph)?;
        self.entry(font, g)
    }

    /// Constant-time lookup of a stored map.
    pub fn query(&self, font: usize, glyph: char, variant: Variant) -> Result<&AlphaMap> {
        self.entry_for(font, glyph)?.variant(variant)
    }

    pub fn metrics(&self, font: usize, glyph: char) -> Result<GlyphMetrics> {
        Ok(self.entry_for(font, glyph)?.metrics)
    }

    pub(crate) fn entries(&self) -> &[GlyphEntry] {
        &self.entries
    }
}
