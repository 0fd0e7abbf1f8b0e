use std::path::{Path, PathBuf};

use ab_glyph::{Font, FontVec, OutlineCurve};
use ab_glyph_rasterizer::{point, Rasterizer};
use rayon::prelude::*;

use super::{FontInfo, GlyphAtlas, GlyphEntry, GlyphMetrics, BORDER_BINS};
use crate::error::{Error, Result};
use crate::imaging::AlphaMap;

/// Nominal em size as a fraction of the cell.
const NOMINAL_EM_FRACTION: f32 = 0.8;

const COVERAGE_FLOOR: f32 = 1.0 / 1024.0;

/// A font file plus an optional synthetic horizontal scale (condensed or
/// extended variants of the same outlines).
#[derive(Clone, Debug, PartialEq)]
pub struct FontSource {
    pub name: String,
    pub path: PathBuf,
    pub horizontal_scale: f32,
}

impl FontSource {
    pub fn new(name: impl Into<String>, path: impl Into<PathBuf>) -> Self {
        Self {
            name: name.into(),
            path: path.into(),
            horizontal_scale: 1.0,
        }
    }

    pub fn with_horizontal_scale(mut self, scale: f32) -> Self {
        self.horizontal_scale = scale;
        self
    }
}

/// Reads a font list: one `name file [horizontal_scale]` per line, `#`
/// comments allowed. Relative paths resolve against the list's directory.
/// A directory argument lists every `.ttf`/`.otf` in it, sorted by name.
pub fn load_font_manifest(path: impl AsRef<Path>) -> Result<Vec<FontSource>> {
    let path = path.as_ref();
    if path.is_dir() {
        let mut files: Vec<PathBuf> = std::fs::read_dir(path)
            .map_err(|e| Error::io(path, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.extension()
                    .and_then(|e| e.to_str())
                    .is_some_and(|e| e.eq_ignore_ascii_case("ttf") || e.eq_ignore_ascii_case("otf"))
            })
            .collect();
        files.sort();
        return Ok(files
            .into_iter()
            .map(|p| {
                let name = p.file_stem().unwrap_or_default().to_string_lossy().into_owned();
                FontSource::new(name, p)
            })
            .collect());
    }
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut sources = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let bad = |reason: &str| Error::InvalidArgument(format!(
            "{}:{}: {reason}",
            path.display(),
            lineno + 1
        ));
        let (name, file) = match fields.as_slice() {
            [name, file] | [name, file, _] => (*name, *file),
            _ => return Err(bad("expected `name file [horizontal_scale]`")),
        };
        let mut source = FontSource::new(name, base.join(file));
        if let Some(scale) = fields.get(2) {
            let scale: f32 = scale.parse().map_err(|_| bad("bad horizontal scale"))?;
            if !(0.25..=4.0).contains(&scale) {
                return Err(bad("horizontal scale outside [0.25, 4]"));
            }
            source = source.with_horizontal_scale(scale);
        }
        sources.push(source);
    }
    Ok(sources)
}

struct LoadedFont {
    source: FontSource,
    font: FontVec,
    units_per_em: f32,
}

impl LoadedFont {
    fn open(source: &FontSource) -> Result<Self> {
        let bytes = std::fs::read(&source.path).map_err(|e| Error::Font {
            font: source.name.clone(),
            reason: format!("{}: {e}", source.path.display()),
        })?;
        let font = FontVec::try_from_vec(bytes).map_err(|e| Error::Font {
            font: source.name.clone(),
            reason: e.to_string(),
        })?;
        let units_per_em = font.units_per_em().unwrap_or(1000.0);
        Ok(Self {
            source: source.clone(),
            font,
            units_per_em,
        })
    }

    fn outline(&self, glyph: char) -> Result<(ab_glyph::GlyphId, ab_glyph::Outline)> {
        let id = self.font.glyph_id(glyph);
        let missing = || Error::MissingGlyph {
            font: self.source.name.clone(),
            glyph,
        };
        if id.0 == 0 {
            return Err(missing());
        }
        let outline = self.font.outline(id).ok_or_else(missing)?;
        Ok((id, outline))
    }

    /// Ink extent in em: (width, height).
    fn extent(&self, glyph: char) -> Result<(f32, f32)> {
        let (_, o) = self.outline(glyph)?;
        let w = (o.bounds.max.x - o.bounds.min.x) / self.units_per_em * self.source.horizontal_scale;
        let h = (o.bounds.min.y - o.bounds.max.y) / self.units_per_em;
        Ok((w, h))
    }

    fn render(&self, glyph: char, resolution: usize, em_px: f32) -> Result<(AlphaMap, GlyphMetrics)> {
        let (id, outline) = self.outline(glyph)?;
        let upem = self.units_per_em;
        let hs = self.source.horizontal_scale;
        // Outline bounds are stored as min = (x_min, y_max), max = (x_max, y_min), y up.
        let (x_min, x_max) = (outline.bounds.min.x, outline.bounds.max.x);
        let (y_max, y_min) = (outline.bounds.min.y, outline.bounds.max.y);
        let cx = 0.5 * (x_min + x_max);
        let cy = 0.5 * (y_min + y_max);
        let sx = em_px * hs / upem;
        let sy = em_px / upem;
        let half = resolution as f32 * 0.5;
        let map = |p: &ab_glyph::Point| point(half + (p.x - cx) * sx, half - (p.y - cy) * sy);

        let mut raster = Rasterizer::new(resolution, resolution);
        for curve in &outline.curves {
            match curve {
                OutlineCurve::Line(p0, p1) => raster.draw_line(map(p0), map(p1)),
                OutlineCurve::Quad(p0, p1, p2) => raster.draw_quad(map(p0), map(p1), map(p2)),
                OutlineCurve::Cubic(p0, p1, p2, p3) => {
                    raster.draw_cubic(map(p0), map(p1), map(p2), map(p3))
                }
            }
        }
        let mut data = vec![0.0f32; resolution * resolution];
        // accumulation drift leaves ~1e-6 residue along rows; drop it
        raster.for_each_pixel(|i, c| data[i] = if c < COVERAGE_FLOOR { 0.0 } else { c.min(1.0) });
        let fill = AlphaMap::from_data_clamped(resolution, resolution, data)?;

        let metrics = GlyphMetrics {
            advance: self.font.h_advance_unscaled(id) / upem * hs,
            bearing_x: x_min / upem * hs,
            bearing_y: y_max / upem,
            width: (x_max - x_min) / upem * hs,
            height: (y_max - y_min) / upem,
            ascent: self.font.ascent_unscaled() / upem,
            descent: self.font.descent_unscaled() / upem,
        };
        Ok((fill, metrics))
    }
}

/// Grayscale dilation by an anti-aliased disk: each output pixel takes the
/// max over neighbours of `value · clamp(radius + 0.5 - distance, 0, 1)`.
pub fn dilate_disk(src: &AlphaMap, radius: usize) -> AlphaMap {
    let (w, h) = src.dims();
    let reach = radius as f64 + 0.5;
    let r = radius as isize + 1;
    let mut offsets = Vec::new();
    for dy in -r..=r {
        for dx in -r..=r {
            let d = ((dx * dx + dy * dy) as f64).sqrt();
            let weight = (reach - d).clamp(0.0, 1.0) as f32;
            if weight > 0.0 {
                offsets.push((dx, dy, weight));
            }
        }
    }
    let mut out = src.data().to_vec();
    for y in 0..h as isize {
        for x in 0..w as isize {
            let v = src.get(x as usize, y as usize);
            if v <= 0.0 {
                continue;
            }
            for &(dx, dy, weight) in &offsets {
                let (nx, ny) = (x + dx, y + dy);
                if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                    continue;
                }
                let slot = &mut out[ny as usize * w + nx as usize];
                *slot = slot.max(v * weight);
            }
        }
    }
    AlphaMap::from_data_clamped(w, h, out).expect("same dimensions")
}

/// Rasterises every glyph of every font into `resolution`-pixel cells.
///
/// The em size is 80% of the cell unless the widest or tallest glyph in the
/// set would then leave less than one widest-border margin; in that case the
/// em shrinks so that every glyph plus its widest stroke fits.
pub fn build_atlas(fonts: &[FontSource], glyphs: &[char], resolution: usize) -> Result<GlyphAtlas> {
    if resolution < 16 {
        return Err(Error::InvalidArgument(format!(
            "cell resolution {resolution} below 16"
        )));
    }
    if fonts.is_empty() || glyphs.is_empty() {
        return Err(Error::Empty("font or glyph set"));
    }
    let loaded: Vec<LoadedFont> = fonts.iter().map(LoadedFont::open).collect::<Result<_>>()?;

    let mut max_extent = 0.0f32;
    for font in &loaded {
        for &g in glyphs {
            let (w, h) = font.extent(g)?;
            max_extent = max_extent.max(w).max(h);
        }
    }
    let margin = 2.0 * (BORDER_BINS as f32 + 1.0);
    let em_px = (NOMINAL_EM_FRACTION * resolution as f32)
        .min((resolution as f32 - margin) / max_extent.max(1e-3));

    let entries: Vec<GlyphEntry> = loaded
        .par_iter()
        .flat_map_iter(|font| glyphs.iter().map(move |&g| (font, g)))
        .map(|(font, g)| {
            let (fill, metrics) = font.render(g, resolution, em_px)?;
            let border = (1..=BORDER_BINS).map(|bin| dilate_disk(&fill, bin)).collect();
            Ok(GlyphEntry {
                fill,
                border,
                metrics,
            })
        })
        .collect::<Result<_>>()?;

    let infos = loaded
        .iter()
        .map(|f| FontInfo {
            name: f.source.name.clone(),
            ascent: f.font.ascent_unscaled() / f.units_per_em,
            descent: f.font.descent_unscaled() / f.units_per_em,
        })
        .collect();
    GlyphAtlas::from_parts(infos, glyphs.to_vec(), resolution, em_px, entries)
}
