//! Synthetic ground truth: random documents rendered by the compositor.
//!
//! Every sample draws from its own ChaCha stream (`seed`, sample index), so
//! samples can be produced in any order or in parallel with identical results.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::atlas::{GlyphAtlas, BORDER_BINS};
use crate::compositor::{
    layout, render_document, BorderEffect, Document, EffectSet, FillEffect, ShadowEffect,
    TextElement,
};
use crate::error::{Error, Result};
use crate::export::{save_document_with_background, BackgroundStorage};
use crate::imaging::{dequantize, RasterImage, Rect, Rgb};

/// Placement attempts per word before the sample is abandoned.
const MAX_ATTEMPTS: usize = 500;

pub const DEFAULT_WORDS: &[&str] = &[
    "Hello", "WORLD", "text", "Style", "bold", "Sale", "OPEN", "cafe", "Menu", "quartz", "jumpy",
    "Vexing", "glyph", "Fizz", "BOOK", "cover", "Night", "river", "Summer", "42", "2024", "Deal!",
    "news", "Kraft", "wave", "Zephyr", "PLAY", "hotel", "Ivy", "Oxford", "magic", "Yes", "QUEST",
    "light", "dark", "Grand", "tiny", "Xylo", "vivid", "Jam", "north", "EAST", "pixel", "Font",
    "Edit", "shadow", "Border", "ink", "paper", "Welcome",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackgroundKind {
    Flat,
    Gradient,
    Noise,
    /// PNG files from a directory, resized to cover and randomly cropped.
    Directory(PathBuf),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenConfig {
    pub seed: u64,
    pub count: usize,
    pub canvas_width: (usize, usize),
    pub canvas_height: (usize, usize),
    pub words: Vec<String>,
    /// Fonts to draw from; empty means every font of the atlas.
    pub fonts: Vec<usize>,
    pub words_per_sample: usize,
    /// Font size in pixels, drawn as an integer.
    pub size_range: (f64, f64),
    pub border_probability: f64,
    pub shadow_probability: f64,
    pub sigma_range: (f64, f64),
    pub offset_range: (f64, f64),
    /// Minimum L-infinity distance between fill color and the mean background
    /// under the word.
    pub min_contrast: f32,
    pub backgrounds: Vec<BackgroundKind>,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            count: 50,
            canvas_width: (192, 384),
            canvas_height: (96, 192),
            words: DEFAULT_WORDS.iter().map(|s| s.to_string()).collect(),
            fonts: Vec::new(),
            words_per_sample: 1,
            size_range: (16.0, 64.0),
            border_probability: 0.5,
            shadow_probability: 0.5,
            sigma_range: (0.5, 3.0),
            offset_range: (-5.0, 5.0),
            min_contrast: 0.2,
            backgrounds: vec![BackgroundKind::Flat, BackgroundKind::Gradient, BackgroundKind::Noise],
        }
    }
}

fn check_range<T: PartialOrd + std::fmt::Debug>(r: (T, T), name: &str) -> Result<()> {
    if r.0 <= r.1 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("{name} range {r:?} is empty")))
    }
}

impl GenConfig {
    pub fn validate(&self, atlas: &GlyphAtlas) -> Result<()> {
        check_range(self.canvas_width, "canvas width")?;
        check_range(self.canvas_height, "canvas height")?;
        check_range(self.size_range, "size")?;
        check_range(self.sigma_range, "sigma")?;
        check_range(self.offset_range, "offset")?;
        if self.canvas_width.0 == 0 || self.canvas_height.0 == 0 {
            return Err(Error::InvalidArgument("canvas sides must be >= 1".into()));
        }
        if self.size_range.0.ceil() > self.size_range.1.floor() || self.size_range.0 <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "size range {:?} holds no positive integer",
                self.size_range
            )));
        }
        if self.sigma_range.0 < 0.0 {
            return Err(Error::InvalidArgument("sigma must be >= 0".into()));
        }
        for (p, name) in [
            (self.border_probability, "border"),
            (self.shadow_probability, "shadow"),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidArgument(format!("{name} probability {p} outside [0, 1]")));
            }
        }
        if !(0.0..=1.0).contains(&self.min_contrast) {
            return Err(Error::InvalidArgument("min contrast outside [0, 1]".into()));
        }
        if self.words.is_empty() {
            return Err(Error::Empty("word list"));
        }
        for w in &self.words {
            if w.is_empty() {
                return Err(Error::InvalidArgument("word list holds an empty word".into()));
            }
            atlas.contains_text(w)?;
        }
        if self.words_per_sample == 0 {
            return Err(Error::InvalidArgument("words per sample must be >= 1".into()));
        }
        if self.backgrounds.is_empty() {
            return Err(Error::Empty("background kinds"));
        }
        for &f in &self.fonts {
            if f >= atlas.num_fonts() {
                return Err(Error::UnknownFont {
                    index: f,
                    count: atlas.num_fonts(),
                });
            }
        }
        for b in &self.backgrounds {
            if let BackgroundKind::Directory(dir) = b {
                if background_files(dir)?.is_empty() {
                    return Err(Error::Empty("background image directory"));
                }
            }
        }
        Ok(())
    }

    fn font_pool(&self, atlas: &GlyphAtlas) -> Vec<usize> {
        if self.fonts.is_empty() {
            (0..atlas.num_fonts()).collect()
        } else {
            self.fonts.clone()
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub image: RasterImage,
    pub truth: Document,
    /// Ink hull of each element, in element order.
    pub word_boxes: Vec<Rect>,
}

fn background_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| e.eq_ignore_ascii_case("png"))
        })
        .collect();
    files.sort();
    Ok(files)
}

/// The random stream of sample `index`.
pub fn sample_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

fn random_color(rng: &mut impl Rng) -> Rgb {
    [0; 3].map(|_: u8| dequantize(rng.gen()))
}

/// Uniform draw snapped to multiples of `step` (a power of two keeps the
/// value exact in decimal and binary).
fn snapped(rng: &mut impl Rng, range: (f64, f64), step: f64) -> f64 {
    let v = if range.0 < range.1 {
        rng.gen_range(range.0..=range.1)
    } else {
        range.0
    };
    ((v / step).round() * step).clamp(range.0, range.1)
}

fn make_background(kind: &BackgroundKind, w: usize, h: usize, rng: &mut impl Rng) -> Result<RasterImage> {
    let img = match kind {
        BackgroundKind::Flat => RasterImage::filled(w, h, random_color(rng)),
        BackgroundKind::Gradient => {
            let (a, b) = (random_color(rng), random_color(rng));
            let theta: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            let (dx, dy) = (theta.cos(), theta.sin());
            // Project the canvas corners to normalize the ramp to [0, 1].
            let proj = |x: f64, y: f64| x * dx + y * dy;
            let ends = [proj(0.0, 0.0), proj(w as f64, 0.0), proj(0.0, h as f64), proj(w as f64, h as f64)];
            let lo = ends.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = ends.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut data = Vec::with_capacity(w * h * 3);
            for y in 0..h {
                for x in 0..w {
                    let t = ((proj(x as f64 + 0.5, y as f64 + 0.5) - lo) / (hi - lo)) as f32;
                    for c in 0..3 {
                        data.push(a[c] + (b[c] - a[c]) * t);
                    }
                }
            }
            RasterImage::from_data_clamped(w, h, data)?
        }
        BackgroundKind::Noise => {
            let base = random_color(rng);
            let cell: usize = rng.gen_range(8..=32);
            let (gw, gh) = (w / cell + 2, h / cell + 2);
            let nodes: Vec<[f32; 3]> = (0..gw * gh)
                .map(|_| [0; 3].map(|_: u8| rng.gen_range(-0.2f32..=0.2)))
                .collect();
            let smooth = |t: f32| t * t * (3.0 - 2.0 * t);
            let mut data = Vec::with_capacity(w * h * 3);
            for y in 0..h {
                for x in 0..w {
                    let (fx, fy) = (x as f32 / cell as f32, y as f32 / cell as f32);
                    let (ix, iy) = (fx as usize, fy as usize);
                    let (tx, ty) = (smooth(fx - ix as f32), smooth(fy - iy as f32));
                    let n = |i: usize, j: usize| nodes[j * gw + i];
                    for c in 0..3 {
                        let top = n(ix, iy)[c] + (n(ix + 1, iy)[c] - n(ix, iy)[c]) * tx;
                        let bot = n(ix, iy + 1)[c] + (n(ix + 1, iy + 1)[c] - n(ix, iy + 1)[c]) * tx;
                        data.push(base[c] + top + (bot - top) * ty);
                    }
                }
            }
            RasterImage::from_data_clamped(w, h, data)?
        }
        BackgroundKind::Directory(dir) => {
            let files = background_files(dir)?;
            let file = files.choose(rng).ok_or(Error::Empty("background image directory"))?;
            let src = RasterImage::load_png(file)?;
            let s = (w as f64 / src.width() as f64).max(h as f64 / src.height() as f64).max(1.0);
            let (sw, sh) = (
                ((src.width() as f64 * s).ceil() as usize).max(w),
                ((src.height() as f64 * s).ceil() as usize).max(h),
            );
            let big = src.resize_bilinear(sw, sh)?;
            let x0 = rng.gen_range(0..=sw - w);
            let y0 = rng.gen_range(0..=sh - h);
            big.crop(x0, y0, w, h)?
        }
    };
    // Backgrounds live on the 8-bit grid so that PNG files hold them exactly.
    Ok(img.quantized())
}

/// Pixels an effect can reach beyond the ink box.
fn effect_margin(e: &TextElement, atlas: &GlyphAtlas) -> f64 {
    let k = e.font_size / atlas.em_px() as f64;
    let mut m = 1.0;
    if e.effects.border.visible {
        m += e.effects.border.width_bin as f64 * k;
    }
    let s = &e.effects.shadow;
    if s.visible {
        m = m.max(1.0 + s.offset_x.abs().max(s.offset_y.abs()) + 3.0 * s.blur);
    }
    m + 1.0
}

fn draw_element(
    config: &GenConfig,
    atlas: &GlyphAtlas,
    fonts: &[usize],
    background: &RasterImage,
    taken: &[Rect],
    rng: &mut ChaCha8Rng,
) -> Result<Option<(TextElement, Rect)>> {
    let (w, h) = background.dims();
    let text = config.words.choose(rng).expect("validated nonempty").clone();
    let font_index = *fonts.choose(rng).expect("validated nonempty");
    let font_size =
        rng.gen_range(config.size_range.0.ceil() as u32..=config.size_range.1.floor() as u32) as f64;
    let effects = EffectSet {
        fill: FillEffect { color: [0.0; 3] },
        border: BorderEffect {
            visible: rng.gen_bool(config.border_probability),
            width_bin: rng.gen_range(1..=BORDER_BINS),
            color: random_color(rng),
        },
        shadow: ShadowEffect {
            visible: rng.gen_bool(config.shadow_probability),
            blur: snapped(rng, config.sigma_range, 1.0 / 64.0),
            offset_x: snapped(rng, config.offset_range, 0.125),
            offset_y: snapped(rng, config.offset_range, 0.125),
            color: random_color(rng),
        },
    };
    let mut element = TextElement {
        text,
        font_index,
        font_size,
        origin: [0.0, 0.0],
        per_char_offsets: None,
        effects,
    };
    let at_zero = layout(&element, atlas)?.word_box;
    let m = effect_margin(&element, atlas);
    let (lo_x, hi_x) = (m - at_zero.x0, w as f64 - m - at_zero.x1);
    let (lo_y, hi_y) = (m - at_zero.y0, h as f64 - m - at_zero.y1);
    if lo_x > hi_x || lo_y > hi_y {
        return Ok(None);
    }
    element.origin = [
        snapped(rng, (lo_x, hi_x), 0.125),
        snapped(rng, (lo_y, hi_y), 0.125),
    ];
    let ink = at_zero.translate(element.origin[0], element.origin[1]);
    let reach = Rect::new(ink.x0 - m, ink.y0 - m, ink.x1 + m, ink.y1 + m);
    let overlaps = |r: &Rect| r.x0 < reach.x1 && reach.x0 < r.x1 && r.y0 < reach.y1 && reach.y0 < r.y1;
    if taken.iter().any(overlaps) {
        return Ok(None);
    }
    let px0 = ink.x0.floor().max(0.0) as usize;
    let py0 = ink.y0.floor().max(0.0) as usize;
    let local = background.mean_color(px0, py0, ink.x1.ceil() as usize, ink.y1.ceil() as usize);
    let contrast = |c: &Rgb| {
        (0..3)
            .map(|i| (c[i] - local[i]).abs())
            .fold(0.0f32, f32::max)
    };
    // A uniform color misses a 0.2 floor with probability below 0.4^3.
    for _ in 0..64 {
        let c = random_color(rng);
        if contrast(&c) >= config.min_contrast {
            element.effects.fill.color = c;
            return Ok(Some((element, reach)));
        }
    }
    Ok(None)
}

/// Draws the ground-truth document of sample `index` without rendering it.
pub fn sample_truth(config: &GenConfig, atlas: &GlyphAtlas, index: usize) -> Result<(Document, Vec<Rect>)> {
    let mut rng = sample_rng(config.seed, index);
    let fonts = config.font_pool(atlas);
    let w = rng.gen_range(config.canvas_width.0..=config.canvas_width.1);
    let h = rng.gen_range(config.canvas_height.0..=config.canvas_height.1);
    let kind = config.backgrounds.choose(&mut rng).expect("validated nonempty");
    let background = make_background(kind, w, h, &mut rng)?;
    let mut elements = Vec::new();
    let mut reaches = Vec::new();
    let mut boxes = Vec::new();
    for _ in 0..config.words_per_sample {
        let mut placed = None;
        for _ in 0..MAX_ATTEMPTS {
            if let Some(found) = draw_element(config, atlas, &fonts, &background, &reaches, &mut rng)? {
                placed = Some(found);
                break;
            }
        }
        let (element, reach) = placed.ok_or_else(|| {
            Error::InvalidArgument(format!(
                "sample {index}: no valid placement in {MAX_ATTEMPTS} attempts; widen the canvas range"
            ))
        })?;
        boxes.push(layout(&element, atlas)?.word_box);
        reaches.push(reach);
        elements.push(element);
    }
    let doc = Document {
        canvas_width: w,
        canvas_height: h,
        background,
        elements,
    };
    doc.validate(Some(atlas))?;
    Ok((doc, boxes))
}

/// Sample `index`: its truth document and the 8-bit rendering of it.
pub fn generate_one(config: &GenConfig, atlas: &GlyphAtlas, index: usize) -> Result<Sample> {
    let (truth, word_boxes) = sample_truth(config, atlas, index)?;
    let image = render_document(&truth, atlas, 1.0)?.quantized();
    Ok(Sample {
        image,
        truth,
        word_boxes,
    })
}

/// Lazily produced samples `0..count`.
pub fn samples<'a>(
    config: &'a GenConfig,
    atlas: &'a GlyphAtlas,
) -> Result<impl Iterator<Item = Result<Sample>> + 'a> {
    config.validate(atlas)?;
    Ok((0..config.count).map(move |i| generate_one(config, atlas, i)))
}

/// All samples, generated in parallel.
pub fn generate(config: &GenConfig, atlas: &GlyphAtlas) -> Result<Vec<Sample>> {
    config.validate(atlas)?;
    (0..config.count)
        .into_par_iter()
        .map(|i| generate_one(config, atlas, i))
        .collect()
}

#[derive(Serialize)]
struct Manifest<'a> {
    config: &'a GenConfig,
    fonts: Vec<String>,
    samples: Vec<ManifestEntry>,
}

#[derive(Serialize)]
struct ManifestEntry {
    image: String,
    document: String,
    word_boxes: Vec<[f64; 4]>,
}

/// Writes `NNNN.png`, `NNNN.json` (background in `NNNN_bg.png`) per sample
/// and `manifest.json` echoing the config.
pub fn write_corpus(dir: impl AsRef<Path>, config: &GenConfig, atlas: &GlyphAtlas, samples: &[Sample]) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let entries = samples
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let image = format!("{i:04}.png");
            let document = format!("{i:04}.json");
            s.image.save_png(dir.join(&image))?;
            save_document_with_background(
                &s.truth,
                dir.join(&document),
                &BackgroundStorage::Sidecar(format!("{i:04}_bg.png").into()),
            )?;
            Ok(ManifestEntry {
                image,
                document,
                word_boxes: s.word_boxes.iter().map(|b| [b.x0, b.y0, b.x1, b.y1]).collect(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = Manifest {
        config,
        fonts: atlas.font_names(),
        samples: entries,
    };
    let path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
}
