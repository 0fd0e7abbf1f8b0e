//! Atlas binary format (all integers and floats little-endian).
//!
//! Monolithic file:
//!
//! ```text
//! magic        8 bytes  "DRNATLAS"
//! version      u32      1
//! resolution   u32      cell edge length R
//! em_px        f32      cell pixels per em
//! bins         u32      border bins B (5)
//! font_count   u32      F
//! glyph_count  u32      G
//! fonts        F x { name_len u32, name utf-8, ascent f32, descent f32 }
//! glyphs       G x { codepoint u32 }
//! payload      F x G entries, font-major; each entry is
//!              7 x f32 metrics (advance, bearing_x, bearing_y, width,
//!              height, ascent, descent) followed by (1 + B) x R x R f32
//!              maps: fill, then border bins 1..=B, row-major
//! ```
//!
//! Sharded layout is a directory holding `index.bin` (the header above with
//! magic "DRNAINDX" and no payload) and one `font_NNNN.bin` per font (magic
//! "DRNASHRD", version, font index u32, then that font's G entries).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::Path;

use super::{FontInfo, GlyphAtlas, GlyphEntry, GlyphMetrics, BORDER_BINS};
use crate::error::{Error, Result};
use crate::imaging::AlphaMap;

pub const ATLAS_MAGIC: &[u8; 8] = b"DRNATLAS";
const INDEX_MAGIC: &[u8; 8] = b"DRNAINDX";
const SHARD_MAGIC: &[u8; 8] = b"DRNASHRD";
pub const ATLAS_VERSION: u32 = 1;
const METRIC_FIELDS: usize = 7;

struct Header {
    resolution: usize,
    em_px: f32,
    fonts: Vec<FontInfo>,
    glyphs: Vec<char>,
}

impl Header {
    fn entry_bytes(&self) -> usize {
        (METRIC_FIELDS + (1 + BORDER_BINS) * self.resolution * self.resolution) * 4
    }
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> Error + '_ {
    move |e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            Error::AtlasFormat(format!("{}: truncated file", path.display()))
        } else {
            Error::io(path, e)
        }
    }
}

fn write_u32(w: &mut impl Write, v: u32) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn write_f32(w: &mut impl Write, v: f32) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn read_u32(r: &mut impl Read) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_f32(r: &mut impl Read) -> std::io::Result<f32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(f32::from_le_bytes(b))
}

fn write_header(w: &mut impl Write, magic: &[u8; 8], atlas: &GlyphAtlas) -> std::io::Result<()> {
    w.write_all(magic)?;
    write_u32(w, ATLAS_VERSION)?;
    write_u32(w, atlas.cell_resolution() as u32)?;
    write_f32(w, atlas.em_px())?;
    write_u32(w, BORDER_BINS as u32)?;
    write_u32(w, atlas.num_fonts() as u32)?;
    write_u32(w, atlas.glyphs().len() as u32)?;
    for font in atlas.fonts() {
        write_u32(w, font.name.len() as u32)?;
        w.write_all(font.name.as_bytes())?;
        write_f32(w, font.ascent)?;
        write_f32(w, font.descent)?;
    }
    for &g in atlas.glyphs() {
        write_u32(w, g as u32)?;
    }
    Ok(())
}

fn read_header(r: &mut impl Read, magic: &[u8; 8], path: &Path) -> Result<Header> {
    let err = io_err(path);
    let mut m = [0u8; 8];
    r.read_exact(&mut m).map_err(&err)?;
    if &m != magic {
        return Err(Error::AtlasFormat(format!(
            "{}: bad magic bytes (not an atlas file or unsupported version)",
            path.display()
        )));
    }
    let version = read_u32(r).map_err(&err)?;
    if version != ATLAS_VERSION {
        return Err(Error::AtlasFormat(format!(
            "{}: version {version}, expected {ATLAS_VERSION}",
            path.display()
        )));
    }
    let resolution = read_u32(r).map_err(&err)? as usize;
    let em_px = read_f32(r).map_err(&err)?;
    let bins = read_u32(r).map_err(&err)? as usize;
    if bins != BORDER_BINS || resolution == 0 || resolution > 4096 {
        return Err(Error::AtlasFormat(format!(
            "{}: unsupported layout ({bins} bins, resolution {resolution})",
            path.display()
        )));
    }
    let font_count = read_u32(r).map_err(&err)? as usize;
    let glyph_count = read_u32(r).map_err(&err)? as usize;
    if font_count > 100_000 || glyph_count > 100_000 {
        return Err(Error::AtlasFormat(format!("{}: implausible table sizes", path.display())));
    }
    let mut fonts = Vec::with_capacity(font_count);
    for _ in 0..font_count {
        let len = read_u32(r).map_err(&err)? as usize;
        if len > 4096 {
            return Err(Error::AtlasFormat(format!("{}: font name too long", path.display())));
        }
        let mut name = vec![0u8; len];
        r.read_exact(&mut name).map_err(&err)?;
        let name = String::from_utf8(name)
            .map_err(|_| Error::AtlasFormat(format!("{}: font name not utf-8", path.display())))?;
        let ascent = read_f32(r).map_err(&err)?;
        let descent = read_f32(r).map_err(&err)?;
        fonts.push(FontInfo {
            name,
            ascent,
            descent,
        });
    }
    let mut glyphs = Vec::with_capacity(glyph_count);
    for _ in 0..glyph_count {
        let cp = read_u32(r).map_err(&err)?;
        glyphs.push(char::from_u32(cp).ok_or_else(|| {
            Error::AtlasFormat(format!("{}: invalid codepoint {cp}", path.display()))
        })?);
    }
    Ok(Header {
        resolution,
        em_px,
        fonts,
        glyphs,
    })
}

fn write_entry(w: &mut impl Write, entry: &GlyphEntry) -> std::io::Result<()> {
    let m = &entry.metrics;
    for v in [m.advance, m.bearing_x, m.bearing_y, m.width, m.height, m.ascent, m.descent] {
        write_f32(w, v)?;
    }
    let mut buf = Vec::with_capacity(entry.fill.data().len() * 4);
    for map in std::iter::once(&entry.fill).chain(&entry.border) {
        buf.clear();
        for v in map.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

fn read_entry(r: &mut impl Read, resolution: usize, path: &Path) -> Result<GlyphEntry> {
    let err = io_err(path);
    let mut m = [0.0f32; METRIC_FIELDS];
    for v in &mut m {
        *v = read_f32(r).map_err(&err)?;
    }
    let metrics = GlyphMetrics {
        advance: m[0],
        bearing_x: m[1],
        bearing_y: m[2],
        width: m[3],
        height: m[4],
        ascent: m[5],
        descent: m[6],
    };
    let n = resolution * resolution;
    let mut bytes = vec![0u8; n * 4];
    let mut maps = Vec::with_capacity(1 + BORDER_BINS);
    for _ in 0..1 + BORDER_BINS {
        r.read_exact(&mut bytes).map_err(&err)?;
        let data: Vec<f32> = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        maps.push(AlphaMap::from_data(resolution, resolution, data).map_err(|_| {
            Error::AtlasFormat(format!("{}: alpha value outside [0, 1]", path.display()))
        })?);
    }
    let fill = maps.remove(0);
    Ok(GlyphEntry {
        fill,
        border: maps,
        metrics,
    })
}

fn check_subset(subset: &[usize], count: usize) -> Result<()> {
    if let Some(&bad) = subset.iter().find(|&&i| i >= count) {
        return Err(Error::UnknownFont { index: bad, count });
    }
    Ok(())
}

pub fn save_atlas(atlas: &GlyphAtlas, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let write = |w: &mut BufWriter<File>| -> std::io::Result<()> {
        write_header(w, ATLAS_MAGIC, atlas)?;
        for entry in atlas.entries() {
            write_entry(w, entry)?;
        }
        w.flush()
    };
    write(&mut w).map_err(|e| Error::io(path, e))
}

pub fn load_atlas(path: impl AsRef<Path>) -> Result<GlyphAtlas> {
    load_atlas_impl(path.as_ref(), None)
}

/// Loads only the listed fonts (in the given order), bounding memory.
pub fn load_atlas_subset(path: impl AsRef<Path>, fonts: &[usize]) -> Result<GlyphAtlas> {
    load_atlas_impl(path.as_ref(), Some(fonts))
}

fn load_atlas_impl(path: &Path, subset: Option<&[usize]>) -> Result<GlyphAtlas> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let header = read_header(&mut r, ATLAS_MAGIC, path)?;
    let payload_start = r.stream_position().map_err(|e| Error::io(path, e))?;
    let glyph_count = header.glyphs.len();
    let all: Vec<usize> = (0..header.fonts.len()).collect();
    let order = subset.unwrap_or(&all);
    check_subset(order, header.fonts.len())?;

    let mut entries = Vec::with_capacity(order.len() * glyph_count);
    let mut cursor = None;
    for &font in order {
        let offset = payload_start + (font * glyph_count * header.entry_bytes()) as u64;
        if cursor != Some(offset) {
            r.seek(SeekFrom::Start(offset)).map_err(|e| Error::io(path, e))?;
        }
        for _ in 0..glyph_count {
            entries.push(read_entry(&mut r, header.resolution, path)?);
        }
        cursor = Some(offset + (glyph_count * header.entry_bytes()) as u64);
    }
    if subset.is_none() {
        let mut probe = [0u8; 1];
        if r.read(&mut probe).map_err(|e| Error::io(path, e))? != 0 {
            return Err(Error::AtlasFormat(format!("{}: trailing bytes", path.display())));
        }
    }
    let fonts = order.iter().map(|&i| header.fonts[i].clone()).collect();
    GlyphAtlas::from_parts(fonts, header.glyphs, header.resolution, header.em_px, entries)
}

fn shard_name(font: usize) -> String {
    format!("font_{font:04}.bin")
}

/// Writes `index.bin` plus one shard per font into `dir` (created if needed).
pub fn save_atlas_sharded(atlas: &GlyphAtlas, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let index = dir.join("index.bin");
    let mut w = BufWriter::new(File::create(&index).map_err(|e| Error::io(&index, e))?);
    write_header(&mut w, INDEX_MAGIC, atlas)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(&index, e))?;
    let glyph_count = atlas.glyphs().len();
    for font in 0..atlas.num_fonts() {
        let path = dir.join(shard_name(font));
        let mut w = BufWriter::new(File::create(&path).map_err(|e| Error::io(&path, e))?);
        let write = |w: &mut BufWriter<File>| -> std::io::Result<()> {
            w.write_all(SHARD_MAGIC)?;
            write_u32(w, ATLAS_VERSION)?;
            write_u32(w, font as u32)?;
            for entry in &atlas.entries()[font * glyph_count..(font + 1) * glyph_count] {
                write_entry(w, entry)?;
            }
            w.flush()
        };
        write(&mut w).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

/// Loads a sharded atlas, optionally restricted to a font subset.
pub fn load_atlas_sharded(dir: impl AsRef<Path>, subset: Option<&[usize]>) -> Result<GlyphAtlas> {
    let dir = dir.as_ref();
    let index = dir.join("index.bin");
    let mut r = BufReader::new(File::open(&index).map_err(|e| Error::io(&index, e))?);
    let header = read_header(&mut r, INDEX_MAGIC, &index)?;
    let all: Vec<usize> = (0..header.fonts.len()).collect();
    let order = subset.unwrap_or(&all);
    check_subset(order, header.fonts.len())?;

    let mut entries = Vec::with_capacity(order.len() * header.glyphs.len());
    for &font in order {
        let path = dir.join(shard_name(font));
        let mut r = BufReader::new(File::open(&path).map_err(|e| Error::io(&path, e))?);
        let err = io_err(&path);
        let mut m = [0u8; 8];
        r.read_exact(&mut m).map_err(&err)?;
        if &m != SHARD_MAGIC {
            return Err(Error::AtlasFormat(format!("{}: bad shard magic", path.display())));
        }
        let version = read_u32(&mut r).map_err(&err)?;
        let index = read_u32(&mut r).map_err(&err)? as usize;
        if version != ATLAS_VERSION || index != font {
            return Err(Error::AtlasFormat(format!(
                "{}: shard version {version} / font {index} does not match index",
                path.display()
            )));
        }
        for _ in 0..header.glyphs.len() {
            entries.push(read_entry(&mut r, header.resolution, &path)?);
        }
    }
    let fonts = order.iter().map(|&i| header.fonts[i].clone()).collect();
    GlyphAtlas::from_parts(fonts, header.glyphs, header.resolution, header.em_px, entries)
}
