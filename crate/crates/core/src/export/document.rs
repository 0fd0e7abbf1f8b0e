//! Versioned, strict JSON document format.
//!
//! Colors are stored as 0-255 integers (round half up), geometry as decimals.
//! The background is either a flat color, an embedded base64 PNG or a PNG
//! path relative to the document file.

use std::path::{Path, PathBuf};

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::compositor::{
    BorderEffect, Document, EffectSet, FillEffect, ShadowEffect, TextElement, MAX_CANVAS_SIDE,
};
use crate::error::{Error, Result};
use crate::imaging::{dequantize, quantize, RasterImage, Rgb};

pub const DOCUMENT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DocumentFile {
    version: u32,
    canvas: CanvasFile,
    background: BackgroundFile,
    elements: Vec<ElementFile>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CanvasFile {
    width: usize,
    height: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum BackgroundFile {
    Flat([u8; 3]),
    PngBase64(String),
    Path(String),
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ElementFile {
    text: String,
    font_index: usize,
    font_size: f64,
    origin: [f64; 2],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    per_char_offsets: Option<Vec<[f64; 2]>>,
    effects: EffectsFile,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EffectsFile {
    fill: FillFile,
    border: BorderFile,
    shadow: ShadowFile,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FillFile {
    color: [u8; 3],
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BorderFile {
    visible: bool,
    width_bin: usize,
    color: [u8; 3],
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ShadowFile {
    visible: bool,
    blur: f64,
    offset: [f64; 2],
    color: [u8; 3],
}

/// Where [`save_document_with_background`] puts the background pixels.
#[derive(Clone, Debug, PartialEq)]
pub enum BackgroundStorage {
    /// Flat color when the background is uniform, embedded PNG otherwise.
    Auto,
    Embedded,
    /// PNG written next to the document; the file stores its relative name.
    Sidecar(PathBuf),
}

fn to_bytes(c: Rgb) -> [u8; 3] {
    c.map(quantize)
}

fn from_bytes(c: [u8; 3]) -> Rgb {
    c.map(dequantize)
}

fn uniform_color(img: &RasterImage) -> Option<[u8; 3]> {
    let first = to_bytes(img.pixel(0, 0));
    img.data()
        .chunks_exact(3)
        .all(|p| to_bytes([p[0], p[1], p[2]]) == first)
        .then_some(first)
}

fn element_to_file(e: &TextElement) -> ElementFile {
    let fx = &e.effects;
    ElementFile {
        text: e.text.clone(),
        font_index: e.font_index,
        font_size: e.font_size,
        origin: e.origin,
        per_char_offsets: e.per_char_offsets.clone(),
        effects: EffectsFile {
            fill: FillFile {
                color: to_bytes(fx.fill.color),
            },
            border: BorderFile {
                visible: fx.border.visible,
                width_bin: fx.border.width_bin,
                color: to_bytes(fx.border.color),
            },
            shadow: ShadowFile {
                visible: fx.shadow.visible,
                blur: fx.shadow.blur,
                offset: [fx.shadow.offset_x, fx.shadow.offset_y],
                color: to_bytes(fx.shadow.color),
            },
        },
    }
}

fn document_value(doc: &Document, background: BackgroundFile) -> Result<Value> {
    let file = DocumentFile {
        version: DOCUMENT_VERSION,
        canvas: CanvasFile {
            width: doc.canvas_width,
            height: doc.canvas_height,
        },
        background,
        elements: doc.elements.iter().map(element_to_file).collect(),
    };
    serde_json::to_value(&file).map_err(|e| Error::InvalidArgument(e.to_string()))
}

fn inline_background(doc: &Document, storage: &BackgroundStorage) -> Result<BackgroundFile> {
    match (storage, uniform_color(&doc.background)) {
        (BackgroundStorage::Auto, Some(c)) => Ok(BackgroundFile::Flat(c)),
        _ => Ok(BackgroundFile::PngBase64(
            BASE64.encode(doc.background.to_png_bytes()?),
        )),
    }
}

/// Serializes with the background inlined (flat or embedded PNG).
pub fn document_to_json(doc: &Document) -> Result<String> {
    doc.validate(None)?;
    let v = document_value(doc, inline_background(doc, &BackgroundStorage::Auto)?)?;
    Ok(serde_json::to_string_pretty(&v).expect("value serializes"))
}

pub fn save_document(doc: &Document, path: impl AsRef<Path>) -> Result<()> {
    save_document_with_background(doc, path, &BackgroundStorage::Auto)
}

pub fn save_document_with_background(
    doc: &Document,
    path: impl AsRef<Path>,
    storage: &BackgroundStorage,
) -> Result<()> {
    let path = path.as_ref();
    doc.validate(None)?;
    let background = match storage {
        BackgroundStorage::Sidecar(bg) => {
            let dir = path.parent().unwrap_or(Path::new(""));
            doc.background.save_png(dir.join(bg))?;
            BackgroundFile::Path(bg.to_string_lossy().into_owned())
        }
        other => inline_background(doc, other)?,
    };
    let v = document_value(doc, background)?;
    let text = serde_json::to_string_pretty(&v).expect("value serializes");
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn load_document(path: impl AsRef<Path>) -> Result<Document> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    document_from_json(&text, Some(path.parent().unwrap_or(Path::new(""))))
}

fn schema_error<E: std::fmt::Display>(err: serde_path_to_error::Error<E>) -> Error {
    let mut field = err.path().to_string();
    let reason = err.inner().to_string();
    // Make sure unknown fields are named even when reported on the parent.
    if let Some(rest) = reason.strip_prefix("unknown field `") {
        if let Some(name) = rest.split('`').next() {
            if field == "." {
                field = name.to_string();
            } else if !field.ends_with(name) {
                field = format!("{field}.{name}");
            }
        }
    }
    Error::Schema { field, reason }
}

/// Parses a document. Background paths resolve against `base_dir`; without
/// one, path backgrounds are rejected.
pub fn document_from_json(text: &str, base_dir: Option<&Path>) -> Result<Document> {
    let mut de = serde_json::Deserializer::from_str(text);
    let file: DocumentFile = serde_path_to_error::deserialize(&mut de).map_err(schema_error)?;
    de.end().map_err(|e| schema(".", e.to_string()))?;
    file_to_document(file, base_dir)
}

/// Parses a document held as a JSON value (see [`apply_patch`]).
pub fn document_from_value(value: Value, base_dir: Option<&Path>) -> Result<Document> {
    let file: DocumentFile = serde_path_to_error::deserialize(value).map_err(schema_error)?;
    file_to_document(file, base_dir)
}

fn schema(field: impl Into<String>, reason: impl Into<String>) -> Error {
    Error::Schema {
        field: field.into(),
        reason: reason.into(),
    }
}

fn file_to_document(file: DocumentFile, base_dir: Option<&Path>) -> Result<Document> {
    if file.version != DOCUMENT_VERSION {
        return Err(schema(
            "version",
            format!("unsupported version {} (expected {DOCUMENT_VERSION})", file.version),
        ));
    }
    let (w, h) = (file.canvas.width, file.canvas.height);
    if w == 0 || h == 0 || w > MAX_CANVAS_SIDE || h > MAX_CANVAS_SIDE {
        return Err(schema(
            "canvas",
            format!("size {w}x{h} outside 1..={MAX_CANVAS_SIDE}"),
        ));
    }
    let background = match file.background {
        BackgroundFile::Flat(c) => RasterImage::filled(w, h, from_bytes(c)),
        BackgroundFile::PngBase64(data) => {
            let bytes = BASE64
                .decode(data.trim())
                .map_err(|e| schema("background.png_base64", e.to_string()))?;
            RasterImage::from_png_bytes(&bytes)
                .map_err(|e| schema("background.png_base64", e.to_string()))?
        }
        BackgroundFile::Path(rel) => {
            let dir = base_dir.ok_or_else(|| {
                schema("background.path", "file references are not allowed here")
            })?;
            RasterImage::load_png(dir.join(&rel))
                .map_err(|e| schema("background.path", e.to_string()))?
        }
    };
    if background.dims() != (w, h) {
        return Err(schema(
            "background",
            format!("image is {:?}, canvas is {w}x{h}", background.dims()),
        ));
    }
    let elements = file
        .elements
        .into_iter()
        .enumerate()
        .map(|(i, e)| file_to_element(i, e))
        .collect::<Result<Vec<_>>>()?;
    let doc = Document {
        canvas_width: w,
        canvas_height: h,
        background,
        elements,
    };
    doc.validate(None).map_err(|e| schema("elements", e.to_string()))?;
    Ok(doc)
}

fn file_to_element(i: usize, e: ElementFile) -> Result<TextElement> {
    let at = |f: &str| format!("elements[{i}].{f}");
    if e.text.is_empty() {
        return Err(schema(at("text"), "must not be empty"));
    }
    if !(e.font_size.is_finite() && e.font_size > 0.0) {
        return Err(schema(at("font_size"), format!("must be > 0, got {}", e.font_size)));
    }
    if let Some(o) = &e.per_char_offsets {
        let n = e.text.chars().count();
        if o.len() != n {
            return Err(schema(
                at("per_char_offsets"),
                format!("{} entries for {n} characters", o.len()),
            ));
        }
    }
    let fx = e.effects;
    if !(1..=crate::atlas::BORDER_BINS).contains(&fx.border.width_bin) {
        return Err(schema(
            at("effects.border.width_bin"),
            format!("must be in 1..={}, got {}", crate::atlas::BORDER_BINS, fx.border.width_bin),
        ));
    }
    if !(fx.shadow.blur.is_finite() && fx.shadow.blur >= 0.0) {
        return Err(schema(at("effects.shadow.blur"), "must be finite and >= 0"));
    }
    let element = TextElement {
        text: e.text,
        font_index: e.font_index,
        font_size: e.font_size,
        origin: e.origin,
        per_char_offsets: e.per_char_offsets,
        effects: EffectSet {
            fill: FillEffect {
                color: from_bytes(fx.fill.color),
            },
            border: BorderEffect {
                visible: fx.border.visible,
                width_bin: fx.border.width_bin,
                color: from_bytes(fx.border.color),
            },
            shadow: ShadowEffect {
                visible: fx.shadow.visible,
                blur: fx.shadow.blur,
                offset_x: fx.shadow.offset[0],
                offset_y: fx.shadow.offset[1],
                color: from_bytes(fx.shadow.color),
            },
        },
    };
    element
        .validate(None)
        .map_err(|err| schema(format!("elements[{i}]"), err.to_string()))?;
    Ok(element)
}

/// Splits `a.b[2].c` into keys and indices.
fn parse_path(path: &str) -> Result<Vec<PathStep>> {
    let bad = || schema(path, "malformed path");
    let mut steps = Vec::new();
    for part in path.split('.') {
        let (name, mut rest) = match part.find('[') {
            Some(i) => (&part[..i], &part[i..]),
            None => (part, ""),
        };
        if name.is_empty() {
            return Err(bad());
        }
        steps.push(PathStep::Key(name.to_string()));
        while !rest.is_empty() {
            let close = rest.find(']').ok_or_else(bad)?;
            if !rest.starts_with('[') {
                return Err(bad());
            }
            let idx = rest[1..close].parse().map_err(|_| bad())?;
            steps.push(PathStep::Index(idx));
            rest = &rest[close + 1..];
        }
    }
    Ok(steps)
}

enum PathStep {
    Key(String),
    Index(usize),
}

fn same_shape(old: &Value, new: &Value) -> bool {
    match (old, new) {
        (Value::Number(_), Value::Number(_)) | (Value::Bool(_), Value::Bool(_)) => true,
        (Value::String(_), Value::String(_)) | (Value::Object(_), Value::Object(_)) => true,
        (Value::Array(a), Value::Array(b)) => {
            a.len() == b.len() && a.iter().zip(b).all(|(x, y)| same_shape(x, y))
        }
        _ => false,
    }
}

/// Replaces the existing field at dotted `path` with `raw`, parsed as JSON
/// (or taken as a string for string fields). The value must have the same
/// type as the field it replaces.
pub fn apply_patch(doc: &mut Value, path: &str, raw: &str) -> Result<()> {
    let steps = parse_path(path)?;
    let mut node = doc;
    for step in &steps {
        let next = match step {
            PathStep::Key(k) => node.get_mut(k.as_str()),
            PathStep::Index(i) => node.get_mut(*i),
        };
        node = next.ok_or_else(|| schema(path, "no such field"))?;
    }
    let parsed = serde_json::from_str::<Value>(raw).ok();
    let value = match (&*node, parsed) {
        (Value::String(_), Some(v @ Value::String(_))) => v,
        (Value::String(_), _) => Value::String(raw.to_string()),
        (old, Some(v)) if same_shape(old, &v) => v,
        (old, _) => {
            return Err(schema(
                path,
                format!("type mismatch: `{raw}` cannot replace {old}"),
            ))
        }
    };
    *node = value;
    Ok(())
}

/// The document as a JSON value, for patching.
pub fn document_value_inline(doc: &Document) -> Result<Value> {
    document_value(doc, inline_background(doc, &BackgroundStorage::Auto)?)
}
