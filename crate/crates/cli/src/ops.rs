use std::path::{Path, PathBuf};

use derender_core::atlas::{
    build_atlas, build_bundled_atlas, bundled_font_manifest, load_atlas, load_atlas_sharded,
    load_font_manifest, printable_ascii, save_atlas, save_atlas_sharded, GlyphAtlas,
};
use derender_core::compositor::{render_document, Document};
use derender_core::datagen::{generate, write_corpus, GenConfig};
use derender_core::export::{apply_patch, document_from_value};
use derender_core::Error;
use serde_json::Value;

use crate::error::{StageError, Tag};

/// Loads a saved atlas (file or shard directory), or builds the bundled one
/// when no path is given.
pub fn load_atlas_arg(path: Option<&Path>) -> Result<GlyphAtlas, StageError> {
    match path {
        None => build_bundled_atlas().tag("atlas"),
        Some(p) if p.is_dir() => load_atlas_sharded(p, None).tag("atlas"),
        Some(p) => load_atlas(p).tag("atlas"),
    }
}

#[derive(Clone, Debug)]
pub struct AtlasBuild {
    /// Font manifest; the bundled fonts when absent.
    pub manifest: Option<PathBuf>,
    pub resolution: usize,
    pub sharded: bool,
}

pub fn build_atlas_to(spec: &AtlasBuild, out: &Path) -> Result<GlyphAtlas, StageError> {
    let manifest = spec.manifest.clone().unwrap_or_else(bundled_font_manifest);
    let fonts = load_font_manifest(&manifest).tag("atlas")?;
    let atlas = build_atlas(&fonts, &printable_ascii(), spec.resolution).tag("atlas")?;
    if spec.sharded {
        save_atlas_sharded(&atlas, out).tag("atlas")?;
    } else {
        save_atlas(&atlas, out).tag("atlas")?;
    }
    Ok(atlas)
}

/// Validates and renders a document to PNG bytes. Shared by `render` and
/// `POST /api/render`.
pub fn render_png(doc: &Document, atlas: &GlyphAtlas, scale: f64) -> Result<Vec<u8>, StageError> {
    if !(scale.is_finite() && scale > 0.0) {
        return Err(StageError::invalid("compositor", format!("scale must be > 0, got {scale}")));
    }
    doc.validate(Some(atlas)).tag("compositor")?;
    let img = render_document(doc, atlas, scale).tag("compositor")?;
    img.to_png_bytes().tag("imaging")
}

/// Splits `path=value` at the first `=`.
pub fn parse_assignment(s: &str) -> Result<(String, String), String> {
    match s.split_once('=') {
        Some((p, v)) if !p.trim().is_empty() => Ok((p.trim().to_string(), v.to_string())),
        _ => Err(format!("expected path=value, got `{s}`")),
    }
}

/// Applies dotted-path patches to a document value and re-validates the
/// result. Fields that are not patched keep their exact JSON.
pub fn edit_value(
    mut doc: Value,
    sets: &[(String, String)],
    base_dir: Option<&Path>,
    atlas: &GlyphAtlas,
) -> Result<Value, StageError> {
    for (path, raw) in sets {
        apply_patch(&mut doc, path, raw).map_err(|e| StageError::input("export", e))?;
    }
    let parsed = document_from_value(doc.clone(), base_dir).map_err(|e| StageError::input("export", e))?;
    parsed
        .validate(Some(atlas))
        .map_err(|e| StageError::input("compositor", e))?;
    Ok(doc)
}

/// Pretty JSON with a trailing newline, the on-disk document layout.
pub fn value_to_text(v: &Value) -> String {
    serde_json::to_string_pretty(v).expect("value serializes") + "\n"
}

/// Makes a relative background path absolute so the document can be saved in
/// a different directory.
pub fn rebase_background(doc: &mut Value, from: &Path) {
    if let Some(Value::String(p)) = doc.pointer_mut("/background/path") {
        if Path::new(p.as_str()).is_relative() {
            let abs = std::path::absolute(from.join(p.as_str())).unwrap_or_else(|_| from.join(p.as_str()));
            *p = abs.to_string_lossy().into_owned();
        }
    }
}

pub fn read_json(path: &Path) -> Result<Value, StageError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| StageError::input("export", Error::Io { path: path.into(), source: e }))?;
    serde_json::from_str(&text).map_err(|e| {
        StageError::input(
            "export",
            Error::Schema {
                field: ".".into(),
                reason: e.to_string(),
            },
        )
    })
}

/// Generates a corpus with `config` and writes it to `dir`.
pub fn generate_corpus(config: &GenConfig, atlas: &GlyphAtlas, dir: &Path) -> Result<usize, StageError> {
    config.validate(atlas).map_err(|e| StageError::input("datagen", e))?;
    let samples = generate(config, atlas).tag("datagen")?;
    write_corpus(dir, config, atlas, &samples).tag("datagen")?;
    Ok(samples.len())
}
