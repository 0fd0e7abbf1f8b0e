//! Comparison of predicted documents against ground truth, and the
//! parameter-group ablation study.

use std::collections::BTreeSet;

use derender_core::atlas::GlyphAtlas;
use derender_core::compositor::{layout, render_document, Document};
use derender_core::diffrender::{word_crop, DiffConfig};
use derender_core::imaging::{l1_error, psnr, RasterImage, Rgb};
use derender_core::refine::{FreezeGroup, RefineConfig};
use derender_core::suite::{build_suite, run_suite};
use serde::Serialize;

use crate::error::{StageError, Tag};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalRow {
    pub word: usize,
    pub text: String,
    pub text_match: bool,
    /// Mean absolute error of the predicted render over the word's crop.
    pub l1: f64,
    pub psnr: f64,
    pub font_correct: bool,
    /// Largest per-channel fill color error.
    pub fill_error: f64,
    /// Border color error, when the truth shows a border.
    pub border_color_error: Option<f64>,
    /// Shadow color error, when the truth shows a shadow.
    pub shadow_color_error: Option<f64>,
    pub border_visible_correct: bool,
    pub shadow_visible_correct: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalSummary {
    pub words: usize,
    pub mean_l1: f64,
    pub mean_psnr: f64,
    pub font_accuracy: f64,
    pub mean_fill_error: f64,
    /// Fraction of correct border and shadow visibility flags.
    pub visibility_accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalTable {
    pub rows: Vec<EvalRow>,
    pub summary: EvalSummary,
}

fn color_error(a: Rgb, b: Rgb) -> f64 {
    (0..3).map(|k| (a[k] as f64 - b[k] as f64).abs()).fold(0.0, f64::max)
}

/// Compares `pred` with `truth` element by element. Image metrics are taken
/// against `target` when given (e.g. the original photo), else against the
/// render of `truth`.
pub fn evaluate(
    truth: &Document,
    pred: &Document,
    target: Option<&RasterImage>,
    atlas: &GlyphAtlas,
) -> Result<EvalTable, StageError> {
    truth.validate(Some(atlas)).map_err(|e| StageError::input("compositor", e))?;
    pred.validate(Some(atlas)).map_err(|e| StageError::input("compositor", e))?;
    if truth.elements.len() != pred.elements.len() {
        return Err(StageError::invalid(
            "cli",
            format!("truth has {} elements, prediction {}", truth.elements.len(), pred.elements.len()),
        ));
    }
    let dims = (truth.canvas_width, truth.canvas_height);
    if (pred.canvas_width, pred.canvas_height) != dims {
        return Err(StageError::invalid("cli", "canvas sizes differ"));
    }
    let reference = match target {
        Some(t) if t.dims() != dims => return Err(StageError::invalid("cli", "target image size differs from the canvas")),
        Some(t) => t.clone(),
        None => render_document(truth, atlas, 1.0).tag("compositor")?,
    };
    let rendered = render_document(pred, atlas, 1.0).tag("compositor")?;
    let config = DiffConfig::for_atlas(atlas);

    let rows = truth
        .elements
        .iter()
        .zip(&pred.elements)
        .enumerate()
        .map(|(i, (t, p))| {
            let word_box = layout(t, atlas).tag("compositor")?.word_box;
            let crop = word_crop(&word_box, dims.0, dims.1, &config);
            let cut = |img: &RasterImage| img.crop(crop.x0, crop.y0, crop.width(), crop.height()).tag("imaging");
            let (a, b) = (cut(&rendered)?, cut(&reference)?);
            let (tb, pb) = (&t.effects.border, &p.effects.border);
            let (ts, ps) = (&t.effects.shadow, &p.effects.shadow);
            Ok(EvalRow {
                word: i,
                text: t.text.clone(),
                text_match: t.text == p.text,
                l1: l1_error(&a, &b).tag("imaging")?,
                psnr: psnr(&a, &b).tag("imaging")?,
                font_correct: t.font_index == p.font_index,
                fill_error: color_error(t.effects.fill.color, p.effects.fill.color),
                border_color_error: tb.visible.then(|| color_error(tb.color, pb.color)),
                shadow_color_error: ts.visible.then(|| color_error(ts.color, ps.color)),
                border_visible_correct: tb.visible == pb.visible,
                shadow_visible_correct: ts.visible == ps.visible,
            })
        })
        .collect::<Result<Vec<_>, StageError>>()?;

    let n = rows.len().max(1) as f64;
    let mean = |f: &dyn Fn(&EvalRow) -> f64| rows.iter().map(f).sum::<f64>() / n;
    let summary = EvalSummary {
        words: rows.len(),
        mean_l1: mean(&|r| r.l1),
        mean_psnr: mean(&|r| r.psnr),
        font_accuracy: mean(&|r| r.font_correct as u8 as f64),
        mean_fill_error: mean(&|r| r.fill_error),
        visibility_accuracy: mean(&|r| {
            (r.border_visible_correct as u8 + r.shadow_visible_correct as u8) as f64 / 2.0
        }),
    };
    Ok(EvalTable { rows, summary })
}

/// Writes the rows as CSV with a header line.
pub fn rows_to_csv(rows: &[EvalRow]) -> anyhow::Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    Ok(String::from_utf8(w.into_inner()?)?)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AblationRow {
    /// Frozen groups, empty for full refinement.
    pub frozen: Vec<String>,
    pub mean_initial_psnr: f64,
    pub mean_psnr: f64,
    pub improved_fraction: f64,
    pub font_accuracy: f64,
    /// Fraction of words whose fill color ends within 0.05 per channel.
    pub fill_accuracy: f64,
    pub max_wall_time_s: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AblationTable {
    pub seed: u64,
    pub words: usize,
    pub iterations: usize,
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn row(&self, frozen: &[FreezeGroup]) -> Option<&AblationRow> {
        let names: Vec<String> = frozen.iter().map(|g| g.name().to_string()).collect();
        self.rows.iter().find(|r| r.frozen == names)
    }

    /// Whether freezing colors costs strictly more PSNR than freezing borders.
    pub fn color_below_border(&self) -> Option<bool> {
        let c = self.row(&[FreezeGroup::Color])?;
        let b = self.row(&[FreezeGroup::Border])?;
        Some(c.mean_psnr < b.mean_psnr)
    }
}

pub const FILL_TOLERANCE: f64 = 0.05;

/// Refines the perturbed datagen suite once per entry of `configs`.
pub fn ablation(
    atlas: &GlyphAtlas,
    seed: u64,
    count: usize,
    iterations: usize,
    configs: &[Vec<FreezeGroup>],
) -> Result<AblationTable, StageError> {
    if count == 0 {
        return Err(StageError::invalid("cli", "suite needs at least one word"));
    }
    let config = DiffConfig::for_atlas(atlas);
    let refine = RefineConfig {
        iterations,
        ..RefineConfig::default()
    };
    refine.validate().map_err(|e| StageError::input("refine", e))?;
    let cases = build_suite(atlas, seed, count, &config).tag("datagen")?;
    let rows = configs
        .iter()
        .map(|groups| {
            let frozen: BTreeSet<FreezeGroup> = groups.iter().copied().collect();
            let out = run_suite(&cases, atlas, &refine, &config, &frozen).tag("refine")?;
            let n = out.len() as f64;
            let frac = |f: &dyn Fn(&derender_core::suite::CaseOutcome) -> bool| {
                out.iter().filter(|o| f(o)).count() as f64 / n
            };
            Ok(AblationRow {
                frozen: frozen.iter().map(|g| g.name().to_string()).collect(),
                mean_initial_psnr: out.iter().map(|o| o.report.initial_psnr).sum::<f64>() / n,
                mean_psnr: out.iter().map(|o| o.report.final_psnr).sum::<f64>() / n,
                improved_fraction: frac(&|o| o.report.final_psnr > o.report.initial_psnr),
                font_accuracy: frac(&|o| o.font_recovered),
                fill_accuracy: frac(&|o| o.fill_error <= FILL_TOLERANCE),
                max_wall_time_s: out.iter().map(|o| o.report.wall_time).fold(0.0, f64::max),
            })
        })
        .collect::<Result<Vec<_>, StageError>>()?;
    Ok(AblationTable {
        seed,
        words: cases.len(),
        iterations,
        rows,
    })
}
