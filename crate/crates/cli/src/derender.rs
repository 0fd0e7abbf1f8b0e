//! End-to-end de-rendering of user-boxed words: initialize, refine every word
//! in parallel, export to a document.
//!
//! Word boxes and texts always come from the caller; there is no text
//! detection or recognition.

use std::collections::BTreeSet;

use derender_core::atlas::GlyphAtlas;
use derender_core::compositor::Document;
use derender_core::diffrender::{word_crop, DiffConfig, RefinableParams};
use derender_core::export::export_element;
use derender_core::imaging::{AlphaMap, RasterImage, Rect};
use derender_core::initialize::{estimate_mask, guess_with_background, inpaint, MIN_BOX_SIDE};
use derender_core::refine::{ablate_observed, RefineConfig};
use derender_core::suite::perturb;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{StageError, Tag};

/// Iteration events are emitted at this stride (plus the last iteration).
pub const PROGRESS_STRIDE: usize = 10;

#[derive(Clone, Debug, PartialEq)]
pub struct WordSpec {
    pub word_box: Rect,
    pub text: String,
}

#[derive(Clone, Debug)]
pub struct DerenderRequest {
    pub image: RasterImage,
    pub words: Vec<WordSpec>,
    pub iterations: usize,
    pub seed: u64,
    /// Ground truth whose hard parameters, perturbed, replace the
    /// initialization. Element `i` belongs to word `i`.
    pub perturb: Option<Document>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct WordReport {
    pub word: usize,
    pub text: String,
    pub font_index: usize,
    pub font_name: String,
    pub initial_l1: f64,
    pub final_l1: f64,
    pub initial_psnr: f64,
    pub final_psnr: f64,
    pub best_iteration: usize,
    pub iterations: usize,
    pub wall_time_s: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub aborted: Option<String>,
}

#[derive(Clone, Debug, Serialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Progress {
    Started { words: usize, iterations: usize },
    Initialized { word: usize, font_index: usize, font_name: String },
    Iteration { word: usize, iteration: usize, loss: f64 },
    WordDone { report: WordReport },
}

#[derive(Clone, Debug)]
pub struct DerenderOutput {
    pub document: Document,
    pub report: Vec<WordReport>,
}

/// Checks counts, budgets and boxes before any work starts.
pub fn validate_request(req: &DerenderRequest, atlas: &GlyphAtlas) -> Result<(), StageError> {
    if req.words.is_empty() {
        return Err(StageError::invalid("cli", "at least one word box is required"));
    }
    if req.iterations == 0 {
        return Err(StageError::invalid("refine", "iterations must be >= 1"));
    }
    let (w, h) = req.image.dims();
    for (i, word) in req.words.iter().enumerate() {
        if word.text.is_empty() {
            return Err(StageError::invalid("cli", format!("word {i} has empty text")));
        }
        atlas
            .contains_text(&word.text)
            .map_err(|e| StageError::input("atlas", e))?;
        let b = &word.word_box;
        let inside = b.x0 >= 0.0 && b.y0 >= 0.0 && b.x1 <= w as f64 && b.y1 <= h as f64;
        let side = MIN_BOX_SIDE as f64;
        if !inside || !(b.width() >= side && b.height() >= side) {
            return Err(StageError::invalid(
                "cli",
                format!("box {i} {b:?} must lie inside the {w}x{h} image and be at least {side}x{side}"),
            ));
        }
    }
    if let Some(truth) = &req.perturb {
        if (truth.canvas_width, truth.canvas_height) != (w, h) {
            return Err(StageError::invalid("cli", "perturb document canvas differs from the image"));
        }
        if truth.elements.len() != req.words.len() {
            return Err(StageError::invalid(
                "cli",
                format!("{} words but the perturb document has {} elements", req.words.len(), truth.elements.len()),
            ));
        }
        truth.validate(Some(atlas)).map_err(|e| StageError::input("compositor", e))?;
        for (i, (e, word)) in truth.elements.iter().zip(&req.words).enumerate() {
            if e.text != word.text {
                return Err(StageError::invalid("cli", format!("word {i}: text differs from the perturb document")));
            }
        }
    }
    Ok(())
}

fn starting_points(
    req: &DerenderRequest,
    atlas: &GlyphAtlas,
    config: &DiffConfig,
) -> Result<(RasterImage, Vec<RefinableParams>), StageError> {
    let (w, h) = req.image.dims();
    if let Some(truth) = &req.perturb {
        let starts = truth
            .elements
            .iter()
            .zip(&req.words)
            .enumerate()
            .map(|(i, (e, word))| {
                let crop = word_crop(&word.word_box, w, h, config);
                let exact = RefinableParams::from_element(e, atlas, crop).tag("diffrender")?;
                let mut rng = ChaCha8Rng::seed_from_u64(req.seed);
                rng.set_stream(i as u64);
                Ok(perturb(&exact, e.font_index, config.top_k_fonts, &mut rng))
            })
            .collect::<Result<Vec<_>, StageError>>()?;
        return Ok((truth.background.clone(), starts));
    }

    // One background for all words, inpainted under the union of their masks.
    let masks = req
        .words
        .par_iter()
        .map(|word| estimate_mask(&req.image, &word.word_box).tag("initialize"))
        .collect::<Result<Vec<AlphaMap>, StageError>>()?;
    let mut union = AlphaMap::zeros(w, h);
    for m in &masks {
        for y in 0..h {
            for x in 0..w {
                union.set(x, y, union.get(x, y).max(m.get(x, y)));
            }
        }
    }
    let background = inpaint(&req.image, &union).tag("initialize")?;
    let starts = req
        .words
        .par_iter()
        .map(|word| {
            guess_with_background(
                &req.image,
                background.clone(),
                union.clone(),
                &word.word_box,
                &word.text,
                atlas,
                config,
            )
            .map(|g| g.params)
            .tag("initialize")
        })
        .collect::<Result<Vec<_>, StageError>>()?;
    Ok((background, starts))
}

/// Runs the whole pipeline. `on_progress` is called from worker threads.
pub fn derender(
    req: &DerenderRequest,
    atlas: &GlyphAtlas,
    on_progress: &(dyn Fn(Progress) + Sync),
) -> Result<DerenderOutput, StageError> {
    validate_request(req, atlas)?;
    let config = DiffConfig::for_atlas(atlas);
    let refine = RefineConfig {
        iterations: req.iterations,
        seed: req.seed,
        ..RefineConfig::default()
    };
    on_progress(Progress::Started {
        words: req.words.len(),
        iterations: req.iterations,
    });
    let (background, starts) = starting_points(req, atlas, &config)?;
    let names = atlas.font_names();
    let (w, h) = req.image.dims();

    let results = req
        .words
        .par_iter()
        .zip(&starts)
        .enumerate()
        .map(|(i, (word, start))| {
            let top = start.decode(&config).top_font;
            on_progress(Progress::Initialized {
                word: i,
                font_index: top,
                font_name: names[top].clone(),
            });
            let crop = start.crop;
            let cut = |img: &RasterImage| img.crop(crop.x0, crop.y0, crop.width(), crop.height()).tag("imaging");
            let bg = cut(&background)?;
            let target = cut(&req.image)?;
            let last = req.iterations;
            let mut observer = |it: usize, loss: f64| {
                if it % PROGRESS_STRIDE == 0 || it == last {
                    on_progress(Progress::Iteration { word: i, iteration: it, loss });
                }
            };
            let (refined, r) = ablate_observed(
                start,
                atlas,
                &bg,
                &target,
                &refine,
                &config,
                &BTreeSet::new(),
                &mut observer,
            )
            .tag("refine")?;
            let element = export_element(&refined, atlas, &config, Some(&word.word_box)).tag("export")?;
            let report = WordReport {
                word: i,
                text: word.text.clone(),
                font_index: element.font_index,
                font_name: names[element.font_index].clone(),
                initial_l1: r.initial_l1,
                final_l1: r.final_l1,
                initial_psnr: r.initial_psnr,
                final_psnr: r.final_psnr,
                best_iteration: r.best_iteration,
                iterations: r.loss_trace.len() - 1,
                wall_time_s: r.wall_time,
                aborted: r.aborted,
            };
            on_progress(Progress::WordDone { report: report.clone() });
            Ok((element, report))
        })
        .collect::<Result<Vec<_>, StageError>>()?;

    let (elements, report) = results.into_iter().unzip();
    let document = Document {
        canvas_width: w,
        canvas_height: h,
        background,
        elements,
    };
    document.validate(Some(atlas)).tag("export")?;
    Ok(DerenderOutput { document, report })
}
