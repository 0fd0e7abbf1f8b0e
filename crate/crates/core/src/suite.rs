//! Reproducible evaluation cases: perturbed ground-truth words for
//! refinement and ablation studies, and soft random configurations for
//! gradient checks.

use std::collections::BTreeSet;

use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::atlas::GlyphAtlas;
use crate::compositor::{layout, render_document, Document, EffectSet, TextElement};
use crate::datagen::{generate, GenConfig, Sample};
use crate::diffrender::{
    color_to_logits, logits_to_color, sigma_to_raw, softplus, word_crop, DiffConfig,
    RefinableParams,
};
use crate::error::Result;
use crate::imaging::{RasterImage, Rect};
use crate::refine::{ablate, FreezeGroup, RefineConfig, RefineReport};

/// Seed of the frozen refinement suite.
pub const SUITE_SEED: u64 = 20_240_601;
/// Seed used once to calibrate the suite thresholds; disjoint from the suite.
pub const CALIBRATION_SEED: u64 = 777;
pub const SUITE_SIZE: usize = 50;

/// Per-channel fill color perturbation.
pub const FILL_PERTURBATION: f64 = 0.2;
/// Largest shadow offset and word translation perturbation, in pixels.
pub const OFFSET_PERTURBATION: f64 = 2.0;
/// Logit of the wrongly drawn font; the rest of its support sits at zero.
pub const WRONG_FONT_LOGIT: f64 = 2.0;
/// Logit of fonts outside the support.
pub const OUTSIDE_LOGIT: f64 = -10.0;

const PERTURB_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

#[derive(Clone, Debug)]
pub struct SuiteCase {
    pub index: usize,
    pub sample: Sample,
    pub truth: TextElement,
    pub word_box: Rect,
    /// Hard decode of the truth.
    pub truth_params: RefinableParams,
    /// Perturbed starting point.
    pub initial: RefinableParams,
    pub background: RasterImage,
    pub target: RasterImage,
}

/// Generator settings of the suite: one word per canvas.
pub fn suite_config(seed: u64, count: usize) -> GenConfig {
    GenConfig {
        seed,
        count,
        ..GenConfig::default()
    }
}

/// Applies the standard perturbation: every fill channel moved by 0.2 (sign
/// random, flipped if it would leave [0, 1]); shadow offset and word
/// translation moved uniformly within 2 px per axis; font attention put on a
/// wrong font drawn from a 20-font support that contains the truth.
pub fn perturb(
    truth: &RefinableParams,
    truth_font: usize,
    top_k: usize,
    rng: &mut ChaCha8Rng,
) -> RefinableParams {
    let mut p = truth.clone();
    let fill = logits_to_color(&truth.fill_color_logits).map(|c| {
        let c = c as f64;
        let s = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        let moved = c + s * FILL_PERTURBATION;
        let moved = if (0.0..=1.0).contains(&moved) { moved } else { c - s * FILL_PERTURBATION };
        moved as f32
    });
    p.fill_color_logits = color_to_logits(fill);
    let d = OFFSET_PERTURBATION;
    p.shadow_dx += rng.gen_range(-d..=d);
    p.shadow_dy += rng.gen_range(-d..=d);
    p.word_affine[2] += rng.gen_range(-d..=d);
    p.word_affine[5] += rng.gen_range(-d..=d);

    let n = truth.font_logits.len();
    if n > 1 {
        let others: Vec<usize> = (0..n).filter(|&f| f != truth_font).collect();
        let support = top_k.clamp(2, n);
        let picked = sample_indices(rng, others.len(), support - 1);
        p.font_logits = vec![OUTSIDE_LOGIT; n];
        p.font_logits[truth_font] = 0.0;
        let mut wrong = None;
        for (j, i) in picked.iter().enumerate() {
            p.font_logits[others[i]] = 0.0;
            if j == 0 {
                wrong = Some(others[i]);
            }
        }
        p.font_logits[wrong.expect("support holds a wrong font")] = WRONG_FONT_LOGIT;
    }
    p
}

/// Builds the perturbed suite from datagen samples with the given seed.
pub fn build_suite(
    atlas: &GlyphAtlas,
    seed: u64,
    count: usize,
    config: &DiffConfig,
) -> Result<Vec<SuiteCase>> {
    let samples = generate(&suite_config(seed, count), atlas)?;
    samples
        .into_iter()
        .enumerate()
        .map(|(index, sample)| {
            let truth = sample.truth.elements[0].clone();
            let word_box = sample.word_boxes[0];
            let (w, h) = sample.image.dims();
            let crop = word_crop(&word_box, w, h, config);
            let cut = |img: &RasterImage| img.crop(crop.x0, crop.y0, crop.width(), crop.height());
            let truth_params = RefinableParams::from_element(&truth, atlas, crop)?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ PERTURB_SALT);
            rng.set_stream(index as u64);
            let initial = perturb(&truth_params, truth.font_index, config.top_k_fonts, &mut rng);
            Ok(SuiteCase {
                index,
                background: cut(&sample.truth.background)?,
                target: cut(&sample.image)?,
                sample,
                truth,
                word_box,
                truth_params,
                initial,
            })
        })
        .collect()
}

/// Result of refining one suite case.
#[derive(Clone, Debug)]
pub struct CaseOutcome {
    pub index: usize,
    pub report: RefineReport,
    pub refined: RefinableParams,
    pub font_recovered: bool,
    /// Largest per-channel fill color error after refinement.
    pub fill_error: f64,
}

/// Refines every case (in parallel) with `frozen` groups held fixed.
pub fn run_suite(
    cases: &[SuiteCase],
    atlas: &GlyphAtlas,
    refine: &RefineConfig,
    config: &DiffConfig,
    frozen: &BTreeSet<FreezeGroup>,
) -> Result<Vec<CaseOutcome>> {
    cases
        .par_iter()
        .map(|c| {
            let (refined, report) =
                ablate(&c.initial, atlas, &c.background, &c.target, refine, config, frozen)?;
            let d = refined.decode(config);
            let fill_error = (0..3)
                .map(|k| (d.fill_color[k] as f64 - c.truth.effects.fill.color[k] as f64).abs())
                .fold(0.0, f64::max);
            Ok(CaseOutcome {
                index: c.index,
                font_recovered: d.top_font == c.truth.font_index,
                fill_error,
                report,
                refined,
            })
        })
        .collect()
}

/// A soft random configuration with background and target crops.
#[derive(Clone, Debug)]
pub struct GradientCase {
    pub params: RefinableParams,
    pub background: RasterImage,
    pub target: RasterImage,
}

const GRADIENT_TEXTS: [&str; 4] = ["aW", "gl", "MB.", "bA"];

fn styled(text: &str, font: usize, size: f64) -> TextElement {
    let mut effects = EffectSet::plain([0.95, 0.3, 0.1]);
    effects.border.visible = true;
    effects.border.width_bin = 2;
    effects.border.color = [0.1, 0.1, 0.5];
    effects.shadow.visible = true;
    effects.shadow.blur = 1.5;
    effects.shadow.offset_x = 2.0;
    effects.shadow.offset_y = 1.5;
    effects.shadow.color = [0.2, 0.2, 0.2];
    TextElement {
        text: text.into(),
        font_index: font,
        font_size: size,
        origin: [10.3, 50.7],
        per_char_offsets: None,
        effects,
    }
}

fn crisp_case(element: &TextElement, atlas: &GlyphAtlas, config: &DiffConfig) -> Result<GradientCase> {
    let (w, h) = (160, 80);
    let bg = RasterImage::filled(w, h, [0.85, 0.8, 0.75]);
    let doc = Document {
        canvas_width: w,
        canvas_height: h,
        background: bg.clone(),
        elements: vec![element.clone()],
    };
    let full = render_document(&doc, atlas, 1.0)?;
    let crop = word_crop(&layout(element, atlas)?.word_box, w, h, config);
    let cut = |img: &RasterImage| img.crop(crop.x0, crop.y0, crop.width(), crop.height());
    Ok(GradientCase {
        params: RefinableParams::from_element(element, atlas, crop)?,
        background: cut(&bg)?,
        target: cut(&full)?,
    })
}

/// Random soft parameters around `base`: mixed font attention, small
/// warps, arbitrary colors, visibilities near the midpoint.
pub fn random_soft_params(base: &RefinableParams, rng: &mut impl Rng) -> RefinableParams {
    let mut p = base.clone();
    for l in &mut p.font_logits {
        *l = rng.gen_range(-1.0..1.0);
    }
    for v in p.word_affine.iter_mut().chain(p.char_affines.iter_mut().flatten()) {
        *v = rng.gen_range(-0.8..0.8);
    }
    for c in p
        .fill_color_logits
        .iter_mut()
        .chain(p.border_color_logits.iter_mut())
        .chain(p.shadow_color_logits.iter_mut())
    {
        *c = rng.gen_range(-2.0..2.0);
    }
    p.border_visibility_logit = rng.gen_range(-0.05..0.05);
    p.shadow_visibility_logit = rng.gen_range(-0.05..0.05);
    for b in &mut p.border_bin_logits {
        *b = rng.gen_range(-1.0..1.0);
    }
    p.shadow_blur_raw = rng.gen_range(-0.5..1.0);
    p.shadow_dx = rng.gen_range(-2.5..2.5);
    p.shadow_dy = rng.gen_range(-2.5..2.5);
    p
}

/// Random configuration whose every bilinear sample sits half way between
/// lattice points, so central differences with steps up to about 1e-3 never
/// straddle a kink of the piecewise-linear interpolation: the layout is at
/// unit scale with identity warps, character translations align cell
/// samples to half-integers, shadow offsets are half-integers and 3 sigma
/// stays clear of an integer (the blur radius switch), and the top-k font
/// cut has a clear gap. The target is a flat image with channels at 0 or 1,
/// which keeps every residual on one side and the absolute value smooth.
pub fn lattice_gradient_case(
    atlas: &GlyphAtlas,
    config: &DiffConfig,
    seed: u64,
) -> Result<GradientCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let text = GRADIENT_TEXTS[rng.gen_range(0..GRADIENT_TEXTS.len())];
    let font = rng.gen_range(0..atlas.num_fonts());
    let c = crisp_case(&styled(text, font, atlas.em_px() as f64), atlas, config)?;
    let mut p = random_soft_params(&c.params, &mut rng);
    // Keep the top-k font cut clear of the step too.
    while !top_k_gap_clear(&p.font_logits, config.top_k_fonts, 0.01) {
        for l in &mut p.font_logits {
            *l = rng.gen_range(-1.0..1.0);
        }
    }
    p.word_affine = [0.0; 6];
    let half = atlas.cell_resolution() as f64 * 0.5;
    for (frame, a) in p.frames.iter().zip(&mut p.char_affines) {
        *a = [0.0; 6];
        for (axis, slot) in [(0, 2), (1, 5)] {
            a[slot] = (half - frame.center[axis]).rem_euclid(1.0) - 0.5;
        }
    }
    p.shadow_dx = p.shadow_dx.round() + 0.5;
    p.shadow_dy = p.shadow_dy.round() + 0.5;
    let sigma = softplus(p.shadow_blur_raw);
    if (3.0 * sigma - (3.0 * sigma).round()).abs() < 0.02 {
        p.shadow_blur_raw = sigma_to_raw(sigma + 0.02);
    }
    let (w, h) = c.background.dims();
    let target = RasterImage::filled(w, h, std::array::from_fn(|_| rng.gen_range(0..2) as f32));
    Ok(GradientCase {
        params: p,
        background: c.background,
        target,
    })
}

fn top_k_gap_clear(logits: &[f64], k: usize, gap: f64) -> bool {
    if k == 0 || k >= logits.len() {
        return true;
    }
    let mut sorted = logits.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    sorted[k - 1] - sorted[k] >= gap
}

/// Random soft configuration at a generic scale and position, compared
/// against the crisp render of the underlying element.
pub fn generic_gradient_case(
    atlas: &GlyphAtlas,
    config: &DiffConfig,
    seed: u64,
) -> Result<GradientCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let text = GRADIENT_TEXTS[rng.gen_range(0..GRADIENT_TEXTS.len())];
    let font = rng.gen_range(0..atlas.num_fonts());
    let size = rng.gen_range(30.0..50.0);
    let mut c = crisp_case(&styled(text, font, size), atlas, config)?;
    c.params = random_soft_params(&c.params, &mut rng);
    Ok(c)
}
