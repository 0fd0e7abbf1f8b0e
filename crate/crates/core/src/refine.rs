//! Adam over the flat parameter vector with best-iterate tracking.

use std::collections::BTreeSet;
use std::time::Instant;

use crate::atlas::GlyphAtlas;
use crate::diffrender::{loss_and_gradients, reconstruct, DiffConfig, RefinableParams};
use crate::error::{Error, Result};
use crate::imaging::{psnr, RasterImage};

#[derive(Clone, Debug, PartialEq)]
pub struct RefineConfig {
    pub iterations: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Recorded for reproducibility; the optimizer itself draws no randomness.
    pub seed: u64,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self {
            iterations: 200,
            learning_rate: 0.02,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
        }
    }
}

impl RefineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::InvalidArgument("iterations must be >= 1".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::InvalidArgument("learning_rate must be > 0".into()));
        }
        for (name, b) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::InvalidArgument(format!("{name} must be in [0, 1)")));
            }
        }
        if !(self.adam_eps > 0.0) {
            return Err(Error::InvalidArgument("adam_eps must be > 0".into()));
        }
        Ok(())
    }
}

/// Parameter groups that can be held fixed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum FreezeGroup {
    /// Fill, border and shadow colors.
    Color,
    /// Font attention and glyph shape/placement warps.
    Font,
    /// Shadow visibility, blur and offset.
    Shadow,
    /// Border visibility and width.
    Border,
}

impl FreezeGroup {
    pub const ALL: [FreezeGroup; 4] = [Self::Color, Self::Font, Self::Shadow, Self::Border];

    pub fn spans(self) -> &'static [&'static str] {
        match self {
            Self::Color => &[
                "fill_color_logits",
                "border_color_logits",
                "shadow_color_logits",
            ],
            Self::Font => &["font_logits", "word_affine", "char_affines"],
            Self::Shadow => &[
                "shadow_visibility_logit",
                "shadow_blur_raw",
                "shadow_dx",
                "shadow_dy",
            ],
            Self::Border => &["border_visibility_logit", "border_bin_logits"],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Color => "color",
            Self::Font => "font",
            Self::Shadow => "shadow",
            Self::Border => "border",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|g| g.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown parameter group `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RefineReport {
    /// Loss of every evaluated iterate; entry 0 is the initialization.
    pub loss_trace: Vec<f64>,
    pub best_iteration: usize,
    pub initial_l1: f64,
    pub final_l1: f64,
    pub initial_psnr: f64,
    pub final_psnr: f64,
    pub wall_time: f64,
    /// Set when the run stopped early on a non-finite or degenerate state.
    pub aborted: Option<String>,
}

/// Plain refinement: every group is optimized.
pub fn run(
    initial: &RefinableParams,
    atlas: &GlyphAtlas,
    background: &RasterImage,
    target: &RasterImage,
    refine: &RefineConfig,
    diff: &DiffConfig,
) -> Result<(RefinableParams, RefineReport)> {
    ablate(initial, atlas, background, target, refine, diff, &BTreeSet::new())
}

/// Refinement with the listed groups receiving zero updates.
pub fn ablate(
    initial: &RefinableParams,
    atlas: &GlyphAtlas,
    background: &RasterImage,
    target: &RasterImage,
    refine: &RefineConfig,
    diff: &DiffConfig,
    frozen: &BTreeSet<FreezeGroup>,
) -> Result<(RefinableParams, RefineReport)> {
    ablate_observed(initial, atlas, background, target, refine, diff, frozen, &mut |_, _| {})
}

/// [`ablate`] that reports `(iteration, loss)` after every evaluation.
#[allow(clippy::too_many_arguments)]
pub fn ablate_observed(
    initial: &RefinableParams,
    atlas: &GlyphAtlas,
    background: &RasterImage,
    target: &RasterImage,
    refine: &RefineConfig,
    diff: &DiffConfig,
    frozen: &BTreeSet<FreezeGroup>,
    observer: &mut dyn FnMut(usize, f64),
) -> Result<(RefinableParams, RefineReport)> {
    refine.validate()?;
    let start = Instant::now();
    let mut trainable = vec![true; initial.num_values()];
    for (name, range) in initial.spans() {
        if frozen.iter().any(|g| g.spans().contains(&name.as_str())) {
            trainable[range].fill(false);
        }
    }

    let mut params = initial.clone();
    let mut x = params.to_flat();
    let mut m = vec![0.0; x.len()];
    let mut v = vec![0.0; x.len()];
    let mut trace = Vec::with_capacity(refine.iterations + 1);
    let mut best = (f64::INFINITY, 0usize, params.clone());
    let mut aborted = None;

    for it in 0..=refine.iterations {
        let (loss, grad) = match loss_and_gradients(&params, atlas, background, target, diff) {
            Ok(r) => r,
            Err(e) if it == 0 => return Err(e),
            Err(e) => {
                aborted = Some(format!("iteration {it}: {e}"));
                break;
            }
        };
        trace.push(loss);
        observer(it, loss);
        if loss < best.0 {
            best = (loss, it, params.clone());
        }
        if it == refine.iterations {
            break;
        }
        let t = (it + 1) as i32;
        let c1 = 1.0 - refine.adam_beta1.powi(t);
        let c2 = 1.0 - refine.adam_beta2.powi(t);
        for i in 0..x.len() {
            if !trainable[i] {
                continue;
            }
            let g = grad.values[i];
            m[i] = refine.adam_beta1 * m[i] + (1.0 - refine.adam_beta1) * g;
            v[i] = refine.adam_beta2 * v[i] + (1.0 - refine.adam_beta2) * g * g;
            let mh = m[i] / c1;
            let vh = v[i] / c2;
            x[i] -= refine.learning_rate * mh / (vh.sqrt() + refine.adam_eps);
        }
        params.set_flat(&x)?;
    }

    let (best_loss, best_iteration, best_params) = best;
    let initial_img = reconstruct(initial, atlas, background, diff)?;
    let final_img = reconstruct(&best_params, atlas, background, diff)?;
    let report = RefineReport {
        initial_l1: trace[0],
        final_l1: best_loss,
        initial_psnr: psnr(&initial_img, target)?,
        final_psnr: psnr(&final_img, target)?,
        loss_trace: trace,
        best_iteration,
        wall_time: start.elapsed().as_secs_f64(),
        aborted,
    };
    Ok((best_params, report))
}
