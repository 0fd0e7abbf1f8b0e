//! Per-effect color recovery by inverting source-over compositing.
//!
//! Layers are peeled top-down (border, fill, shadow). Each layer's color is
//! the mode of the per-pixel inversions `y = (c − (1−α)·c_ref)/α`, where the
//! observation has the already-estimated upper layers removed and the
//! reference is the background with the estimated lower layers composited
//! on. The first pass has no lower-layer estimates and uses the bare
//! background; later passes refine with the full stack.

use crate::compositor::EffectAlphas;
use crate::error::{Error, Result};
use crate::imaging::{AlphaMap, PixelRegion, RasterImage, Rgb};

/// Pixels with alpha at or below this are excluded from inversion.
pub const OBSERVABILITY_EPS: f32 = 0.05;

pub const HISTOGRAM_BINS: usize = 32;

const PEEL_PASSES: usize = 4;

#[derive(Clone, Debug, PartialEq)]
pub struct ColorEstimate {
    pub color: Rgb,
    pub support_pixels: usize,
    /// Fraction of samples in the modal bin.
    pub histogram_peak_mass: f32,
}

fn check_inputs(
    c: &RasterImage,
    c_bg: &RasterImage,
    alphas: &[&AlphaMap],
    region: &PixelRegion,
) -> Result<()> {
    if c_bg.dims() != c.dims() {
        return Err(Error::DimensionMismatch {
            expected: c.dims(),
            actual: c_bg.dims(),
        });
    }
    for a in alphas {
        if a.dims() != c.dims() {
            return Err(Error::DimensionMismatch {
                expected: c.dims(),
                actual: a.dims(),
            });
        }
    }
    if !region.fits(c.width(), c.height()) {
        return Err(Error::InvalidArgument(format!(
            "region {region:?} outside {}x{} image",
            c.width(),
            c.height()
        )));
    }
    Ok(())
}

fn px(img: &RasterImage, x: usize, y: usize) -> [f64; 3] {
    img.pixel(x, y).map(|v| v as f64)
}

fn invert(obs: [f64; 3], reference: [f64; 3], a: f64) -> Rgb {
    std::array::from_fn(|ch| ((obs[ch] - (1.0 - a) * reference[ch]) / a).clamp(0.0, 1.0) as f32)
}

/// Per-pixel layer colors for a single composited layer.
pub fn invert_layer(
    c: &RasterImage,
    c_bg: &RasterImage,
    alpha: &AlphaMap,
    region: &PixelRegion,
) -> Result<Vec<((usize, usize), Rgb)>> {
    check_inputs(c, c_bg, &[alpha], region)?;
    let out: Vec<_> = region
        .pixels()
        .filter_map(|(x, y)| {
            let a = alpha.get(x, y);
            (a > OBSERVABILITY_EPS)
                .then(|| ((x, y), invert(px(c, x, y), px(c_bg, x, y), a as f64)))
        })
        .collect();
    if out.is_empty() {
        return Err(Error::NotObservable {
            threshold: OBSERVABILITY_EPS,
        });
    }
    Ok(out)
}

fn bin_of(v: f32) -> usize {
    ((v * HISTOGRAM_BINS as f32) as usize).min(HISTOGRAM_BINS - 1)
}

/// Centroid of the modal cell of a 32³ joint histogram.
pub fn modal_color(samples: &[Rgb]) -> Result<ColorEstimate> {
    if samples.is_empty() {
        return Err(Error::Empty("color samples"));
    }
    let n = HISTOGRAM_BINS;
    let mut counts = vec![0u32; n * n * n];
    let mut sums = vec![[0.0f64; 3]; n * n * n];
    for s in samples {
        let key = (bin_of(s[0]) * n + bin_of(s[1])) * n + bin_of(s[2]);
        counts[key] += 1;
        for ch in 0..3 {
            sums[key][ch] += s[ch] as f64;
        }
    }
    // first maximum wins, i.e. lowest bin index among equal counts
    let mut best = 0;
    for (k, &count) in counts.iter().enumerate() {
        if count > counts[best] {
            best = k;
        }
    }
    let count = counts[best] as f64;
    Ok(ColorEstimate {
        color: sums[best].map(|v| (v / count) as f32),
        support_pixels: counts[best] as usize,
        histogram_peak_mass: (count / samples.len() as f64) as f32,
    })
}

/// Which optional effects are present. The fill is always present.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Visibility {
    pub shadow: bool,
    pub border: bool,
}

/// Recovered colors; `None` marks an effect that was skipped or not observable.
#[derive(Clone, Debug, PartialEq)]
pub struct DecomposedColors {
    pub shadow: Option<ColorEstimate>,
    pub fill: Option<ColorEstimate>,
    pub border: Option<ColorEstimate>,
}

pub fn decompose_colors(
    image: &RasterImage,
    background: &RasterImage,
    alphas: &EffectAlphas,
    visible: Visibility,
    region: &PixelRegion,
) -> Result<DecomposedColors> {
    check_inputs(
        image,
        background,
        &[&alphas.shadow, &alphas.fill, &alphas.border],
        region,
    )?;
    // bottom to top: shadow, fill, border
    let layers = [&alphas.shadow, &alphas.fill, &alphas.border];
    let active = [visible.shadow, true, visible.border];
    let mut est: [Option<ColorEstimate>; 3] = [None, None, None];
    let mut samples = Vec::with_capacity(region.width() * region.height());

    for _ in 0..PEEL_PASSES {
        let before: Vec<Option<Rgb>> = est.iter().map(|e| e.as_ref().map(|e| e.color)).collect();
        for k in (0..3).rev().filter(|&k| active[k]) {
            samples.clear();
            'pixels: for (x, y) in region.pixels() {
                let a = layers[k].get(x, y);
                if a <= OBSERVABILITY_EPS {
                    continue;
                }
                let mut obs = px(image, x, y);
                for j in (k + 1..3).rev() {
                    let (true, Some(e)) = (active[j], &est[j]) else {
                        continue;
                    };
                    let aj = layers[j].get(x, y) as f64;
                    if aj == 0.0 {
                        continue;
                    }
                    if 1.0 - aj <= OBSERVABILITY_EPS as f64 {
                        continue 'pixels;
                    }
                    for ch in 0..3 {
                        obs[ch] = (obs[ch] - aj * e.color[ch] as f64) / (1.0 - aj);
                    }
                }
                let mut reference = px(background, x, y);
                for j in 0..k {
                    let (true, Some(e)) = (active[j], &est[j]) else {
                        continue;
                    };
                    let aj = layers[j].get(x, y) as f64;
                    for ch in 0..3 {
                        reference[ch] = (1.0 - aj) * reference[ch] + aj * e.color[ch] as f64;
                    }
                }
                samples.push(invert(obs, reference, a as f64));
            }
            est[k] = modal_color(&samples).ok();
        }
        let after: Vec<Option<Rgb>> = est.iter().map(|e| e.as_ref().map(|e| e.color)).collect();
        if before == after {
            break;
        }
    }
    let [shadow, fill, border] = est;
    Ok(DecomposedColors {
        shadow,
        fill,
        border,
    })
}
