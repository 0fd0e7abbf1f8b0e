//! Differentiable reconstruction of one word and exact reverse-mode gradients
//! of the mean absolute error against a target crop.
//!
//! Forward pass, per character: attention-blended fill and border cells,
//! sampled through `word warp -> char warp -> cell mapping`; probabilistic
//! union across characters; shadow as a blurred bilinear translate of the
//! fill union; visibilities scale border and shadow alphas; source-over
//! composite (shadow, fill, border) on the background crop. Everything is
//! computed in f64 and the backward pass mirrors it step by step.

mod params;

pub use params::{
    color_to_logits, hard_logits, logits_to_color, sigma_to_raw, CharFrame, DecodedParams,
    GradientVector, RefinableParams, COLOR_CLAMP, HARD_LOGIT, HARD_VISIBILITY_LOGIT, SPAN_NAMES,
};

use crate::atlas::{GlyphAtlas, Variant, BORDER_BINS};
use crate::error::{Error, Result};
use crate::imaging::{
    convolve_separable, gaussian_kernel, AlphaMap, PixelRegion, RasterImage, Rect,
};

pub const DB_STEEPNESS: f64 = 50.0;
pub const TOP_K_FONTS: usize = 20;

/// Residuals this small are f64 round-off against an f32 target and get the
/// zero subgradient, like exact zeros.
const ZERO_RESIDUAL: f64 = 1e-9;

/// Warps whose linear part has |det| below this are rejected.
const MIN_AFFINE_DET: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct DiffConfig {
    pub alpha_resolution: usize,
    pub top_k_fonts: usize,
    pub db_steepness: f64,
    /// Crop padding as a fraction of the word box side, per axis.
    pub crop_padding: f64,
    /// Lower bound on the padding in pixels.
    pub min_crop_padding: f64,
}

impl Default for DiffConfig {
    fn default() -> Self {
        Self {
            alpha_resolution: crate::atlas::DEFAULT_CELL_RESOLUTION,
            top_k_fonts: TOP_K_FONTS,
            db_steepness: DB_STEEPNESS,
            crop_padding: 0.25,
            min_crop_padding: 6.0,
        }
    }
}

impl DiffConfig {
    /// Defaults adapted to the atlas (resolution, and top-k capped at the font count).
    pub fn for_atlas(atlas: &GlyphAtlas) -> Self {
        Self {
            alpha_resolution: atlas.cell_resolution(),
            top_k_fonts: TOP_K_FONTS.min(atlas.num_fonts()),
            ..Self::default()
        }
    }

    pub fn validate(&self, atlas: &GlyphAtlas) -> Result<()> {
        if self.top_k_fonts == 0 || self.top_k_fonts > atlas.num_fonts() {
            return Err(Error::InvalidArgument(format!(
                "top_k_fonts {} must be in 1..={}",
                self.top_k_fonts,
                atlas.num_fonts()
            )));
        }
        if self.alpha_resolution != atlas.cell_resolution() {
            return Err(Error::InvalidArgument(format!(
                "alpha_resolution {} but atlas cells are {}",
                self.alpha_resolution,
                atlas.cell_resolution()
            )));
        }
        if !(self.db_steepness.is_finite() && self.db_steepness > 0.0) {
            return Err(Error::InvalidArgument("db_steepness must be > 0".into()));
        }
        if !(self.crop_padding >= 0.0 && self.min_crop_padding >= 0.0) {
            return Err(Error::InvalidArgument("crop padding must be >= 0".into()));
        }
        Ok(())
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|&l| (l - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// `DB(σ(logit))` with `DB(x) = 1 / (1 + exp(-k (x - 0.5)))`.
pub fn db_visibility(logit: f64, k: f64) -> f64 {
    sigmoid(k * (sigmoid(logit) - 0.5))
}

/// Derivative of [`db_visibility`] with respect to the logit.
fn db_visibility_grad(logit: f64, k: f64) -> f64 {
    let s = sigmoid(logit);
    let v = sigmoid(k * (s - 0.5));
    k * v * (1.0 - v) * s * (1.0 - s)
}

/// Indices of the `k` largest logits, ties to the lower index, ascending.
fn top_k_indices(logits: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..logits.len()).collect();
    idx.sort_by(|&a, &b| logits[b].total_cmp(&logits[a]).then(a.cmp(&b)));
    idx.truncate(k.clamp(1, logits.len().max(1)));
    idx.sort_unstable();
    idx
}

/// Softmax restricted to the `top_k` largest logits; zero elsewhere.
pub fn font_attention(logits: &[f64], top_k: usize) -> Vec<f64> {
    let kept = top_k_indices(logits, top_k);
    let probs = softmax(&kept.iter().map(|&i| logits[i]).collect::<Vec<_>>());
    let mut out = vec![0.0; logits.len()];
    for (&i, p) in kept.iter().zip(probs) {
        out[i] = p;
    }
    out
}

/// Attention-weighted sum of one glyph's stored maps over all fonts.
pub fn blended_glyph(
    atlas: &GlyphAtlas,
    attention: &[f64],
    glyph: char,
    variant: Variant,
) -> Result<AlphaMap> {
    if attention.len() != atlas.num_fonts() {
        return Err(Error::DimensionMismatch {
            expected: (atlas.num_fonts(), 1),
            actual: (attention.len(), 1),
        });
    }
    let g = atlas.glyph_index(glyph)?;
    let res = atlas.cell_resolution();
    let mut acc = vec![0.0f64; res * res];
    for (f, &w) in attention.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        let map = atlas.entry(f, g)?.variant(variant)?;
        for (a, &v) in acc.iter_mut().zip(map.data()) {
            *a += w * v as f64;
        }
    }
    AlphaMap::from_data_clamped(res, res, acc.into_iter().map(|v| v as f32).collect())
}

/// Word box padded per axis, rounded outward to whole pixels, clipped.
pub fn word_crop(word_box: &Rect, width: usize, height: usize, config: &DiffConfig) -> PixelRegion {
    let px = (word_box.width() * config.crop_padding).max(config.min_crop_padding);
    let py = (word_box.height() * config.crop_padding).max(config.min_crop_padding);
    PixelRegion::covering(
        &Rect::new(
            word_box.x0 - px,
            word_box.y0 - py,
            word_box.x1 + px,
            word_box.y1 + py,
        ),
        width,
        height,
    )
}

#[inline]
fn fetch(data: &[f64], w: usize, h: usize, x: isize, y: isize) -> f64 {
    if x < 0 || y < 0 || x >= w as isize || y >= h as isize {
        0.0
    } else {
        data[y as usize * w + x as usize]
    }
}

/// Bilinear sample with zero outside, plus its partials in `sx` and `sy`.
#[inline]
fn bilinear(data: &[f64], w: usize, h: usize, sx: f64, sy: f64) -> (f64, f64, f64) {
    let fx = sx.floor();
    let fy = sy.floor();
    let (tx, ty) = (sx - fx, sy - fy);
    let (x0, y0) = (fx as isize, fy as isize);
    let v00 = fetch(data, w, h, x0, y0);
    let v10 = fetch(data, w, h, x0 + 1, y0);
    let v01 = fetch(data, w, h, x0, y0 + 1);
    let v11 = fetch(data, w, h, x0 + 1, y0 + 1);
    let top = v00 + (v10 - v00) * tx;
    let bottom = v01 + (v11 - v01) * tx;
    let value = top + (bottom - top) * ty;
    let dx = (v10 - v00) * (1.0 - ty) + (v11 - v01) * ty;
    (value, dx, bottom - top)
}

/// Adjoint of [`bilinear`] with respect to the sampled data.
#[inline]
fn bilinear_scatter(grad: &mut [f64], w: usize, h: usize, sx: f64, sy: f64, g: f64) {
    let fx = sx.floor();
    let fy = sy.floor();
    let (tx, ty) = (sx - fx, sy - fy);
    let (x0, y0) = (fx as isize, fy as isize);
    for (dx, dy, wgt) in [
        (0, 0, (1.0 - tx) * (1.0 - ty)),
        (1, 0, tx * (1.0 - ty)),
        (0, 1, (1.0 - tx) * ty),
        (1, 1, tx * ty),
    ] {
        let (x, y) = (x0 + dx, y0 + dy);
        if x >= 0 && y >= 0 && (x as usize) < w && (y as usize) < h {
            grad[y as usize * w + x as usize] += g * wgt;
        }
    }
}

/// `P -> M (P - C) + C - t` with `M = I + D / L`.
#[derive(Clone, Copy, Debug)]
struct Warp {
    m: [[f64; 2]; 2],
    center: [f64; 2],
    t: [f64; 2],
    inv_extent: f64,
}

impl Warp {
    fn new(affine: &[f64; 6], center: [f64; 2], extent: f64, context: &str) -> Result<Self> {
        let inv = 1.0 / extent;
        let m = [
            [1.0 + affine[0] * inv, affine[1] * inv],
            [affine[3] * inv, 1.0 + affine[4] * inv],
        ];
        let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
        if !(det.abs() >= MIN_AFFINE_DET) {
            return Err(Error::DegenerateAffine {
                det,
                context: context.to_string(),
            });
        }
        Ok(Self {
            m,
            center,
            t: [affine[2], affine[5]],
            inv_extent: inv,
        })
    }

    #[inline]
    fn apply(&self, p: [f64; 2]) -> [f64; 2] {
        let q = [p[0] - self.center[0], p[1] - self.center[1]];
        [
            self.m[0][0] * q[0] + self.m[0][1] * q[1] + self.center[0] - self.t[0],
            self.m[1][0] * q[0] + self.m[1][1] * q[1] + self.center[1] - self.t[1],
        ]
    }

    /// Accumulates parameter gradients for output gradient `g` at input `p`
    /// and returns the gradient with respect to `p`.
    #[inline]
    fn backward(&self, p: [f64; 2], g: [f64; 2], grad: &mut [f64]) -> [f64; 2] {
        let q = [p[0] - self.center[0], p[1] - self.center[1]];
        grad[0] += g[0] * q[0] * self.inv_extent;
        grad[1] += g[0] * q[1] * self.inv_extent;
        grad[2] -= g[0];
        grad[3] += g[1] * q[0] * self.inv_extent;
        grad[4] += g[1] * q[1] * self.inv_extent;
        grad[5] -= g[1];
        [
            self.m[0][0] * g[0] + self.m[1][0] * g[1],
            self.m[0][1] * g[0] + self.m[1][1] * g[1],
        ]
    }
}

/// Kernel taps and their derivative with respect to sigma (radius held fixed).
fn gaussian_kernel_grad(sigma: f64) -> (Vec<f64>, Vec<f64>) {
    let taps = gaussian_kernel(sigma);
    let r = (taps.len() / 2) as isize;
    let s3 = sigma * sigma * sigma;
    let sq: Vec<f64> = (-r..=r).map(|i| (i * i) as f64 / s3).collect();
    let mean: f64 = taps.iter().zip(&sq).map(|(w, s)| w * s).sum();
    let d = taps.iter().zip(&sq).map(|(w, s)| w * (s - mean)).collect();
    (taps, d)
}

struct CharState {
    glyph: usize,
    warp: Warp,
    /// Crop pixels per cell pixel.
    scale: f64,
    center: [f64; 2],
    fill_cell: Vec<f64>,
    border_cell: Vec<f64>,
    /// Per-pixel sampled fill and border alphas.
    z: Vec<f64>,
    b: Vec<f64>,
}

struct Forward {
    w: usize,
    h: usize,
    res: usize,
    kept: Vec<usize>,
    attention: Vec<f64>,
    bins: Vec<f64>,
    word_warp: Warp,
    chars: Vec<CharState>,
    v_border: f64,
    v_shadow: f64,
    sigma: f64,
    /// shadow, fill, border
    colors: [[f64; 3]; 3],
    fill: Vec<f64>,
    border: Vec<f64>,
    shadow_src: Vec<f64>,
    shadow: Vec<f64>,
    kernel: Vec<f64>,
    /// Background and the canvas after each of the three layers.
    stages: [Vec<f64>; 4],
}

fn rings(atlas: &GlyphAtlas, font: usize, glyph: usize) -> Result<(&[f32], Vec<&[f32]>)> {
    let e = atlas.entry(font, glyph)?;
    Ok((e.fill.data(), e.border.iter().map(|m| m.data()).collect()))
}

#[inline]
fn ring(dilated: f32, fill: f32) -> f64 {
    (dilated - fill).max(0.0) as f64
}

impl Forward {
    fn run(
        params: &RefinableParams,
        atlas: &GlyphAtlas,
        background: &RasterImage,
        config: &DiffConfig,
    ) -> Result<Self> {
        config.validate(atlas)?;
        params.check_consistent(atlas)?;
        let (w, h) = background.dims();
        if (params.crop.width(), params.crop.height()) != (w, h) {
            return Err(Error::DimensionMismatch {
                expected: (params.crop.width(), params.crop.height()),
                actual: (w, h),
            });
        }
        let res = atlas.cell_resolution();
        let half = res as f64 * 0.5;
        let n = w * h;

        let kept = top_k_indices(&params.font_logits, config.top_k_fonts);
        let attention = softmax(&kept.iter().map(|&i| params.font_logits[i]).collect::<Vec<_>>());
        let bins = softmax(&params.border_bin_logits);
        let word_warp = Warp::new(
            &params.word_affine,
            params.word_center,
            params.word_extent,
            "word_affine",
        )?;

        let mut fill_t = vec![1.0; n];
        let mut border_t = vec![1.0; n];
        let mut chars = Vec::with_capacity(params.num_chars());
        for (i, (&glyph, frame)) in params.glyphs.iter().zip(&params.frames).enumerate() {
            let warp = Warp::new(
                &params.char_affines[i],
                frame.center,
                half * frame.scale,
                &format!("char_affines[{i}]"),
            )?;
            let mut fill_cell = vec![0.0; res * res];
            let mut border_cell = vec![0.0; res * res];
            for (&f, &a) in kept.iter().zip(&attention) {
                let (zf, dil) = rings(atlas, f, glyph)?;
                for (j, &z) in zf.iter().enumerate() {
                    fill_cell[j] += a * z as f64;
                    let mut r = 0.0;
                    for (b, d) in dil.iter().enumerate() {
                        r += bins[b] * ring(d[j], z);
                    }
                    border_cell[j] += a * r;
                }
            }
            let mut z = vec![0.0; n];
            let mut b = vec![0.0; n];
            let inv_k = 1.0 / frame.scale;
            for y in 0..h {
                for x in 0..w {
                    let p1 = word_warp.apply([x as f64 + 0.5, y as f64 + 0.5]);
                    let p2 = warp.apply(p1);
                    let u = half - 0.5 + (p2[0] - frame.center[0]) * inv_k;
                    let v = half - 0.5 + (p2[1] - frame.center[1]) * inv_k;
                    if u <= -1.0 || v <= -1.0 || u >= res as f64 || v >= res as f64 {
                        continue;
                    }
                    let k = y * w + x;
                    z[k] = bilinear(&fill_cell, res, res, u, v).0;
                    b[k] = bilinear(&border_cell, res, res, u, v).0;
                    fill_t[k] *= 1.0 - z[k];
                    border_t[k] *= 1.0 - b[k];
                }
            }
            chars.push(CharState {
                glyph,
                warp,
                scale: frame.scale,
                center: frame.center,
                fill_cell,
                border_cell,
                z,
                b,
            });
        }
        let fill: Vec<f64> = fill_t.iter().map(|t| 1.0 - t).collect();
        let border: Vec<f64> = border_t.iter().map(|t| 1.0 - t).collect();

        let sigma = softplus(params.shadow_blur_raw);
        let kernel = gaussian_kernel(sigma);
        let mut shadow_src = vec![0.0; n];
        for y in 0..h {
            for x in 0..w {
                shadow_src[y * w + x] = bilinear(
                    &fill,
                    w,
                    h,
                    x as f64 - params.shadow_dx,
                    y as f64 - params.shadow_dy,
                )
                .0;
            }
        }
        let shadow = convolve_separable(&shadow_src, w, h, &kernel, &kernel);

        let k = config.db_steepness;
        let v_border = db_visibility(params.border_visibility_logit, k);
        let v_shadow = db_visibility(params.shadow_visibility_logit, k);
        let colors = [
            params.shadow_color_logits.map(sigmoid),
            params.fill_color_logits.map(sigmoid),
            params.border_color_logits.map(sigmoid),
        ];

        let bg: Vec<f64> = background.data().iter().map(|&v| v as f64).collect();
        let mut stages = [bg.clone(), bg.clone(), bg.clone(), bg];
        for layer in 0..3 {
            let (prev, next) = stages.split_at_mut(layer + 1);
            let (src, dst) = (&prev[layer], &mut next[0]);
            for p in 0..n {
                let a = match layer {
                    0 => v_shadow * shadow[p],
                    1 => fill[p],
                    _ => v_border * border[p],
                };
                for ch in 0..3 {
                    dst[p * 3 + ch] = (1.0 - a) * src[p * 3 + ch] + a * colors[layer][ch];
                }
            }
        }

        Ok(Self {
            w,
            h,
            res,
            kept,
            attention,
            bins,
            word_warp,
            chars,
            v_border,
            v_shadow,
            sigma,
            colors,
            fill,
            border,
            shadow_src,
            shadow,
            kernel,
            stages,
        })
    }

    fn output(&self) -> &[f64] {
        &self.stages[3]
    }

    fn loss(&self, target: &RasterImage) -> f64 {
        let out = self.output();
        let total: f64 = out
            .iter()
            .zip(target.data())
            .map(|(r, &t)| (r - t as f64).abs())
            .sum();
        total / out.len() as f64
    }

    fn backward(
        &self,
        params: &RefinableParams,
        atlas: &GlyphAtlas,
        target: &RasterImage,
        config: &DiffConfig,
    ) -> Result<Vec<f64>> {
        let (w, h, n, res) = (self.w, self.h, self.w * self.h, self.res);
        let half = res as f64 * 0.5;
        let spans = params.spans();
        let span = |name: &str| spans.iter().find(|(s, _)| s == name).unwrap().1.clone();
        let mut grad = vec![0.0; params.num_values()];

        // d loss / d output
        let out = self.output();
        let scale = 1.0 / out.len() as f64;
        let mut g_out: Vec<f64> = out
            .iter()
            .zip(target.data())
            .map(|(r, &t)| {
                let d = r - t as f64;
                if d > ZERO_RESIDUAL {
                    scale
                } else if d < -ZERO_RESIDUAL {
                    -scale
                } else {
                    0.0
                }
            })
            .collect();

        // composite, top layer first
        let mut g_alpha = [vec![0.0; n], vec![0.0; n], vec![0.0; n]];
        let mut g_color = [[0.0f64; 3]; 3];
        for layer in (0..3).rev() {
            let below = &self.stages[layer];
            for p in 0..n {
                let a = match layer {
                    0 => self.v_shadow * self.shadow[p],
                    1 => self.fill[p],
                    _ => self.v_border * self.border[p],
                };
                let mut ga = 0.0;
                for ch in 0..3 {
                    let g = g_out[p * 3 + ch];
                    ga += g * (self.colors[layer][ch] - below[p * 3 + ch]);
                    g_color[layer][ch] += g * a;
                    g_out[p * 3 + ch] = (1.0 - a) * g;
                }
                g_alpha[layer][p] = ga;
            }
        }
        for (layer, name) in [
            (0, "shadow_color_logits"),
            (1, "fill_color_logits"),
            (2, "border_color_logits"),
        ] {
            for (ch, i) in span(name).enumerate() {
                let c = self.colors[layer][ch];
                grad[i] = g_color[layer][ch] * c * (1.0 - c);
            }
        }

        // visibilities
        let k = config.db_steepness;
        let g_vs: f64 = g_alpha[0].iter().zip(&self.shadow).map(|(g, s)| g * s).sum();
        let g_vb: f64 = g_alpha[2].iter().zip(&self.border).map(|(g, s)| g * s).sum();
        grad[span("shadow_visibility_logit").start] =
            g_vs * db_visibility_grad(params.shadow_visibility_logit, k);
        grad[span("border_visibility_logit").start] =
            g_vb * db_visibility_grad(params.border_visibility_logit, k);
        let g_shadow: Vec<f64> = g_alpha[0].iter().map(|g| g * self.v_shadow).collect();
        let g_border: Vec<f64> = g_alpha[2].iter().map(|g| g * self.v_border).collect();
        let mut g_fill = std::mem::take(&mut g_alpha[1]);

        // blur: the zero-padded symmetric convolution is self-adjoint
        let g_src = convolve_separable(&g_shadow, w, h, &self.kernel, &self.kernel);
        let (_, dk) = gaussian_kernel_grad(self.sigma);
        let ds = {
            let a = convolve_separable(&self.shadow_src, w, h, &dk, &self.kernel);
            let b = convolve_separable(&self.shadow_src, w, h, &self.kernel, &dk);
            a.iter().zip(&b).map(|(a, b)| a + b).collect::<Vec<_>>()
        };
        let g_sigma: f64 = ds.iter().zip(&g_shadow).map(|(d, g)| d * g).sum();
        grad[span("shadow_blur_raw").start] = g_sigma * sigmoid(params.shadow_blur_raw);

        // translate
        let (mut g_dx, mut g_dy) = (0.0, 0.0);
        for y in 0..h {
            for x in 0..w {
                let g = g_src[y * w + x];
                if g == 0.0 {
                    continue;
                }
                let sx = x as f64 - params.shadow_dx;
                let sy = y as f64 - params.shadow_dy;
                let (_, fx, fy) = bilinear(&self.fill, w, h, sx, sy);
                g_dx -= g * fx;
                g_dy -= g * fy;
                bilinear_scatter(&mut g_fill, w, h, sx, sy, g);
            }
        }
        grad[span("shadow_dx").start] = g_dx;
        grad[span("shadow_dy").start] = g_dy;

        // probabilistic unions: d(1 - Π(1 - z_c))/dz_c = Π_{c' != c}(1 - z_c')
        let nc = self.chars.len();
        let mut g_z = vec![vec![0.0; n]; nc];
        let mut g_b = vec![vec![0.0; n]; nc];
        let mut prefix = vec![0.0; nc + 1];
        for p in 0..n {
            for (g_u, per_char, grads) in [
                (g_fill[p], 0, &mut g_z),
                (g_border[p], 1, &mut g_b),
            ] {
                if g_u == 0.0 {
                    continue;
                }
                let val = |c: usize| {
                    if per_char == 0 {
                        self.chars[c].z[p]
                    } else {
                        self.chars[c].b[p]
                    }
                };
                prefix[0] = 1.0;
                for c in 0..nc {
                    prefix[c + 1] = prefix[c] * (1.0 - val(c));
                }
                let mut suffix = 1.0;
                for c in (0..nc).rev() {
                    grads[c][p] = g_u * prefix[c] * suffix;
                    suffix *= 1.0 - val(c);
                }
            }
        }

        // per-character sampling and warps
        let word_span = span("word_affine");
        let char_span = span("char_affines");
        let mut g_word = [0.0; 6];
        let mut g_attention = vec![0.0; self.kept.len()];
        let mut g_bins = [0.0; BORDER_BINS];
        for (c, st) in self.chars.iter().enumerate() {
            let mut g_fill_cell = vec![0.0; res * res];
            let mut g_border_cell = vec![0.0; res * res];
            let mut g_char = [0.0; 6];
            let inv_k = 1.0 / st.scale;
            for y in 0..h {
                for x in 0..w {
                    let p = y * w + x;
                    let (gz, gb) = (g_z[c][p], g_b[c][p]);
                    if gz == 0.0 && gb == 0.0 {
                        continue;
                    }
                    let p0 = [x as f64 + 0.5, y as f64 + 0.5];
                    let p1 = self.word_warp.apply(p0);
                    let p2 = st.warp.apply(p1);
                    let u = half - 0.5 + (p2[0] - st.center[0]) * inv_k;
                    let v = half - 0.5 + (p2[1] - st.center[1]) * inv_k;
                    if u <= -1.0 || v <= -1.0 || u >= res as f64 || v >= res as f64 {
                        continue;
                    }
                    let (_, zu, zv) = bilinear(&st.fill_cell, res, res, u, v);
                    let (_, bu, bv) = bilinear(&st.border_cell, res, res, u, v);
                    bilinear_scatter(&mut g_fill_cell, res, res, u, v, gz);
                    bilinear_scatter(&mut g_border_cell, res, res, u, v, gb);
                    let g_p2 = [(gz * zu + gb * bu) * inv_k, (gz * zv + gb * bv) * inv_k];
                    let g_p1 = st.warp.backward(p1, g_p2, &mut g_char);
                    self.word_warp.backward(p0, g_p1, &mut g_word);
                }
            }
            for (j, g) in g_char.iter().enumerate() {
                grad[char_span.start + 6 * c + j] = *g;
            }
            // attention-blended cells
            for (ki, &f) in self.kept.iter().enumerate() {
                let (zf, dil) = rings(atlas, f, st.glyph)?;
                let a = self.attention[ki];
                let mut ga = 0.0;
                let mut gb_font = [0.0; BORDER_BINS];
                for (j, &z) in zf.iter().enumerate() {
                    let (gf, gbc) = (g_fill_cell[j], g_border_cell[j]);
                    ga += gf * z as f64;
                    if gbc != 0.0 {
                        for (b, d) in dil.iter().enumerate() {
                            gb_font[b] += gbc * ring(d[j], z);
                        }
                    }
                }
                for b in 0..BORDER_BINS {
                    ga += self.bins[b] * gb_font[b];
                    g_bins[b] += a * gb_font[b];
                }
                g_attention[ki] += ga;
            }
        }
        for (j, g) in g_word.iter().enumerate() {
            grad[word_span.start + j] = *g;
        }

        // softmaxes
        let font_span = span("font_logits");
        let dot: f64 = self.attention.iter().zip(&g_attention).map(|(a, g)| a * g).sum();
        for (ki, &f) in self.kept.iter().enumerate() {
            grad[font_span.start + f] = self.attention[ki] * (g_attention[ki] - dot);
        }
        let bin_span = span("border_bin_logits");
        let dot: f64 = self.bins.iter().zip(&g_bins).map(|(a, g)| a * g).sum();
        for b in 0..BORDER_BINS {
            grad[bin_span.start + b] = self.bins[b] * (g_bins[b] - dot);
        }
        Ok(grad)
    }
}

/// Renders the soft reconstruction over `background` (the crop's background).
pub fn reconstruct(
    params: &RefinableParams,
    atlas: &GlyphAtlas,
    background: &RasterImage,
    config: &DiffConfig,
) -> Result<RasterImage> {
    let f = Forward::run(params, atlas, background, config)?;
    RasterImage::from_data_clamped(
        f.w,
        f.h,
        f.output().iter().map(|&v| v as f32).collect(),
    )
}

fn check_target(background: &RasterImage, target: &RasterImage) -> Result<()> {
    if background.dims() != target.dims() {
        return Err(Error::DimensionMismatch {
            expected: background.dims(),
            actual: target.dims(),
        });
    }
    Ok(())
}

/// Mean absolute error of the reconstruction against `target`.
pub fn loss(
    params: &RefinableParams,
    atlas: &GlyphAtlas,
    background: &RasterImage,
    target: &RasterImage,
    config: &DiffConfig,
) -> Result<f64> {
    check_target(background, target)?;
    let l = Forward::run(params, atlas, background, config)?.loss(target);
    if !l.is_finite() {
        return Err(Error::NonFinite("loss".into()));
    }
    Ok(l)
}

/// Loss and its exact gradient with respect to every optimized parameter.
pub fn loss_and_gradients(
    params: &RefinableParams,
    atlas: &GlyphAtlas,
    background: &RasterImage,
    target: &RasterImage,
    config: &DiffConfig,
) -> Result<(f64, GradientVector)> {
    check_target(background, target)?;
    let f = Forward::run(params, atlas, background, config)?;
    let l = f.loss(target);
    if !l.is_finite() {
        return Err(Error::NonFinite("loss".into()));
    }
    let values = f.backward(params, atlas, target, config)?;
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(params.span_name(i).to_string()));
    }
    Ok((
        l,
        GradientVector {
            values,
            index_map: params.spans(),
        },
    ))
}

/// Outcome of comparing analytic gradients with central differences.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientCheck {
    /// Largest `|analytic − fd| / max(|analytic|, |fd|)` over checked coordinates.
    pub worst_relative_error: f64,
    pub worst_coordinate: String,
    /// Coordinates with `|analytic| > floor` that were compared.
    pub checked: usize,
    pub skipped: usize,
}

/// Central-difference check of every coordinate with `|grad| > floor`.
pub fn check_gradients(
    params: &RefinableParams,
    atlas: &GlyphAtlas,
    background: &RasterImage,
    target: &RasterImage,
    config: &DiffConfig,
    step: f64,
    floor: f64,
) -> Result<GradientCheck> {
    let (_, g) = loss_and_gradients(params, atlas, background, target, config)?;
    let base = params.to_flat();
    let mut probe = params.clone();
    let mut out = GradientCheck {
        worst_relative_error: 0.0,
        worst_coordinate: String::new(),
        checked: 0,
        skipped: 0,
    };
    for i in 0..base.len() {
        let a = g.values[i];
        if a.abs() <= floor {
            out.skipped += 1;
            continue;
        }
        let mut v = base.clone();
        v[i] = base[i] + step;
        probe.set_flat(&v)?;
        let plus = loss(&probe, atlas, background, target, config)?;
        v[i] = base[i] - step;
        probe.set_flat(&v)?;
        let minus = loss(&probe, atlas, background, target, config)?;
        let fd = (plus - minus) / (2.0 * step);
        let rel = (a - fd).abs() / a.abs().max(fd.abs());
        out.checked += 1;
        if rel > out.worst_relative_error {
            out.worst_relative_error = rel;
            out.worst_coordinate = format!(
                "{}[{}]: analytic {a:.6e}, central difference {fd:.6e}",
                params.span_name(i),
                i
            );
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests;
