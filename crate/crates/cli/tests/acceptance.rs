//! Acceptance run: one PASS/FAIL line per criterion. Exits non-zero when any
//! criterion fails.

use std::collections::BTreeSet;
use std::time::Instant;

use derender_cli::ops::{edit_value, render_png};
use derender_core::atlas::{build_bundled_atlas, GlyphAtlas};
use derender_core::compositor::{
    composite, layout, render_document, render_effect_alphas, Document, TextElement,
};
use derender_core::datagen::{generate, write_corpus, GenConfig};
use derender_core::decompose::{decompose_colors, invert_layer, Visibility, OBSERVABILITY_EPS};
use derender_core::diffrender::{check_gradients, reconstruct, word_crop, DiffConfig, RefinableParams};
use derender_core::export::{document_from_value, document_value_inline, export_element};
use derender_core::imaging::{l1_error, AlphaMap, PixelRegion, RasterImage, Rgb};
use derender_core::initialize::{inpaint, inpaint_hole};
use derender_core::refine::{FreezeGroup, RefineConfig};
use derender_core::suite::{
    build_suite, generic_gradient_case, lattice_gradient_case, run_suite, CaseOutcome, SuiteCase,
    SUITE_SEED, SUITE_SIZE,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

struct Ctx {
    atlas: GlyphAtlas,
    config: DiffConfig,
    suite: Vec<SuiteCase>,
    free: Option<Vec<CaseOutcome>>,
}

fn random_image(rng: &mut ChaCha8Rng, w: usize, h: usize) -> RasterImage {
    let data = (0..w * h * 3).map(|_| rng.gen::<f32>()).collect();
    RasterImage::from_data(w, h, data).unwrap()
}

fn random_color(rng: &mut ChaCha8Rng) -> Rgb {
    std::array::from_fn(|_| rng.gen::<f32>())
}

fn compositing_identities(_: &mut Ctx) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut cases = 0;
    for _ in 0..200 {
        let (w, h) = (rng.gen_range(1..40), rng.gen_range(1..40));
        let bg = random_image(&mut rng, w, h);
        let color = random_color(&mut rng);
        let zero = AlphaMap::zeros(w, h);
        let one = AlphaMap::filled(w, h, 1.0);
        let out = composite(&bg, &[(&zero, color)]).map_err(|e| e.to_string())?;
        if out.data().iter().zip(bg.data()).any(|(a, b)| a.to_bits() != b.to_bits()) {
            return Err("alpha 0 changed the background".into());
        }
        let out = composite(&bg, &[(&one, color)]).map_err(|e| e.to_string())?;
        if out.data().chunks_exact(3).any(|p| (0..3).any(|k| p[k].to_bits() != color[k].to_bits())) {
            return Err("alpha 1 did not return the layer color".into());
        }
        // A transparent layer above an opaque one leaves the opaque color.
        let out = composite(&bg, &[(&one, color), (&zero, random_color(&mut rng))]).map_err(|e| e.to_string())?;
        if out.data().chunks_exact(3).any(|p| (0..3).any(|k| p[k].to_bits() != color[k].to_bits())) {
            return Err("alpha 0 over alpha 1 changed the color".into());
        }
        cases += 1;
    }
    Ok(format!("{cases} random canvases bit-exact for alpha 0 and alpha 1"))
}

fn styled_element(rng: &mut ChaCha8Rng, atlas: &GlyphAtlas) -> TextElement {
    let glyphs = atlas.glyphs();
    let len = rng.gen_range(2..6);
    let text: String = (0..len).map(|_| glyphs[rng.gen_range(0..glyphs.len())]).collect();
    let mut effects = derender_core::compositor::EffectSet::plain(random_color(rng));
    effects.border.visible = true;
    effects.border.width_bin = rng.gen_range(2..=5);
    effects.border.color = random_color(rng);
    effects.shadow.visible = true;
    effects.shadow.blur = rng.gen_range(0.5..2.5);
    effects.shadow.offset_x = rng.gen_range(2.0..5.0);
    effects.shadow.offset_y = rng.gen_range(2.0..5.0);
    effects.shadow.color = random_color(rng);
    TextElement {
        text,
        font_index: rng.gen_range(0..atlas.num_fonts()),
        font_size: rng.gen_range(40.0..64.0),
        origin: [12.0, 70.0],
        per_char_offsets: None,
        effects,
    }
}

fn decompose_round_trip(ctx: &mut Ctx) -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst_single = 0.0f64;
    for _ in 0..100 {
        let (w, h) = (rng.gen_range(8..48), rng.gen_range(8..48));
        let bg = random_image(&mut rng, w, h);
        let color = random_color(&mut rng);
        let data: Vec<f32> = (0..w * h)
            .map(|_| if rng.gen_bool(0.5) { rng.gen_range(0.0..=1.0) } else { 0.0 })
            .collect();
        let mut alpha = AlphaMap::from_data(w, h, data).unwrap();
        alpha.set(0, 0, 0.5);
        let img = composite(&bg, &[(&alpha, color)]).map_err(|e| e.to_string())?;
        let got = invert_layer(&img, &bg, &alpha, &PixelRegion::full(w, h)).map_err(|e| e.to_string())?;
        let expected = (0..w * h).filter(|&i| alpha.data()[i] > OBSERVABILITY_EPS).count();
        if got.len() != expected {
            return Err(format!("{} samples for {expected} observable pixels", got.len()));
        }
        for (_, c) in got {
            for k in 0..3 {
                worst_single = worst_single.max((c[k] as f64 - color[k] as f64).abs());
            }
        }
    }

    let tol = 1.0 / 32.0 + 1e-6;
    let mut worst_full = 0.0f64;
    let (w, h) = (300, 100);
    for _ in 0..20 {
        let e = styled_element(&mut rng, &ctx.atlas);
        let bg = random_image(&mut rng, 1, 1);
        let bg = RasterImage::filled(w, h, bg.pixel(0, 0));
        let doc = Document {
            canvas_width: w,
            canvas_height: h,
            background: bg.clone(),
            elements: vec![e.clone()],
        };
        let img = render_document(&doc, &ctx.atlas, 1.0).map_err(|e| e.to_string())?;
        let alphas = render_effect_alphas(&e, &ctx.atlas, w, h).map_err(|e| e.to_string())?;
        let d = decompose_colors(
            &img,
            &bg,
            &alphas,
            Visibility { shadow: true, border: true },
            &PixelRegion::full(w, h),
        )
        .map_err(|e| e.to_string())?;
        let fx = &e.effects;
        for (est, truth, name) in [
            (&d.fill, fx.fill.color, "fill"),
            (&d.border, fx.border.color, "border"),
            (&d.shadow, fx.shadow.color, "shadow"),
        ] {
            let est = est.as_ref().ok_or(format!("{name} of {:?} not recovered", e.text))?;
            for k in 0..3 {
                worst_full = worst_full.max((est.color[k] as f64 - truth[k] as f64).abs());
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let detail = format!(
        "single-layer worst {worst_single:.2e} (<= 1e-6), three-effect worst {worst_full:.4} (<= {tol:.4}), {secs:.2}s (< 10s)"
    );
    if worst_single <= 1e-6 && worst_full <= tol && secs < 10.0 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn gradient_correctness(ctx: &mut Ctx) -> Outcome {
    let start = Instant::now();
    let mut worst = 0.0f64;
    let mut where_ = String::new();
    let mut checked = 0;
    for seed in 0..10 {
        let c = lattice_gradient_case(&ctx.atlas, &ctx.config, seed).map_err(|e| e.to_string())?;
        let r = check_gradients(&c.params, &ctx.atlas, &c.background, &c.target, &ctx.config, 1e-3, 1e-6)
            .map_err(|e| e.to_string())?;
        checked += r.checked;
        if r.worst_relative_error > worst {
            worst = r.worst_relative_error;
            where_ = format!("seed {seed} {}", r.worst_coordinate);
        }
    }
    let secs = start.elapsed().as_secs_f64();
    // Generic positions need a smaller step; reported alongside.
    let mut generic = 0.0f64;
    for seed in 0..3 {
        let c = generic_gradient_case(&ctx.atlas, &ctx.config, seed).map_err(|e| e.to_string())?;
        let r = check_gradients(&c.params, &ctx.atlas, &c.background, &c.target, &ctx.config, 1e-5, 1e-6)
            .map_err(|e| e.to_string())?;
        generic = generic.max(r.worst_relative_error);
    }
    let detail = format!(
        "10 configs, {checked} partials, worst relative error {worst:.2e} (< 1e-3) at h=1e-3, {secs:.1}s (< 120s); generic positions at h=1e-5 worst {generic:.2e}"
    );
    if worst < 1e-3 && secs < 120.0 && checked > 0 {
        Ok(detail)
    } else {
        Err(format!("{detail}; worst at {where_}"))
    }
}

fn one_hot_consistency(ctx: &mut Ctx) -> Outcome {
    let cfg = GenConfig {
        seed: 3,
        count: 20,
        ..GenConfig::default()
    };
    let samples = generate(&cfg, &ctx.atlas).map_err(|e| e.to_string())?;
    let mut worst = 0.0f64;
    for s in &samples {
        let e = &s.truth.elements[0];
        let (w, h) = s.image.dims();
        let crisp = render_document(&s.truth, &ctx.atlas, 1.0).map_err(|e| e.to_string())?;
        let crop = word_crop(&layout(e, &ctx.atlas).map_err(|e| e.to_string())?.word_box, w, h, &ctx.config);
        let cut = |i: &RasterImage| i.crop(crop.x0, crop.y0, crop.width(), crop.height()).unwrap();
        let p = RefinableParams::from_element(e, &ctx.atlas, crop).map_err(|e| e.to_string())?;
        let soft = reconstruct(&p, &ctx.atlas, &cut(&s.truth.background), &ctx.config).map_err(|e| e.to_string())?;
        worst = worst.max(l1_error(&soft, &cut(&crisp)).map_err(|e| e.to_string())?);
    }
    let detail = format!("20 elements, worst L1 {worst:.5} (< 0.02)");
    if worst < 0.02 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn free_run(ctx: &mut Ctx) -> Result<&Vec<CaseOutcome>, String> {
    if ctx.free.is_none() {
        let out = run_suite(&ctx.suite, &ctx.atlas, &RefineConfig::default(), &ctx.config, &BTreeSet::new())
            .map_err(|e| e.to_string())?;
        ctx.free = Some(out);
    }
    Ok(ctx.free.as_ref().unwrap())
}

fn mean_psnr(out: &[CaseOutcome]) -> f64 {
    out.iter().map(|o| o.report.final_psnr).sum::<f64>() / out.len() as f64
}

fn refinement_recovery(ctx: &mut Ctx) -> Outcome {
    let out = free_run(ctx)?;
    let n = out.len();
    let improved = out.iter().filter(|o| o.report.final_psnr > o.report.initial_psnr).count();
    let font = out.iter().filter(|o| o.font_recovered).count();
    let fill = out.iter().filter(|o| o.fill_error <= 0.05).count();
    let slowest = out.iter().map(|o| o.report.wall_time).fold(0.0, f64::max);
    let before = out.iter().map(|o| o.report.initial_psnr).sum::<f64>() / n as f64;
    let pass = improved == n && font * 10 >= n * 8 && fill * 10 >= n * 9 && slowest <= 10.0;
    let detail = format!(
        "{n} words: PSNR improved {improved}/{n} (100%), font {font}/{n} (>= 80%), fill within 0.05 {fill}/{n} (>= 90%), slowest {slowest:.2}s/word (<= 10s); mean PSNR {before:.2} -> {:.2} dB",
        mean_psnr(out)
    );
    if pass {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn ablation_ordering(ctx: &mut Ctx) -> Outcome {
    let free = mean_psnr(free_run(ctx)?);
    let run = |g: FreezeGroup| {
        run_suite(&ctx.suite, &ctx.atlas, &RefineConfig::default(), &ctx.config, &BTreeSet::from([g]))
            .map(|o| mean_psnr(&o))
            .map_err(|e| e.to_string())
    };
    let color = run(FreezeGroup::Color)?;
    let border = run(FreezeGroup::Border)?;
    let detail = format!("mean PSNR: color frozen {color:.2} < border frozen {border:.2} (full {free:.2})");
    if color < border {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn export_fidelity(ctx: &mut Ctx) -> Outcome {
    let mut worst_l1 = 0.0f64;
    let mut worst_size = 0.0f64;
    for c in &ctx.suite {
        let e = export_element(&c.truth_params, &ctx.atlas, &ctx.config, Some(&c.word_box))
            .map_err(|e| format!("case {}: {e}", c.index))?;
        worst_size = worst_size.max((e.font_size - c.truth.font_size).abs());
        let doc = Document {
            elements: vec![e],
            ..c.sample.truth.clone()
        };
        let img = render_document(&doc, &ctx.atlas, 1.0).map_err(|e| e.to_string())?;
        worst_l1 = worst_l1.max(l1_error(&img, &c.sample.image).map_err(|e| e.to_string())?);
    }
    let detail = format!(
        "{} samples: worst L1 {worst_l1:.5} (< 0.01), worst font size error {worst_size:.3}px (<= 1)",
        ctx.suite.len()
    );
    if worst_l1 < 0.01 && worst_size <= 1.0 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn datagen_consistency(ctx: &mut Ctx) -> Outcome {
    let cfg = GenConfig {
        seed: 8,
        count: 40,
        words_per_sample: 2,
        ..GenConfig::default()
    };
    let a = generate(&cfg, &ctx.atlas).map_err(|e| e.to_string())?;
    // Images are 8-bit artifacts: compare the rendered PNG with the image's.
    for (i, s) in a.iter().enumerate() {
        let png = render_png(&s.truth, &ctx.atlas, 1.0).map_err(|e| e.to_string())?;
        if png != s.image.to_png_bytes().map_err(|e| e.to_string())? {
            return Err(format!("sample {i}: truth render differs from the image"));
        }
        let r = render_document(&s.truth, &ctx.atlas, 1.0).map_err(|e| e.to_string())?.quantized();
        if r.data().iter().zip(s.image.data()).any(|(x, y)| x.to_bits() != y.to_bits()) {
            return Err(format!("sample {i}: quantized render differs from the image"));
        }
    }
    let b = generate(&cfg, &ctx.atlas).map_err(|e| e.to_string())?;
    if a.iter().zip(&b).any(|(x, y)| x.image != y.image || x.truth != y.truth || x.word_boxes != y.word_boxes) {
        return Err("regeneration differs".into());
    }
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for (d, s) in dirs.iter().zip([&a, &b]) {
        write_corpus(d.path(), &cfg, &ctx.atlas, s).map_err(|e| e.to_string())?;
    }
    let mut files: Vec<_> = std::fs::read_dir(dirs[0].path())
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    files.sort();
    for f in &files {
        let x = std::fs::read(dirs[0].path().join(f)).unwrap();
        let y = std::fs::read(dirs[1].path().join(f)).map_err(|e| format!("{f:?}: {e}"))?;
        if x != y {
            return Err(format!("corpus file {f:?} differs"));
        }
    }
    Ok(format!(
        "{} samples render bit-identically; regenerated corpus ({} files) byte-identical",
        a.len(),
        files.len()
    ))
}

fn text_mask(rng: &mut ChaCha8Rng, atlas: &GlyphAtlas, w: usize, h: usize) -> AlphaMap {
    let mut e = styled_element(rng, atlas);
    e.font_size = rng.gen_range(24.0..40.0);
    e.origin = [rng.gen_range(4.0..20.0), rng.gen_range(30.0..50.0)];
    render_effect_alphas(&e, atlas, w, h).unwrap().fill
}

fn inpainting(ctx: &mut Ctx) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (w, h) = (160, 72);
    let mut worst_flat = 0.0f64;
    let mut worst_ramp = 0.0f64;
    for trial in 0..10 {
        let mask = text_mask(&mut rng, &ctx.atlas, w, h);
        let hole = inpaint_hole(&mask);
        let truth = if trial % 2 == 0 {
            RasterImage::filled(w, h, random_color(&mut rng))
        } else {
            let (a, b) = (random_color(&mut rng), random_color(&mut rng));
            let angle: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            let (dx, dy) = (angle.cos(), angle.sin());
            let span = (w as f64).abs() * dx.abs() + (h as f64) * dy.abs();
            let data = (0..w * h)
                .flat_map(|i| {
                    let (x, y) = ((i % w) as f64, (i / w) as f64);
                    let t = ((x - w as f64 / 2.0) * dx + (y - h as f64 / 2.0) * dy) / span + 0.5;
                    (0..3).map(move |k| (a[k] as f64 * (1.0 - t) + b[k] as f64 * t) as f32)
                })
                .collect();
            RasterImage::from_data(w, h, data).unwrap()
        };
        let mut damaged = truth.clone();
        for (i, &inside) in hole.iter().enumerate() {
            if inside {
                damaged.set_pixel(i % w, i / w, random_color(&mut rng));
            }
        }
        let out = inpaint(&damaged, &mask).map_err(|e| e.to_string())?;
        let mut sum = 0.0;
        let mut count = 0usize;
        let mut max = 0.0f64;
        for (i, &inside) in hole.iter().enumerate() {
            if inside {
                let (p, q) = (out.pixel(i % w, i / w), truth.pixel(i % w, i / w));
                for k in 0..3 {
                    let d = (p[k] as f64 - q[k] as f64).abs();
                    sum += d;
                    max = max.max(d);
                }
                count += 3;
            }
        }
        if trial % 2 == 0 {
            worst_flat = worst_flat.max(max);
        } else {
            worst_ramp = worst_ramp.max(sum / count as f64);
        }
    }
    let detail = format!(
        "text-shaped holes: flat worst error {worst_flat:.4} (<= 0.02), gradient worst mean error {worst_ramp:.4} (< 0.05)"
    );
    if worst_flat <= 0.02 && worst_ramp < 0.05 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn edit_scenario(ctx: &mut Ctx) -> Outcome {
    let tol = 1.0 / 32.0;
    let mut worst = 0.0f64;
    let mut checked = 0;
    for c in &ctx.suite {
        let doc = &c.sample.truth;
        let before = document_value_inline(doc).map_err(|e| e.to_string())?;
        let after = edit_value(
            before.clone(),
            &[("elements[0].text".into(), "NEW".into())],
            None,
            &ctx.atlas,
        )
        .map_err(|e| e.to_string())?;
        for key in ["border", "shadow"] {
            let a = serde_json::to_string(&before["elements"][0]["effects"][key]).unwrap();
            let b = serde_json::to_string(&after["elements"][0]["effects"][key]).unwrap();
            if a != b {
                return Err(format!("case {}: {key} bytes changed", c.index));
            }
        }
        let edited = document_from_value(after, None).map_err(|e| e.to_string())?;
        let e = &edited.elements[0];
        let (w, h) = (edited.canvas_width, edited.canvas_height);
        let img = render_document(&edited, &ctx.atlas, 1.0).map_err(|e| e.to_string())?;
        let alphas = render_effect_alphas(e, &ctx.atlas, w, h).map_err(|e| e.to_string())?;
        let vis = Visibility {
            shadow: e.effects.shadow.visible,
            border: e.effects.border.visible,
        };
        let d = decompose_colors(&img, &edited.background, &alphas, vis, &PixelRegion::full(w, h))
            .map_err(|e| e.to_string())?;
        let fill = d.fill.ok_or(format!("case {}: fill not observable", c.index))?.color;
        let old = doc.elements[0].effects.fill.color;
        for k in 0..3 {
            worst = worst.max((fill[k] as f64 - old[k] as f64).abs());
        }
        checked += 1;
    }
    let detail = format!(
        "{checked} documents edited to \"NEW\": worst decomposed fill change {worst:.4} (<= {tol:.4}); border/shadow JSON byte-identical"
    );
    if worst <= tol {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn main() {
    let start = Instant::now();
    let atlas = build_bundled_atlas().expect("bundled atlas");
    let config = DiffConfig::for_atlas(&atlas);
    let suite = build_suite(&atlas, SUITE_SEED, SUITE_SIZE, &config).expect("suite");
    let mut ctx = Ctx {
        atlas,
        config,
        suite,
        free: None,
    };
    let criteria: [(&str, fn(&mut Ctx) -> Outcome); 10] = [
        ("compositing identities", compositing_identities),
        ("decompose round trip", decompose_round_trip),
        ("gradient correctness", gradient_correctness),
        ("one-hot consistency", one_hot_consistency),
        ("refinement recovery", refinement_recovery),
        ("ablation ordering", ablation_ordering),
        ("export fidelity", export_fidelity),
        ("datagen self-consistency", datagen_consistency),
        ("inpainting", inpainting),
        ("edit scenario", edit_scenario),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let (tag, detail) = match check(&mut ctx) {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("{tag} [{:02}] {name}: {detail} [{:.1}s]", i + 1, t.elapsed().as_secs_f64());
    }
    println!(
        "acceptance: {} passed, {failed} failed in {:.1}s",
        criteria.len() - failed,
        start.elapsed().as_secs_f64()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
