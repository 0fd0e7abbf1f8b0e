use std::sync::OnceLock;

use derender_core::atlas::{build_bundled_atlas, GlyphAtlas};
use derender_core::compositor::{
    layout, render_document, render_effect_alphas, Document, EffectSet, TextElement,
};
use derender_core::datagen::{generate, GenConfig};
use derender_core::diffrender::DiffConfig;
use derender_core::initialize::{estimate_mask, initial_guess, inpaint, inpaint_hole};
use derender_core::imaging::{AlphaMap, RasterImage, Rect, Rgb};
use proptest::prelude::*;

fn atlas() -> &'static GlyphAtlas {
    static ATLAS: OnceLock<GlyphAtlas> = OnceLock::new();
    ATLAS.get_or_init(|| build_bundled_atlas().unwrap())
}

fn scene(fill: Rgb, bg: Rgb, effects: Option<EffectSet>) -> (RasterImage, Rect, AlphaMap) {
    let mut e = TextElement {
        text: "Mask".into(),
        font_index: 0,
        font_size: 48.0,
        origin: [30.0, 80.0],
        per_char_offsets: None,
        effects: effects.unwrap_or_else(|| EffectSet::plain(fill)),
    };
    e.effects.fill.color = fill;
    let (w, h) = (220, 120);
    let doc = Document {
        canvas_width: w,
        canvas_height: h,
        background: RasterImage::filled(w, h, bg),
        elements: vec![e.clone()],
    };
    let img = render_document(&doc, atlas(), 1.0).unwrap();
    let a = render_effect_alphas(&e, atlas(), w, h).unwrap();
    let union: Vec<f32> = (0..w * h)
        .map(|i| {
            1.0 - (1.0 - a.fill.data()[i]) * (1.0 - a.border.data()[i]) * (1.0 - a.shadow.data()[i])
        })
        .collect();
    let truth = AlphaMap::from_data(w, h, union).unwrap();
    (img, layout(&e, atlas()).unwrap().word_box, truth)
}

fn iou(a: &AlphaMap, b: &AlphaMap) -> f64 {
    let (mut inter, mut uni) = (0usize, 0usize);
    for (&x, &y) in a.data().iter().zip(b.data()) {
        let (x, y) = (x > 0.5, y > 0.5);
        inter += (x && y) as usize;
        uni += (x || y) as usize;
    }
    inter as f64 / uni as f64
}

#[test]
fn mask_covers_white_on_black_text() {
    let (img, b, truth) = scene([1.0; 3], [0.0; 3], None);
    let m = estimate_mask(&img, &b).unwrap();
    assert!(iou(&m, &truth) > 0.7, "{}", iou(&m, &truth));
    assert!(m.data().iter().all(|v| (0.0..=1.0).contains(v)));
}

#[test]
fn mask_is_symmetric_under_inverted_contrast() {
    let (img, b, truth) = scene([0.0; 3], [1.0; 3], None);
    let m = estimate_mask(&img, &b).unwrap();
    assert!(iou(&m, &truth) > 0.7, "{}", iou(&m, &truth));
}

#[test]
fn mask_includes_border_and_shadow() {
    let mut fx = EffectSet::plain([1.0; 3]);
    fx.border.visible = true;
    fx.border.width_bin = 3;
    fx.border.color = [0.9, 0.1, 0.1];
    fx.shadow.visible = true;
    fx.shadow.blur = 1.0;
    fx.shadow.offset_x = 3.0;
    fx.shadow.offset_y = 2.0;
    fx.shadow.color = [0.4, 0.4, 0.9];
    let (img, b, truth) = scene([1.0; 3], [0.0; 3], Some(fx));
    let m = estimate_mask(&img, &b).unwrap();
    assert!(iou(&m, &truth) > 0.7, "{}", iou(&m, &truth));
}

#[test]
fn blank_box_gives_near_empty_mask() {
    let img = RasterImage::filled(100, 60, [0.3, 0.6, 0.2]);
    let b = Rect::new(20.0, 15.0, 80.0, 45.0);
    let m = estimate_mask(&img, &b).unwrap();
    assert!(m.sum() < 0.05 * b.area());
}

#[test]
fn tiny_box_is_rejected() {
    let img = RasterImage::filled(100, 60, [0.3; 3]);
    assert!(estimate_mask(&img, &Rect::new(10.0, 10.0, 13.0, 30.0)).is_err());
    assert!(estimate_mask(&img, &Rect::new(98.0, 10.0, 130.0, 30.0)).is_err());
}

fn centered_hole(w: usize, h: usize, r: usize) -> AlphaMap {
    let mut m = AlphaMap::zeros(w, h);
    for y in h / 2 - r..h / 2 + r {
        for x in w / 2 - r..w / 2 + r {
            m.set(x, y, 1.0);
        }
    }
    m
}

#[test]
fn flat_background_is_filled_with_its_color() {
    let c = [0.2, 0.7, 0.4];
    let mut img = RasterImage::filled(64, 48, c);
    let mask = centered_hole(64, 48, 10);
    for y in 0..48 {
        for x in 0..64 {
            if mask.get(x, y) > 0.0 {
                img.set_pixel(x, y, [1.0, 0.0, 1.0]);
            }
        }
    }
    let out = inpaint(&img, &mask).unwrap();
    let hole = inpaint_hole(&mask);
    for (i, &inside) in hole.iter().enumerate() {
        if inside {
            let p = out.pixel(i % 64, i / 64);
            assert!((0..3).all(|k| (p[k] - c[k]).abs() <= 0.02), "{p:?}");
        }
    }
}

#[test]
fn horizontal_gradient_is_continued_through_the_hole() {
    let (w, h) = (96, 64);
    let ramp = |x: usize| (x as f32 + 0.5) / w as f32;
    let data: Vec<f32> = (0..w * h).flat_map(|i| [ramp(i % w), 0.5, 1.0 - ramp(i % w)]).collect();
    let truth = RasterImage::from_data(w, h, data).unwrap();
    let mask = centered_hole(w, h, 12);
    let mut img = truth.clone();
    for y in 0..h {
        for x in 0..w {
            if mask.get(x, y) > 0.0 {
                img.set_pixel(x, y, [0.0; 3]);
            }
        }
    }
    let out = inpaint(&img, &mask).unwrap();
    let hole = inpaint_hole(&mask);
    let (mut err, mut n) = (0.0f64, 0usize);
    for (i, &inside) in hole.iter().enumerate() {
        if inside {
            let (a, b) = (out.pixel(i % w, i / w), truth.pixel(i % w, i / w));
            err += (0..3).map(|k| (a[k] - b[k]).abs() as f64).sum::<f64>();
            n += 3;
        }
    }
    assert!(err / (n as f64) < 0.05, "mae {}", err / n as f64);
}

#[test]
fn empty_mask_leaves_image_unchanged_and_full_hole_fails() {
    let img = RasterImage::filled(20, 10, [0.1, 0.2, 0.3]);
    assert_eq!(inpaint(&img, &AlphaMap::zeros(20, 10)).unwrap(), img);
    assert!(inpaint(&img, &AlphaMap::filled(20, 10, 1.0)).is_err());
    assert!(inpaint(&img, &AlphaMap::zeros(10, 10)).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn inpainting_only_touches_the_hole(
        pixels in proptest::collection::vec(0.0f32..=1.0, 24 * 16 * 3),
        holes in proptest::collection::vec((0usize..24, 0usize..16), 1..6),
    ) {
        let img = RasterImage::from_data(24, 16, pixels).unwrap();
        let mut mask = AlphaMap::zeros(24, 16);
        for (x, y) in holes {
            mask.set(x, y, 1.0);
        }
        let hole = inpaint_hole(&mask);
        prop_assume!(hole.iter().any(|&b| !b));
        let out = inpaint(&img, &mask).unwrap();
        for (i, &inside) in hole.iter().enumerate() {
            let (x, y) = (i % 24, i / 24);
            if !inside {
                prop_assert_eq!(out.pixel(x, y), img.pixel(x, y));
            }
            prop_assert!(out.pixel(x, y).iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }
}

#[test]
fn crisp_render_box_gives_identity_box_fit() {
    let (img, b, _) = scene([0.9, 0.9, 0.1], [0.1, 0.1, 0.3], None);
    let g = initial_guess(&img, &b, "Mask", atlas(), &DiffConfig::for_atlas(atlas())).unwrap();
    assert_eq!(g.font_ranking[0], 0);
    assert!(g.params.word_affine.iter().all(|v| v.abs() < 1e-6), "{:?}", g.params.word_affine);
    assert!(g.params.char_affines.iter().flatten().all(|v| *v == 0.0));
    let d = g.params.decode(&DiffConfig::for_atlas(atlas()));
    assert_eq!(d.top_border_bin(), 3);
    assert!((d.shadow_blur - 1.0).abs() < 1e-12);
    assert_eq!(d.shadow_offset, [0.0, 0.0]);
    assert_eq!(g.params.border_visibility_logit, 0.0);
    assert!((0..3).all(|k| (d.fill_color[k] - [0.9, 0.9, 0.1][k]).abs() < 0.05), "{:?}", d.fill_color);
}

#[test]
fn initial_guess_is_deterministic_and_validates_text() {
    let (img, b, _) = scene([0.9; 3], [0.1; 3], None);
    let cfg = DiffConfig::for_atlas(atlas());
    let a = initial_guess(&img, &b, "Mask", atlas(), &cfg).unwrap();
    let c = initial_guess(&img, &b, "Mask", atlas(), &cfg).unwrap();
    assert_eq!(a.params, c.params);
    assert_eq!(a.background, c.background);
    assert!(initial_guess(&img, &b, "", atlas(), &cfg).is_err());
    assert!(initial_guess(&img, &b, "M\u{e4}sk", atlas(), &cfg).is_err());
}

#[test]
fn suite_statistics_of_the_initial_guess() {
    let cfg = GenConfig {
        seed: 2024,
        count: 50,
        ..GenConfig::default()
    };
    let dcfg = DiffConfig::for_atlas(atlas());
    let samples = generate(&cfg, atlas()).unwrap();
    let (mut in_top, mut color_ok) = (0, 0);
    for s in &samples {
        let e = &s.truth.elements[0];
        let g = initial_guess(&s.image, &s.word_boxes[0], &e.text, atlas(), &dcfg).unwrap();
        let rank = g.font_ranking.iter().position(|&f| f == e.font_index).unwrap();
        in_top += (rank < 20) as usize;
        let c = g.params.decode(&dcfg).fill_color;
        let ok = (0..3).all(|k| (c[k] - e.effects.fill.color[k]).abs() <= 0.1);
        color_ok += ok as usize;
    }
    println!("font in top-20: {in_top}/50, fill within 0.1: {color_ok}/50");
    assert!(in_top >= 45, "{in_top}");
    assert!(color_ok as f64 >= 0.85 * 50.0, "{color_ok}");
}

