use super::*;
use crate::atlas::tests::toy_atlas;
use crate::compositor::{layout, render_document, Document, EffectSet, TextElement};
use crate::imaging::{l1_error, RasterImage};
use proptest::prelude::*;

fn config() -> DiffConfig {
    DiffConfig::for_atlas(toy_atlas())
}

fn styled(text: &str, font: usize) -> TextElement {
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
        font_size: 40.0,
        origin: [14.0, 58.0],
        per_char_offsets: None,
        effects,
    }
}

struct Case {
    params: RefinableParams,
    bg: RasterImage,
    target: RasterImage,
}

fn case(element: &TextElement, canvas: (usize, usize)) -> Case {
    let atlas = toy_atlas();
    let bg_full = RasterImage::filled(canvas.0, canvas.1, [0.85, 0.8, 0.75]);
    let doc = Document {
        canvas_width: canvas.0,
        canvas_height: canvas.1,
        background: bg_full.clone(),
        elements: vec![element.clone()],
    };
    let full = render_document(&doc, atlas, 1.0).unwrap();
    let wb = layout(element, atlas).unwrap().word_box;
    let crop = word_crop(&wb, canvas.0, canvas.1, &config());
    let cut = |img: &RasterImage| img.crop(crop.x0, crop.y0, crop.width(), crop.height()).unwrap();
    Case {
        params: RefinableParams::from_element(element, atlas, crop).unwrap(),
        bg: cut(&bg_full),
        target: cut(&full),
    }
}

#[test]
fn dominant_logit_takes_all_attention() {
    let mut logits = vec![0.0; 30];
    logits[7] = 40.0;
    let a = font_attention(&logits, 20);
    assert!(a[7] > 0.999_999);
    assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
}

#[test]
fn equal_logits_keep_lowest_indices() {
    let a = font_attention(&[0.3; 100], 20);
    for (i, p) in a.iter().enumerate() {
        let want = if i < 20 { 0.05 } else { 0.0 };
        assert!((p - want).abs() < 1e-12, "{i}: {p}");
    }
}

#[test]
fn full_top_k_is_plain_softmax() {
    let logits = [0.5, -1.0, 2.0, 0.0];
    let a = font_attention(&logits, 4);
    let e: Vec<f64> = logits.iter().map(|l: &f64| l.exp()).collect();
    let s: f64 = e.iter().sum();
    for i in 0..4 {
        assert!((a[i] - e[i] / s).abs() < 1e-12);
    }
}

#[test]
fn visibility_closed_form() {
    assert_eq!(db_visibility(0.0, 50.0), 0.5);
    assert!(db_visibility(6.0, 50.0) > 0.999);
    assert!(db_visibility(-6.0, 50.0) < 0.001);
}

#[test]
fn one_hot_blend_is_the_cell() {
    let atlas = toy_atlas();
    let b = blended_glyph(atlas, &[0.0, 1.0], 'W', Variant::Border(2)).unwrap();
    assert_eq!(&b, atlas.query(1, 'W', Variant::Border(2)).unwrap());
}

#[test]
fn half_blend_is_the_average() {
    let atlas = toy_atlas();
    let b = blended_glyph(atlas, &[0.5, 0.5], 'a', Variant::Fill).unwrap();
    let z0 = atlas.query(0, 'a', Variant::Fill).unwrap();
    let z1 = atlas.query(1, 'a', Variant::Fill).unwrap();
    for i in 0..b.data().len() {
        let want = 0.5 * (z0.data()[i] as f64 + z1.data()[i] as f64);
        assert!((b.data()[i] as f64 - want).abs() < 1e-6);
    }
    assert!(blended_glyph(atlas, &[0.5, 0.5], 'Z', Variant::Fill).is_err());
}

proptest! {
    #[test]
    fn blend_is_linear(p in 0.0f64..=1.0, q in 0.0f64..=1.0, t in 0.0f64..=1.0) {
        let atlas = toy_atlas();
        let (a1, a2) = ([p, 1.0 - p], [q, 1.0 - q]);
        let mix = [t * a1[0] + (1.0 - t) * a2[0], t * a1[1] + (1.0 - t) * a2[1]];
        let lhs = blended_glyph(atlas, &mix, 'g', Variant::Fill).unwrap();
        let b1 = blended_glyph(atlas, &a1, 'g', Variant::Fill).unwrap();
        let b2 = blended_glyph(atlas, &a2, 'g', Variant::Fill).unwrap();
        for i in 0..lhs.data().len() {
            let rhs = t * b1.data()[i] as f64 + (1.0 - t) * b2.data()[i] as f64;
            prop_assert!((lhs.data()[i] as f64 - rhs).abs() < 1e-6);
        }
    }

    #[test]
    fn decoded_ranges_hold(raw in prop::collection::vec(-50.0f64..50.0, 40)) {
        let mut p = case(&styled("ab", 0), (120, 80)).params;
        let n = p.num_values();
        let vals: Vec<f64> = (0..n).map(|i| raw[i % raw.len()]).collect();
        p.set_flat(&vals).unwrap();
        let d = p.decode(&config());
        prop_assert!((d.font_attention.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        prop_assert!((d.border_bins.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        for c in d.fill_color.iter().chain(&d.border_color).chain(&d.shadow_color) {
            prop_assert!((0.0..=1.0).contains(c));
        }
        prop_assert!(d.shadow_blur >= 0.0);
        prop_assert!((0.0..=1.0).contains(&d.border_visibility));
    }
}

#[test]
fn flat_round_trip_and_spans() {
    let mut p = case(&styled("Wab", 1), (160, 80)).params;
    let v = p.to_flat();
    assert_eq!(v.len(), p.num_values());
    let spans = p.spans();
    assert_eq!(spans.first().unwrap().1.start, 0);
    assert_eq!(spans.last().unwrap().1.end, v.len());
    for pair in spans.windows(2) {
        assert_eq!(pair[0].1.end, pair[1].1.start);
    }
    let bumped: Vec<f64> = v.iter().map(|x| x + 1.0).collect();
    p.set_flat(&bumped).unwrap();
    assert_eq!(p.to_flat(), bumped);
    assert!(p.set_flat(&v[1..]).is_err());
}

#[test]
fn one_hot_matches_compositor() {
    for (text, font) in [("Wab", 1), ("gl.M", 0), ("AB", 1)] {
        let c = case(&styled(text, font), (190, 90));
        let r = reconstruct(&c.params, toy_atlas(), &c.bg, &config()).unwrap();
        let err = l1_error(&r, &c.target).unwrap();
        assert!(err < 0.02, "{text}: {err}");
    }
}

#[test]
fn suppressed_shadow_equals_no_shadow() {
    let mut el = styled("ab", 0);
    let c = case(&el, (120, 80));
    let mut p = c.params.clone();
    p.shadow_visibility_logit = -6.0;
    let soft = reconstruct(&p, toy_atlas(), &c.bg, &config()).unwrap();
    el.effects.shadow.visible = false;
    let c2 = case(&el, (120, 80));
    let hard = reconstruct(&c2.params, toy_atlas(), &c2.bg, &config()).unwrap();
    let max = soft
        .data()
        .iter()
        .zip(hard.data())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f32, f32::max);
    assert!(max < 1e-3, "{max}");
}

#[test]
fn identity_places_chars_on_layout_boxes() {
    let atlas = toy_atlas();
    let mut el = styled("M", 0);
    el.effects = EffectSet::plain([1.0; 3]);
    let canvas = (120, 90);
    let ink = layout(&el, atlas).unwrap().chars[0].ink;
    let crop = word_crop(&ink, canvas.0, canvas.1, &config());
    let p = RefinableParams::from_element(&el, atlas, crop).unwrap();
    let bg = RasterImage::black(crop.width(), crop.height());
    let r = reconstruct(&p, atlas, &bg, &config()).unwrap();
    // coverage-weighted extents along each axis
    let (w, h) = r.dims();
    let col: Vec<f64> = (0..w)
        .map(|x| (0..h).map(|y| r.pixel(x, y)[0] as f64).fold(0.0, f64::max))
        .collect();
    let row: Vec<f64> = (0..h)
        .map(|y| (0..w).map(|x| r.pixel(x, y)[0] as f64).fold(0.0, f64::max))
        .collect();
    let edges = |prof: &[f64]| {
        // ignore the ~1e-20 leakage of suppressed effects
        let first = prof.iter().position(|&v| v > 1e-6).unwrap();
        let last = prof.iter().rposition(|&v| v > 1e-6).unwrap();
        // partial coverage at the boundary pixels locates the edge within the pixel
        (
            first as f64 + 1.0 - prof[first].min(1.0),
            last as f64 + prof[last].min(1.0),
        )
    };
    let (x0, x1) = edges(&col);
    let (y0, y1) = edges(&row);
    let ox = crop.x0 as f64;
    let oy = crop.y0 as f64;
    for (got, want) in [
        (x0 + ox, ink.x0),
        (x1 + ox, ink.x1),
        (y0 + oy, ink.y0),
        (y1 + oy, ink.y1),
    ] {
        assert!((got - want).abs() < 0.5, "{got} vs {want}");
    }
}

#[test]
fn degenerate_affine_is_rejected() {
    let mut p = case(&styled("ab", 0), (120, 80)).params;
    let c = case(&styled("ab", 0), (120, 80));
    let l = p.word_extent;
    p.word_affine = [-l, 0.0, 0.0, 0.0, 0.0, 0.0];
    assert!(matches!(
        reconstruct(&p, toy_atlas(), &c.bg, &config()),
        Err(Error::DegenerateAffine { .. })
    ));
}

#[test]
fn non_finite_parameter_names_its_span() {
    let c = case(&styled("ab", 0), (120, 80));
    let mut p = c.params.clone();
    p.shadow_dy = f64::NAN;
    match loss_and_gradients(&p, toy_atlas(), &c.bg, &c.target, &config()) {
        Err(Error::NonFinite(name)) => assert_eq!(name, "shadow_dy"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn darker_fill_wants_higher_logit() {
    let c = case(&styled("Wab", 1), (160, 80));
    let mut p = c.params.clone();
    p.fill_color_logits[0] -= 1.5;
    let (_, g) = loss_and_gradients(&p, toy_atlas(), &c.bg, &c.target, &config()).unwrap();
    assert!(g.span("fill_color_logits").unwrap()[0] < 0.0);
}

#[test]
fn ground_truth_is_near_stationary() {
    // generated samples use 8-bit colors and are stored as 8-bit images
    let mut el = styled("Wab", 1);
    let e = &mut el.effects;
    for color in [&mut e.fill.color, &mut e.border.color, &mut e.shadow.color] {
        *color = color.map(|v| (v * 255.0).round() / 255.0);
    }
    let mut c = case(&el, (160, 80));
    c.target = c.target.quantized();
    let (l, g) = loss_and_gradients(&c.params, toy_atlas(), &c.bg, &c.target, &config()).unwrap();
    assert!(l < 0.02, "{l}");
    // a suite-style perturbation: fill color, shadow offset, placement
    let mut p = c.params.clone();
    let fill = logits_to_color(&p.fill_color_logits).map(|v| (v - 0.2).clamp(0.0, 1.0));
    p.fill_color_logits = color_to_logits(fill);
    p.shadow_dx += 2.0;
    p.shadow_dy -= 2.0;
    p.word_affine[2] += 1.0;
    let (_, gp) = loss_and_gradients(&p, toy_atlas(), &c.bg, &c.target, &config()).unwrap();
    assert!(g.norm() < 0.1 * gp.norm(), "{} vs {}", g.norm(), gp.norm());
}

#[test]
fn gradients_match_central_differences_off_knots() {
    for seed in 0..4 {
        let c = crate::suite::lattice_gradient_case(toy_atlas(), &config(), seed).unwrap();
        let r = check_gradients(&c.params, toy_atlas(), &c.background, &c.target, &config(), 1e-3, 1e-6)
            .unwrap();
        assert!(r.checked > 20);
        assert!(r.worst_relative_error < 1e-3, "seed {seed}: {r:?}");
    }
}

#[test]
fn gradients_match_small_step_at_generic_positions() {
    for seed in 0..3 {
        let c = crate::suite::generic_gradient_case(toy_atlas(), &config(), seed).unwrap();
        let r = check_gradients(&c.params, toy_atlas(), &c.background, &c.target, &config(), 1e-5, 1e-6)
            .unwrap();
        assert!(r.worst_relative_error < 1e-4, "seed {seed}: {r:?}");
    }
}
