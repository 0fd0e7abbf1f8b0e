use proptest::prelude::*;
use serde_json::Value;

use super::*;
use crate::atlas::tests::toy_atlas;
use crate::compositor::{layout, Document};
use crate::diffrender::word_crop;
use crate::imaging::{dequantize, quantize, RasterImage, Rgb};

fn element(size: f64) -> TextElement {
    TextElement {
        text: "Wab".into(),
        font_index: 1,
        font_size: size,
        origin: [20.0, 60.0],
        per_char_offsets: None,
        effects: EffectSet {
            fill: FillEffect {
                color: [dequantize(200), dequantize(30), dequantize(0)],
            },
            border: BorderEffect {
                visible: true,
                width_bin: 4,
                color: [dequantize(10), dequantize(255), dequantize(90)],
            },
            shadow: ShadowEffect {
                visible: false,
                blur: 1.75,
                offset_x: -2.5,
                offset_y: 3.0,
                color: [dequantize(128), dequantize(128), dequantize(1)],
            },
        },
    }
}

fn params_for(e: &TextElement) -> RefinableParams {
    let atlas = toy_atlas();
    let l = layout(e, atlas).unwrap();
    let crop = word_crop(&l.word_box, 200, 120, &DiffConfig::for_atlas(atlas));
    RefinableParams::from_element(e, atlas, crop).unwrap()
}

fn q(c: Rgb) -> [u8; 3] {
    c.map(quantize)
}

#[test]
fn harden_of_hard_decode_returns_the_element_style() {
    let e = element(40.0);
    let s = harden(&params_for(&e), &DiffConfig::for_atlas(toy_atlas()));
    assert_eq!(s.font_index, e.font_index);
    let (a, b) = (&s.effects, &e.effects);
    assert_eq!(a.border.visible, b.border.visible);
    assert_eq!(a.shadow.visible, b.shadow.visible);
    assert_eq!(a.border.width_bin, b.border.width_bin);
    assert_eq!(q(a.fill.color), q(b.fill.color));
    assert_eq!(q(a.border.color), q(b.border.color));
    assert_eq!(q(a.shadow.color), q(b.shadow.color));
    assert!((a.shadow.blur - b.shadow.blur).abs() < 1e-9);
    assert_eq!([a.shadow.offset_x, a.shadow.offset_y], [b.shadow.offset_x, b.shadow.offset_y]);
}

#[test]
fn zero_visibility_logit_hardens_to_hidden() {
    let mut p = params_for(&element(40.0));
    p.border_visibility_logit = 0.0;
    p.shadow_visibility_logit = 0.0;
    let s = harden(&p, &DiffConfig::for_atlas(toy_atlas()));
    assert!(!s.effects.border.visible);
    assert!(!s.effects.shadow.visible);
}

#[test]
fn crisp_boxes_fit_back_to_size_and_origin() {
    let atlas = toy_atlas();
    let e = element(40.0);
    let l = layout(&e, atlas).unwrap();
    let boxes: Vec<Rect> = l.chars.iter().map(|c| c.ink).collect();
    let fit = fit_geometry(&boxes, Some(&l.word_box), 1, &e.text, atlas).unwrap();
    assert!((fit.font_size - 40.0).abs() <= 1.0, "{fit:?}");
    assert!((fit.origin[0] - 20.0).abs() <= 1.0 && (fit.origin[1] - 60.0).abs() <= 1.0);
    assert!(fit.residual < 1e-9);
    assert_eq!(fit.word_box, l.word_box);
}

#[test]
fn single_character_fit_is_defined() {
    let atlas = toy_atlas();
    let mut e = element(33.0);
    e.text = "g".into();
    let l = layout(&e, atlas).unwrap();
    let fit = fit_geometry(&[l.chars[0].ink], None, 1, "g", atlas).unwrap();
    assert!((fit.font_size - 33.0).abs() <= 1.0);
    assert_eq!(fit.word_box, l.chars[0].ink);
}

#[test]
fn uniformly_scaled_boxes_give_scaled_size() {
    let atlas = toy_atlas();
    let e = element(40.0);
    let l = layout(&e, atlas).unwrap();
    let [cx, cy] = l.word_box.center();
    let s = 1.1;
    let boxes: Vec<Rect> = l
        .chars
        .iter()
        .map(|c| {
            let r = c.ink;
            Rect::new(
                cx + (r.x0 - cx) * s,
                cy + (r.y0 - cy) * s,
                cx + (r.x1 - cx) * s,
                cy + (r.y1 - cy) * s,
            )
        })
        .collect();
    let fit = fit_geometry(&boxes, None, 1, &e.text, atlas).unwrap();
    assert!((fit.font_size - 44.0).abs() <= 1.0, "{fit:?}");
}

#[test]
fn degenerate_box_is_rejected() {
    let atlas = toy_atlas();
    let b = Rect::new(5.0, 5.0, 5.0, 20.0);
    assert!(fit_geometry(&[b], None, 0, "A", atlas).is_err());
    assert!(fit_geometry(&[], None, 0, "", atlas).is_err());
}

#[test]
fn export_of_hard_decode_reproduces_geometry() {
    let atlas = toy_atlas();
    let e = element(41.0);
    let p = params_for(&e);
    let out = export_element(&p, atlas, &DiffConfig::for_atlas(atlas), None).unwrap();
    assert!((out.font_size - e.font_size).abs() < 1e-6, "{}", out.font_size);
    assert!((out.origin[0] - e.origin[0]).abs() < 1e-6);
    assert!((out.origin[1] - e.origin[1]).abs() < 1e-6);
    assert_eq!(out.per_char_offsets, None);
}

#[test]
fn word_translation_moves_the_exported_origin() {
    let atlas = toy_atlas();
    let e = element(40.0);
    let mut p = params_for(&e);
    // Sampling at P - t shows the glyph shifted by +t.
    p.word_affine[2] = 2.0;
    p.word_affine[5] = -1.0;
    let out = export_element(&p, atlas, &DiffConfig::for_atlas(atlas), None).unwrap();
    assert!((out.origin[0] - 22.0).abs() < 1e-6, "{:?}", out.origin);
    assert!((out.origin[1] - 59.0).abs() < 1e-6);
}

fn doc() -> Document {
    let mut bg = RasterImage::filled(200, 120, [dequantize(12), dequantize(80), dequantize(200)]);
    bg.set_pixel(3, 4, [1.0, 0.0, dequantize(7)]);
    let mut second = element(30.0);
    second.text = "ABM".into();
    second.per_char_offsets = Some(vec![[0.25, -1.5], [0.0, 0.0], [3.0, 0.125]]);
    Document {
        canvas_width: 200,
        canvas_height: 120,
        background: bg,
        elements: vec![element(40.0), second],
    }
}

#[test]
fn json_round_trip_is_structural_identity() {
    let d = doc();
    let text = document_to_json(&d).unwrap();
    assert_eq!(document_from_json(&text, None).unwrap(), d);

    let dir = tempfile::tempdir().unwrap();
    for storage in [
        BackgroundStorage::Auto,
        BackgroundStorage::Embedded,
        BackgroundStorage::Sidecar("bg.png".into()),
    ] {
        let path = dir.path().join("doc.json");
        save_document_with_background(&d, &path, &storage).unwrap();
        assert_eq!(load_document(&path).unwrap(), d, "{storage:?}");
    }
}

#[test]
fn flat_background_is_stored_as_a_color() {
    let mut d = doc();
    d.background = RasterImage::filled(200, 120, [0.5, 0.5, 0.5]);
    let v: Value = serde_json::from_str(&document_to_json(&d).unwrap()).unwrap();
    assert_eq!(v["background"]["flat"], serde_json::json!([128, 128, 128]));
}

#[test]
fn half_intensity_quantizes_up() {
    let mut d = doc();
    d.elements[0].effects.fill.color = [0.5, 0.0, 1.0];
    let v: Value = serde_json::from_str(&document_to_json(&d).unwrap()).unwrap();
    assert_eq!(v["elements"][0]["effects"]["fill"]["color"], serde_json::json!([128, 0, 255]));
    let back = document_from_json(&v.to_string(), None).unwrap();
    assert!((back.elements[0].effects.fill.color[0] - 0.50196).abs() < 1e-5);
}

fn schema_field(r: crate::Result<Document>) -> String {
    match r {
        Err(crate::Error::Schema { field, .. }) => field,
        other => panic!("expected schema error, got {other:?}"),
    }
}

#[test]
fn unknown_field_is_rejected_by_name() {
    let mut v = document_value_inline(&doc()).unwrap();
    v["elements"][1]["effects"]["fill"]["colour"] = serde_json::json!([1, 2, 3]);
    let field = schema_field(document_from_json(&v.to_string(), None));
    assert!(field.contains("colour") && field.starts_with("elements[1]"), "{field}");

    let mut v = document_value_inline(&doc()).unwrap();
    v["extra"] = Value::Bool(true);
    assert_eq!(schema_field(document_from_json(&v.to_string(), None)), "extra");
}

#[test]
fn schema_errors_name_the_offending_field() {
    let base = document_value_inline(&doc()).unwrap();
    let cases = [
        ("/elements/0/font_size", serde_json::json!(-3.0), "elements[0].font_size"),
        ("/elements/0/effects/border/width_bin", serde_json::json!(6), "elements[0].effects.border.width_bin"),
        ("/elements/1/effects/fill/color", serde_json::json!([1, 300, 3]), "elements[1].effects.fill.color[1]"),
        ("/elements/0/text", serde_json::json!(""), "elements[0].text"),
        ("/version", serde_json::json!(7), "version"),
        ("/canvas/width", serde_json::json!(201), "background"),
    ];
    for (ptr, value, want) in cases {
        let mut v = base.clone();
        *v.pointer_mut(ptr).unwrap() = value;
        assert_eq!(schema_field(document_from_json(&v.to_string(), None)), want);
    }
    let mut v = base.clone();
    v["background"] = serde_json::json!({"path": "x.png"});
    assert_eq!(schema_field(document_from_json(&v.to_string(), None)), "background.path");
}

#[test]
fn patches_replace_existing_fields_with_type_checks() {
    let mut v = document_value_inline(&doc()).unwrap();
    apply_patch(&mut v, "elements[0].text", "NEW").unwrap();
    apply_patch(&mut v, "elements[1].effects.border.visible", "false").unwrap();
    apply_patch(&mut v, "elements[1].effects.fill.color", "[1,2,3]").unwrap();
    apply_patch(&mut v, "elements[0].origin", "[5, 6.5]").unwrap();
    let d = document_from_value(v.clone(), None).unwrap();
    assert_eq!(d.elements[0].text, "NEW");
    assert!(!d.elements[1].effects.border.visible);
    assert_eq!(q(d.elements[1].effects.fill.color), [1, 2, 3]);
    assert_eq!(d.elements[0].origin, [5.0, 6.5]);

    let err = |r: crate::Result<()>| match r {
        Err(crate::Error::Schema { field, .. }) => field,
        other => panic!("{other:?}"),
    };
    assert_eq!(err(apply_patch(&mut v, "elements[0].font", "1")), "elements[0].font");
    assert_eq!(err(apply_patch(&mut v, "elements[9].text", "x")), "elements[9].text");
    assert_eq!(
        err(apply_patch(&mut v, "elements[0].effects.border.visible", "3")),
        "elements[0].effects.border.visible"
    );
    assert_eq!(err(apply_patch(&mut v, "elements[0].origin", "[1]")), "elements[0].origin");
    assert!(apply_patch(&mut v, "elements[0", "1").is_err());

    apply_patch(&mut v, "elements[0].font_size", "-3").unwrap();
    assert_eq!(schema_field(document_from_value(v, None)), "elements[0].font_size");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn quantized_documents_round_trip(
        colors in proptest::collection::vec(any::<u8>(), 9),
        size in 1.0f64..200.0,
        origin in proptest::array::uniform2(-500.0f64..500.0),
        blur in 0.0f64..10.0,
        bin in 1usize..=5,
        vis in any::<(bool, bool)>(),
    ) {
        let mut d = doc();
        let e = &mut d.elements[0];
        e.font_size = size;
        e.origin = origin;
        e.effects.fill.color = [colors[0], colors[1], colors[2]].map(dequantize);
        e.effects.border.color = [colors[3], colors[4], colors[5]].map(dequantize);
        e.effects.shadow.color = [colors[6], colors[7], colors[8]].map(dequantize);
        e.effects.shadow.blur = blur;
        e.effects.border.width_bin = bin;
        e.effects.border.visible = vis.0;
        e.effects.shadow.visible = vis.1;
        let back = document_from_json(&document_to_json(&d).unwrap(), None).unwrap();
        prop_assert_eq!(back, d);
    }
}
