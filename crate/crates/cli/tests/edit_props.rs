use std::sync::OnceLock;

use derender_cli::ops::{edit_value, parse_assignment};
use derender_core::atlas::{build_bundled_atlas, GlyphAtlas};
use derender_core::compositor::{Document, EffectSet, TextElement};
use derender_core::export::{document_from_value, document_value_inline};
use derender_core::imaging::{dequantize, RasterImage};
use proptest::prelude::*;

fn atlas() -> &'static GlyphAtlas {
    static A: OnceLock<GlyphAtlas> = OnceLock::new();
    A.get_or_init(|| build_bundled_atlas().unwrap())
}

fn doc() -> Document {
    Document {
        canvas_width: 120,
        canvas_height: 60,
        background: RasterImage::filled(120, 60, [0.2, 0.4, 0.6]),
        elements: vec![TextElement {
            text: "Hi".into(),
            font_index: 0,
            font_size: 30.0,
            origin: [10.0, 40.0],
            per_char_offsets: None,
            effects: EffectSet::plain([1.0, 1.0, 1.0]),
        }],
    }
}

proptest! {
    #[test]
    fn assignments_split_at_the_first_equals(path in "[a-z_\\[\\]0-9.]{1,20}", value in ".{0,20}") {
        prop_assume!(!path.contains('=') && !path.trim().is_empty());
        let (p, v) = parse_assignment(&format!("{path}={value}")).unwrap();
        prop_assert_eq!(p, path.trim());
        prop_assert_eq!(v, value);
    }

    #[test]
    fn color_patches_land_exactly(c in prop::array::uniform3(0u8..=255), size in 4.0f64..80.0) {
        let v = document_value_inline(&doc()).unwrap();
        let sets = vec![
            ("elements[0].effects.fill.color".to_string(), format!("[{},{},{}]", c[0], c[1], c[2])),
            ("elements[0].font_size".to_string(), size.to_string()),
        ];
        let out = edit_value(v, &sets, None, atlas()).unwrap();
        let d = document_from_value(out, None).unwrap();
        prop_assert_eq!(d.elements[0].effects.fill.color, c.map(dequantize));
        prop_assert_eq!(d.elements[0].font_size, size);
        prop_assert_eq!(&d.elements[0].effects.border, &doc().elements[0].effects.border);
    }

    #[test]
    fn out_of_range_colors_are_rejected(k in 0usize..3, bad in 256i64..100_000) {
        let v = document_value_inline(&doc()).unwrap();
        let mut c = [0i64; 3];
        c[k] = bad;
        let sets = vec![("elements[0].effects.fill.color".to_string(), format!("[{},{},{}]", c[0], c[1], c[2]))];
        let err = edit_value(v, &sets, None, atlas()).unwrap_err();
        prop_assert_eq!(err.field().map(|f| f.starts_with("elements[0].effects.fill.color")), Some(true));
    }
}
