//! Property tests for the template format and the parsers' totality.

use proptest::prelude::*;
use treasuremark::markup::{extract_first_block, parse_lenient, parse_marker_list, serialize_marker_list};
use treasuremark::taxonomy::{list_categories, Marker, MarkerList, MarkerValue, ValueKind};

fn marker_strategy() -> impl Strategy<Value = Marker> {
    (0..list_categories().len()).prop_flat_map(|i| {
        let spec = &list_categories()[i];
        match spec.value_kind {
            ValueKind::Integer => any::<u64>()
                .prop_map(move |n| Marker {
                    category: spec.category,
                    value: MarkerValue::Int(n),
                })
                .boxed(),
            ValueKind::Decimal => (-1_000_000i64..1_000_000)
                .prop_map(move |n| Marker {
                    category: spec.category,
                    value: MarkerValue::Decimal(n as f64 / 1e4),
                })
                .boxed(),
            // `Unspecified` is excluded: it is a valid enum value but the
            // lenient parser treats it as an abstention (see below)
            ValueKind::Enum | ValueKind::LanguageEnum => (0..spec.allowed_values.len())
                .prop_map(move |j| Marker {
                    category: spec.category,
                    value: MarkerValue::Token(spec.allowed_values[j]),
                })
                .prop_filter("abstention value", |m| {
                    m.value != MarkerValue::Token("Unspecified")
                })
                .boxed(),
        }
    })
}

fn marker_list_strategy() -> impl Strategy<Value = MarkerList> {
    proptest::collection::vec(marker_strategy(), 0..13).prop_map(|ms| ms.into_iter().collect())
}

proptest! {
    #[test]
    fn serialize_parse_round_trip(list in marker_list_strategy()) {
        let serialized = serialize_marker_list(&list);
        prop_assert_eq!(parse_marker_list(&serialized).unwrap(), list);
    }

    #[test]
    fn lenient_accepts_canonical_blocks_without_drops(list in marker_list_strategy()) {
        let serialized = serialize_marker_list(&list);
        let (parsed, dropped) = parse_lenient(&serialized).unwrap();
        prop_assert_eq!(parsed, list);
        prop_assert!(dropped.is_empty());
    }

    #[test]
    fn strict_parser_never_panics(input in "\\PC*") {
        let _ = parse_marker_list(&input);
    }

    #[test]
    fn lenient_parser_never_panics(input in "\\PC*") {
        let _ = parse_lenient(&input);
    }

    #[test]
    fn extraction_preserves_byte_count(
        prefix in "[a-z \\n]{0,40}",
        list in marker_list_strategy(),
        suffix in "[a-z \\n]{0,40}",
    ) {
        let input = format!("{prefix}{}\n{suffix}", serialize_marker_list(&list));
        let (block, remainder) = extract_first_block(&input);
        let block = block.unwrap();
        prop_assert_eq!(block.marker_list, list);
        let removed_ws = input.len() - remainder.len() - block.raw_text.len();
        prop_assert!(removed_ws <= 1, "removed more than one whitespace byte");
    }

    #[test]
    fn extraction_total_on_arbitrary_input(input in "\\PC*") {
        let (block, remainder) = extract_first_block(&input);
        match block {
            Some(block) => prop_assert!(remainder.len() + block.raw_text.len() <= input.len()),
            None => prop_assert_eq!(remainder, input),
        }
    }
}

#[test]
fn strict_keeps_unspecified_lenient_drops_it() {
    let block = "<MARKER_LIST>\n<domain>Unspecified</domain>\n</MARKER_LIST>";
    assert_eq!(parse_marker_list(block).unwrap().len(), 1);
    let (parsed, dropped) = parse_lenient(block).unwrap();
    assert!(parsed.is_empty());
    assert_eq!(dropped.len(), 1);
    assert_eq!(dropped[0].reason, treasuremark::markup::DropReason::Unspecified);
}
