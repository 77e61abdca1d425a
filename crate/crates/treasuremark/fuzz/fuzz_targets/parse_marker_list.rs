#![no_main]

use libfuzzer_sys::fuzz_target;
use treasuremark::markup::{parse_marker_list, serialize_marker_list};

fuzz_target!(|data: &[u8]| {
    let Ok(input) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(list) = parse_marker_list(input) {
        // anything the strict parser accepts must round-trip
        let serialized = serialize_marker_list(&list);
        assert_eq!(parse_marker_list(&serialized).unwrap(), list);
    }
});
