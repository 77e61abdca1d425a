#![no_main]

use libfuzzer_sys::fuzz_target;
use treasuremark::markup::{parse_lenient, serialize_marker_list};

fuzz_target!(|data: &[u8]| {
    let Ok(input) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok((list, _dropped)) = parse_lenient(input) {
        // whatever survives lenient parsing must serialize and re-parse
        let serialized = serialize_marker_list(&list);
        let (reparsed, redropped) = parse_lenient(&serialized).unwrap();
        assert_eq!(reparsed, list);
        assert!(redropped.is_empty());
    }
});
