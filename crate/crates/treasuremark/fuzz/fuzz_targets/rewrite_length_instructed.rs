#![no_main]

use libfuzzer_sys::fuzz_target;
use treasuremark::inference::rewrite_length_instructed;

fuzz_target!(|data: &[u8]| {
    let Ok(prompt) = std::str::from_utf8(data) else {
        return;
    };
    if let Some(rewrite) = rewrite_length_instructed(prompt) {
        // the stripped prompt is always a suffix of the original
        assert!(prompt.ends_with(&rewrite.stripped_prompt));
        assert_eq!(rewrite.markers.len(), 1);
    }
});
