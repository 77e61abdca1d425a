#![no_main]

use libfuzzer_sys::fuzz_target;
use treasuremark::markup::extract_first_block;

fuzz_target!(|data: &[u8]| {
    let Ok(input) = std::str::from_utf8(data) else {
        return;
    };
    let (block, remainder) = extract_first_block(input);
    match block {
        Some(block) => {
            // at most one whitespace byte is removed beside the block
            let removed = input
                .len()
                .checked_sub(remainder.len() + block.raw_text.len())
                .expect("extraction never grows the text");
            assert!(removed <= 1);
        }
        None => assert_eq!(remainder, input),
    }
});
