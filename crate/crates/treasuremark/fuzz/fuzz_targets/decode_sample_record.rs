#![no_main]

use libfuzzer_sys::fuzz_target;
use treasuremark::dataset::SampleRecord;

fuzz_target!(|data: &[u8]| {
    let Ok(line) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(record) = serde_json::from_str::<SampleRecord>(line) {
        // decoded records re-encode without panicking
        let _ = serde_json::to_string(&record).unwrap();
    }
});
