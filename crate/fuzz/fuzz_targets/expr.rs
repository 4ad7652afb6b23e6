#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(src) = std::str::from_utf8(data) {
        if let Ok(ast) = gaplab::expr::parse(src) {
            let _ = format!("{ast:?}");
        }
    }
});
