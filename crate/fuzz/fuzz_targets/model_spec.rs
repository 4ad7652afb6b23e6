#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(src) = std::str::from_utf8(data) {
        if let Ok(model) = gaplab::model::parse_model_spec(src) {
            let _ = model.describe();
            // centering runs Newton on the parsed rates; errors are fine, panics are not
            let _ = model.center(100.0);
        }
    }
});
