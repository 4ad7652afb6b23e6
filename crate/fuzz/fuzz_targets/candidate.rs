#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Some((&dim, rest)) = data.split_first() else { return };
    let dim = 1 + (dim as usize % 3);
    if let Ok(src) = std::str::from_utf8(rest) {
        if let Ok(c) = gaplab::lyapunov::parse_candidate(src, dim) {
            let x = vec![0.5; dim];
            let _ = (c.value(&x), c.gradient(&x), c.hessian(&x), c.describe());
        }
    }
});
