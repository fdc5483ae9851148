#![no_main]

use libfuzzer_sys::fuzz_target;
use tnsketch::tensor::io::{format_sparse, parse_tns};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(t) = parse_tns(text) {
        let back = parse_tns(&format_sparse(&t)).expect("formatted tensor parses");
        assert_eq!(back, t);
    }
});
