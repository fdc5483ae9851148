#![no_main]

use libfuzzer_sys::fuzz_target;
use tnsketch::net::{plan_contraction, GeneralNetwork};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(g) = GeneralNetwork::from_json(text) {
        if g.vertices.len() <= 12 {
            let _ = plan_contraction(&g);
        }
    }
});
