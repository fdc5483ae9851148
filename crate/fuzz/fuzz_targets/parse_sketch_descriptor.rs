#![no_main]

use libfuzzer_sys::fuzz_target;
use tnsketch::sketching::SketchOp;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(op) = SketchOp::from_json(text) {
        let _ = op.shape();
        let back = SketchOp::from_json(&op.to_json()).expect("serialized sketch parses");
        assert_eq!(back.shape(), op.shape());
    }
});
