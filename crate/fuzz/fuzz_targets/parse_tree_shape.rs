#![no_main]

use libfuzzer_sys::fuzz_target;
use tnsketch::tree::TreeShape;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(shape) = TreeShape::from_json(text) {
        let back = TreeShape::from_json(&shape.to_json()).expect("serialized shape parses");
        assert_eq!(back.dims(), shape.dims());
    }
});
