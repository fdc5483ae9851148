#![no_main]

use libfuzzer_sys::fuzz_target;
use tnsketch::net::ContractionPlan;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(plan) = ContractionPlan::from_json(text) {
        let back = ContractionPlan::from_json(&plan.to_json()).expect("serialized plan parses");
        assert_eq!(back.t_deg, plan.t_deg);
    }
});
