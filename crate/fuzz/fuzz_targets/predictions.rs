#![no_main]

use framefuse::predictions::{format_predictions, parse_predictions};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(preds) = parse_predictions(text) {
        let mut out = Vec::new();
        if format_predictions(&preds, &mut out).is_ok() {
            parse_predictions(std::str::from_utf8(&out).unwrap()).unwrap();
        }
    }
});
