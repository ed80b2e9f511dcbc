#![no_main]

use framefuse::checkpoint::{checkpoint_to_string, parse_checkpoint};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(trainer) = parse_checkpoint(data) {
        if let Ok(text) = checkpoint_to_string(&trainer) {
            assert_eq!(parse_checkpoint(text.as_bytes()).unwrap(), trainer);
        }
    }
});
