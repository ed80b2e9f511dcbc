#![no_main]

use framefuse::dataset_io::{encode_dataset_binary, parse_dataset_binary};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(ds) = parse_dataset_binary(data) {
        let bytes = encode_dataset_binary(&ds).unwrap();
        let again = parse_dataset_binary(&bytes).unwrap();
        assert_eq!(encode_dataset_binary(&again).unwrap(), bytes);
    }
});
