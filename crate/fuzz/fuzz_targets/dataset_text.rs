#![no_main]

use framefuse::dataset_io::{read_dataset_text, write_dataset_text};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(ds) = read_dataset_text(data) {
        let mut out = Vec::new();
        write_dataset_text(&ds, &mut out).unwrap();
        assert_eq!(read_dataset_text(&out[..]).unwrap(), ds);
    }
});
