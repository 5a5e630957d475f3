#![no_main]

use libfuzzer_sys::fuzz_target;
use spectrack::pipeline::{read_features_csv, write_features_csv};

fuzz_target!(|data: &[u8]| {
    if let Ok(steps) = read_features_csv(data) {
        let mut buf = Vec::new();
        write_features_csv(&steps, &mut buf).unwrap();
        assert_eq!(read_features_csv(&buf[..]).unwrap(), steps);
    }
});
