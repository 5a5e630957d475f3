#![no_main]

use libfuzzer_sys::fuzz_target;
use spectrack::recurrent::{read_model, write_model};

fuzz_target!(|data: &[u8]| {
    if let Ok(model) = read_model(data) {
        let mut buf = Vec::new();
        write_model(&model, &mut buf).unwrap();
        assert_eq!(read_model(&buf).unwrap(), model);
    }
});
