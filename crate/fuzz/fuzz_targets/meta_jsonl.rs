#![no_main]

use libfuzzer_sys::fuzz_target;
use spectrack::activation_io::{parse_meta_lines, write_meta_lines};

fuzz_target!(|text: &str| {
    if let Ok(metas) = parse_meta_lines(text) {
        let mut buf = Vec::new();
        write_meta_lines(&metas, &mut buf).unwrap();
        let again = parse_meta_lines(std::str::from_utf8(&buf).unwrap()).unwrap();
        assert_eq!(again, metas);
    }
});
