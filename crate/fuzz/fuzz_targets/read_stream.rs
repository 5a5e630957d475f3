#![no_main]

use libfuzzer_sys::fuzz_target;
use spectrack::activation_io::read_stream;

fuzz_target!(|data: &[u8]| {
    if let Ok(reader) = read_stream(data) {
        let width = reader.header().frame_width();
        for frame in reader {
            match frame {
                Ok(f) => assert_eq!(f.values.len(), width),
                Err(_) => break,
            }
        }
    }
});
