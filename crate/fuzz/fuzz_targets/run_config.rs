#![no_main]

use libfuzzer_sys::fuzz_target;
use spectrack::config::RunConfig;

fuzz_target!(|text: &str| {
    if let Ok(cfg) = RunConfig::parse(text) {
        let again = RunConfig::parse(&cfg.to_text()).unwrap();
        assert_eq!(again.to_text(), cfg.to_text());
    }
});
