#![no_main]

use ckptmerge::naming::parse_model_name;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|text: &str| {
    if let Ok(name) = parse_model_name(text) {
        assert_eq!(name.to_string(), text);
    }
});
