#![no_main]

use ckptmerge::io::manifest::{encode_merge_manifest, parse_merge_manifest};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|text: &str| {
    if let Ok(manifest) = parse_merge_manifest(text) {
        let encoded = String::from_utf8(encode_merge_manifest(&manifest)).unwrap();
        assert_eq!(parse_merge_manifest(&encoded).unwrap(), manifest);
    }
});
