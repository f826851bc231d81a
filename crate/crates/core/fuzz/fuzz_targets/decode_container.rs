#![no_main]

use ckptmerge::io::container::{decode_container, encode_container};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(map) = decode_container(data) {
        // anything accepted re-encodes to something that decodes identically
        let again = decode_container(&encode_container(&map)).expect("re-encoded container decodes");
        assert_eq!(again, map);
    }
});
