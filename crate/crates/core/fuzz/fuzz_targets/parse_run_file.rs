#![no_main]

use ckptmerge::io::manifest::parse_run_file;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|text: &str| {
    let _ = parse_run_file(text);
});
