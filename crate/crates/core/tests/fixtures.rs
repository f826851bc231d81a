use std::path::{Path, PathBuf};

use ckptmerge::io::container::{decode_container, encode_container, read_container};
use ckptmerge::io::metrics_log::read_metrics_log;
use ckptmerge::naming::parse_model_name;
use ckptmerge::{DType, Error};

fn fixture(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(rel)
}

#[test]
fn valid_container_fixture() {
    let map = read_container(fixture("container/valid.safetensors")).unwrap();
    let a = map.get("a").unwrap();
    assert_eq!(a.dtype(), DType::BF16);
    assert_eq!(a.to_f64(), vec![0.5, 1.0, -8.0]);
    assert_eq!(map.get("b").unwrap().to_f64(), vec![1.0, -2.0, 3.5, 0.0]);
    // the writer reproduces the fixture byte for byte
    let bytes = std::fs::read(fixture("container/valid.safetensors")).unwrap();
    assert_eq!(encode_container(&map), bytes);
}

#[test]
fn every_negative_container_is_rejected() {
    let mut seen = 0;
    for entry in std::fs::read_dir(fixture("container")).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "bin") {
            let bytes = std::fs::read(&path).unwrap();
            assert!(decode_container(&bytes).is_err(), "{}", path.display());
            seen += 1;
        }
    }
    assert_eq!(seen, 10);
}

#[test]
fn negative_metrics_logs_report_lines() {
    let expect = [
        ("duplicate_id", 2),
        ("nonpositive_loss", 1),
        ("step_not_increasing", 2),
        ("not_json", 1),
    ];
    for (name, line) in expect {
        match read_metrics_log(fixture(&format!("metrics/{name}.jsonl"))) {
            Err(Error::MetricsLog { line: got, .. }) => assert_eq!(got, line, "{name}"),
            other => panic!("{name}: {other:?}"),
        }
    }
}

#[test]
fn name_corpus_parses() {
    let text = std::fs::read_to_string(fixture("names.txt")).unwrap();
    for name in text.lines() {
        assert_eq!(parse_model_name(name).unwrap().to_string(), name);
    }
}
