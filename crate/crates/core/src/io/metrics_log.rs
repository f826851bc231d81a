//! Line-delimited JSON metrics log, one saved checkpoint per line:
//!
//! ```text
//! {"checkpoint_id": "checkpoint-1000", "step": 1000, "train_loss": 0.4312}
//! ```
//!
//! Extra fields are ignored and blank lines are skipped.

use std::collections::HashSet;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub checkpoint_id: String,
    pub step: u64,
    pub train_loss: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsLog {
    pub rows: Vec<MetricsRow>,
}

impl MetricsLog {
    pub fn get(&self, checkpoint_id: &str) -> Option<&MetricsRow> {
        self.rows.iter().find(|r| r.checkpoint_id == checkpoint_id)
    }
}

pub fn parse_metrics_log(text: &str) -> Result<MetricsLog> {
    let mut rows: Vec<MetricsRow> = Vec::new();
    let mut seen = HashSet::new();
    for (index, line) in text.lines().enumerate() {
        let line_no = index + 1;
        let fail = |reason: String| Error::MetricsLog {
            line: line_no,
            reason,
        };
        if line.trim().is_empty() {
            continue;
        }
        let row: MetricsRow = serde_json::from_str(line).map_err(|e| fail(e.to_string()))?;
        if row.checkpoint_id.is_empty() {
            return Err(fail("empty checkpoint_id".into()));
        }
        if !(row.train_loss.is_finite() && row.train_loss > 0.0) {
            return Err(fail(format!("nonpositive loss {}", row.train_loss)));
        }
        if row.step == 0 {
            return Err(fail("step must be positive".into()));
        }
        if let Some(prev) = rows.last() {
            if row.step <= prev.step {
                return Err(fail(format!(
                    "step {} does not increase past {}",
                    row.step, prev.step
                )));
            }
        }
        if !seen.insert(row.checkpoint_id.clone()) {
            return Err(fail(format!("duplicate checkpoint_id {:?}", row.checkpoint_id)));
        }
        rows.push(row);
    }
    Ok(MetricsLog { rows })
}

pub fn read_metrics_log(path: impl AsRef<Path>) -> Result<MetricsLog> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let text = std::str::from_utf8(&bytes).map_err(|e| Error::MetricsLog {
        line: 0,
        reason: format!("not UTF-8: {e}"),
    })?;
    parse_metrics_log(text)
}

pub fn write_metrics_log(log: &MetricsLog, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::new();
    for row in &log.rows {
        serde_json::to_writer(&mut out, row).expect("row serializes");
        out.push(b'\n');
    }
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(&out))
        .map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line_error(text: &str) -> (usize, String) {
        match parse_metrics_log(text) {
            Err(Error::MetricsLog { line, reason }) => (line, reason),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn parses_valid_lines() {
        let log = parse_metrics_log(
            r#"{"checkpoint_id":"c1","step":100,"train_loss":0.9}
{"checkpoint_id":"c2","step":200,"train_loss":0.7,"lr":1e-5}

{"checkpoint_id":"c3","step":300,"train_loss":0.6}
"#,
        )
        .unwrap();
        assert_eq!(log.rows.len(), 3);
        assert_eq!(log.get("c2").unwrap().train_loss, 0.7);
    }

    #[test]
    fn rejects_duplicates_and_bad_losses() {
        let (line, reason) = line_error(
            "{\"checkpoint_id\":\"c1\",\"step\":1,\"train_loss\":0.9}\n{\"checkpoint_id\":\"c1\",\"step\":2,\"train_loss\":0.8}",
        );
        assert_eq!(line, 2);
        assert!(reason.contains("\"c1\""));

        let (line, reason) = line_error("{\"checkpoint_id\":\"c1\",\"step\":1,\"train_loss\":0}");
        assert_eq!(line, 1);
        assert!(reason.starts_with("nonpositive loss"));

        let (line, _) = line_error(
            "{\"checkpoint_id\":\"a\",\"step\":5,\"train_loss\":1}\n{\"checkpoint_id\":\"b\",\"step\":5,\"train_loss\":1}",
        );
        assert_eq!(line, 2);

        let (line, _) = line_error("\n\n{\"checkpoint_id\":\"a\",\"step\":\"x\"}");
        assert_eq!(line, 3);
    }

    #[test]
    fn write_then_read() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("metrics.jsonl");
        let log = MetricsLog {
            rows: vec![
                MetricsRow { checkpoint_id: "a".into(), step: 10, train_loss: 0.25 },
                MetricsRow { checkpoint_id: "b".into(), step: 20, train_loss: 0.125 },
            ],
        };
        write_metrics_log(&log, &path).unwrap();
        assert_eq!(read_metrics_log(&path).unwrap(), log);
    }
}
