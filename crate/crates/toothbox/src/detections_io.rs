//! JSON-lines detections: one object per detection,
//! `{"slice": int, "x_min": int, "y_min": int, "x_max": int, "y_max": int,
//! "label": int, "conf": float}`.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use toothbox_core::detect::{Detection2D, Label};
use toothbox_core::geom::Box2i;

use crate::IoError;

#[derive(Debug, Serialize, Deserialize)]
struct DetectionRecord {
    slice: u64,
    x_min: i32,
    y_min: i32,
    x_max: i32,
    y_max: i32,
    label: u8,
    conf: f64,
}

/// Parses a detections file, validating every record; within-slice order is
/// the file order. Blank lines are allowed; anything else malformed fails
/// with its line number.
pub fn load_detections(path: &Path) -> Result<BTreeMap<usize, Vec<Detection2D>>, IoError> {
    let file = File::open(path).map_err(|e| IoError::io(path, e))?;
    let reader = BufReader::new(file);
    let mut out: BTreeMap<usize, Vec<Detection2D>> = BTreeMap::new();

    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let bad = |message: String| IoError::BadLine { path: path.to_path_buf(), line: line_no, message };
        let line = line.map_err(|e| IoError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: DetectionRecord =
            serde_json::from_str(&line).map_err(|e| bad(format!("malformed detection: {e}")))?;
        let label = Label::new(rec.label).map_err(|e| bad(format!("{e}")))?;
        if rec.x_min >= rec.x_max || rec.y_min >= rec.y_max {
            return Err(bad(format!(
                "degenerate box [{}, {}) x [{}, {})",
                rec.x_min, rec.x_max, rec.y_min, rec.y_max
            )));
        }
        if !(0.0..=1.0).contains(&rec.conf) {
            return Err(bad(format!("confidence {} outside [0, 1]", rec.conf)));
        }
        out.entry(rec.slice as usize).or_default().push(Detection2D {
            slice: rec.slice as usize,
            rect: Box2i::new(rec.x_min, rec.y_min, rec.x_max, rec.y_max),
            label,
            confidence: rec.conf,
        });
    }
    Ok(out)
}

/// Writes detections as JSON lines, slices ascending, preserving the
/// within-slice order.
pub fn save_detections(
    dets: &BTreeMap<usize, Vec<Detection2D>>,
    path: &Path,
) -> Result<(), IoError> {
    let file = File::create(path).map_err(|e| IoError::io(path, e))?;
    let mut w = BufWriter::new(file);
    for (&slice, list) in dets {
        for d in list {
            let rec = DetectionRecord {
                slice: slice as u64,
                x_min: d.rect.x_min,
                y_min: d.rect.y_min,
                x_max: d.rect.x_max,
                y_max: d.rect.y_max,
                label: d.label.class(),
                conf: d.confidence,
            };
            let line = serde_json::to_string(&rec)
                .map_err(|e| IoError::Json { path: path.to_path_buf(), source: e })?;
            writeln!(w, "{line}").map_err(|e| IoError::io(path, e))?;
        }
    }
    w.flush().map_err(|e| IoError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn empty_file_is_empty_map() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        std::fs::write(&path, "").unwrap();
        assert!(load_detections(&path).unwrap().is_empty());
    }

    #[test]
    fn single_record() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        std::fs::write(
            &path,
            r#"{"slice": 12, "x_min": 3, "y_min": 4, "x_max": 10, "y_max": 11, "label": 5, "conf": 0.9}"#,
        )
        .unwrap();
        let map = load_detections(&path).unwrap();
        assert_eq!(map.len(), 1);
        let d = &map[&12][0];
        assert_eq!(d.rect, Box2i::new(3, 4, 10, 11));
        assert_eq!(d.label.class(), 5);
    }

    #[test]
    fn out_of_range_label_names_the_line() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        std::fs::write(
            &path,
            concat!(
                r#"{"slice": 1, "x_min": 0, "y_min": 0, "x_max": 2, "y_max": 2, "label": 4, "conf": 1.0}"#,
                "\n",
                r#"{"slice": 1, "x_min": 0, "y_min": 0, "x_max": 2, "y_max": 2, "label": 9, "conf": 1.0}"#,
            ),
        )
        .unwrap();
        match load_detections(&path) {
            Err(IoError::BadLine { line, message, .. }) => {
                assert_eq!(line, 2);
                assert!(message.contains('9'), "{message}");
            }
            other => panic!("expected BadLine, got {other:?}"),
        }
    }

    #[test]
    fn out_of_range_confidence_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        std::fs::write(
            &path,
            r#"{"slice": 1, "x_min": 0, "y_min": 0, "x_max": 2, "y_max": 2, "label": 4, "conf": 1.2}"#,
        )
        .unwrap();
        assert!(matches!(load_detections(&path), Err(IoError::BadLine { line: 1, .. })));
    }

    #[test]
    fn degenerate_box_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        std::fs::write(
            &path,
            r#"{"slice": 1, "x_min": 5, "y_min": 0, "x_max": 5, "y_max": 2, "label": 4, "conf": 1.0}"#,
        )
        .unwrap();
        assert!(matches!(load_detections(&path), Err(IoError::BadLine { line: 1, .. })));
    }

    #[test]
    fn malformed_json_names_the_line() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        std::fs::write(&path, "{not json}\n").unwrap();
        match load_detections(&path) {
            Err(IoError::BadLine { line, .. }) => assert_eq!(line, 1),
            other => panic!("expected BadLine, got {other:?}"),
        }
    }

    #[test]
    fn round_trip_preserves_order() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        let mut dets: BTreeMap<usize, Vec<Detection2D>> = BTreeMap::new();
        for (i, x) in [(0usize, 30), (0, 10), (2, 5)] {
            dets.entry(i).or_default().push(Detection2D {
                slice: i,
                rect: Box2i::new(x, 0, x + 4, 6),
                label: Label::new(2).unwrap(),
                confidence: 1.0,
            });
        }
        save_detections(&dets, &path).unwrap();
        assert_eq!(load_detections(&path).unwrap(), dets);
    }
}
