//! Noisy-label sidecars: one decimal label per line, in dataset order.

use std::path::Path;

use super::Dataset;
use crate::error::{Error, Result};

fn parse_error(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// Parse sidecar text into labels, checking count and range. `path` is
/// only used in error messages; line numbers are 1-based.
pub fn parse_sidecar(text: &str, num_classes: usize, expected: usize, path: &Path) -> Result<Vec<usize>> {
    let body = text.strip_suffix('\n').unwrap_or(text);
    let lines: Vec<&str> = if body.is_empty() && expected == 0 {
        Vec::new()
    } else {
        body.split('\n').collect()
    };
    let mut labels = Vec::with_capacity(lines.len());
    for (i, raw) in lines.iter().enumerate() {
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        let y: usize = line
            .trim()
            .parse()
            .map_err(|_| parse_error(path, i + 1, format!("`{line}` is not a non-negative integer")))?;
        if y >= num_classes {
            return Err(parse_error(
                path,
                i + 1,
                format!("label {y} outside [0, {num_classes})"),
            ));
        }
        labels.push(y);
    }
    if labels.len() != expected {
        return Err(parse_error(
            path,
            labels.len(),
            format!(
                "sidecar has {} labels but the dataset has {expected} examples",
                labels.len()
            ),
        ));
    }
    Ok(labels)
}

/// Replace noisy labels with those listed in the sidecar at `path`.
pub fn load_noisy_sidecar(dataset: &Dataset, path: &Path) -> Result<Dataset> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let labels = parse_sidecar(&text, dataset.num_classes(), dataset.len(), path)?;
    dataset.with_noisy_labels(&labels)
}

/// Canonical sidecar text for the dataset's noisy labels.
pub fn dump_sidecar(dataset: &Dataset) -> String {
    let mut out = String::with_capacity(dataset.len() * 3);
    for ex in dataset.examples() {
        out.push_str(&ex.noisy_label.to_string());
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::make_gaussian_blobs;
    use proptest::prelude::*;

    fn dataset(n: usize, c: usize) -> Dataset {
        make_gaussian_blobs(n, c, c, 1.0, 0).unwrap()
    }

    #[test]
    fn clean_sidecar_has_no_noise() {
        let d = dataset(10, 10);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("labels.txt");
        std::fs::write(&p, dump_sidecar(&d)).unwrap();
        let loaded = load_noisy_sidecar(&d, &p).unwrap();
        assert_eq!(loaded.truth_mask().unwrap().count(), 0);
    }

    #[test]
    fn count_mismatch_is_reported() {
        let text = "0\n1\n2\n";
        let err = parse_sidecar(text, 10, 4, Path::new("s.txt")).unwrap_err();
        assert!(err.to_string().contains("3 labels"), "{err}");
    }

    #[test]
    fn range_error_names_line() {
        let err = parse_sidecar("1\n12\n3\n", 10, 3, Path::new("s.txt")).unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn non_integer_line_is_rejected() {
        for bad in ["1\nx\n2\n", "1\n-1\n2\n", "1\n\n2\n", "1\n2.0\n2\n"] {
            match parse_sidecar(bad, 10, 3, Path::new("s")).unwrap_err() {
                Error::Parse { line, .. } => assert_eq!(line, 2, "{bad:?}"),
                other => panic!("unexpected {other}"),
            }
        }
    }

    #[test]
    fn missing_file_is_io_error() {
        let d = dataset(3, 3);
        assert!(matches!(
            load_noisy_sidecar(&d, Path::new("/nonexistent/sidecar")),
            Err(Error::Io { .. })
        ));
    }

    proptest! {
        #[test]
        fn load_then_dump_is_byte_identical(labels in prop::collection::vec(0usize..7, 7..60)) {
            let d = dataset(labels.len(), 7);
            let text: String = labels.iter().map(|y| format!("{y}\n")).collect();
            let dir = tempfile::tempdir().unwrap();
            let p = dir.path().join("s.txt");
            std::fs::write(&p, &text).unwrap();
            let loaded = load_noisy_sidecar(&d, &p).unwrap();
            prop_assert_eq!(dump_sidecar(&loaded), text);
        }
    }
}
