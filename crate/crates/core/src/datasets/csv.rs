//! Comma-separated interchange: one record per row, decimal floats.
//!
//! Values mode: `d_x` key fields then `d_y` value fields. Label mode: `d_x`
//! key fields then one label field; labels become class ids in order of
//! first appearance with one-hot class embeddings. Lines starting with `#`
//! are comments.

use std::fs::File;
use std::io::Read;
use std::path::Path;

use ::csv::{ReaderBuilder, StringRecord, Trim};

use crate::classify::ClassHead;
use crate::datasets::KvDataset;
use crate::error::{Error, Result};
use crate::tensor::EmbeddingMatrix;

fn records<R: Read>(input: R) -> impl Iterator<Item = Result<(u64, StringRecord)>> {
    ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(Trim::All)
        .comment(Some(b'#'))
        .from_reader(input)
        .into_records()
        .map(|rec| {
            let rec = rec.map_err(|e| {
                let line = e.position().map_or(0, |p| p.line());
                Error::CsvFormat {
                    line,
                    message: e.to_string(),
                }
            })?;
            let line = rec.position().map_or(0, |p| p.line());
            Ok((line, rec))
        })
}

fn check_width(line: u64, rec: &StringRecord, want: usize) -> Result<()> {
    if rec.len() != want {
        return Err(Error::CsvFormat {
            line,
            message: format!("expected {want} fields, found {}", rec.len()),
        });
    }
    Ok(())
}

fn parse_float(line: u64, column: usize, field: &str) -> Result<f64> {
    match field.parse::<f64>() {
        Ok(x) if x.is_finite() => Ok(x),
        Ok(_) => Err(Error::CsvFormat {
            line,
            message: format!("field {} is not finite: {field:?}", column + 1),
        }),
        Err(_) => Err(Error::CsvFormat {
            line,
            message: format!("field {} is not a number: {field:?}", column + 1),
        }),
    }
}

fn check_dims(d_x: usize, d_y: usize) -> Result<()> {
    if d_x == 0 || d_y == 0 {
        return Err(Error::InvalidInput(format!(
            "dimensions must be positive, got {d_x}x{d_y}"
        )));
    }
    Ok(())
}

/// Parses values-mode CSV from any reader.
pub fn parse_csv<R: Read>(input: R, d_x: usize, d_y: usize, name: &str) -> Result<KvDataset> {
    check_dims(d_x, d_y)?;
    let mut keys = Vec::new();
    let mut values = Vec::new();
    for rec in records(input) {
        let (line, rec) = rec?;
        check_width(line, &rec, d_x + d_y)?;
        for (j, field) in rec.iter().enumerate() {
            let x = parse_float(line, j, field)?;
            if j < d_x {
                keys.push(x);
            } else {
                values.push(x);
            }
        }
    }
    let rows = keys.len() / d_x;
    KvDataset::with_values(
        name,
        EmbeddingMatrix::new(rows, d_x, keys)?,
        EmbeddingMatrix::new(rows, d_y, values)?,
    )
}

/// Parses label-mode CSV from any reader.
pub fn parse_csv_labeled<R: Read>(input: R, d_x: usize, name: &str) -> Result<KvDataset> {
    check_dims(d_x, 1)?;
    let mut keys = Vec::new();
    let mut labels = Vec::new();
    let mut names: Vec<String> = Vec::new();
    for rec in records(input) {
        let (line, rec) = rec?;
        check_width(line, &rec, d_x + 1)?;
        for (j, field) in rec.iter().take(d_x).enumerate() {
            keys.push(parse_float(line, j, field)?);
        }
        let label = &rec[d_x];
        if label.is_empty() {
            return Err(Error::CsvFormat {
                line,
                message: "empty label".into(),
            });
        }
        let id = match names.iter().position(|n| n == label) {
            Some(i) => i,
            None => {
                names.push(label.to_owned());
                names.len() - 1
            }
        };
        labels.push(id as u32);
    }
    let classes = names.len();
    if classes < 2 {
        return Err(Error::Dataset(format!(
            "label-mode CSV needs at least 2 distinct labels, found {classes}"
        )));
    }
    let head = ClassHead::new(
        (0..classes as u32).collect(),
        names,
        EmbeddingMatrix::identity(classes),
    )?;
    let rows = labels.len();
    KvDataset::with_labels(name, EmbeddingMatrix::new(rows, d_x, keys)?, labels, head)
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

pub fn load_csv(path: impl AsRef<Path>, d_x: usize, d_y: usize) -> Result<KvDataset> {
    let path = path.as_ref();
    parse_csv(open(path)?, d_x, d_y, &stem(path))
}

pub fn load_csv_labeled(path: impl AsRef<Path>, d_x: usize) -> Result<KvDataset> {
    let path = path.as_ref();
    parse_csv_labeled(open(path)?, d_x, &stem(path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::Targets;

    #[test]
    fn values_mode() {
        let ds = parse_csv("1,2,3\n4,5,6\n".as_bytes(), 2, 1, "t").unwrap();
        assert_eq!(ds.keys().shape(), (2, 2));
        assert_eq!(ds.keys().row(1), &[4.0, 5.0]);
        match ds.targets() {
            Targets::Values(v) => assert_eq!(v.as_slice(), &[3.0, 6.0]),
            _ => panic!(),
        }
    }

    #[test]
    fn scientific_notation_and_whitespace() {
        let ds = parse_csv("# comment\n 1e-3 , -2.5E2\n".as_bytes(), 1, 1, "t").unwrap();
        assert_eq!(ds.keys().get(0, 0), 0.001);
        assert_eq!(ds.value_matrix().unwrap().get(0, 0), -250.0);
    }

    #[test]
    fn field_count_mismatch_names_line() {
        match parse_csv("1,2,3\n4,5\n".as_bytes(), 2, 1, "t") {
            Err(Error::CsvFormat { line, message }) => {
                assert_eq!(line, 2);
                assert!(message.contains("expected 3"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unparsable_and_non_finite() {
        assert!(matches!(
            parse_csv("1,x\n".as_bytes(), 1, 1, "t"),
            Err(Error::CsvFormat { line: 1, .. })
        ));
        assert!(matches!(
            parse_csv("1,2\ninf,0\n".as_bytes(), 1, 1, "t"),
            Err(Error::CsvFormat { line: 2, .. })
        ));
    }

    #[test]
    fn label_mode() {
        let ds = parse_csv_labeled("1,0,dog\n0,1,cat\n1,1,dog\n".as_bytes(), 2, "t").unwrap();
        assert_eq!(ds.labels(), Some(&[0u32, 1, 0][..]));
        let head = ds.head().unwrap();
        assert_eq!(head.names(), &["dog".to_string(), "cat".to_string()]);
        assert_eq!(head.values(), &EmbeddingMatrix::identity(2));
        assert!(matches!(
            parse_csv_labeled("1,a\n2,a\n".as_bytes(), 1, "t"),
            Err(Error::Dataset(_))
        ));
    }

    #[test]
    fn empty_input_is_empty_dataset() {
        let ds = parse_csv("".as_bytes(), 2, 3, "t").unwrap();
        assert_eq!((ds.len(), ds.d_x(), ds.d_y()), (0, 2, 3));
    }
}
