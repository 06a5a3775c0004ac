// SPDX-License-Identifier: Apache-2.0

//! Dataset CSV: header `bag_id,patch_id,label,f0,...,f{n-1}`, one row per
//! patch, LF line endings, no quoting.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use super::{valid_id, FeatureDataset, PatchRecord};
use crate::error::{Error, Result};

/// Loads a labeled dataset; every row needs a label in `0..num_grades`.
pub fn load_csv(path: impl AsRef<Path>, num_grades: usize) -> Result<FeatureDataset> {
    read(path.as_ref(), num_grades, false)
}

/// Like [`load_csv`], but an empty label cell is accepted as "unknown".
pub fn load_csv_unlabeled(path: impl AsRef<Path>, num_grades: usize) -> Result<FeatureDataset> {
    read(path.as_ref(), num_grades, true)
}

fn read(path: &Path, num_grades: usize, allow_unlabeled: bool) -> Result<FeatureDataset> {
    let err = |line: u64, reason: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        reason,
    };
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = ::csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .quoting(false)
        .from_reader(file);

    let header = reader
        .headers()
        .map_err(|e| err(1, format!("unreadable header: {e}")))?
        .clone();
    let cols: Vec<&str> = header.iter().collect();
    if cols.len() < 4 || cols[..3] != ["bag_id", "patch_id", "label"] {
        return Err(err(
            1,
            "header must start with bag_id,patch_id,label and have at least one feature column"
                .into(),
        ));
    }
    for (j, name) in cols[3..].iter().enumerate() {
        if *name != format!("f{j}") {
            return Err(err(1, format!("column {} should be f{j}, found {name:?}", j + 4)));
        }
    }
    let input_dim = cols.len() - 3;

    let mut records = Vec::new();
    let mut first_seen: HashMap<(String, String), u64> = HashMap::new();
    for row in reader.records() {
        let row = row.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            err(line, format!("unreadable row: {e}"))
        })?;
        let line = row.position().map_or(0, |p| p.line());
        if row.len() != cols.len() {
            return Err(err(
                line,
                format!("expected {} fields, found {}", cols.len(), row.len()),
            ));
        }
        let bag_id = &row[0];
        let patch_id = &row[1];
        for id in [bag_id, patch_id] {
            if !valid_id(id) {
                return Err(err(line, format!("invalid id {id:?}; ids match [A-Za-z0-9_-]+")));
            }
        }
        let label = match &row[2] {
            "" if allow_unlabeled => None,
            raw => {
                let y: usize = raw
                    .parse()
                    .map_err(|_| err(line, format!("label {raw:?} is not a nonnegative integer")))?;
                if y >= num_grades {
                    return Err(err(
                        line,
                        format!("label {y} out of range for {num_grades} grades"),
                    ));
                }
                Some(y)
            }
        };
        let features = row
            .iter()
            .skip(3)
            .enumerate()
            .map(|(j, raw)| match raw.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(err(line, format!("feature f{j} = {raw:?} is not a finite number"))),
            })
            .collect::<Result<Vec<f64>>>()?;
        let key = (bag_id.to_string(), patch_id.to_string());
        if let Some(prev) = first_seen.get(&key) {
            return Err(err(
                line,
                format!("duplicate (bag_id, patch_id) = ({bag_id}, {patch_id}), first at line {prev}"),
            ));
        }
        first_seen.insert(key, line);
        records.push(PatchRecord {
            bag_id: bag_id.to_string(),
            patch_id: patch_id.to_string(),
            label,
            features,
        });
    }
    FeatureDataset::new(input_dim, num_grades, records).map_err(|e| err(0, e.to_string()))
}

/// Writes `dataset` in the CSV schema. Floats use the shortest
/// representation that parses back to the same value.
pub fn write_csv(dataset: &FeatureDataset, out: &mut impl Write) -> std::io::Result<()> {
    write!(out, "bag_id,patch_id,label")?;
    for j in 0..dataset.input_dim() {
        write!(out, ",f{j}")?;
    }
    writeln!(out)?;
    for r in dataset.records() {
        write!(out, "{},{},", r.bag_id, r.patch_id)?;
        if let Some(y) = r.label {
            write!(out, "{y}")?;
        }
        for v in &r.features {
            write!(out, ",{v}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}

pub fn save_csv(dataset: &FeatureDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    write_csv(dataset, &mut out)
        .and_then(|_| out.flush())
        .map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    fn parse_line(e: Error) -> u64 {
        match e {
            Error::Parse { line, .. } => line,
            other => panic!("expected parse error, got {other}"),
        }
    }

    #[test]
    fn well_formed_file() {
        let f = write("bag_id,patch_id,label,f0,f1\na,0,1,0.5,1\na,1,1,-2,3e-3\nb,0,4,0,0\n");
        let ds = load_csv(f.path(), 5).unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.input_dim(), 2);
        assert_eq!(ds.records()[1].features, vec![-2.0, 3e-3]);
        assert_eq!(ds.bags().len(), 2);
    }

    #[test]
    fn label_out_of_range() {
        let f = write("bag_id,patch_id,label,f0\na,0,1,0.5\na,1,5,0.1\n");
        assert_eq!(parse_line(load_csv(f.path(), 5).unwrap_err()), 3);
    }

    #[test]
    fn duplicate_ids_name_both_lines() {
        let f = write("bag_id,patch_id,label,f0\na,0,1,0.5\nb,0,1,0.5\na,0,2,0.1\n");
        let e = load_csv(f.path(), 5).unwrap_err();
        let msg = e.to_string();
        assert!(msg.contains("line 4"), "{msg}");
        assert!(msg.contains("first at line 2"), "{msg}");
    }

    #[test]
    fn ragged_and_non_numeric_rows() {
        let f = write("bag_id,patch_id,label,f0,f1\na,0,1,0.5\n");
        assert_eq!(parse_line(load_csv(f.path(), 5).unwrap_err()), 2);
        let f = write("bag_id,patch_id,label,f0\na,0,1,abc\n");
        assert_eq!(parse_line(load_csv(f.path(), 5).unwrap_err()), 2);
        let f = write("bag_id,patch_id,label,f0\na,0,1,NaN\n");
        assert_eq!(parse_line(load_csv(f.path(), 5).unwrap_err()), 2);
    }

    #[test]
    fn bad_headers() {
        let f = write("bag,patch_id,label,f0\n");
        assert_eq!(parse_line(load_csv(f.path(), 5).unwrap_err()), 1);
        let f = write("bag_id,patch_id,label,f1\n");
        assert_eq!(parse_line(load_csv(f.path(), 5).unwrap_err()), 1);
        let f = write("bag_id,patch_id,label\n");
        assert_eq!(parse_line(load_csv(f.path(), 5).unwrap_err()), 1);
    }

    #[test]
    fn unlabeled_rows() {
        let f = write("bag_id,patch_id,label,f0\na,0,,0.5\n");
        assert!(load_csv(f.path(), 5).is_err());
        let ds = load_csv_unlabeled(f.path(), 5).unwrap();
        assert_eq!(ds.records()[0].label, None);
        assert!(!ds.is_labeled());
    }

    #[test]
    fn missing_file_is_io_error() {
        let e = load_csv("/nonexistent/d.csv", 5).unwrap_err();
        assert!(matches!(e, Error::Io { .. }));
    }

    #[test]
    fn writer_uses_lf_and_round_trips() {
        let f = write("bag_id,patch_id,label,f0,f1\na,0,1,0.1,1e-300\nb,x,,2,-0\n");
        let ds = load_csv_unlabeled(f.path(), 3).unwrap();
        let mut buf = Vec::new();
        write_csv(&ds, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(!text.contains('\r'));
        let g = write(&text);
        assert_eq!(load_csv_unlabeled(g.path(), 3).unwrap(), ds);
    }
}
