//! UEA `.ts` text format: parsing and serialization.
//!
//! The format is line oriented: `#` comment lines, `@directive` header
//! lines, then `@data` followed by one instance per line. Channels are
//! comma-separated value lists separated by `:`, with the class label after
//! the final `:`. Missing values are `?` and are repaired by carrying the
//! last observation forward (leading gaps take the first observed value).
//! Unequal-length channels are right-padded with their last value up to the
//! longest series in the file.

use std::fs;
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};

use super::dataset::{pad_values, Dataset, DatasetPair, MultivariateSeries, Split};

#[derive(Debug, Default)]
struct Header {
    problem_name: Option<String>,
    timestamps: Option<bool>,
    dimensions: Option<usize>,
    series_length: Option<usize>,
    equal_length: Option<bool>,
    class_labels: Option<Vec<String>>,
}

/// Parse a `.ts` file. The split is inferred from the file name
/// (`*_TRAIN.ts` / `*_TEST.ts`), defaulting to train.
pub fn parse_ts_file(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let display = path.display().to_string();
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().to_string())
        .unwrap_or_default();
    let split = if stem.to_ascii_uppercase().ends_with("_TEST") {
        Split::Test
    } else {
        Split::Train
    };
    let fallback = stem
        .trim_end_matches("_TRAIN")
        .trim_end_matches("_TEST")
        .to_string();
    parse_ts_str(&text, &display, &fallback, split)
}

/// Parse `.ts` text. `source` is used in error messages, `fallback_name`
/// when the header lacks `@problemName`.
pub fn parse_ts_str(
    text: &str,
    source: &str,
    fallback_name: &str,
    split: Split,
) -> Result<Dataset> {
    let mut header = Header::default();
    let mut instances: Vec<MultivariateSeries> = Vec::new();
    let mut in_data = false;
    let mut data_row = 0usize;

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if !in_data {
            if let Some(rest) = line.strip_prefix('@') {
                if rest.eq_ignore_ascii_case("data") {
                    if header.class_labels.is_none() {
                        return Err(Error::Parse {
                            path: source.into(),
                            line: line_no,
                            msg: "@data reached without @classLabel true <labels>".into(),
                        });
                    }
                    in_data = true;
                    continue;
                }
                parse_directive(rest, &mut header, source, line_no)?;
                continue;
            }
            return Err(Error::Parse {
                path: source.into(),
                line: line_no,
                msg: format!("expected @directive before @data, got {line:?}"),
            });
        }
        data_row += 1;
        let inst = parse_data_row(line, &header, source, data_row)?;
        instances.push(inst);
    }

    if instances.is_empty() {
        return Err(Error::Parse {
            path: source.into(),
            line: text.lines().count(),
            msg: "no data rows".into(),
        });
    }

    // file-level padding to the longest instance
    let max_len = instances.iter().map(|i| i.len()).max().unwrap_or(0);
    if let (Some(true), Some(expect)) = (header.equal_length, header.series_length) {
        if let Some(bad) = instances.iter().position(|i| i.len() != expect) {
            return Err(Error::Structure {
                path: source.into(),
                row: bad + 1,
                msg: format!(
                    "length {} disagrees with declared @seriesLength {expect}",
                    instances[bad].len()
                ),
            });
        }
    }
    for inst in &mut instances {
        if inst.len() < max_len {
            inst.values = pad_values(&inst.values, max_len);
        }
    }

    let name = header
        .problem_name
        .unwrap_or_else(|| fallback_name.to_string());
    let class_names = header.class_labels.expect("checked at @data");
    Dataset::new(name, split, instances, class_names)
}

fn parse_directive(rest: &str, header: &mut Header, source: &str, line_no: usize) -> Result<()> {
    let mut parts = rest.split_whitespace();
    let key = parts.next().unwrap_or_default().to_ascii_lowercase();
    let err = |msg: String| Error::Parse {
        path: source.into(),
        line: line_no,
        msg,
    };
    match key.as_str() {
        "problemname" => {
            let name = parts.next().ok_or_else(|| err("@problemName needs a value".into()))?;
            header.problem_name = Some(name.to_string());
        }
        "timestamps" => {
            header.timestamps = Some(parse_bool(parts.next(), "@timeStamps").map_err(err)?);
            if header.timestamps == Some(true) {
                return Err(err("@timeStamps true is not supported".into()));
            }
        }
        "missing" | "univariate" | "targetlabel" => {
            // informative only; '?' repair happens regardless of @missing
            parse_bool(parts.next(), &format!("@{key}")).map_err(err)?;
        }
        "dimensions" => {
            let v = parts
                .next()
                .and_then(|v| v.parse::<usize>().ok())
                .ok_or_else(|| err("@dimensions needs a positive integer".into()))?;
            header.dimensions = Some(v);
        }
        "equallength" => {
            header.equal_length = Some(parse_bool(parts.next(), "@equalLength").map_err(err)?);
        }
        "serieslength" => {
            let v = parts
                .next()
                .and_then(|v| v.parse::<usize>().ok())
                .ok_or_else(|| err("@seriesLength needs a positive integer".into()))?;
            header.series_length = Some(v);
        }
        "classlabel" => {
            let flag = parse_bool(parts.next(), "@classLabel").map_err(err)?;
            if !flag {
                return Err(err("@classLabel false: file has no labels to classify".into()));
            }
            let labels: Vec<String> = parts.map(|s| s.to_string()).collect();
            if labels.is_empty() {
                return Err(err("@classLabel true needs at least one label".into()));
            }
            header.class_labels = Some(labels);
        }
        _ => {
            // unknown directives are tolerated for forward compatibility
        }
    }
    Ok(())
}

fn parse_bool(tok: Option<&str>, what: &str) -> std::result::Result<bool, String> {
    match tok.map(|s| s.to_ascii_lowercase()).as_deref() {
        Some("true") => Ok(true),
        Some("false") => Ok(false),
        other => Err(format!("{what} expects true/false, got {other:?}")),
    }
}

fn parse_data_row(
    line: &str,
    header: &Header,
    source: &str,
    row: usize,
) -> Result<MultivariateSeries> {
    let mut parts: Vec<&str> = line.split(':').collect();
    if parts.len() < 2 {
        return Err(Error::Structure {
            path: source.into(),
            row,
            msg: "expected <channels>:<label>".into(),
        });
    }
    let label = parts.pop().unwrap().trim().to_string();
    if label.is_empty() {
        return Err(Error::Structure {
            path: source.into(),
            row,
            msg: "empty class label".into(),
        });
    }
    if let Some(labels) = &header.class_labels {
        if !labels.contains(&label) {
            return Err(Error::Label {
                path: source.into(),
                row,
                label,
            });
        }
    }
    if let Some(dims) = header.dimensions {
        if parts.len() != dims {
            return Err(Error::Structure {
                path: source.into(),
                row,
                msg: format!("{} channels, header declares {dims}", parts.len()),
            });
        }
    }

    let mut channels: Vec<Vec<f64>> = Vec::with_capacity(parts.len());
    for (ci, chan) in parts.iter().enumerate() {
        let mut values = Vec::new();
        for tok in chan.split(',') {
            let tok = tok.trim();
            if tok.is_empty() {
                continue;
            }
            if tok == "?" {
                values.push(f64::NAN);
            } else {
                let v: f64 = tok.parse().map_err(|_| Error::Structure {
                    path: source.into(),
                    row,
                    msg: format!("channel {}: bad number {tok:?}", ci + 1),
                })?;
                values.push(v);
            }
        }
        if values.is_empty() {
            return Err(Error::Structure {
                path: source.into(),
                row,
                msg: format!("channel {} is empty", ci + 1),
            });
        }
        repair_missing(&mut values);
        channels.push(values);
    }

    // channels within an instance are padded to the instance maximum
    let max_len = channels.iter().map(Vec::len).max().unwrap_or(0);
    let dims = channels.len();
    let mut values = Array2::zeros((dims, max_len));
    for (m, chan) in channels.iter().enumerate() {
        let last = *chan.last().expect("non-empty");
        for t in 0..max_len {
            values[[m, t]] = if t < chan.len() { chan[t] } else { last };
        }
    }
    Ok(MultivariateSeries { values, label })
}

/// Last-observation-carried-forward; leading gaps take the first observed
/// value; an all-missing channel becomes zeros.
fn repair_missing(values: &mut [f64]) {
    let first = values.iter().copied().find(|v| !v.is_nan()).unwrap_or(0.0);
    let mut carry = first;
    for v in values.iter_mut() {
        if v.is_nan() {
            *v = carry;
        } else {
            carry = *v;
        }
    }
}

/// Serialize a dataset back to `.ts` text. Values use the shortest
/// round-trip decimal form, so parse(write(d)) reproduces d bit for bit.
pub fn write_ts(dataset: &Dataset) -> String {
    let mut out = String::new();
    out.push_str(&format!("@problemName {}\n", dataset.name));
    out.push_str("@timeStamps false\n");
    out.push_str("@missing false\n");
    out.push_str(&format!(
        "@univariate {}\n",
        if dataset.dims() == 1 { "true" } else { "false" }
    ));
    out.push_str(&format!("@dimensions {}\n", dataset.dims()));
    out.push_str("@equalLength true\n");
    out.push_str(&format!("@seriesLength {}\n", dataset.length()));
    out.push_str(&format!(
        "@classLabel true {}\n",
        dataset.class_names.join(" ")
    ));
    out.push_str("@data\n");
    for inst in &dataset.instances {
        let mut row = String::new();
        for m in 0..inst.channels() {
            let chan: Vec<String> = inst.values.row(m).iter().map(|v| format!("{v}")).collect();
            row.push_str(&chan.join(","));
            row.push(':');
        }
        row.push_str(&inst.label);
        out.push_str(&row);
        out.push('\n');
    }
    out
}

/// Load `<root>/<name>/<name>_TRAIN.ts` and `<name>_TEST.ts`, aligning the
/// two splits to a shared length.
pub fn load_dataset_dir(root: impl AsRef<Path>, name: &str) -> Result<DatasetPair> {
    let dir = root.as_ref().join(name);
    let train_path = dir.join(format!("{name}_TRAIN.ts"));
    let test_path = dir.join(format!("{name}_TEST.ts"));
    if !train_path.is_file() || !test_path.is_file() {
        return Err(Error::Setup(format!(
            "dataset {name} not found under {} (expected {name}_TRAIN.ts and {name}_TEST.ts)",
            dir.display()
        )));
    }
    let mut pair = DatasetPair {
        train: parse_ts_file(&train_path)?,
        test: parse_ts_file(&test_path)?,
    };
    pair.align_lengths();
    Ok(pair)
}

#[cfg(test)]
mod tests {
    use super::*;

    const SMALL: &str = "\
# tiny fixture
@problemName Tiny
@timeStamps false
@missing false
@univariate false
@dimensions 2
@equalLength true
@seriesLength 3
@classLabel true a b
@data
1.0,2.0,3.0:4.0,5.0,6.0:a
0.5,0.5,0.5:1.5,1.5,1.5:b
-1.0,0.0,1.0:2.0,2.0,2.0:a
";

    #[test]
    fn parses_fixture_with_declared_shapes() {
        let d = parse_ts_str(SMALL, "fixture", "Tiny", Split::Train).unwrap();
        assert_eq!(d.len(), 3);
        assert_eq!(d.dims(), 2);
        assert_eq!(d.length(), 3);
        assert_eq!(d.num_classes(), 2);
        assert_eq!(d.class_names, vec!["a".to_string(), "b".to_string()]);
        assert_eq!(d.instances[0].values[[1, 2]], 6.0);
        assert_eq!(d.instances[2].label, "a");
    }

    #[test]
    fn dimension_mismatch_names_the_row() {
        let text = SMALL.replace("0.5,0.5,0.5:1.5,1.5,1.5:b", "0.5,0.5,0.5:b");
        let err = parse_ts_str(&text, "fixture", "Tiny", Split::Train).unwrap_err();
        match err {
            Error::Structure { row, .. } => assert_eq!(row, 2),
            other => panic!("expected Structure, got {other:?}"),
        }
    }

    #[test]
    fn unknown_label_names_the_row() {
        let text = SMALL.replace("-1.0,0.0,1.0:2.0,2.0,2.0:a", "-1.0,0.0,1.0:2.0,2.0,2.0:zzz");
        let err = parse_ts_str(&text, "fixture", "Tiny", Split::Train).unwrap_err();
        match err {
            Error::Label { row, label, .. } => {
                assert_eq!(row, 3);
                assert_eq!(label, "zzz");
            }
            other => panic!("expected Label, got {other:?}"),
        }
    }

    #[test]
    fn malformed_header_names_the_line() {
        let text = SMALL.replace("@dimensions 2", "@dimensions two");
        let err = parse_ts_str(&text, "fixture", "Tiny", Split::Train).unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 6),
            other => panic!("expected Parse, got {other:?}"),
        }
    }

    #[test]
    fn missing_values_are_carried_forward() {
        let text = "\
@problemName Gaps
@classLabel true a b
@data
?,2.0,?,4.0:a
?,?,?:b
";
        let d = parse_ts_str(text, "fixture", "Gaps", Split::Train).unwrap();
        assert_eq!(
            d.instances[0].values.row(0).to_vec(),
            vec![2.0, 2.0, 2.0, 4.0]
        );
        // all-missing channel becomes zeros, then pads to file length 4
        assert_eq!(d.instances[1].values.row(0).to_vec(), vec![0.0; 4]);
    }

    #[test]
    fn unequal_lengths_pad_with_last_value() {
        let text = "\
@problemName Uneven
@equalLength false
@classLabel true a b
@data
1.0,2.0:a
5.0,6.0,7.0,8.0:b
";
        let d = parse_ts_str(text, "fixture", "Uneven", Split::Train).unwrap();
        assert_eq!(d.length(), 4);
        assert_eq!(d.instances[0].values.row(0).to_vec(), vec![1.0, 2.0, 2.0, 2.0]);
    }

    #[test]
    fn absent_file_is_an_io_error() {
        let dir = tempfile::tempdir().unwrap();
        let err = parse_ts_file(dir.path().join("nope.ts")).unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }

    #[test]
    fn split_and_name_come_from_the_file_name() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("Tiny_TEST.ts");
        std::fs::write(&path, SMALL.replace("@problemName Tiny\n", "")).unwrap();
        let d = parse_ts_file(&path).unwrap();
        assert_eq!(d.split, Split::Test);
        assert_eq!(d.name, "Tiny");
    }

    #[test]
    fn roundtrip_is_exact() {
        let d = parse_ts_str(SMALL, "fixture", "Tiny", Split::Train).unwrap();
        let text = write_ts(&d);
        let d2 = parse_ts_str(&text, "roundtrip", "Tiny", Split::Train).unwrap();
        assert_eq!(d, d2);
    }

    proptest::proptest! {
        #[test]
        fn roundtrip_random_values(seed in 0u64..200) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let dims = rng.random_range(1..4usize);
            let len = rng.random_range(1..12usize);
            let n = rng.random_range(2..8usize);
            let classes = ["c0".to_string(), "c1".to_string(), "c2".to_string()];
            let mut instances = Vec::new();
            for i in 0..n {
                let values = Array2::from_shape_fn((dims, len), |_| {
                    // mix of scales to stress the decimal formatter
                    let v: f64 = rng.random_range(-1e3..1e3);
                    if rng.random_bool(0.2) { v * 1e-7 } else { v }
                });
                instances.push(MultivariateSeries {
                    values,
                    label: classes[i % 3].clone(),
                });
            }
            let d = Dataset::new("Rand", Split::Test, instances, classes.to_vec()).unwrap();
            let d2 = parse_ts_str(&write_ts(&d), "roundtrip", "Rand", Split::Test).unwrap();
            proptest::prop_assert_eq!(d, d2);
        }
    }
}
