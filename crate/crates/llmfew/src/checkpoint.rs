//! Checkpoint directory format.
//!
//! A checkpoint is a directory with a `meta` text file (`key value` lines)
//! and one binary file per named weight. Array files are a `u32`
//! little-endian rank, `u64` little-endian dimensions, then the values as
//! little-endian `f32`.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub fn write_array(path: &Path, shape: &[usize], data: &[f32]) -> Result<()> {
    let expect: usize = shape.iter().product();
    assert_eq!(expect, data.len(), "shape/data length mismatch");
    let mut buf = Vec::with_capacity(4 + shape.len() * 8 + data.len() * 4);
    buf.extend_from_slice(&(shape.len() as u32).to_le_bytes());
    for &dim in shape {
        buf.extend_from_slice(&(dim as u64).to_le_bytes());
    }
    for &v in data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&buf).map_err(|e| Error::io(path, e))
}

pub fn read_array(path: &Path) -> Result<(Vec<usize>, Vec<f32>)> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    let bad = |msg: &str| Error::Checkpoint {
        path: path.to_path_buf(),
        offending: vec![msg.to_string()],
    };
    if bytes.len() < 4 {
        return Err(bad("truncated header"));
    }
    let rank = u32::from_le_bytes(bytes[0..4].try_into().unwrap()) as usize;
    let mut offset = 4;
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        if bytes.len() < offset + 8 {
            return Err(bad("truncated shape header"));
        }
        shape.push(u64::from_le_bytes(bytes[offset..offset + 8].try_into().unwrap()) as usize);
        offset += 8;
    }
    let count: usize = shape.iter().product();
    if bytes.len() != offset + count * 4 {
        return Err(bad(&format!(
            "payload is {} bytes, shape {:?} needs {}",
            bytes.len() - offset,
            shape,
            count * 4
        )));
    }
    let mut data = Vec::with_capacity(count);
    for i in 0..count {
        let start = offset + i * 4;
        data.push(f32::from_le_bytes(bytes[start..start + 4].try_into().unwrap()));
    }
    Ok((shape, data))
}

pub fn write_meta(path: &Path, entries: &[(&str, String)]) -> Result<()> {
    let mut text = String::new();
    for (key, value) in entries {
        text.push_str(&format!("{key} {value}\n"));
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_meta(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut map = BTreeMap::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once(' ').ok_or_else(|| Error::Checkpoint {
            path: path.to_path_buf(),
            offending: vec![format!("malformed meta line {line:?}")],
        })?;
        map.insert(key.to_string(), value.trim().to_string());
    }
    Ok(map)
}

pub fn meta_usize(map: &BTreeMap<String, String>, key: &str, path: &Path) -> Result<usize> {
    map.get(key)
        .and_then(|v| v.parse::<usize>().ok())
        .ok_or_else(|| Error::Checkpoint {
            path: path.to_path_buf(),
            offending: vec![format!("meta key {key} missing or not an integer")],
        })
}
