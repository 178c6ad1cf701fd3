//! Versioned binary tensor file.
//!
//! Layout (little endian):
//! `b"DRTF"`, `u32 version = 1`, `u32 metadata_len`, metadata bytes (UTF-8
//! JSON), `u32 tensor_count`, then per tensor `u32 name_len`, name bytes,
//! `u32 rows`, `u32 cols`, `rows * cols` `f64` values row-major.

use std::path::Path;

use super::Matrix;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"DRTF";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct TensorFile {
    pub metadata: serde_json::Value,
    pub tensors: Vec<(String, Matrix)>,
}

pub fn write_tensor_file(path: &Path, file: &TensorFile) -> Result<()> {
    let meta = serde_json::to_vec(&file.metadata)?;
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(meta.len() as u32).to_le_bytes());
    buf.extend_from_slice(&meta);
    buf.extend_from_slice(&(file.tensors.len() as u32).to_le_bytes());
    for (name, m) in &file.tensors {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&(m.nrows() as u32).to_le_bytes());
        buf.extend_from_slice(&(m.ncols() as u32).to_le_bytes());
        for v in m.iter() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let out = self.bytes.get(self.pos..self.pos.checked_add(n)?)?;
        self.pos += n;
        Some(out)
    }

    fn u32(&mut self) -> Option<u32> {
        Some(u32::from_le_bytes(self.take(4)?.try_into().ok()?))
    }

    fn f64(&mut self) -> Option<f64> {
        Some(f64::from_le_bytes(self.take(8)?.try_into().ok()?))
    }
}

pub fn read_tensor_file(path: &Path) -> Result<TensorFile> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |reason: &str| Error::BadModelFile {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };
    let mut r = Reader { bytes: &bytes, pos: 0 };
    if r.take(4) != Some(MAGIC.as_slice()) {
        return Err(bad("missing magic"));
    }
    if r.u32() != Some(VERSION) {
        return Err(bad("unsupported version"));
    }
    let meta_len = r.u32().ok_or_else(|| bad("truncated header"))? as usize;
    let meta = r.take(meta_len).ok_or_else(|| bad("truncated metadata"))?;
    let metadata: serde_json::Value = serde_json::from_slice(meta)?;
    let count = r.u32().ok_or_else(|| bad("truncated header"))?;
    let mut tensors = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let name_len = r.u32().ok_or_else(|| bad("truncated tensor"))? as usize;
        let name = String::from_utf8(r.take(name_len).ok_or_else(|| bad("truncated name"))?.to_vec())
            .map_err(|_| bad("tensor name is not UTF-8"))?;
        let rows = r.u32().ok_or_else(|| bad("truncated tensor"))? as usize;
        let cols = r.u32().ok_or_else(|| bad("truncated tensor"))? as usize;
        let mut values = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            values.push(r.f64().ok_or_else(|| bad("truncated values"))?);
        }
        let m = Matrix::from_shape_vec((rows, cols), values).map_err(|_| bad("bad shape"))?;
        tensors.push((name, m));
    }
    if r.pos != bytes.len() {
        return Err(bad("trailing bytes"));
    }
    Ok(TensorFile { metadata, tensors })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_bit_exact() {
        let dir = std::env::temp_dir().join(format!("drtf-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("t.bin");
        let file = TensorFile {
            metadata: serde_json::json!({"kind": "test", "h": 3}),
            tensors: vec![
                (
                    "a".into(),
                    Matrix::from_shape_fn((2, 3), |(i, j)| (i as f64 + 0.1) / (j as f64 + 0.3)),
                ),
                ("b.bias".into(), Matrix::from_elem((1, 4), -1e-300)),
            ],
        };
        write_tensor_file(&path, &file).unwrap();
        assert_eq!(read_tensor_file(&path).unwrap(), file);
        std::fs::write(&path, b"DRTF\x02\0\0\0").unwrap();
        assert!(read_tensor_file(&path).is_err());
        std::fs::remove_dir_all(dir).ok();
    }
}
