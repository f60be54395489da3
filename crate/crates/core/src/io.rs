//! On-disk formats: MAGF binary matrices, tab-separated edge lists and
//! line-per-node label files.
//!
//! MAGF layout (little-endian):
//!
//! ```text
//! "MAGF" | u32 version = 1 | u8 dtype (0 = f64, 1 = f32) | u64 rows | u64 cols | payload
//! ```

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::numerics::DenseMatrix;

pub const MAGF_MAGIC: &[u8; 4] = b"MAGF";
pub const MAGF_VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 1 + 8 + 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F64,
    F32,
}

impl Dtype {
    fn code(self) -> u8 {
        match self {
            Dtype::F64 => 0,
            Dtype::F32 => 1,
        }
    }
}

pub fn encode_magf(m: &DenseMatrix, dtype: Dtype) -> Vec<u8> {
    let width = if dtype == Dtype::F64 { 8 } else { 4 };
    let mut buf = Vec::with_capacity(HEADER_LEN + m.data().len() * width);
    buf.extend_from_slice(MAGF_MAGIC);
    buf.extend_from_slice(&MAGF_VERSION.to_le_bytes());
    buf.push(dtype.code());
    buf.extend_from_slice(&(m.rows() as u64).to_le_bytes());
    buf.extend_from_slice(&(m.cols() as u64).to_le_bytes());
    match dtype {
        Dtype::F64 => m.data().iter().for_each(|x| buf.extend_from_slice(&x.to_le_bytes())),
        Dtype::F32 => m
            .data()
            .iter()
            .for_each(|x| buf.extend_from_slice(&(*x as f32).to_le_bytes())),
    }
    buf
}

pub fn decode_magf(bytes: &[u8], path: &Path) -> Result<(DenseMatrix, Dtype)> {
    let perr = |msg: &str| Error::Parse {
        path: path.to_path_buf(),
        line: 0,
        msg: msg.to_string(),
    };
    if bytes.len() < HEADER_LEN {
        return Err(perr("truncated MAGF header"));
    }
    if &bytes[0..4] != MAGF_MAGIC {
        return Err(perr("bad magic (expected \"MAGF\")"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != MAGF_VERSION {
        return Err(perr(&format!("unsupported MAGF version {version}")));
    }
    let dtype = match bytes[8] {
        0 => Dtype::F64,
        1 => Dtype::F32,
        other => return Err(perr(&format!("unknown dtype code {other}"))),
    };
    let rows = u64::from_le_bytes(bytes[9..17].try_into().unwrap()) as usize;
    let cols = u64::from_le_bytes(bytes[17..25].try_into().unwrap()) as usize;
    let payload = &bytes[HEADER_LEN..];
    let width = if dtype == Dtype::F64 { 8 } else { 4 };
    let count = rows
        .checked_mul(cols)
        .ok_or_else(|| perr("rows*cols overflows"))?;
    if payload.len() != count * width {
        return Err(perr(&format!(
            "payload has {} bytes, header implies {}",
            payload.len(),
            count * width
        )));
    }
    let data: Vec<f64> = match dtype {
        Dtype::F64 => payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect(),
        Dtype::F32 => payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect(),
    };
    if data.iter().any(|x| !x.is_finite()) {
        return Err(perr("non-finite value in payload"));
    }
    Ok((DenseMatrix::new(rows, cols, data)?, dtype))
}

pub fn write_magf(path: &Path, m: &DenseMatrix, dtype: Dtype) -> Result<Vec<u8>> {
    let bytes = encode_magf(m, dtype);
    fs::write(path, &bytes).map_err(|e| Error::storage(path, e))?;
    Ok(bytes)
}

pub fn read_magf(path: &Path) -> Result<DenseMatrix> {
    let bytes = fs::read(path).map_err(|e| Error::storage(path, e))?;
    Ok(decode_magf(&bytes, path)?.0)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Parsed edge list: declared node count (from a `# nodes: N` directive, if
/// present) and raw pairs.
#[derive(Debug, Clone, Default)]
pub struct EdgeList {
    pub declared_nodes: Option<usize>,
    pub edges: Vec<(usize, usize)>,
}

impl EdgeList {
    /// Node count implied by the file: the directive if present, else the
    /// largest id plus one.
    pub fn node_count(&self) -> usize {
        let implied = self
            .edges
            .iter()
            .map(|&(u, v)| u.max(v) + 1)
            .max()
            .unwrap_or(0);
        self.declared_nodes.unwrap_or(implied).max(implied)
    }
}

pub fn parse_edge_list(text: &str, path: &Path) -> Result<EdgeList> {
    let mut out = EdgeList::default();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        let err = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line: lineno + 1,
            msg,
        };
        if line.is_empty() {
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            let c = comment.trim();
            if let Some(rest) = c.strip_prefix("nodes") {
                let n = rest
                    .trim_start_matches(':')
                    .trim()
                    .parse::<usize>()
                    .map_err(|e| err(format!("bad nodes directive: {e}")))?;
                out.declared_nodes = Some(n);
            }
            continue;
        }
        let mut parts = line.split_whitespace();
        let (Some(a), Some(b), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(err(format!("expected \"u<TAB>v\", got {line:?}")));
        };
        let u = a.parse::<usize>().map_err(|e| err(format!("bad node id {a:?}: {e}")))?;
        let v = b.parse::<usize>().map_err(|e| err(format!("bad node id {b:?}: {e}")))?;
        out.edges.push((u, v));
    }
    Ok(out)
}

pub fn read_edge_list(path: &Path) -> Result<EdgeList> {
    let text = fs::read_to_string(path).map_err(|e| Error::storage(path, e))?;
    parse_edge_list(&text, path)
}

/// Writes each undirected edge once (`u < v`) with a node-count directive.
pub fn write_edge_list(path: &Path, n: usize, edges: &[(usize, usize)]) -> Result<()> {
    let mut s = String::with_capacity(edges.len() * 12 + 32);
    s.push_str(&format!("# nodes: {n}\n"));
    for &(u, v) in edges {
        s.push_str(&format!("{u}\t{v}\n"));
    }
    fs::write(path, s).map_err(|e| Error::storage(path, e))
}

pub fn parse_labels(text: &str, path: &Path) -> Result<Vec<Option<usize>>> {
    let mut out = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let v = line.parse::<i64>().map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: lineno + 1,
            msg: format!("bad label {line:?}: {e}"),
        })?;
        out.push(match v {
            -1 => None,
            v if v >= 0 => Some(v as usize),
            v => {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: lineno + 1,
                    msg: format!("label {v} is negative (use -1 for unlabeled)"),
                })
            }
        });
    }
    Ok(out)
}

pub fn read_labels(path: &Path) -> Result<Vec<Option<usize>>> {
    let text = fs::read_to_string(path).map_err(|e| Error::storage(path, e))?;
    parse_labels(&text, path)
}

pub fn write_labels(path: &Path, labels: &[Option<usize>]) -> Result<()> {
    let mut s = String::with_capacity(labels.len() * 3);
    for l in labels {
        match l {
            Some(c) => s.push_str(&format!("{c}\n")),
            None => s.push_str("-1\n"),
        }
    }
    fs::write(path, s).map_err(|e| Error::storage(path, e))
}
