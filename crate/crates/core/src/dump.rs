//! KVD1 binary container for per-layer, per-head key/value cache matrices.
//!
//! Layout (little-endian): magic `KVD1`; u32 version (=1); u32 n_layers;
//! u32 n_heads; u32 d_head; u32 seq_len; u8 dtype (0 = f32, 1 = bf16);
//! 3 zero pad bytes; u32 name_len; UTF-8 model name; then for each layer,
//! for each head: the K matrix followed by the V matrix, row-major,
//! `d_head` rows of `seq_len` entries, in the declared dtype. bf16 payloads
//! are widened to f32 on read; writes always emit dtype 0.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::matrix::Matrix;

const MAGIC: [u8; 4] = *b"KVD1";
const VERSION: u32 = 1;
const MAX_NAME_LEN: u32 = 1 << 20;

/// Which side of the cache a matrix belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CacheKind {
    Key,
    Value,
}

impl CacheKind {
    pub const BOTH: [CacheKind; 2] = [CacheKind::Key, CacheKind::Value];

    /// One-letter label used in CSV output.
    pub fn label(self) -> &'static str {
        match self {
            CacheKind::Key => "K",
            CacheKind::Value => "V",
        }
    }
}

impl std::fmt::Display for CacheKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

/// A full KV-cache dump: one (K, V) matrix pair per (layer, head).
#[derive(Debug, Clone, PartialEq)]
pub struct KVDump {
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_head: usize,
    pub seq_len: usize,
    pub model_name: String,
    /// (K, V) pairs, layer-major then head-major.
    pub entries: Vec<(Matrix, Matrix)>,
}

impl KVDump {
    pub fn new(
        n_layers: usize,
        n_heads: usize,
        d_head: usize,
        seq_len: usize,
        model_name: String,
        entries: Vec<(Matrix, Matrix)>,
    ) -> Result<Self> {
        let dump = Self {
            n_layers,
            n_heads,
            d_head,
            seq_len,
            model_name,
            entries,
        };
        dump.validate()?;
        Ok(dump)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_layers == 0 || self.n_heads == 0 || self.d_head == 0 || self.seq_len == 0 {
            return Err(Error::Parameter("dump dimensions must be positive".into()));
        }
        if self.entries.len() != self.n_layers * self.n_heads {
            return Err(Error::Parameter(format!(
                "{} entry pairs, expected {} ({} layers x {} heads)",
                self.entries.len(),
                self.n_layers * self.n_heads,
                self.n_layers,
                self.n_heads
            )));
        }
        for (i, (k, v)) in self.entries.iter().enumerate() {
            for m in [k, v] {
                if m.rows() != self.d_head || m.cols() != self.seq_len {
                    return Err(Error::Parameter(format!(
                        "entry {i} has shape {}x{}, expected {}x{}",
                        m.rows(),
                        m.cols(),
                        self.d_head,
                        self.seq_len
                    )));
                }
            }
        }
        Ok(())
    }

    fn pair(&self, layer: usize, head: usize) -> &(Matrix, Matrix) {
        &self.entries[layer * self.n_heads + head]
    }

    pub fn key(&self, layer: usize, head: usize) -> &Matrix {
        &self.pair(layer, head).0
    }

    pub fn value(&self, layer: usize, head: usize) -> &Matrix {
        &self.pair(layer, head).1
    }

    pub fn matrix(&self, layer: usize, head: usize, kind: CacheKind) -> &Matrix {
        match kind {
            CacheKind::Key => self.key(layer, head),
            CacheKind::Value => self.value(layer, head),
        }
    }

    /// Iterate `(layer, head, &K, &V)` in layer-major order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, &Matrix, &Matrix)> {
        self.entries
            .iter()
            .enumerate()
            .map(move |(i, (k, v))| (i / self.n_heads, i % self.n_heads, k, v))
    }
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)
        .map_err(|_| Error::Length("truncated header".into()))?;
    Ok(u32::from_le_bytes(buf))
}

fn matrix_from_payload(
    raw: &[u8],
    rows: usize,
    cols: usize,
    dtype: u8,
    which: &str,
) -> Result<Matrix> {
    let data: Vec<f32> = match dtype {
        0 => raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect(),
        1 => raw
            .chunks_exact(2)
            .map(|c| f32::from_bits((u16::from_le_bytes([c[0], c[1]]) as u32) << 16))
            .collect(),
        _ => unreachable!("dtype validated by caller"),
    };
    Matrix::new(rows, cols, data).map_err(|e| Error::Data(format!("{which}: {e}")))
}

/// Read and fully validate a KVD1 file.
pub fn read_kvdump(path: impl AsRef<Path>) -> Result<KVDump> {
    let mut reader = BufReader::new(File::open(path.as_ref())?);

    let mut magic = [0u8; 4];
    reader
        .read_exact(&mut magic)
        .map_err(|_| Error::Length("file shorter than magic".into()))?;
    if magic != MAGIC {
        return Err(Error::Format(format!(
            "bad magic {:02X?}, expected {:02X?}",
            magic, MAGIC
        )));
    }
    let version = read_u32(&mut reader)?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let n_layers = read_u32(&mut reader)? as usize;
    let n_heads = read_u32(&mut reader)? as usize;
    let d_head = read_u32(&mut reader)? as usize;
    let seq_len = read_u32(&mut reader)? as usize;
    if n_layers == 0 || n_heads == 0 || d_head == 0 || seq_len == 0 {
        return Err(Error::Format("zero dimension in header".into()));
    }

    let mut tail = [0u8; 4];
    reader
        .read_exact(&mut tail)
        .map_err(|_| Error::Length("truncated header".into()))?;
    let dtype = tail[0];
    if dtype > 1 {
        return Err(Error::Format(format!("unknown dtype tag {dtype}")));
    }
    if tail[1..] != [0, 0, 0] {
        return Err(Error::Format("nonzero padding bytes".into()));
    }

    let name_len = read_u32(&mut reader)?;
    if name_len > MAX_NAME_LEN {
        return Err(Error::Format(format!(
            "unreasonable name length {name_len}"
        )));
    }
    let mut name_bytes = vec![0u8; name_len as usize];
    reader
        .read_exact(&mut name_bytes)
        .map_err(|_| Error::Length("truncated model name".into()))?;
    let model_name = String::from_utf8(name_bytes)
        .map_err(|_| Error::Format("model name is not UTF-8".into()))?;

    let entry_bytes = d_head * seq_len * if dtype == 0 { 4 } else { 2 };
    let mut entries = Vec::with_capacity(n_layers * n_heads);
    let mut raw = vec![0u8; entry_bytes];
    for layer in 0..n_layers {
        for head in 0..n_heads {
            let mut pair = Vec::with_capacity(2);
            for kind in CacheKind::BOTH {
                reader.read_exact(&mut raw).map_err(|_| {
                    Error::Length(format!(
                        "payload truncated at layer {layer} head {head} {kind}"
                    ))
                })?;
                pair.push(matrix_from_payload(
                    &raw,
                    d_head,
                    seq_len,
                    dtype,
                    &format!("layer {layer} head {head} {kind}"),
                )?);
            }
            let v = pair.pop().expect("two matrices pushed");
            let k = pair.pop().expect("two matrices pushed");
            entries.push((k, v));
        }
    }

    let mut extra = [0u8; 1];
    if reader.read(&mut extra)? != 0 {
        return Err(Error::Length("trailing bytes after payload".into()));
    }

    KVDump::new(n_layers, n_heads, d_head, seq_len, model_name, entries)
}

/// Write a dump in KVD1 format (dtype 0). The dump is validated first, so a
/// broken value never leaves a partial file behind for invariant violations.
pub fn write_kvdump(dump: &KVDump, path: impl AsRef<Path>) -> Result<()> {
    dump.validate()?;
    let mut w = BufWriter::new(File::create(path.as_ref())?);
    w.write_all(&MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    for dim in [dump.n_layers, dump.n_heads, dump.d_head, dump.seq_len] {
        w.write_all(&(dim as u32).to_le_bytes())?;
    }
    w.write_all(&[0u8; 4])?; // dtype 0 + zero padding
    let name = dump.model_name.as_bytes();
    w.write_all(&(name.len() as u32).to_le_bytes())?;
    w.write_all(name)?;
    for (_, _, k, v) in dump.iter() {
        for m in [k, v] {
            for value in m.as_slice() {
                w.write_all(&value.to_le_bytes())?;
            }
        }
    }
    w.flush()?;
    Ok(())
}
