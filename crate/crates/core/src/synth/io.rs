//! Binary dataset file.
//!
//! All integers and reals are little-endian; reals are IEEE-754 `f64`.
//!
//! ```text
//! header   magic "CFSDSET\0" (8 bytes)
//!          version u32, p u32, l u32, n_items u32, count u64, seed u64
//! costs    p × f64
//! record   (repeated `count` times)
//!          request_id u64, p u32, n_items u32,
//!          has_cluster u8, cluster_id u32,
//!          context l × f64, weights p × f64,
//!          factors n_items × p f64 (row-major, one item per row)
//! trailer  magic "CFSDEND\0" (8 bytes)
//! ```
//!
//! Per-record `p` and `n_items` must repeat the header values.

use std::fs;
use std::io::{Cursor, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::Array2;

use super::{ContextVector, Dataset, PageView};
use crate::error::{CfsError, Result};
use crate::ranking::{CostVector, FactorMatrix};
use crate::scalar::Scalar;

pub const MAGIC: &[u8; 8] = b"CFSDSET\0";
const TRAILER: &[u8; 8] = b"CFSDEND\0";
pub const FORMAT_VERSION: u32 = 1;

pub fn save<T: Scalar>(dataset: &Dataset<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode(dataset);
    let mut file = fs::File::create(path).map_err(|e| CfsError::io(path, e))?;
    file.write_all(&bytes).map_err(|e| CfsError::io(path, e))
}

pub fn load<T: Scalar>(path: impl AsRef<Path>) -> Result<Dataset<T>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| CfsError::io(path, e))?;
    decode(&bytes, path)
}

pub(crate) fn encode<T: Scalar>(d: &Dataset<T>) -> Vec<u8> {
    let mut out = Vec::new();
    let w = &mut out;
    let put_f = |w: &mut Vec<u8>, v: T| w.write_f64::<LittleEndian>(v.as_f64()).unwrap();
    w.extend_from_slice(MAGIC);
    w.write_u32::<LittleEndian>(FORMAT_VERSION).unwrap();
    w.write_u32::<LittleEndian>(d.p as u32).unwrap();
    w.write_u32::<LittleEndian>(d.l as u32).unwrap();
    w.write_u32::<LittleEndian>(d.n_items as u32).unwrap();
    w.write_u64::<LittleEndian>(d.page_views.len() as u64).unwrap();
    w.write_u64::<LittleEndian>(d.seed).unwrap();
    for &c in d.costs.as_slice() {
        put_f(w, c);
    }
    for pv in &d.page_views {
        w.write_u64::<LittleEndian>(pv.request_id()).unwrap();
        w.write_u32::<LittleEndian>(pv.factors.p() as u32).unwrap();
        w.write_u32::<LittleEndian>(pv.n_items() as u32).unwrap();
        w.write_u8(pv.context.cluster_id.is_some() as u8).unwrap();
        w.write_u32::<LittleEndian>(pv.context.cluster_id.unwrap_or(0)).unwrap();
        for &v in pv.context.embedding.iter().chain(&pv.weights) {
            put_f(w, v);
        }
        for &v in pv.factors.values().iter() {
            put_f(w, v);
        }
    }
    w.extend_from_slice(TRAILER);
    out
}

pub(crate) fn decode<T: Scalar>(bytes: &[u8], path: &Path) -> Result<Dataset<T>> {
    let fmt = |reason: String| CfsError::format(path, reason);
    let mut r = Cursor::new(bytes);
    let truncated = |what: &str| fmt(format!("file truncated while reading {what}"));

    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|_| truncated("magic"))?;
    if &magic != MAGIC {
        return Err(fmt("not a dataset file (bad magic)".into()));
    }
    let version = r.read_u32::<LittleEndian>().map_err(|_| truncated("version"))?;
    if version != FORMAT_VERSION {
        return Err(CfsError::Version {
            path: path.to_path_buf(),
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let mut header = [0u32; 3];
    for h in &mut header {
        *h = r.read_u32::<LittleEndian>().map_err(|_| truncated("header"))?;
    }
    let [p, l, n_items] = header.map(|v| v as usize);
    let count = r.read_u64::<LittleEndian>().map_err(|_| truncated("header"))? as usize;
    let seed = r.read_u64::<LittleEndian>().map_err(|_| truncated("header"))?;
    if p == 0 || n_items < 2 {
        return Err(fmt(format!("invalid header: p = {p}, n_items = {n_items}")));
    }
    // a record is at least this long; rejects absurd counts before allocating
    let record_len = 8 + 4 + 4 + 1 + 4 + 8 * (l + p + n_items * p);
    let remaining = bytes.len().saturating_sub(r.position() as usize);
    if count.saturating_mul(record_len) > remaining {
        return Err(fmt(format!("file truncated: header announces {count} page views")));
    }

    let read_vec = |r: &mut Cursor<&[u8]>, len: usize, what: &str| -> Result<Vec<T>> {
        (0..len)
            .map(|_| {
                r.read_f64::<LittleEndian>()
                    .map(T::lit)
                    .map_err(|_| truncated(what))
            })
            .collect()
    };

    let costs = CostVector::new(read_vec(&mut r, p, "costs")?).map_err(|e| fmt(e.to_string()))?;
    let mut page_views = Vec::with_capacity(count);
    for i in 0..count {
        let request_id = r.read_u64::<LittleEndian>().map_err(|_| truncated("record"))?;
        let rec_p = r.read_u32::<LittleEndian>().map_err(|_| truncated("record"))? as usize;
        let rec_n = r.read_u32::<LittleEndian>().map_err(|_| truncated("record"))? as usize;
        if rec_p != p || rec_n != n_items {
            return Err(fmt(format!(
                "record {i}: p = {rec_p}, n_items = {rec_n} disagree with header p = {p}, n_items = {n_items}"
            )));
        }
        let has_cluster = r.read_u8().map_err(|_| truncated("record"))?;
        let cluster = r.read_u32::<LittleEndian>().map_err(|_| truncated("record"))?;
        let cluster_id = match has_cluster {
            0 => None,
            1 => Some(cluster),
            other => return Err(fmt(format!("record {i}: bad cluster flag {other}"))),
        };
        let embedding = read_vec(&mut r, l, "context")?;
        let weights = read_vec(&mut r, p, "weights")?;
        let values = read_vec(&mut r, n_items * p, "factors")?;
        let values = Array2::from_shape_vec((n_items, p), values).expect("record shape");
        let factors = FactorMatrix::new(request_id, values).map_err(|e| fmt(format!("record {i}: {e}")))?;
        page_views.push(PageView {
            context: ContextVector {
                embedding,
                cluster_id,
            },
            factors,
            weights,
        });
    }
    let mut trailer = [0u8; 8];
    r.read_exact(&mut trailer).map_err(|_| truncated("trailer"))?;
    if &trailer != TRAILER {
        return Err(fmt("bad trailer (record layout disagrees with header)".into()));
    }
    if (r.position() as usize) != bytes.len() {
        return Err(fmt("trailing bytes after dataset trailer".into()));
    }
    Dataset::new(page_views, costs, l, seed).map_err(|e| fmt(e.to_string()))
}
