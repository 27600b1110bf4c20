//! Similarity export: sparse CSV triples and a dense little-endian binary.
//!
//! Binary layout: ASCII `DPNB`, `u32` dimension M, then M² `f64` values in
//! row-major order, all little-endian.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::similarity::SimilarityMatrix;

pub const MAGIC: &[u8; 4] = b"DPNB";

pub fn write_binary<W: Write>(s: &SimilarityMatrix, mut w: W) -> Result<()> {
    let dim = u32::try_from(s.dim()).map_err(|_| Error::config("matrix too large to export"))?;
    w.write_all(MAGIC)?;
    w.write_all(&dim.to_le_bytes())?;
    let mut buf = Vec::with_capacity(s.dim() * s.dim() * 8);
    for v in s.as_slice() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_binary<R: Read>(mut r: R) -> Result<SimilarityMatrix> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Parse { line: 0, message: "missing DPNB header".into() });
    }
    let mut dim = [0u8; 4];
    r.read_exact(&mut dim)?;
    let dim = u32::from_le_bytes(dim) as usize;
    let mut bytes = vec![0u8; dim * dim * 8];
    r.read_exact(&mut bytes)?;
    let values = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    SimilarityMatrix::from_row_major(dim, values)
}

/// `item_i,item_j,value` for each row's `top_n` largest-|s| off-diagonal
/// entries (all of them when `None`), ascending by `(i, j)`.
pub fn write_triples<W: Write>(s: &SimilarityMatrix, top_n: Option<usize>, w: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(w);
    w.write_record(["item_i", "item_j", "value"])?;
    let n = s.dim();
    for i in 0..n {
        let js = s.top_neighbors(i, top_n.unwrap_or(n));
        for j in js {
            w.write_record(&[i.to_string(), j.to_string(), s.get(i, j).to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}
