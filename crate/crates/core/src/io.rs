//! Binary array dumps: `rows` and `cols` as little-endian `u64`, followed by
//! the values row by row as little-endian `f64`.

use std::io::{Read, Write};

use crate::error::{Error, Result};

pub fn write_array<W: Write>(mut w: W, rows: &[Vec<f64>]) -> Result<()> {
    let cols = rows.first().map_or(0, |r| r.len());
    if rows.iter().any(|r| r.len() != cols) {
        return Err(Error::Invalid("ragged array".into()));
    }
    w.write_all(&(rows.len() as u64).to_le_bytes())?;
    w.write_all(&(cols as u64).to_le_bytes())?;
    let mut buf = Vec::with_capacity(cols * 8);
    for r in rows {
        buf.clear();
        for x in r {
            buf.extend_from_slice(&x.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

pub fn read_array<R: Read>(mut r: R) -> Result<Vec<Vec<f64>>> {
    let mut word = [0u8; 8];
    r.read_exact(&mut word)?;
    let rows = u64::from_le_bytes(word) as usize;
    r.read_exact(&mut word)?;
    let cols = u64::from_le_bytes(word) as usize;
    let mut buf = vec![0u8; cols * 8];
    let mut out = Vec::with_capacity(rows);
    for _ in 0..rows {
        r.read_exact(&mut buf)?;
        out.push(buf.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect());
    }
    Ok(out)
}
