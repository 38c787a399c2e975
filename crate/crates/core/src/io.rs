//! Labeled matrix bundles, as flat little-endian binary or CSV.
//!
//! Binary layout: magic `BDRISMB1`, `u64` matrix count, then per matrix a
//! `u64` label length, the UTF-8 label, `u64` rows, `u64` cols and
//! `rows*cols` pairs of `f64` (re, im) in column-major order.
//!
//! CSV layout: one line per matrix, `label,rows,cols,re,im,re,im,...` in
//! column-major order.

use std::io::{Read, Write};

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::tensor::CMat;

const MAGIC: &[u8; 8] = b"BDRISMB1";

pub type Bundle = Vec<(String, CMat)>;

pub fn write_bin<W: Write>(w: &mut W, items: &[(String, CMat)]) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&(items.len() as u64).to_le_bytes())?;
    for (label, m) in items {
        w.write_all(&(label.len() as u64).to_le_bytes())?;
        w.write_all(label.as_bytes())?;
        w.write_all(&(m.nrows() as u64).to_le_bytes())?;
        w.write_all(&(m.ncols() as u64).to_le_bytes())?;
        for z in m.iter() {
            w.write_all(&z.re.to_le_bytes())?;
            w.write_all(&z.im.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

pub fn read_bin<R: Read>(r: &mut R) -> Result<Bundle> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format("not a matrix bundle (bad magic)".into()));
    }
    let count = read_u64(r)?;
    let mut out = Vec::new();
    for _ in 0..count {
        let len = read_u64(r)? as usize;
        if len > 4096 {
            return Err(Error::Format("label too long".into()));
        }
        let mut lb = vec![0u8; len];
        r.read_exact(&mut lb)?;
        let label = String::from_utf8(lb).map_err(|_| Error::Format("label is not UTF-8".into()))?;
        let rows = read_u64(r)? as usize;
        let cols = read_u64(r)? as usize;
        if rows.checked_mul(cols).is_none_or(|n| n > 1 << 28) {
            return Err(Error::Format(format!("implausible matrix size {rows}x{cols}")));
        }
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            let re = read_f64(r)?;
            let im = read_f64(r)?;
            data.push(Complex64::new(re, im));
        }
        out.push((label, CMat::from_vec(rows, cols, data)));
    }
    Ok(out)
}

pub fn to_csv(items: &[(String, CMat)]) -> String {
    let mut s = String::new();
    for (label, m) in items {
        s.push_str(&format!("{label},{},{}", m.nrows(), m.ncols()));
        for z in m.iter() {
            s.push_str(&format!(",{:e},{:e}", z.re, z.im));
        }
        s.push('\n');
    }
    s
}

pub fn from_csv(text: &str) -> Result<Bundle> {
    let mut out = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |what: &str| Error::Format(format!("bundle CSV line {}: {what}", ln + 1));
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() < 3 {
            return Err(bad("missing header fields"));
        }
        let rows: usize = cols[1].trim().parse().map_err(|_| bad("bad row count"))?;
        let ncols: usize = cols[2].trim().parse().map_err(|_| bad("bad column count"))?;
        if cols.len() != 3 + 2 * rows * ncols {
            return Err(bad("value count does not match dims"));
        }
        let vals = cols[3..]
            .iter()
            .map(|c| c.trim().parse::<f64>().map_err(|_| bad("not a number")))
            .collect::<Result<Vec<_>>>()?;
        let data = vals.chunks(2).map(|p| Complex64::new(p[0], p[1])).collect();
        out.push((cols[0].to_string(), CMat::from_vec(rows, ncols, data)));
    }
    Ok(out)
}

/// Matrix under `label`, or a format error naming it.
pub fn take<'a>(b: &'a Bundle, label: &str) -> Result<&'a CMat> {
    b.iter()
        .find(|(l, _)| l == label)
        .map(|(_, m)| m)
        .ok_or_else(|| Error::Format(format!("bundle has no matrix `{label}`")))
}

/// All matrices whose label is `prefix` followed by a decimal index, in index order.
pub fn take_series(b: &Bundle, prefix: &str) -> Vec<CMat> {
    let mut v: Vec<(usize, &CMat)> = b
        .iter()
        .filter_map(|(l, m)| l.strip_prefix(prefix)?.parse().ok().map(|i| (i, m)))
        .collect();
    v.sort_by_key(|p| p.0);
    v.into_iter().map(|p| p.1.clone()).collect()
}
