//! Little-endian binary primitives shared by the cache and checkpoint formats.
//!
//! Floats are written as raw IEEE-754 bits, so a save/load round trip is
//! bit-exact.

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::{Array1, Array2};
use std::io::{Read, Write};

use crate::error::{Error, Result};

pub fn write_u64<W: Write>(w: &mut W, v: u64) -> std::io::Result<()> {
    w.write_u64::<LittleEndian>(v)
}

pub fn read_u64<R: Read>(r: &mut R) -> std::io::Result<u64> {
    r.read_u64::<LittleEndian>()
}

pub fn write_f64_slice<W: Write>(w: &mut W, xs: &[f64]) -> std::io::Result<()> {
    for &x in xs {
        w.write_u64::<LittleEndian>(x.to_bits())?;
    }
    Ok(())
}

pub fn read_f64_vec<R: Read>(r: &mut R, len: usize) -> std::io::Result<Vec<f64>> {
    let mut out = Vec::with_capacity(len);
    for _ in 0..len {
        out.push(f64::from_bits(r.read_u64::<LittleEndian>()?));
    }
    Ok(out)
}

pub fn write_matrix<W: Write>(w: &mut W, m: &Array2<f64>) -> std::io::Result<()> {
    write_u64(w, m.nrows() as u64)?;
    write_u64(w, m.ncols() as u64)?;
    for row in m.rows() {
        for &x in row {
            w.write_u64::<LittleEndian>(x.to_bits())?;
        }
    }
    Ok(())
}

pub fn read_matrix<R: Read>(r: &mut R) -> Result<Array2<f64>> {
    let rows = read_u64(r).map_err(decode)? as usize;
    let cols = read_u64(r).map_err(decode)? as usize;
    let data = read_f64_vec(r, rows * cols).map_err(decode)?;
    Array2::from_shape_vec((rows, cols), data)
        .map_err(|e| Error::Incompatible(format!("matrix shape: {e}")))
}

pub fn write_vector<W: Write>(w: &mut W, v: &Array1<f64>) -> std::io::Result<()> {
    write_u64(w, v.len() as u64)?;
    write_f64_slice(w, v.as_slice().expect("contiguous"))
}

pub fn read_vector<R: Read>(r: &mut R) -> Result<Array1<f64>> {
    let len = read_u64(r).map_err(decode)? as usize;
    Ok(Array1::from_vec(read_f64_vec(r, len).map_err(decode)?))
}

pub fn write_magic<W: Write>(w: &mut W, magic: &[u8; 8]) -> std::io::Result<()> {
    w.write_all(magic)
}

pub fn expect_magic<R: Read>(r: &mut R, magic: &[u8; 8], what: &str) -> Result<()> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf).map_err(decode)?;
    if &buf != magic {
        return Err(Error::Incompatible(format!("{what}: bad magic bytes")));
    }
    Ok(())
}

fn decode(e: std::io::Error) -> Error {
    Error::Incompatible(format!("truncated or corrupt file: {e}"))
}
