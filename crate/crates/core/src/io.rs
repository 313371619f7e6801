//! Little-endian binary helpers and PFM float rasters.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::{Error, Result};

pub fn put_u32(w: &mut impl Write, v: u32) -> Result<()> {
    Ok(w.write_all(&v.to_le_bytes())?)
}

pub fn put_f64(w: &mut impl Write, v: f64) -> Result<()> {
    Ok(w.write_all(&v.to_le_bytes())?)
}

pub fn put_f32s(w: &mut impl Write, v: impl IntoIterator<Item = f32>) -> Result<()> {
    let mut buf = Vec::with_capacity(1 << 16);
    for x in v {
        buf.extend_from_slice(&x.to_le_bytes());
        if buf.len() >= 1 << 16 {
            w.write_all(&buf)?;
            buf.clear();
        }
    }
    Ok(w.write_all(&buf)?)
}

pub fn get_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub fn get_f64(r: &mut impl Read) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

pub fn get_f32s(r: &mut impl Read, n: usize) -> Result<Vec<f32>> {
    let mut b = vec![0u8; n * 4];
    r.read_exact(&mut b)?;
    Ok(b.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect())
}

/// Read and check a 4-byte magic tag.
pub fn expect_magic(r: &mut impl Read, magic: &[u8; 4]) -> Result<()> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    if &b != magic {
        return Err(Error::Format(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&b),
            String::from_utf8_lossy(magic)
        )));
    }
    Ok(())
}

/// Float raster with 1 or 3 channels, row-major from the top row.
#[derive(Clone, Debug, PartialEq)]
pub struct Raster {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl Raster {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if !(channels == 1 || channels == 3) || data.len() != width * height * channels {
            return Err(Error::Format("raster dimensions do not match data".into()));
        }
        Ok(Self { width, height, channels, data })
    }

    pub fn from_f64(width: usize, height: usize, channels: usize, data: &[f64]) -> Result<Self> {
        Self::new(width, height, channels, data.iter().map(|v| *v as f32).collect())
    }

    /// Write as little-endian PFM (bottom row first, as the format requires).
    pub fn write_pfm(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        let tag = if self.channels == 3 { "PF" } else { "Pf" };
        write!(w, "{tag}\n{} {}\n-1.0\n", self.width, self.height)?;
        let row = self.width * self.channels;
        for r in (0..self.height).rev() {
            put_f32s(&mut w, self.data[r * row..(r + 1) * row].iter().copied())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_pfm(path: &Path) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        let mut header = Vec::new();
        let mut lines = 0;
        let mut byte = [0u8; 1];
        while lines < 3 {
            r.read_exact(&mut byte)?;
            if byte[0] == b'\n' {
                lines += 1;
            }
            header.push(byte[0]);
        }
        let text = String::from_utf8_lossy(&header);
        let mut tok = text.split_whitespace();
        let bad = || Error::Format(format!("{}: malformed PFM header", path.display()));
        let channels = match tok.next() {
            Some("PF") => 3,
            Some("Pf") => 1,
            _ => return Err(bad()),
        };
        let width: usize = tok.next().and_then(|t| t.parse().ok()).ok_or_else(bad)?;
        let height: usize = tok.next().and_then(|t| t.parse().ok()).ok_or_else(bad)?;
        let scale: f64 = tok.next().and_then(|t| t.parse().ok()).ok_or_else(bad)?;
        if scale >= 0.0 {
            return Err(Error::Format("big-endian PFM not supported".into()));
        }
        let row = width * channels;
        let flipped = get_f32s(&mut r, row * height)?;
        let mut data = Vec::with_capacity(row * height);
        for rr in (0..height).rev() {
            data.extend_from_slice(&flipped[rr * row..(rr + 1) * row]);
        }
        Self::new(width, height, channels, data)
    }
}
