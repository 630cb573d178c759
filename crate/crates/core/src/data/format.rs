//! Cube file layout, little-endian throughout:
//!
//! | offset | field                                   |
//! |--------|-----------------------------------------|
//! | 0      | magic `HSC1`                            |
//! | 4      | `u32` height                            |
//! | 8      | `u32` width                             |
//! | 12     | `u32` bands                             |
//! | 16     | `u16` class count K                     |
//! | 18     | `H*W*C` `f32` values, band-interleaved  |
//! | ...    | `H*W` `u16` labels                      |
//!
//! Values are stored as `f32` and widened on load, so a cube whose values
//! are `f32`-representable round-trips bit for bit.

use std::path::Path;

use super::{DataError, HsiCube};

pub const CUBE_MAGIC: &[u8; 4] = b"HSC1";
const HEADER_LEN: usize = 18;

pub fn encode_cube(cube: &HsiCube) -> Vec<u8> {
    let pixels = cube.height() * cube.width();
    let mut out = Vec::with_capacity(HEADER_LEN + pixels * (cube.bands() * 4 + 2));
    out.extend_from_slice(CUBE_MAGIC);
    for extent in [cube.height(), cube.width(), cube.bands()] {
        out.extend_from_slice(&(extent as u32).to_le_bytes());
    }
    out.extend_from_slice(&(cube.num_classes() as u16).to_le_bytes());
    for &v in cube.values() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    for &l in cube.labels() {
        out.extend_from_slice(&l.to_le_bytes());
    }
    out
}

fn format_err(offset: usize, reason: impl Into<String>) -> DataError {
    DataError::Format {
        offset: offset as u64,
        reason: reason.into(),
    }
}

fn read<const N: usize>(bytes: &[u8], offset: usize, what: &str) -> Result<[u8; N], DataError> {
    bytes
        .get(offset..offset + N)
        .map(|s| s.try_into().expect("slice length N"))
        .ok_or_else(|| format_err(bytes.len(), format!("file ends while reading {what}")))
}

pub fn decode_cube(bytes: &[u8]) -> Result<HsiCube, DataError> {
    if bytes.get(0..4) != Some(CUBE_MAGIC.as_slice()) {
        return Err(format_err(0, "bad magic, expected HSC1"));
    }
    let mut extents = [0usize; 3];
    for (i, (name, slot)) in ["height", "width", "bands"].iter().zip(&mut extents).enumerate() {
        let offset = 4 + 4 * i;
        *slot = u32::from_le_bytes(read(bytes, offset, name)?) as usize;
        if *slot == 0 {
            return Err(format_err(offset, format!("{name} must be >= 1")));
        }
    }
    let [height, width, bands] = extents;
    let classes = u16::from_le_bytes(read(bytes, 16, "class count")?);

    let overflow = || format_err(4, "extents overflow the addressable size");
    let pixels = height.checked_mul(width).ok_or_else(overflow)?;
    let count = pixels.checked_mul(bands).ok_or_else(overflow)?;
    let value_bytes = count.checked_mul(4).ok_or_else(overflow)?;
    let label_start = HEADER_LEN.checked_add(value_bytes).ok_or_else(overflow)?;
    let end = pixels
        .checked_mul(2)
        .and_then(|b| b.checked_add(label_start))
        .ok_or_else(overflow)?;
    if bytes.len() < end {
        return Err(format_err(
            bytes.len(),
            format!("truncated payload: expected {end} bytes, found {}", bytes.len()),
        ));
    }
    if bytes.len() > end {
        return Err(format_err(end, "trailing bytes after label block"));
    }

    let mut values = Vec::with_capacity(count);
    for (i, chunk) in bytes[HEADER_LEN..label_start].chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().expect("4 bytes"));
        if !v.is_finite() {
            return Err(format_err(HEADER_LEN + 4 * i, "non-finite value"));
        }
        values.push(f64::from(v));
    }
    let mut labels = Vec::with_capacity(pixels);
    for (i, chunk) in bytes[label_start..end].chunks_exact(2).enumerate() {
        let l = u16::from_le_bytes(chunk.try_into().expect("2 bytes"));
        if l > classes {
            return Err(format_err(
                label_start + 2 * i,
                format!("label {l} exceeds class count {classes}"),
            ));
        }
        labels.push(l);
    }
    HsiCube::new(height, width, bands, classes, values, labels)
}

pub fn save_cube(cube: &HsiCube, path: impl AsRef<Path>) -> Result<(), DataError> {
    std::fs::write(path, encode_cube(cube))?;
    Ok(())
}

pub fn load_cube(path: impl AsRef<Path>) -> Result<HsiCube, DataError> {
    decode_cube(&std::fs::read(path)?)
}
