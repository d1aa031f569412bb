//! "CMFT v1" single-tile container.
//!
//! ```text
//! magic "CMFT" | version u16 | width u16 | height u16 | width*height f32
//! ```
//!
//! All integers and floats are little-endian. NODATA is stored as
//! [`NODATA`] and becomes NaN in memory.

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"CMFT";
pub const VERSION: u16 = 1;
pub const NODATA: f32 = -9999.0;
const HEADER: usize = 10;

pub fn encode(width: usize, height: usize, grid: &[f32]) -> Result<Vec<u8>> {
    if width == 0 || height == 0 || width > u16::MAX as usize || height > u16::MAX as usize {
        return Err(Error::Shape(format!(
            "tile {}x{} not representable",
            width, height
        )));
    }
    if grid.len() != width * height {
        return Err(Error::Shape(format!(
            "tile {}x{} has {} values",
            width,
            height,
            grid.len()
        )));
    }
    let mut out = Vec::with_capacity(HEADER + 4 * grid.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(width as u16).to_le_bytes());
    out.extend_from_slice(&(height as u16).to_le_bytes());
    for &v in grid {
        let v = if v.is_nan() { NODATA } else { v };
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

/// Decoded tile: `(width, height, grid)`.
pub type Decoded = (usize, usize, Vec<f32>);

pub fn decode(bytes: &[u8]) -> std::result::Result<Decoded, String> {
    if bytes.len() < HEADER {
        return Err(format!("truncated header ({} bytes)", bytes.len()));
    }
    if &bytes[..4] != MAGIC {
        return Err("bad magic, expected CMFT".into());
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(format!("unsupported CMFT version {}", version));
    }
    let width = u16::from_le_bytes([bytes[6], bytes[7]]) as usize;
    let height = u16::from_le_bytes([bytes[8], bytes[9]]) as usize;
    if width == 0 || height == 0 {
        return Err(format!("empty tile {}x{}", width, height));
    }
    let body = &bytes[HEADER..];
    if body.len() != 4 * width * height {
        return Err(format!(
            "payload has {} bytes, {}x{} tile needs {}",
            body.len(),
            width,
            height,
            4 * width * height
        ));
    }
    let grid = body
        .chunks_exact(4)
        .map(|c| {
            let v = f32::from_le_bytes(c.try_into().expect("4 bytes"));
            if v == NODATA {
                f32::NAN
            } else {
                v
            }
        })
        .collect();
    Ok((width, height, grid))
}
