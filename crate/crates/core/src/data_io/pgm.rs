use std::io::Write;
use std::path::Path;

use super::container::write_atomic;
use crate::error::{Error, Result};
use crate::maps::PixelMap;

/// Binary 8-bit PGM (P5): values are clamped to [0, 1] and stored as `round(v * 255)`.
pub fn encode_pgm(map: &PixelMap) -> Result<Vec<u8>> {
    if map.channels() != 1 {
        return Err(Error::DimMismatch {
            expected: 1,
            got: map.channels(),
        });
    }
    let mut out = format!("P5\n{} {}\n255\n", map.width(), map.height()).into_bytes();
    out.extend(
        map.data()
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8),
    );
    Ok(out)
}

pub fn write_pgm(map: &PixelMap, path: &Path) -> Result<()> {
    let bytes = encode_pgm(map)?;
    write_atomic(path, |w| Ok(w.write_all(&bytes)?))
}
