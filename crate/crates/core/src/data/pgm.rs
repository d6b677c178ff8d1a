//! Binary PGM (P5, 8-bit) read/write.
//!
//! Writing is done by hand so dataset output is byte-stable across runs;
//! reading goes through the `image` crate and accepts anything it can decode.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{AruError, Result};

pub fn write_pgm(path: &Path, w: usize, h: usize, bytes: &[u8]) -> Result<()> {
    if bytes.len() != w * h {
        return Err(AruError::InvalidArgument(format!(
            "pgm payload {} bytes, expected {w}x{h}",
            bytes.len()
        )));
    }
    let mut f = fs::File::create(path)?;
    write!(f, "P5\n{w} {h}\n255\n")?;
    f.write_all(bytes)?;
    Ok(())
}

/// Decodes any supported image file to 8-bit grayscale, row-major.
pub fn read_gray(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let img = image::open(path)
        .map_err(|e| AruError::Data(format!("cannot read {}: {e}", path.display())))?
        .into_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    Ok((w, h, img.into_raw()))
}
