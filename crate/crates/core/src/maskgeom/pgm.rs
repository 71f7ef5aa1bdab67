use std::path::Path;

use image::ImageFormat;

use super::BinaryMask;
use crate::error::{Error, Result};

/// Decodes a PGM (`P2` or `P5`, any maxval); nonzero samples are foreground.
pub fn mask_from_pgm_bytes(bytes: &[u8]) -> Result<BinaryMask> {
    let magic = bytes.get(..2).unwrap_or_default();
    if magic != b"P2" && magic != b"P5" {
        return Err(Error::Pgm(format!(
            "expected P2 or P5 magic, found {:?}",
            String::from_utf8_lossy(magic)
        )));
    }
    let img = image::load_from_memory_with_format(bytes, ImageFormat::Pnm)
        .map_err(|e| Error::Pgm(e.to_string()))?
        .into_luma16();
    let (w, h) = img.dimensions();
    let bits = img.pixels().map(|p| p.0[0] != 0).collect();
    BinaryMask::new(h as usize, w as usize, bits)
}

pub fn read_pgm_mask(path: impl AsRef<Path>) -> Result<BinaryMask> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    mask_from_pgm_bytes(&bytes)
}
