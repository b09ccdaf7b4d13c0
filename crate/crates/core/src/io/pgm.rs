//! Binary PGM (P5, maxval 255) masks: foreground 255, background 0.

use std::fs;
use std::path::Path;

use super::IoError;
use crate::mask::BinaryMask;

pub fn encode_mask_pgm(mask: &BinaryMask) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", mask.width(), mask.height()).into_bytes();
    out.extend(mask.bits().iter().map(|&b| if b { 255u8 } else { 0 }));
    out
}

/// Reads the next whitespace-delimited header token, skipping `#` comments.
fn header_token(bytes: &[u8], pos: &mut usize) -> Result<String, IoError> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos {
        return Err(IoError::PgmFormat("header ends early".into()));
    }
    Ok(String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
}

fn header_number(bytes: &[u8], pos: &mut usize, what: &str) -> Result<usize, IoError> {
    let tok = header_token(bytes, pos)?;
    tok.parse()
        .map_err(|_| IoError::PgmFormat(format!("bad {what} '{tok}'")))
}

pub fn decode_mask_pgm(bytes: &[u8]) -> Result<BinaryMask, IoError> {
    let mut pos = 0;
    let magic = header_token(bytes, &mut pos)?;
    if magic != "P5" {
        return Err(IoError::PgmFormat(format!("magic '{magic}'")));
    }
    let width = header_number(bytes, &mut pos, "width")?;
    let height = header_number(bytes, &mut pos, "height")?;
    let maxval = header_number(bytes, &mut pos, "maxval")?;
    if maxval != 255 {
        return Err(IoError::PgmFormat(format!("maxval {maxval}, expected 255")));
    }
    // exactly one whitespace byte separates the header from the raster
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(IoError::PgmFormat("missing raster separator".into()));
    }
    pos += 1;
    let raster = &bytes[pos..];
    let n = width * height;
    if raster.len() != n {
        return Err(IoError::Truncated {
            what: "PGM raster",
            expected: n,
            found: raster.len(),
        });
    }
    let bits = raster
        .iter()
        .enumerate()
        .map(|(index, &value)| match value {
            0 => Ok(false),
            255 => Ok(true),
            _ => Err(IoError::PgmValue { index, value }),
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(BinaryMask::new(height, width, bits).expect("raster length checked"))
}

pub fn write_mask_pgm(path: impl AsRef<Path>, mask: &BinaryMask) -> Result<(), IoError> {
    let path = path.as_ref();
    fs::write(path, encode_mask_pgm(mask)).map_err(|e| IoError::io(path, e))
}

pub fn read_mask_pgm(path: impl AsRef<Path>) -> Result<BinaryMask, IoError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| IoError::io(path, e))?;
    decode_mask_pgm(&bytes)
}
