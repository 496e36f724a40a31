//! Binary PPM (P6, 8-bit) images, converted to floats in `[0, 1]`.

use super::FormatError;
use crate::tensor::Tensor;
use std::path::Path;

pub fn read_ppm(bytes: &[u8]) -> Result<Tensor, FormatError> {
    let mut pos = 0;
    let magic = token(bytes, &mut pos)?;
    if magic != b"P6" {
        return Err(FormatError::Malformed("not a binary P6 PPM".into()));
    }
    let w: usize = parse_int(token(bytes, &mut pos)?)?;
    let h: usize = parse_int(token(bytes, &mut pos)?)?;
    let maxval: usize = parse_int(token(bytes, &mut pos)?)?;
    if maxval != 255 {
        return Err(FormatError::Malformed(format!("unsupported maxval {maxval}, need 255")));
    }
    // A single whitespace byte separates the header from the raster.
    pos += 1;
    let need = w * h * 3;
    if bytes.len() < pos + need {
        return Err(FormatError::Malformed("PPM raster truncated".into()));
    }
    let data: Vec<f64> = bytes[pos..pos + need].iter().map(|&b| b as f64 / 255.0).collect();
    Tensor::new(vec![h, w, 3], data)
        .map_err(|e| FormatError::Malformed(format!("bad PPM dimensions: {e}")))
}

pub fn write_ppm(img: &Tensor, path: &Path) -> Result<(), FormatError> {
    if img.rank() != 3 || img.shape()[2] != 3 {
        return Err(FormatError::Malformed("PPM writer needs an h x w x 3 tensor".into()));
    }
    let (h, w) = (img.shape()[0], img.shape()[1]);
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    out.extend(img.data().iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    super::atomic_write(path, &out)
}

pub fn load_ppm(path: &Path) -> Result<Tensor, FormatError> {
    read_ppm(&std::fs::read(path)?)
}

/// Next whitespace-delimited token, skipping `#` comments.
fn token<'a>(bytes: &'a [u8], pos: &mut usize) -> Result<&'a [u8], FormatError> {
    while *pos < bytes.len() {
        match bytes[*pos] {
            b' ' | b'\t' | b'\r' | b'\n' => *pos += 1,
            b'#' => {
                while *pos < bytes.len() && bytes[*pos] != b'\n' {
                    *pos += 1;
                }
            }
            _ => break,
        }
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos {
        return Err(FormatError::Malformed("PPM header truncated".into()));
    }
    Ok(&bytes[start..*pos])
}

fn parse_int(tok: &[u8]) -> Result<usize, FormatError> {
    std::str::from_utf8(tok)
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| FormatError::Malformed("bad integer in PPM header".into()))
}
