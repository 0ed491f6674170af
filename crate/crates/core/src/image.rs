//! Binary PGM (P5) and PPM (P6) output for planar `[C, H, W]` images.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// `round(255 · clamp(v, 0, 1))`.
pub fn to_byte(v: f64) -> u8 {
    (255.0 * v.clamp(0.0, 1.0)).round() as u8
}

/// P5 for one channel, P6 for three, maxval 255.
pub fn encode_pnm(shape: [usize; 3], pixels: &[f64]) -> Result<Vec<u8>> {
    let [c, h, w] = shape;
    if pixels.len() != c * h * w {
        return Err(Error::shape("encode_pnm", &shape, &[pixels.len()]));
    }
    let magic = match c {
        1 => "P5",
        3 => "P6",
        _ => return Err(Error::Invalid(format!("cannot write {c}-channel image"))),
    };
    let mut out = format!("{magic}\n{w} {h}\n255\n").into_bytes();
    let plane = h * w;
    for i in 0..plane {
        for ch in 0..c {
            out.push(to_byte(pixels[ch * plane + i]));
        }
    }
    Ok(out)
}

pub fn write_pnm(path: &Path, shape: [usize; 3], pixels: &[f64]) -> Result<()> {
    let bytes = encode_pnm(shape, pixels)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// File extension matching [`encode_pnm`].
pub fn pnm_extension(channels: usize) -> &'static str {
    if channels == 1 {
        "pgm"
    } else {
        "ppm"
    }
}

/// Places equally sized planar images side by side.
pub fn hstack(shape: [usize; 3], cells: &[&[f64]]) -> Result<(Vec<f64>, [usize; 3])> {
    let [c, h, w] = shape;
    if let Some(bad) = cells.iter().find(|x| x.len() != c * h * w) {
        return Err(Error::shape("hstack", &shape, &[bad.len()]));
    }
    let n = cells.len();
    let mut out = Vec::with_capacity(c * h * w * n);
    for ch in 0..c {
        for y in 0..h {
            for cell in cells {
                let row = ch * h * w + y * w;
                out.extend_from_slice(&cell[row..row + w]);
            }
        }
    }
    Ok((out, [c, h, w * n]))
}

/// Parses a P5/P6 file written by [`encode_pnm`]: `(channels, height, width, bytes)`.
pub fn decode_pnm(bytes: &[u8]) -> Result<(usize, usize, usize, Vec<u8>)> {
    let bad = |d: &str| Error::Format {
        kind: "pnm",
        detail: d.to_string(),
    };
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    pos += 1;
    let c = match fields[0].as_str() {
        "P5" => 1,
        "P6" => 3,
        _ => return Err(bad("unknown magic")),
    };
    let parse = |s: &str| s.parse::<usize>().map_err(|_| bad("bad dimension"));
    let (w, h, max) = (parse(&fields[1])?, parse(&fields[2])?, parse(&fields[3])?);
    if max != 255 {
        return Err(bad("maxval must be 255"));
    }
    let data = bytes.get(pos..).unwrap_or_default().to_vec();
    if data.len() != c * h * w {
        return Err(bad("payload size"));
    }
    Ok((c, h, w, data))
}
