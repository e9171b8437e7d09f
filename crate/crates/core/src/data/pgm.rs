//! Binary 8-bit grayscale PGM (`P5`, maxval 255).

use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Tensor;

struct Header {
    width: usize,
    height: usize,
    maxval: usize,
    data_start: usize,
}

fn parse_header(bytes: &[u8]) -> Result<Header> {
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(Error::Pgm("bad magic (expected P5)".into()));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in &mut fields {
        // whitespace and `#` comments may separate header tokens
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(_) => break,
                None => return Err(Error::Pgm("truncated header".into())),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Pgm(format!("expected a number at byte {start}")));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Pgm("header number out of range".into()))?;
    }
    // exactly one whitespace byte separates the header from the raster
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(Error::Pgm("missing whitespace after maxval".into())),
    }
    let [width, height, maxval] = fields;
    Ok(Header {
        width,
        height,
        maxval,
        data_start: pos,
    })
}

/// Decodes to an h×w×1 tensor with values v/255.
pub fn decode_pgm<T: Real>(bytes: &[u8]) -> Result<Tensor<T>> {
    let h = parse_header(bytes)?;
    if h.maxval != 255 {
        return Err(Error::Pgm(format!("maxval {} unsupported (expected 255)", h.maxval)));
    }
    if h.width == 0 || h.height == 0 {
        return Err(Error::Pgm("zero image dimension".into()));
    }
    let n = h.width * h.height;
    let raster = &bytes[h.data_start..];
    if raster.len() < n {
        return Err(Error::Pgm(format!(
            "truncated payload: {} of {n} bytes",
            raster.len()
        )));
    }
    let data = raster[..n].iter().map(|&b| T::from_f64(b as f64 / 255.0)).collect();
    Tensor::from_vec(&[h.height, h.width, 1], data)
}

/// Reads only the dimensions (width, height).
pub fn pgm_dims(bytes: &[u8]) -> Result<(usize, usize)> {
    let h = parse_header(bytes)?;
    Ok((h.width, h.height))
}

/// Encodes an h×w(×1) tensor of values in [0, 1], rounding to the nearest level.
pub fn encode_pgm<T: Real>(image: &Tensor<T>) -> Result<Vec<u8>> {
    let (h, w) = match image.shape() {
        [h, w] | [h, w, 1] => (*h, *w),
        other => {
            return Err(Error::Shape {
                op: "encode_pgm",
                lhs: other.to_vec(),
                rhs: vec![],
            })
        }
    };
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(
        image
            .data()
            .iter()
            .map(|v| (v.as_f64().clamp(0.0, 1.0) * 255.0).round() as u8),
    );
    Ok(out)
}
