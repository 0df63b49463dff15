//! Portable float map (`.pfm`) reading and writing. Files are written
//! little-endian, three channels, bottom row first; reading also accepts
//! big-endian and single-channel maps.

use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::img::Image;
use crate::math::Rgb;

fn token(r: &mut impl BufRead) -> Result<String> {
    let mut out = Vec::new();
    let mut byte = [0u8; 1];
    loop {
        if r.read(&mut byte).map_err(|e| Error::Format(format!("pfm header: {e}")))? == 0 {
            break;
        }
        if byte[0].is_ascii_whitespace() {
            if out.is_empty() {
                continue;
            }
            break;
        }
        out.push(byte[0]);
    }
    String::from_utf8(out).map_err(|_| Error::Format("pfm header is not text".into()))
}

pub fn read_pfm(mut r: impl BufRead) -> Result<Image> {
    let magic = token(&mut r)?;
    let channels = match magic.as_str() {
        "PF" => 3,
        "Pf" => 1,
        _ => return Err(Error::Format(format!("unknown pfm magic '{magic}'"))),
    };
    let parse = |s: String| -> Result<usize> { s.parse().map_err(|_| Error::Format("bad pfm size".into())) };
    let width = parse(token(&mut r)?)?;
    let height = parse(token(&mut r)?)?;
    let scale: f64 = token(&mut r)?
        .parse()
        .map_err(|_| Error::Format("bad pfm scale".into()))?;
    if scale == 0.0 || width == 0 || height == 0 {
        return Err(Error::Format("degenerate pfm header".into()));
    }
    let little = scale < 0.0;
    let mut data = vec![0u8; width * height * channels * 4];
    r.read_exact(&mut data)
        .map_err(|_| Error::Format("truncated pfm data".into()))?;
    let vals: Vec<f32> = data
        .chunks_exact(4)
        .map(|b| {
            let b = [b[0], b[1], b[2], b[3]];
            if little {
                f32::from_le_bytes(b)
            } else {
                f32::from_be_bytes(b)
            }
        })
        .collect();
    let mut pixels = vec![Rgb::zeros(); width * height];
    for y in 0..height {
        let src = (height - 1 - y) * width;
        for x in 0..width {
            let k = (src + x) * channels;
            pixels[y * width + x] = if channels == 3 {
                Rgb::new(vals[k] as f64, vals[k + 1] as f64, vals[k + 2] as f64)
            } else {
                Rgb::repeat(vals[k] as f64)
            };
        }
    }
    Image::from_pixels(width, height, pixels)
}

pub fn write_pfm(mut w: impl Write, img: &Image) -> std::io::Result<()> {
    write!(w, "PF\n{} {}\n-1.0\n", img.width, img.height)?;
    let mut buf = Vec::with_capacity(img.len() * 12);
    for y in (0..img.height).rev() {
        for x in 0..img.width {
            for v in img.get(x, y).iter() {
                buf.extend_from_slice(&(*v as f32).to_le_bytes());
            }
        }
    }
    w.write_all(&buf)
}
