//! Radiance RGBE (`.hdr`) reading and writing.
//!
//! A texel `(r, g, b, e)` decodes to `c * 2^(e - 136)` per channel, and to
//! zero when `e == 0`. Reading accepts flat and run-length encoded
//! scanlines; writing emits run-length encoded scanlines whenever the width
//! allows it.

use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::img::Image;
use crate::math::Rgb;

#[inline]
pub fn rgbe_to_rgb(t: [u8; 4]) -> Rgb {
    if t[3] == 0 {
        return Rgb::zeros();
    }
    let f = 2f64.powi(t[3] as i32 - 136);
    Rgb::new(t[0] as f64 * f, t[1] as f64 * f, t[2] as f64 * f)
}

#[inline]
pub fn rgb_to_rgbe(c: &Rgb) -> [u8; 4] {
    let v = c.max();
    if !(v >= 1e-32) {
        return [0; 4];
    }
    let e = v.log2().floor() as i32 + 1;
    let mut e = e.clamp(-128, 127);
    let mut scale = 2f64.powi(8 - e);
    if v * scale >= 256.0 {
        e += 1;
        scale *= 0.5;
    }
    let q = |x: f64| (x.max(0.0) * scale).floor().min(255.0) as u8;
    [q(c.x), q(c.y), q(c.z), (e + 128) as u8]
}

fn format_err(msg: impl Into<String>) -> Error {
    Error::Format(msg.into())
}

pub fn read_hdr(mut r: impl BufRead) -> Result<Image> {
    let mut line = String::new();
    let mut first = true;
    loop {
        line.clear();
        let n = r
            .read_line(&mut line)
            .map_err(|e| format_err(format!("hdr header: {e}")))?;
        if n == 0 {
            return Err(format_err("hdr header ends before resolution line"));
        }
        let l = line.trim_end();
        if first {
            if !(l.starts_with("#?RADIANCE") || l.starts_with("#?RGBE")) {
                return Err(format_err("missing #?RADIANCE magic"));
            }
            first = false;
            continue;
        }
        if let Some(fmt) = l.strip_prefix("FORMAT=") {
            if fmt != "32-bit_rle_rgbe" {
                return Err(format_err(format!("unsupported hdr pixel format {fmt}")));
            }
        }
        if l.is_empty() {
            break;
        }
    }
    line.clear();
    r.read_line(&mut line)
        .map_err(|e| format_err(format!("hdr resolution: {e}")))?;
    let parts: Vec<&str> = line.split_whitespace().collect();
    if parts.len() != 4 || parts[0] != "-Y" || parts[2] != "+X" {
        return Err(format_err(format!("unsupported hdr orientation '{}'", line.trim())));
    }
    let height: usize = parts[1].parse().map_err(|_| format_err("bad hdr height"))?;
    let width: usize = parts[3].parse().map_err(|_| format_err("bad hdr width"))?;
    if width == 0 || height == 0 {
        return Err(format_err("empty hdr image"));
    }
    let mut data = Vec::new();
    r.read_to_end(&mut data)
        .map_err(|e| format_err(format!("hdr body: {e}")))?;
    let mut pos = 0;
    let mut pixels = Vec::with_capacity(width * height);
    let mut scan = vec![[0u8; 4]; width];
    for row in 0..height {
        read_scanline(&data, &mut pos, &mut scan)
            .map_err(|m| format_err(format!("truncated or corrupt scanline {row}: {m}")))?;
        pixels.extend(scan.iter().map(|t| rgbe_to_rgb(*t)));
    }
    Image::from_pixels(width, height, pixels)
}

fn take<'a>(data: &'a [u8], pos: &mut usize, n: usize) -> std::result::Result<&'a [u8], &'static str> {
    let s = data.get(*pos..*pos + n).ok_or("unexpected end of data")?;
    *pos += n;
    Ok(s)
}

fn read_scanline(data: &[u8], pos: &mut usize, scan: &mut [[u8; 4]]) -> std::result::Result<(), &'static str> {
    let width = scan.len();
    let head = data.get(*pos..*pos + 4).ok_or("unexpected end of data")?;
    let rle = (8..0x8000).contains(&width) && head[0] == 2 && head[1] == 2 && head[2] & 0x80 == 0;
    if !rle {
        let mut x = 0;
        let mut shift = 0;
        while x < width {
            let t = take(data, pos, 4)?;
            if t[0] == 1 && t[1] == 1 && t[2] == 1 {
                if x == 0 {
                    return Err("run without a preceding texel");
                }
                let count = (t[3] as usize) << shift;
                if x + count > width {
                    return Err("run overflows scanline");
                }
                let prev = scan[x - 1];
                for s in &mut scan[x..x + count] {
                    *s = prev;
                }
                x += count;
                shift += 8;
            } else {
                scan[x] = [t[0], t[1], t[2], t[3]];
                x += 1;
                shift = 0;
            }
        }
        return Ok(());
    }
    if ((head[2] as usize) << 8 | head[3] as usize) != width {
        return Err("scanline width mismatch");
    }
    *pos += 4;
    for c in 0..4 {
        let mut x = 0;
        while x < width {
            let n = take(data, pos, 1)?[0] as usize;
            if n > 128 {
                let count = n - 128;
                if x + count > width {
                    return Err("run overflows scanline");
                }
                let v = take(data, pos, 1)?[0];
                for s in &mut scan[x..x + count] {
                    s[c] = v;
                }
                x += count;
            } else {
                if n == 0 || x + n > width {
                    return Err("bad literal run");
                }
                let vals = take(data, pos, n)?;
                for (s, v) in scan[x..x + n].iter_mut().zip(vals) {
                    s[c] = *v;
                }
                x += n;
            }
        }
    }
    Ok(())
}

pub fn write_hdr(mut w: impl Write, img: &Image) -> std::io::Result<()> {
    write!(w, "#?RADIANCE\nFORMAT=32-bit_rle_rgbe\n\n-Y {} +X {}\n", img.height, img.width)?;
    let rle = (8..0x8000).contains(&img.width);
    let mut buf = Vec::new();
    for row in img.pixels.chunks(img.width) {
        let texels: Vec<[u8; 4]> = row.iter().map(rgb_to_rgbe).collect();
        buf.clear();
        if rle {
            buf.extend_from_slice(&[2, 2, (img.width >> 8) as u8, (img.width & 0xff) as u8]);
            for c in 0..4 {
                let chan: Vec<u8> = texels.iter().map(|t| t[c]).collect();
                encode_channel(&chan, &mut buf);
            }
        } else {
            for t in &texels {
                buf.extend_from_slice(t);
            }
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

fn encode_channel(v: &[u8], out: &mut Vec<u8>) {
    let mut i = 0;
    while i < v.len() {
        let mut run = 1;
        while i + run < v.len() && run < 127 && v[i + run] == v[i] {
            run += 1;
        }
        if run >= 3 {
            out.push(128 + run as u8);
            out.push(v[i]);
            i += run;
            continue;
        }
        let start = i;
        while i < v.len() && i - start < 128 {
            let mut r = 1;
            while i + r < v.len() && r < 3 && v[i + r] == v[i] {
                r += 1;
            }
            if r >= 3 {
                break;
            }
            i += 1;
        }
        out.push((i - start) as u8);
        out.extend_from_slice(&v[start..i]);
    }
}
