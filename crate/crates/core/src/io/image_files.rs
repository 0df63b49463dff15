//! Image files by extension: `.png` (display-encoded), `.pfm` and `.hdr`
//! (linear).

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use crate::error::{Error, Result};
use crate::img::{decode_display, encode_display, Image};
use crate::io::{hdr, pfm};
use crate::math::Rgb;

fn extension(path: &Path) -> String {
    path.extension()
        .and_then(|e| e.to_str())
        .unwrap_or("")
        .to_ascii_lowercase()
}

fn open(path: &Path) -> Result<BufReader<File>> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::io(path, e))
}

/// Decodes a PNG to linear RGB, compositing any alpha channel over
/// `background` in linear space.
pub fn read_png(path: &Path, background: &Rgb) -> Result<Image> {
    let reader = image::ImageReader::new(open(path)?)
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?;
    let dynimg = reader
        .decode()
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let rgba = dynimg.to_rgba32f();
    let (w, h) = (rgba.width() as usize, rgba.height() as usize);
    let pixels = rgba
        .pixels()
        .map(|p| {
            let c = Rgb::new(p[0] as f64, p[1] as f64, p[2] as f64).map(decode_display);
            let a = p[3] as f64;
            c * a + background * (1.0 - a)
        })
        .collect();
    Image::from_pixels(w, h, pixels)
}

/// Display-encodes (clamp, gamma 2.2) and writes an 8-bit RGB PNG.
pub fn write_png(path: &Path, img: &Image) -> Result<()> {
    let bytes: Vec<u8> = img
        .pixels
        .iter()
        .flat_map(|p| p.iter().map(|v| (encode_display(*v) * 255.0).round() as u8).collect::<Vec<_>>())
        .collect();
    image::save_buffer(path, &bytes, img.width as u32, img.height as u32, image::ExtendedColorType::Rgb8)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

pub fn read_image(path: &Path, background: &Rgb) -> Result<Image> {
    match extension(path).as_str() {
        "png" => read_png(path, background),
        "pfm" => pfm::read_pfm(open(path)?),
        "hdr" | "rgbe" | "pic" => hdr::read_hdr(open(path)?),
        other => Err(Error::Format(format!("unsupported image extension '{other}'"))),
    }
}

pub fn write_image(path: &Path, img: &Image) -> Result<()> {
    let create = || File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e));
    match extension(path).as_str() {
        "png" => write_png(path, img),
        "pfm" => pfm::write_pfm(create()?, img).map_err(|e| Error::io(path, e)),
        "hdr" => hdr::write_hdr(create()?, img).map_err(|e| Error::io(path, e)),
        other => Err(Error::Format(format!("unsupported image extension '{other}'"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_round_trip_within_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.png");
        let img = Image::from_pixels(2, 1, vec![Rgb::new(0.0, 0.2, 1.0), Rgb::new(0.5, 0.7, 0.05)]).unwrap();
        write_image(&path, &img).unwrap();
        let back = read_image(&path, &Rgb::zeros()).unwrap();
        for (a, b) in img.pixels.iter().zip(&back.pixels) {
            for c in 0..3 {
                assert!((encode_display(a[c]) - encode_display(b[c])).abs() <= 0.5 / 255.0 + 1e-9);
            }
        }
        write_image(&path, &back).unwrap();
        assert_eq!(read_image(&path, &Rgb::zeros()).unwrap(), back);
    }

    #[test]
    fn missing_file_is_reported() {
        let err = read_image(Path::new("/nonexistent/x.png"), &Rgb::zeros()).unwrap_err();
        assert!(matches!(err, Error::MissingFile(_)));
    }
}
