//! Image file I/O: 8-bit RGB PNG via the image crate, plus a tiny binary
//! PPM (P6) codec for dependency-free fixtures.

use super::ImageF32;
use std::io::{self, Read, Write};
use std::path::Path;

#[derive(Debug, thiserror::Error)]
pub enum ImageIoError {
    #[error("io error on {path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("png error on {path}: {source}")]
    Png { path: String, source: image::ImageError },
    #[error("malformed ppm {path}: {reason}")]
    Ppm { path: String, reason: String },
}

#[inline]
fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

#[inline]
fn from_u8(v: u8) -> f32 {
    v as f32 / 255.0
}

pub fn read_png(path: &Path) -> Result<ImageF32, ImageIoError> {
    let img = image::open(path)
        .map_err(|source| ImageIoError::Png { path: path.display().to_string(), source })?
        .to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut out = ImageF32::zeros(w, h);
    for (i, px) in img.pixels().enumerate() {
        out.set_pixel(i, from_u8(px.0[0]), from_u8(px.0[1]), from_u8(px.0[2]));
    }
    Ok(out)
}

pub fn write_png(path: &Path, img: &ImageF32) -> Result<(), ImageIoError> {
    let mut buf = image::RgbImage::new(img.width as u32, img.height as u32);
    for (i, px) in buf.pixels_mut().enumerate() {
        let (r, g, b) = img.pixel(i);
        px.0 = [to_u8(r), to_u8(g), to_u8(b)];
    }
    buf.save_with_format(path, image::ImageFormat::Png)
        .map_err(|source| ImageIoError::Png { path: path.display().to_string(), source })
}

pub fn write_ppm(path: &Path, img: &ImageF32) -> Result<(), ImageIoError> {
    let wrap = |source| ImageIoError::Io { path: path.display().to_string(), source };
    let mut f = std::fs::File::create(path).map_err(wrap)?;
    write!(f, "P6\n{} {}\n255\n", img.width, img.height).map_err(wrap)?;
    let mut bytes = Vec::with_capacity(img.width * img.height * 3);
    for i in 0..img.width * img.height {
        let (r, g, b) = img.pixel(i);
        bytes.extend_from_slice(&[to_u8(r), to_u8(g), to_u8(b)]);
    }
    f.write_all(&bytes).map_err(wrap)
}

pub fn read_ppm(path: &Path) -> Result<ImageF32, ImageIoError> {
    let wrap = |source| ImageIoError::Io { path: path.display().to_string(), source };
    let bad = |reason: &str| ImageIoError::Ppm {
        path: path.display().to_string(),
        reason: reason.to_string(),
    };
    let mut raw = Vec::new();
    std::fs::File::open(path).map_err(wrap)?.read_to_end(&mut raw).map_err(wrap)?;

    // header: magic, width, height, maxval, single whitespace, then binary
    let mut pos = 0usize;
    let mut fields = Vec::new();
    while fields.len() < 4 {
        while pos < raw.len() && raw[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < raw.len() && raw[pos] == b'#' {
            while pos < raw.len() && raw[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < raw.len() && !raw[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        fields.push(std::str::from_utf8(&raw[start..pos]).map_err(|_| bad("non-ascii header"))?);
    }
    if fields[0] != "P6" {
        return Err(bad("expected P6 magic"));
    }
    let w: usize = fields[1].parse().map_err(|_| bad("bad width"))?;
    let h: usize = fields[2].parse().map_err(|_| bad("bad height"))?;
    if fields[3] != "255" {
        return Err(bad("only maxval 255 supported"));
    }
    pos += 1; // single whitespace after maxval
    if raw.len() < pos + w * h * 3 {
        return Err(bad("truncated pixel data"));
    }
    let mut out = ImageF32::zeros(w, h);
    for i in 0..w * h {
        out.set_pixel(
            i,
            from_u8(raw[pos + 3 * i]),
            from_u8(raw[pos + 3 * i + 1]),
            from_u8(raw[pos + 3 * i + 2]),
        );
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gradient_image() -> ImageF32 {
        let mut img = ImageF32::zeros(5, 4);
        for i in 0..20 {
            img.set_pixel(i, i as f32 / 19.0, 1.0 - i as f32 / 19.0, 0.5);
        }
        img
    }

    #[test]
    fn png_round_trip_is_exact_at_8bit() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.png");
        let img = gradient_image();
        write_png(&path, &img).unwrap();
        let back = read_png(&path).unwrap();
        assert_eq!((back.width, back.height), (5, 4));
        for i in 0..20 {
            let (r, g, b) = img.pixel(i);
            let (r2, g2, b2) = back.pixel(i);
            for (a, c) in [(r, r2), (g, g2), (b, b2)] {
                assert!((a - c).abs() <= 0.5 / 255.0 + 1e-6);
            }
        }
    }

    #[test]
    fn ppm_round_trip_matches_png() {
        let dir = tempfile::tempdir().unwrap();
        let img = gradient_image();
        let ppm = dir.path().join("t.ppm");
        write_ppm(&ppm, &img).unwrap();
        let back = read_ppm(&ppm).unwrap();
        let png = dir.path().join("t.png");
        write_png(&png, &img).unwrap();
        let back_png = read_png(&png).unwrap();
        assert_eq!(back.data(), back_png.data());
    }
}
