//! Grayscale raster images and PGM/PNG file I/O.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

/// A grayscale image with real-valued pixels in `[0, 1]`, stored row-major.
///
/// Images are immutable value data once constructed; all pipeline operations
/// take them by shared reference and are safe to run concurrently.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Image {
    /// Zero-filled image.
    pub fn new(width: usize, height: usize) -> Self {
        Image {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    /// Constant-valued image.
    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Image {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::InvalidParam(format!(
                "pixel buffer length {} does not match {}x{}",
                data.len(),
                width,
                height
            )));
        }
        Ok(Image {
            width,
            height,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        debug_assert!(x < self.width && y < self.height);
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        debug_assert!(x < self.width && y < self.height);
        self.data[y * self.width + x] = v;
    }

    /// Apply a pointwise intensity map followed by clipping to `[0, 1]`.
    pub fn map_clipped(&self, f: impl Fn(f64) -> f64) -> Image {
        Image {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f(v).clamp(0.0, 1.0)).collect(),
        }
    }

    /// Bilinear sample at real coordinates; taps outside the image contribute
    /// `fill`.
    pub fn sample_bilinear(&self, x: f64, y: f64, fill: f64) -> f64 {
        let x0 = x.floor();
        let y0 = y.floor();
        let fx = x - x0;
        let fy = y - y0;
        let tap = |ix: i64, iy: i64| -> f64 {
            if ix >= 0 && iy >= 0 && (ix as usize) < self.width && (iy as usize) < self.height {
                self.get(ix as usize, iy as usize)
            } else {
                fill
            }
        };
        let (ix, iy) = (x0 as i64, y0 as i64);
        (1.0 - fx) * (1.0 - fy) * tap(ix, iy)
            + fx * (1.0 - fy) * tap(ix + 1, iy)
            + (1.0 - fx) * fy * tap(ix, iy + 1)
            + fx * fy * tap(ix + 1, iy + 1)
    }
}

/// Load a raster file, converting to grayscale in `[0, 1]`.
///
/// PGM (P2/P5) is detected by its magic number; PNG by its signature. Color
/// inputs are converted by averaging the color channels.
pub fn load_image(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(b"P2") || bytes.starts_with(b"P5") {
        decode_pgm(&bytes)
    } else if bytes.starts_with(&[0x89, b'P', b'N', b'G']) {
        decode_png(&bytes)
    } else {
        Err(Error::Format(format!(
            "{}: not a PGM (P2/P5) or PNG file",
            path.display()
        )))
    }
}

/// Write the image as a binary PGM (P5, maxval 255).
pub fn save_pgm(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::with_capacity(img.width * img.height + 32);
    write!(out, "P5\n{} {}\n255\n", img.width, img.height).expect("vec write");
    out.extend(
        img.data
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8),
    );
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Write the image as an ASCII PGM (P2, maxval 255).
pub fn save_pgm_ascii(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = format!("P2\n{} {}\n255\n", img.width, img.height);
    for row in img.data.chunks(img.width.max(1)) {
        let line: Vec<String> = row
            .iter()
            .map(|&v| ((v.clamp(0.0, 1.0) * 255.0).round() as u8).to_string())
            .collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

fn decode_png(bytes: &[u8]) -> Result<Image> {
    let dynimg = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)
        .map_err(|e| Error::Format(format!("png decode: {e}")))?;
    let rgb = dynimg.to_rgb8();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let data = rgb
        .pixels()
        .map(|p| (p.0[0] as f64 + p.0[1] as f64 + p.0[2] as f64) / (3.0 * 255.0))
        .collect();
    Image::from_vec(w, h, data)
}

fn decode_pgm(bytes: &[u8]) -> Result<Image> {
    let binary = match &bytes[..2] {
        b"P5" => true,
        b"P2" => false,
        _ => return Err(Error::Format("not a PGM magic".into())),
    };
    let mut scan = PgmScanner {
        bytes,
        pos: 2,
    };
    let width = scan.next_uint()? as usize;
    let height = scan.next_uint()? as usize;
    let maxval = scan.next_uint()?;
    if width == 0 || height == 0 {
        return Err(Error::Format("PGM with zero dimension".into()));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(Error::Format(format!("PGM maxval {maxval} out of range")));
    }
    let n = width * height;
    let max = maxval as f64;
    let mut data = Vec::with_capacity(n);
    if binary {
        // Exactly one whitespace byte separates the header from the raster.
        scan.expect_single_whitespace()?;
        let wide = maxval > 255;
        let need = n * if wide { 2 } else { 1 };
        let raster = &scan.bytes[scan.pos..];
        if raster.len() < need {
            return Err(Error::Format(format!(
                "PGM raster truncated: need {need} bytes, have {}",
                raster.len()
            )));
        }
        if wide {
            for c in raster[..need].chunks_exact(2) {
                data.push(u16::from_be_bytes([c[0], c[1]]) as f64 / max);
            }
        } else {
            data.extend(raster[..need].iter().map(|&b| b as f64 / max));
        }
    } else {
        for _ in 0..n {
            data.push(scan.next_uint()? as f64 / max);
        }
    }
    Image::from_vec(width, height, data)
}

struct PgmScanner<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl PgmScanner<'_> {
    fn skip_ws_and_comments(&mut self) -> Result<()> {
        loop {
            while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
                self.pos += 1;
            }
            if self.pos < self.bytes.len() && self.bytes[self.pos] == b'#' {
                while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                    self.pos += 1;
                }
            } else {
                return Ok(());
            }
        }
    }

    fn next_uint(&mut self) -> Result<u64> {
        self.skip_ws_and_comments()?;
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if self.pos == start {
            return Err(Error::Format("PGM header truncated".into()));
        }
        let text = std::str::from_utf8(&self.bytes[start..self.pos]).expect("digits are utf8");
        text.parse()
            .map_err(|_| Error::Format(format!("PGM header field `{text}` out of range")))
    }

    fn expect_single_whitespace(&mut self) -> Result<()> {
        if self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
            Ok(())
        } else {
            Err(Error::Format("PGM raster separator missing".into()))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_temp(bytes: &[u8]) -> tempfile::NamedTempFile {
        let f = tempfile::NamedTempFile::new().unwrap();
        fs::write(f.path(), bytes).unwrap();
        f
    }

    #[test]
    fn pgm_binary_rescales_to_unit_range() {
        let f = write_temp(b"P5\n2 2\n255\n\x00\xff\xff\x00");
        let img = load_image(f.path()).unwrap();
        assert_eq!(img.data(), &[0.0, 1.0, 1.0, 0.0]);
    }

    #[test]
    fn pgm_single_pixel_midgray() {
        let f = write_temp(b"P5\n1 1\n255\n\x80");
        let img = load_image(f.path()).unwrap();
        assert_eq!(img.data(), &[128.0 / 255.0]);
    }

    #[test]
    fn pgm_truncated_header_is_format_error() {
        let f = write_temp(b"P5\n2 ");
        match load_image(f.path()) {
            Err(Error::Format(_)) => {}
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn pgm_truncated_raster_is_format_error() {
        let f = write_temp(b"P5\n2 2\n255\n\x00\xff");
        assert!(matches!(load_image(f.path()), Err(Error::Format(_))));
    }

    #[test]
    fn pgm_ascii_with_comment() {
        let f = write_temp(b"P2\n# comment line\n2 1\n100\n0 50\n");
        let img = load_image(f.path()).unwrap();
        assert_eq!(img.data(), &[0.0, 0.5]);
    }

    #[test]
    fn p5_round_trip_is_exact_for_all_levels() {
        let data: Vec<f64> = (0..=255).map(|v| v as f64 / 255.0).collect();
        let img = Image::from_vec(16, 16, data).unwrap();
        let f = tempfile::NamedTempFile::new().unwrap();
        save_pgm(&img, f.path()).unwrap();
        let back = load_image(f.path()).unwrap();
        assert_eq!(img, back);
        // Bytes are also stable under a second write.
        let first = fs::read(f.path()).unwrap();
        save_pgm(&back, f.path()).unwrap();
        assert_eq!(first, fs::read(f.path()).unwrap());
    }

    #[test]
    fn p2_round_trip_matches_p5() {
        let data: Vec<f64> = (0..12).map(|v| v as f64 / 11.0).collect();
        let img = Image::from_vec(4, 3, data).unwrap();
        let fa = tempfile::NamedTempFile::new().unwrap();
        let fb = tempfile::NamedTempFile::new().unwrap();
        save_pgm_ascii(&img, fa.path()).unwrap();
        save_pgm(&img, fb.path()).unwrap();
        assert_eq!(
            load_image(fa.path()).unwrap(),
            load_image(fb.path()).unwrap()
        );
    }

    #[test]
    fn unknown_magic_is_format_error() {
        let f = write_temp(b"BM notapgm");
        assert!(matches!(load_image(f.path()), Err(Error::Format(_))));
    }

    #[test]
    fn bilinear_identity_at_integer_coords() {
        let img = Image::from_vec(2, 2, vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        assert_eq!(img.sample_bilinear(1.0, 1.0, 0.5), 0.4);
        assert_eq!(img.sample_bilinear(0.0, 0.0, 0.5), 0.1);
    }

    #[test]
    fn bilinear_fills_outside() {
        let img = Image::filled(2, 2, 1.0);
        assert_eq!(img.sample_bilinear(-5.0, 0.0, 0.5), 0.5);
        let edge = img.sample_bilinear(-0.5, 0.0, 0.0);
        assert!((edge - 0.5).abs() < 1e-12);
    }
}
