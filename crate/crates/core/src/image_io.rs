//! 8-bit luminance images: binary PGM read/write, PNG read, padding helpers.

use std::io::Cursor;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

/// BT.601 luma of an 8-bit RGB triple, rounded to nearest.
pub fn luminance(r: u8, g: u8, b: u8) -> u8 {
    (0.299 * r as f64 + 0.587 * g as f64 + 0.114 * b as f64)
        .round()
        .clamp(0.0, 255.0) as u8
}

/// Mirror index for reflection padding (edge sample not repeated), any overshoot.
fn reflect(i: usize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let r = i % period;
    if r < n {
        r
    } else {
        period - r
    }
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if width * height != pixels.len() || width == 0 || height == 0 {
            return Err(Error::Image(format!(
                "{width}x{height} image cannot hold {} pixels",
                pixels.len()
            )));
        }
        Ok(GrayImage { width, height, pixels })
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Self {
        GrayImage {
            width,
            height,
            pixels: vec![value; width * height],
        }
    }

    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.pixels[row * self.width + col]
    }

    pub fn pixel_count(&self) -> usize {
        self.pixels.len()
    }

    /// `(1, 1, h, w)` tensor of pixel values in `[0, 255]`.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(
            vec![1, 1, self.height, self.width],
            self.pixels.iter().map(|&p| p as f64).collect(),
        )
        .expect("pixel count matches extents")
    }

    /// Clamps to `[0, 255]` and rounds to 8 bits.
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let (n, c, h, w) = t.dims4()?;
        if n != 1 || c != 1 {
            return Err(Error::Shape(format!("expected one luminance plane, got {:?}", t.shape())));
        }
        let pixels = t.data().iter().map(|v| v.clamp(0.0, 255.0).round() as u8).collect();
        GrayImage::new(w, h, pixels)
    }

    /// Reflection-pads right and bottom up to multiples of `multiple`.
    /// Returns the padded image with `(pad_right, pad_bottom)`.
    pub fn pad_to_multiple(&self, multiple: usize) -> (GrayImage, usize, usize) {
        let pad_right = (multiple - self.width % multiple) % multiple;
        let pad_bottom = (multiple - self.height % multiple) % multiple;
        let (w, h) = (self.width + pad_right, self.height + pad_bottom);
        let mut pixels = Vec::with_capacity(w * h);
        for r in 0..h {
            let sr = reflect(r, self.height);
            for c in 0..w {
                pixels.push(self.get(sr, reflect(c, self.width)));
            }
        }
        (GrayImage { width: w, height: h, pixels }, pad_right, pad_bottom)
    }

    /// Top-left `height × width` window.
    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Result<GrayImage> {
        if top + height > self.height || left + width > self.width {
            return Err(Error::Image(format!(
                "crop {height}x{width} at ({top},{left}) exceeds {}x{}",
                self.height, self.width
            )));
        }
        let mut pixels = Vec::with_capacity(width * height);
        for r in top..top + height {
            pixels.extend_from_slice(&self.pixels[r * self.width + left..r * self.width + left + width]);
        }
        GrayImage::new(width, height, pixels)
    }
}

fn pgm_error(detail: impl Into<String>) -> Error {
    Error::Format {
        what: "PGM",
        detail: detail.into(),
    }
}

/// Parses a binary (P5) PGM with maxval 255.
pub fn parse_pgm(bytes: &[u8]) -> Result<GrayImage> {
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(pgm_error("missing P5 magic"));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in &mut fields {
        // Whitespace and comments may precede each header field.
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(|b| b.is_ascii_digit()) {
            pos += 1;
        }
        if start == pos {
            return Err(pgm_error("expected a decimal header field"));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .unwrap()
            .parse()
            .map_err(|_| pgm_error("header field out of range"))?;
    }
    let [width, height, maxval] = fields;
    if maxval != 255 {
        return Err(pgm_error(format!("unsupported maxval {maxval} (only 8-bit, maxval 255)")));
    }
    if !bytes.get(pos).is_some_and(|b| b.is_ascii_whitespace()) {
        return Err(pgm_error("missing whitespace after maxval"));
    }
    pos += 1;
    let n = width
        .checked_mul(height)
        .ok_or_else(|| pgm_error("image extent overflows"))?;
    if bytes.len() < pos + n {
        return Err(Error::Truncated("PGM pixel data"));
    }
    GrayImage::new(width, height, bytes[pos..pos + n].to_vec())
}

pub fn encode_pgm(img: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.pixels);
    out
}

pub fn read_pgm(path: impl AsRef<Path>) -> Result<GrayImage> {
    parse_pgm(&std::fs::read(path)?)
}

pub fn write_pgm(path: impl AsRef<Path>, img: &GrayImage) -> Result<()> {
    std::fs::write(path, encode_pgm(img))?;
    Ok(())
}

/// Decodes an 8-bit PNG (gray, gray+alpha, RGB, RGBA or palette) to luminance.
pub fn parse_png(bytes: &[u8]) -> Result<GrayImage> {
    let png_err = |e: png::DecodingError| Error::Image(format!("PNG: {e}"));
    let mut decoder = png::Decoder::new(Cursor::new(bytes));
    decoder.set_transformations(png::Transformations::EXPAND);
    let mut reader = decoder.read_info().map_err(png_err)?;
    let (color, depth) = reader.output_color_type();
    if depth != png::BitDepth::Eight {
        return Err(Error::Image(format!("unsupported PNG bit depth {:?}", depth)));
    }
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::Image("PNG too large".into()))?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf).map_err(png_err)?;
    let (w, h) = (info.width as usize, info.height as usize);
    let channels = match color {
        png::ColorType::Grayscale => 1,
        png::ColorType::GrayscaleAlpha => 2,
        png::ColorType::Rgb => 3,
        png::ColorType::Rgba => 4,
        png::ColorType::Indexed => {
            return Err(Error::Image("palette PNG was not expanded".into()));
        }
    };
    let mut pixels = Vec::with_capacity(w * h);
    for row in buf.chunks(info.line_size).take(h) {
        for px in row[..w * channels].chunks(channels) {
            pixels.push(if channels >= 3 {
                luminance(px[0], px[1], px[2])
            } else {
                px[0]
            });
        }
    }
    GrayImage::new(w, h, pixels)
}

/// Reads a PGM or PNG, chosen by content.
pub fn read_image(path: impl AsRef<Path>) -> Result<GrayImage> {
    let bytes = std::fs::read(path.as_ref())?;
    if bytes.starts_with(b"P5") {
        parse_pgm(&bytes)
    } else if bytes.starts_with(&[0x89, b'P', b'N', b'G']) {
        parse_png(&bytes)
    } else {
        Err(Error::Image(format!(
            "{}: not a binary PGM or PNG",
            path.as_ref().display()
        )))
    }
}

/// Image files (`.pgm`, `.png`) in a directory, sorted by file name.
pub fn list_images(dir: impl AsRef<Path>) -> Result<Vec<std::path::PathBuf>> {
    let mut paths: Vec<_> = std::fs::read_dir(dir.as_ref())?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| e.eq_ignore_ascii_case("pgm") || e.eq_ignore_ascii_case("png"))
        })
        .collect();
    paths.sort();
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn png_bytes(color: png::ColorType, depth: png::BitDepth, w: u32, h: u32, data: &[u8]) -> Vec<u8> {
        let mut out = Vec::new();
        {
            let mut enc = png::Encoder::new(&mut out, w, h);
            enc.set_color(color);
            enc.set_depth(depth);
            let mut writer = enc.write_header().unwrap();
            writer.write_image_data(data).unwrap();
        }
        out
    }

    #[test]
    fn pgm_header_parse() {
        let mut bytes = b"P5\n4 4\n255\n".to_vec();
        bytes.extend((0..16).map(|v| v as u8));
        let img = parse_pgm(&bytes).unwrap();
        assert_eq!((img.width, img.height), (4, 4));
        assert_eq!(img.get(3, 3), 15);
        let commented = b"P5 # comment\n2 1\n# more\n255\n\x07\x08";
        assert_eq!(parse_pgm(commented).unwrap().pixels, vec![7, 8]);
    }

    #[test]
    fn pgm_errors() {
        assert!(matches!(parse_pgm(b"P2\n1 1\n255\n0"), Err(Error::Format { .. })));
        assert!(matches!(parse_pgm(b"P5\n1 1\n65535\n\0\0"), Err(Error::Format { .. })));
        assert!(matches!(parse_pgm(b"P5\n2 2\n255\n\0"), Err(Error::Truncated(_))));
    }

    #[test]
    fn pgm_round_trip() {
        let img = GrayImage::new(3, 2, vec![0, 1, 2, 253, 254, 255]).unwrap();
        assert_eq!(parse_pgm(&encode_pgm(&img)).unwrap(), img);
    }

    #[test]
    fn red_is_76() {
        assert_eq!(luminance(255, 0, 0), 76);
        let bytes = png_bytes(png::ColorType::Rgb, png::BitDepth::Eight, 1, 1, &[255, 0, 0]);
        assert_eq!(parse_png(&bytes).unwrap().pixels, vec![76]);
    }

    #[test]
    fn sixteen_bit_png_rejected() {
        let bytes = png_bytes(png::ColorType::Grayscale, png::BitDepth::Sixteen, 1, 1, &[1, 2]);
        assert!(matches!(parse_png(&bytes), Err(Error::Image(_))));
    }

    #[test]
    fn reflection_padding() {
        let img = GrayImage::new(3, 1, vec![10, 20, 30]).unwrap();
        let (p, right, bottom) = img.pad_to_multiple(4);
        assert_eq!((right, bottom), (1, 3));
        assert_eq!(&p.pixels[..4], &[10, 20, 30, 20]);
        assert_eq!(p.height, 4);
        let one = GrayImage::new(1, 1, vec![9]).unwrap();
        let (p, _, _) = one.pad_to_multiple(16);
        assert!(p.pixels.iter().all(|&v| v == 9));
        assert_eq!(p.crop(0, 0, 1, 1).unwrap(), one);
    }
}
