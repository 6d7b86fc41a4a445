use std::io::Cursor;
use std::path::Path;

use crate::error::{Error, Result};

/// 8-bit RGB image, row-major, channels interleaved.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ImageU8 {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl ImageU8 {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Config(format!("image must be non-empty, got {width}x{height}")));
        }
        if data.len() != width * height * 3 {
            return Err(Error::Config(format!(
                "image {}x{} needs {} samples, got {}",
                width,
                height,
                width * height * 3,
                data.len()
            )));
        }
        Ok(Self { width, height, data })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [u8; 3]) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(x, y));
            }
        }
        Self::new(width, height, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    /// Binary PPM (`P6`, maxval 255).
    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.data);
        out
    }

    pub fn save_ppm(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_ppm())?;
        Ok(())
    }
}

/// Reads a PPM (`P6`) or PNG file, picking the decoder from the magic bytes.
pub fn load_image(path: impl AsRef<Path>) -> Result<ImageU8> {
    let path = path.as_ref();
    let bytes = std::fs::read(path)?;
    decode_image(&bytes, path)
}

/// Same as [`load_image`] on an in-memory buffer; `path` is only used in
/// error messages.
pub fn decode_image(bytes: &[u8], path: &Path) -> Result<ImageU8> {
    if bytes.starts_with(b"P6") {
        decode_ppm(bytes, path)
    } else if bytes.starts_with(&[0x89, b'P', b'N', b'G']) {
        decode_png(bytes, path)
    } else {
        Err(ingest(path, 0, "unrecognised image format (expected P6 PPM or PNG)"))
    }
}

fn ingest(path: &Path, offset: usize, reason: impl Into<String>) -> Error {
    Error::Ingest {
        path: path.to_path_buf(),
        offset: offset as u64,
        reason: reason.into(),
    }
}

struct HeaderCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl HeaderCursor<'_> {
    fn skip_blank(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while self.bytes.get(self.pos).is_some_and(|&c| c != b'\n') {
                    self.pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        self.skip_blank();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(ingest(self.path, start, format!("expected {what}")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| ingest(self.path, start, format!("{what} out of range")))
    }
}

fn decode_ppm(bytes: &[u8], path: &Path) -> Result<ImageU8> {
    let mut cur = HeaderCursor { bytes, pos: 2, path };
    let width = cur.number("width")?;
    let height = cur.number("height")?;
    let maxval_at = cur.pos;
    let maxval = cur.number("maxval")?;
    if maxval != 255 {
        return Err(ingest(
            path,
            maxval_at,
            format!("unsupported maxval {maxval} (only 255)"),
        ));
    }
    match bytes.get(cur.pos) {
        Some(b) if b.is_ascii_whitespace() => cur.pos += 1,
        _ => return Err(ingest(path, cur.pos, "missing whitespace after header")),
    }
    if width == 0 || height == 0 {
        return Err(ingest(path, 0, format!("empty image {width}x{height}")));
    }
    let need = width
        .checked_mul(height)
        .and_then(|p| p.checked_mul(3))
        .ok_or_else(|| ingest(path, 0, "image dimensions overflow"))?;
    let payload = &bytes[cur.pos..];
    if payload.len() < need {
        return Err(ingest(
            path,
            bytes.len(),
            format!("truncated payload: {} of {} bytes", payload.len(), need),
        ));
    }
    ImageU8::new(width, height, payload[..need].to_vec())
}

fn decode_png(bytes: &[u8], path: &Path) -> Result<ImageU8> {
    let decoder = png::Decoder::new(Cursor::new(bytes));
    let mut reader = decoder.read_info().map_err(|e| ingest(path, 0, format!("png: {e}")))?;
    let (color, depth) = reader.output_color_type();
    if depth != png::BitDepth::Eight {
        return Err(ingest(
            path,
            0,
            format!("unsupported png bit depth {} (only 8-bit)", depth as u8),
        ));
    }
    let stride = match color {
        png::ColorType::Rgb => 3,
        png::ColorType::Rgba => 4,
        other => return Err(ingest(path, 0, format!("unsupported png color type {other:?}"))),
    };
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| ingest(path, 0, "png too large"))?;
    let mut buf = vec![0; size];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| ingest(path, 0, format!("png: {e}")))?;
    let (w, h) = (info.width as usize, info.height as usize);
    let mut data = Vec::with_capacity(w * h * 3);
    for row in buf.chunks(info.line_size).take(h) {
        for px in row[..w * stride].chunks(stride) {
            data.extend_from_slice(&px[..3]);
        }
    }
    ImageU8::new(w, h, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn png_bytes(w: u32, h: u32, color: png::ColorType, depth: png::BitDepth, data: &[u8]) -> Vec<u8> {
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

    const QUAD: [u8; 12] = [255, 0, 0, 0, 255, 0, 0, 0, 255, 255, 255, 255];

    #[test]
    fn two_by_two_ppm() {
        let mut bytes = b"P6\n2 2\n255\n".to_vec();
        bytes.extend_from_slice(&QUAD);
        let img = decode_image(&bytes, Path::new("quad.ppm")).unwrap();
        assert_eq!((img.width(), img.height()), (2, 2));
        assert_eq!(img.data(), &QUAD);
        assert_eq!(img.to_ppm(), bytes);
    }

    #[test]
    fn header_comments_are_skipped() {
        let mut bytes = b"P6 # made by hand\n# another\n2 1\n255\n".to_vec();
        bytes.extend_from_slice(&QUAD[..6]);
        let img = decode_image(&bytes, Path::new("c.ppm")).unwrap();
        assert_eq!(img.pixel(1, 0), [0, 255, 0]);
    }

    #[test]
    fn truncated_ppm_reports_offset() {
        let mut bytes = b"P6\n2 2\n255\n".to_vec();
        bytes.extend_from_slice(&QUAD[..7]);
        match decode_image(&bytes, Path::new("t.ppm")) {
            Err(Error::Ingest { offset, reason, .. }) => {
                assert_eq!(offset, bytes.len() as u64);
                assert!(reason.contains("truncated"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn foreign_and_bad_maxval_are_rejected() {
        assert!(decode_image(b"GIF89a", Path::new("x.gif")).is_err());
        let err = decode_image(b"P6\n1 1\n65535\n\0\0\0\0\0\0", Path::new("m.ppm")).unwrap_err();
        assert!(err.to_string().contains("maxval"));
    }

    #[test]
    fn png_rgba_drops_alpha() {
        let rgba: Vec<u8> = QUAD.chunks(3).flat_map(|p| [p[0], p[1], p[2], 7]).collect();
        let bytes = png_bytes(2, 2, png::ColorType::Rgba, png::BitDepth::Eight, &rgba);
        let img = decode_image(&bytes, Path::new("q.png")).unwrap();
        assert_eq!(img.data(), &QUAD);
    }

    #[test]
    fn sixteen_bit_png_names_its_depth() {
        let bytes = png_bytes(1, 1, png::ColorType::Rgb, png::BitDepth::Sixteen, &[0; 6]);
        let err = decode_image(&bytes, Path::new("deep.png")).unwrap_err();
        assert!(err.to_string().contains("bit depth 16"), "{err}");
    }
}
