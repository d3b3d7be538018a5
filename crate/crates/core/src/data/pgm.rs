//! Reader and writer for grayscale Netpbm images (P2 ASCII and P5 binary).

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::conv::Plane;
use crate::error::{Error, Result};

fn parse_err<T>(offset: usize, message: impl Into<String>) -> Result<T> {
    Err(Error::Parse {
        offset,
        message: message.into(),
    })
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn skip_whitespace_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                b if b.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<u32> {
        self.skip_whitespace_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            if self.pos >= self.bytes.len() {
                return parse_err(start, format!("unexpected end of data while reading {what}"));
            }
            return parse_err(start, format!("expected a number for {what}"));
        }
        let text = std::str::from_utf8(&self.bytes[start..self.pos]).unwrap();
        text.parse::<u32>()
            .or_else(|_| parse_err(start, format!("{what} is out of range: {text}")))
    }
}

/// Decodes a P2 or P5 image, scaling samples to `[0, 1]` by `maxval`.
pub fn parse_pgm(bytes: &[u8]) -> Result<Plane> {
    if bytes.len() < 2 {
        return parse_err(0, "file too short for a magic number");
    }
    let binary = match &bytes[..2] {
        b"P5" => true,
        b"P2" => false,
        other => {
            return parse_err(
                0,
                format!("unsupported magic {:?}", String::from_utf8_lossy(other)),
            )
        }
    };
    let mut cur = Cursor { bytes, pos: 2 };
    let width = cur.number("width")? as usize;
    let height = cur.number("height")? as usize;
    let maxval_pos = cur.pos;
    let maxval = cur.number("maxval")?;
    if width == 0 || height == 0 {
        return parse_err(maxval_pos, format!("empty image {width}x{height}"));
    }
    if maxval == 0 || maxval > 65535 {
        return parse_err(maxval_pos, format!("maxval {maxval} outside 1..=65535"));
    }
    let scale = f64::from(maxval);
    let count = width * height;
    let mut data = Vec::with_capacity(count);

    if binary {
        // Exactly one whitespace byte separates the header from the raster.
        if cur.pos >= bytes.len() || !bytes[cur.pos].is_ascii_whitespace() {
            return parse_err(cur.pos, "missing whitespace after maxval");
        }
        let start = cur.pos + 1;
        let sample_bytes = if maxval < 256 { 1 } else { 2 };
        let needed = count * sample_bytes;
        if bytes.len() < start + needed {
            return parse_err(
                bytes.len(),
                format!(
                    "truncated raster: expected {needed} bytes, found {}",
                    bytes.len() - start
                ),
            );
        }
        let raster = &bytes[start..start + needed];
        for (i, chunk) in raster.chunks_exact(sample_bytes).enumerate() {
            let v = if sample_bytes == 1 {
                u32::from(chunk[0])
            } else {
                u32::from(u16::from_be_bytes([chunk[0], chunk[1]]))
            };
            if v > maxval {
                return parse_err(start + i * sample_bytes, format!("sample {v} exceeds maxval {maxval}"));
            }
            data.push(f64::from(v) / scale);
        }
    } else {
        for _ in 0..count {
            let pos = cur.pos;
            let v = cur.number("sample")?;
            if v > maxval {
                return parse_err(pos, format!("sample {v} exceeds maxval {maxval}"));
            }
            data.push(f64::from(v) / scale);
        }
    }
    Ok(Plane::from_shape_vec((height, width), data).expect("sample count matches shape"))
}

/// Reads a PGM file from disk.
pub fn load_pgm(path: impl AsRef<Path>) -> Result<Plane> {
    parse_pgm(&fs::read(path)?)
}

/// Encodes a plane with values in `[0, 1]` as 8-bit P5; values are clamped.
pub fn encode_pgm(img: &Plane) -> Vec<u8> {
    let (h, w) = img.dim();
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(img.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    out
}

pub fn save_pgm(path: impl AsRef<Path>, img: &Plane) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(&encode_pgm(img))?;
    Ok(())
}
