//! Binary PPM (P6) and PGM (P5) encoding and decoding. Samples wider than
//! one byte are stored most significant byte first, as Netpbm requires.

use crate::error::{Error, Result};

/// A decoded Netpbm raster with interleaved samples.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub maxval: u16,
    pub samples: Vec<u16>,
}

fn header(magic: &str, width: usize, height: usize, maxval: u16) -> Vec<u8> {
    format!("{magic}\n{width} {height}\n{maxval}\n").into_bytes()
}

/// P6 with maxval 255; `rgb` is interleaved `[r, g, b, r, g, b, ...]`.
pub fn encode_ppm(width: usize, height: usize, rgb: &[u8]) -> Result<Vec<u8>> {
    if rgb.len() != 3 * width * height {
        return Err(Error::dim(format!("{} bytes for a {width}x{height} PPM", rgb.len())));
    }
    let mut out = header("P6", width, height, 255);
    out.extend_from_slice(rgb);
    Ok(out)
}

/// P5 with maxval 255.
pub fn encode_pgm8(width: usize, height: usize, gray: &[u8]) -> Result<Vec<u8>> {
    if gray.len() != width * height {
        return Err(Error::dim(format!("{} bytes for a {width}x{height} PGM", gray.len())));
    }
    let mut out = header("P5", width, height, 255);
    out.extend_from_slice(gray);
    Ok(out)
}

/// P5 with maxval 65535.
pub fn encode_pgm16(width: usize, height: usize, gray: &[u16]) -> Result<Vec<u8>> {
    if gray.len() != width * height {
        return Err(Error::dim(format!("{} samples for a {width}x{height} PGM", gray.len())));
    }
    let mut out = header("P5", width, height, 65535);
    out.reserve(2 * gray.len());
    for v in gray {
        out.extend_from_slice(&v.to_be_bytes());
    }
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn fail<T>(&self, msg: impl Into<String>) -> Result<T> {
        Err(Error::Format { offset: self.pos, msg: msg.into() })
    }

    fn skip_space_and_comments(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while self.bytes.get(self.pos).is_some_and(|&c| c != b'\n' && c != b'\r') {
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
        self.skip_space_and_comments();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        if start == self.pos {
            self.pos = start;
            return self.fail(format!("expected {what}"));
        }
        let text = std::str::from_utf8(&self.bytes[start..self.pos]).expect("ascii digits");
        match text.parse::<usize>() {
            Ok(v) => Ok(v),
            Err(_) => {
                self.pos = start;
                self.fail(format!("{what} out of range"))
            }
        }
    }
}

/// Parses a binary P5 or P6 file.
pub fn decode(bytes: &[u8]) -> Result<Image> {
    let mut c = Cursor { bytes, pos: 0 };
    let channels = match bytes.get(..2) {
        Some(b"P5") => 1,
        Some(b"P6") => 3,
        _ => return c.fail("expected magic P5 or P6"),
    };
    c.pos = 2;
    if !bytes.get(2).is_some_and(|b| b.is_ascii_whitespace() || *b == b'#') {
        return c.fail("expected whitespace after magic");
    }
    let width = c.number("width")?;
    let height = c.number("height")?;
    let maxval_pos = c.pos;
    let maxval = c.number("maxval")?;
    if width == 0 || height == 0 {
        c.pos = maxval_pos;
        return c.fail("zero image dimension");
    }
    if maxval == 0 || maxval > 65535 {
        c.pos = maxval_pos;
        return c.fail(format!("maxval {maxval} outside 1..=65535"));
    }
    if !bytes.get(c.pos).is_some_and(u8::is_ascii_whitespace) {
        return c.fail("expected single whitespace before raster");
    }
    c.pos += 1;
    let n = width * height * channels;
    let bps = if maxval < 256 { 1 } else { 2 };
    let raster = &bytes[c.pos..];
    if raster.len() < n * bps {
        c.pos = bytes.len();
        return c.fail(format!("raster truncated: need {} bytes, have {}", n * bps, raster.len()));
    }
    let samples: Vec<u16> = if bps == 1 {
        raster[..n].iter().map(|&b| b as u16).collect()
    } else {
        raster[..2 * n].chunks_exact(2).map(|p| u16::from_be_bytes([p[0], p[1]])).collect()
    };
    if let Some(i) = samples.iter().position(|&s| s as usize > maxval) {
        c.pos += i * bps;
        return c.fail(format!("sample {} exceeds maxval {maxval}", samples[i]));
    }
    Ok(Image { width, height, channels, maxval: maxval as u16, samples })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_written_ppm() {
        let mut bytes = b"P6\n# two by two\n2 2\n255\n".to_vec();
        bytes.extend_from_slice(&[255, 0, 0, 0, 255, 0, 0, 0, 255, 10, 20, 30]);
        let img = decode(&bytes).unwrap();
        assert_eq!((img.width, img.height, img.channels, img.maxval), (2, 2, 3, 255));
        assert_eq!(img.samples, vec![255, 0, 0, 0, 255, 0, 0, 0, 255, 10, 20, 30]);
    }

    #[test]
    fn sixteen_bit_is_big_endian() {
        let bytes = encode_pgm16(2, 1, &[0x0102, 0xFFFE]).unwrap();
        assert_eq!(&bytes[bytes.len() - 4..], &[1, 2, 0xFF, 0xFE]);
        assert_eq!(decode(&bytes).unwrap().samples, vec![0x0102, 0xFFFE]);
    }

    #[test]
    fn round_trips() {
        let rgb: Vec<u8> = (0..3 * 4 * 3).map(|i| (i * 7) as u8).collect();
        assert_eq!(decode(&encode_ppm(4, 3, &rgb).unwrap()).unwrap().samples, rgb.iter().map(|&b| b as u16).collect::<Vec<_>>());
        let g: Vec<u8> = (0..12).collect();
        assert_eq!(decode(&encode_pgm8(3, 4, &g).unwrap()).unwrap().channels, 1);
    }

    #[test]
    fn errors_carry_offsets() {
        match decode(b"P7\n1 1\n255\n\0") {
            Err(Error::Format { offset: 0, .. }) => {}
            other => panic!("{other:?}"),
        }
        match decode(b"P5\n1 x\n255\n\0") {
            Err(Error::Format { offset: 5, .. }) => {}
            other => panic!("{other:?}"),
        }
        assert!(matches!(decode(b"P5\n2 2\n255\n\0\0"), Err(Error::Format { .. })));
    }
}
