//! Binary Netpbm: P5 (gray) and P6 (RGB), maxval 255 only.

use std::fs;
use std::path::Path;

use super::image::Image;
use crate::{Error, Result};

struct Header {
    channels: usize,
    width: usize,
    height: usize,
    /// Offset of the first raster byte.
    data_start: usize,
}

fn format_err(offset: usize, reason: impl Into<String>) -> Error {
    Error::Format {
        what: "netpbm".into(),
        offset,
        reason: reason.into(),
    }
}

fn skip_space_and_comments(bytes: &[u8], mut pos: usize) -> usize {
    loop {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
        } else {
            return pos;
        }
    }
}

fn read_uint(bytes: &[u8], pos: usize, what: &str) -> Result<(usize, usize)> {
    let pos = skip_space_and_comments(bytes, pos);
    let end = pos + bytes[pos..].iter().take_while(|b| b.is_ascii_digit()).count();
    if end == pos {
        return Err(format_err(pos, format!("expected {what}")));
    }
    let text = std::str::from_utf8(&bytes[pos..end]).expect("ascii digits");
    let v = text
        .parse::<usize>()
        .map_err(|_| format_err(pos, format!("{what} {text} out of range")))?;
    Ok((v, end))
}

fn parse_header(bytes: &[u8]) -> Result<Header> {
    let channels = match bytes.get(..2) {
        Some(b"P5") => 1,
        Some(b"P6") => 3,
        _ => return Err(format_err(0, "bad magic (expected P5 or P6)")),
    };
    let (width, pos) = read_uint(bytes, 2, "width")?;
    let (height, pos) = read_uint(bytes, pos, "height")?;
    let maxval_at = skip_space_and_comments(bytes, pos);
    let (maxval, pos) = read_uint(bytes, pos, "maxval")?;
    if maxval != 255 {
        return Err(format_err(maxval_at, format!("maxval {maxval} unsupported (only 255)")));
    }
    if width == 0 || height == 0 {
        return Err(format_err(pos, "zero image dimension"));
    }
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => {}
        _ => return Err(format_err(pos, "expected a single whitespace byte after maxval")),
    }
    Ok(Header {
        channels,
        width,
        height,
        data_start: pos + 1,
    })
}

/// Decodes a P5 or P6 byte stream.
pub fn decode(bytes: &[u8]) -> Result<Image> {
    let h = parse_header(bytes)?;
    let need = h.width * h.height * h.channels;
    let have = bytes.len() - h.data_start;
    if have < need {
        return Err(format_err(bytes.len(), format!("truncated raster: {have} of {need} bytes")));
    }
    if have > need {
        return Err(format_err(h.data_start + need, format!("{} trailing bytes", have - need)));
    }
    Image::new(h.width, h.height, h.channels, bytes[h.data_start..].to_vec())
}

/// Encodes as P5 (1 channel) or P6 (3 channels).
pub fn encode(img: &Image) -> Vec<u8> {
    let magic = if img.channels == 1 { "P5" } else { "P6" };
    let mut out = format!("{magic}\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.data);
    out
}

pub fn read(path: &Path) -> Result<Image> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|e| match e {
        Error::Format { offset, reason, .. } => Error::Format {
            what: path.display().to_string(),
            offset,
            reason,
        },
        other => other,
    })
}

pub fn read_expecting(path: &Path, channels: usize) -> Result<Image> {
    let img = read(path)?;
    if img.channels != channels {
        let kind = if channels == 1 { "P5 (gray)" } else { "P6 (RGB)" };
        return Err(Error::Data(format!("{}: expected a {kind} image", path.display())));
    }
    Ok(img)
}

pub fn write(img: &Image, path: &Path) -> Result<()> {
    fs::write(path, encode(img)).map_err(|e| Error::io(path, e))
}
