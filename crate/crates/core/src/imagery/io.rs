//! Image file I/O.
//!
//! The binary portable pixmap (P6, maxval 255) is the bit-exact interchange
//! format: the writer emits the header `P6\n<w> <h>\n255\n` followed by the
//! raw buffer, and the reader accepts any whitespace-delimited P6 header with
//! a single whitespace byte before the pixel data. PNG (8-bit RGB or RGBA,
//! alpha dropped) is supported read-only as a convenience.

use std::io::Cursor;
use std::path::Path;

use super::{ImageError, RasterImage};

/// Decodes a P6 pixmap or an 8-bit RGB/RGBA PNG.
pub fn read_image(path: &Path) -> Result<RasterImage, ImageError> {
    let bytes = std::fs::read(path).map_err(|source| ImageError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    if bytes.starts_with(b"P6") {
        decode_p6_inner(&bytes, path)
    } else if bytes.starts_with(&[0x89, b'P', b'N', b'G']) {
        decode_png(&bytes, path)
    } else if bytes.first() == Some(&b'P') && bytes.get(1).is_some_and(u8::is_ascii_digit) {
        Err(ImageError::UnsupportedFormat {
            path: path.to_path_buf(),
            detail: format!(
                "unsupported format: pixmap type P{} (only binary P6 is supported)",
                bytes[1] as char
            ),
        })
    } else {
        Err(ImageError::UnsupportedFormat {
            path: path.to_path_buf(),
            detail: "unsupported format: not a P6 pixmap or PNG".into(),
        })
    }
}

/// Writes `image` as a P6 pixmap with the exact header `P6\n<w> <h>\n255\n`.
pub fn write_image(image: &RasterImage, path: &Path) -> Result<(), ImageError> {
    std::fs::write(path, encode_p6(image)).map_err(|source| ImageError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Encodes to P6 bytes.
pub fn encode_p6(image: &RasterImage) -> Vec<u8> {
    let header = format!("P6\n{} {}\n255\n", image.width(), image.height());
    let mut out = Vec::with_capacity(header.len() + image.pixels().len());
    out.extend_from_slice(header.as_bytes());
    out.extend_from_slice(image.pixels());
    out
}

/// Decodes P6 bytes. `origin` labels errors with the source path.
pub fn decode_p6(bytes: &[u8], origin: &Path) -> Result<RasterImage, ImageError> {
    if !bytes.starts_with(b"P6") {
        return Err(ImageError::MalformedHeader {
            path: origin.to_path_buf(),
            detail: "missing P6 magic".into(),
        });
    }
    decode_p6_inner(bytes, origin)
}

fn decode_p6_inner(bytes: &[u8], path: &Path) -> Result<RasterImage, ImageError> {
    let malformed = |detail: &str| ImageError::MalformedHeader {
        path: path.to_path_buf(),
        detail: detail.to_string(),
    };

    let mut pos = 2; // past "P6"
    let mut fields = [0u32; 3];
    for field in fields.iter_mut() {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        if pos == start {
            return Err(malformed("expected a decimal header field"));
        }
        let token = std::str::from_utf8(&bytes[start..pos]).expect("digits are ascii");
        *field = token
            .parse::<u32>()
            .map_err(|_| malformed(&format!("header field '{token}' out of range")))?;
    }
    let [width, height, maxval] = fields;
    if maxval != 255 {
        return Err(ImageError::UnsupportedDepth {
            path: path.to_path_buf(),
            detail: format!("maxval {maxval} (only 8-bit maxval 255 is supported)"),
        });
    }
    if width == 0 || height == 0 {
        return Err(malformed("zero width or height"));
    }
    // exactly one whitespace byte separates the header from the payload
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(malformed("missing whitespace after maxval"));
    }
    pos += 1;

    let expected = width as usize * height as usize * 3;
    let payload = &bytes[pos..];
    if payload.len() < expected {
        return Err(ImageError::Truncated {
            path: path.to_path_buf(),
            expected,
            found: payload.len(),
        });
    }
    if payload.len() > expected {
        return Err(malformed(&format!(
            "{} trailing bytes after pixel data",
            payload.len() - expected
        )));
    }
    RasterImage::new(width, height, payload.to_vec())
}

fn decode_png(bytes: &[u8], path: &Path) -> Result<RasterImage, ImageError> {
    let bad = |detail: String| ImageError::MalformedHeader {
        path: path.to_path_buf(),
        detail,
    };
    let decoder = png::Decoder::new(Cursor::new(bytes));
    let mut reader = decoder.read_info().map_err(|e| bad(e.to_string()))?;
    let mut buf = vec![0u8; reader.output_buffer_size().ok_or_else(|| bad("output too large".into()))?];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| bad(e.to_string()))?;
    buf.truncate(info.buffer_size());

    if info.bit_depth != png::BitDepth::Eight {
        return Err(ImageError::UnsupportedDepth {
            path: path.to_path_buf(),
            detail: format!("{:?} bits per channel (only 8-bit is supported)", info.bit_depth),
        });
    }
    let pixels = match info.color_type {
        png::ColorType::Rgb => buf,
        png::ColorType::Rgba => buf
            .chunks_exact(4)
            .flat_map(|px| [px[0], px[1], px[2]])
            .collect(),
        other => {
            return Err(ImageError::UnsupportedFormat {
                path: path.to_path_buf(),
                detail: format!("PNG color type {other:?} (only RGB and RGBA are supported)"),
            })
        }
    };
    RasterImage::new(info.width, info.height, pixels)
}
