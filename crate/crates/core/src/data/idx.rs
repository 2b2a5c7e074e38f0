//! IDX (MNIST-format) image and label files.
//!
//! Both start with a big-endian `u32` magic number followed by big-endian
//! `u32` dimensions: `0x00000803, count, rows, cols` for unsigned-byte images
//! and `0x00000801, count` for unsigned-byte labels.

use std::path::Path;

use crate::error::{Error, IdxError, Result};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

/// Decoded image file, pixels scaled into `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct IdxImages {
    pub rows: usize,
    pub cols: usize,
    pub images: Vec<Vec<f64>>,
}

fn read_u32(bytes: &[u8], at: usize, file: &str) -> Result<u32, IdxError> {
    match bytes.get(at..at + 4) {
        Some(b) => Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]])),
        None => Err(IdxError::Truncated {
            file: file.to_string(),
            needed: at + 4,
            found: bytes.len(),
        }),
    }
}

fn check_magic(bytes: &[u8], expected: u32, file: &str) -> Result<(), IdxError> {
    let found = read_u32(bytes, 0, file)?;
    if found != expected {
        return Err(IdxError::BadMagic {
            file: file.to_string(),
            expected,
            found,
        });
    }
    Ok(())
}

pub fn parse_idx_images(bytes: &[u8], file: &str) -> Result<IdxImages, IdxError> {
    check_magic(bytes, IMAGES_MAGIC, file)?;
    let count = read_u32(bytes, 4, file)? as usize;
    let rows = read_u32(bytes, 8, file)? as usize;
    let cols = read_u32(bytes, 12, file)? as usize;
    let pixels = count.checked_mul(rows).and_then(|p| p.checked_mul(cols));
    let body = &bytes[16..];
    match pixels {
        Some(p) if body.len() >= p => {}
        _ => {
            return Err(IdxError::Truncated {
                file: file.to_string(),
                needed: pixels.map_or(usize::MAX, |p| p.saturating_add(16)),
                found: bytes.len(),
            })
        }
    };
    let per_image = rows * cols;
    let images = (0..count)
        .map(|i| {
            body[i * per_image..(i + 1) * per_image]
                .iter()
                .map(|&p| f64::from(p) / 255.0)
                .collect()
        })
        .collect();
    Ok(IdxImages { rows, cols, images })
}

pub fn parse_idx_labels(bytes: &[u8], file: &str) -> Result<Vec<usize>, IdxError> {
    check_magic(bytes, LABELS_MAGIC, file)?;
    let count = read_u32(bytes, 4, file)? as usize;
    let body = &bytes[8..];
    if body.len() < count {
        return Err(IdxError::Truncated {
            file: file.to_string(),
            needed: 8 + count,
            found: bytes.len(),
        });
    }
    Ok(body[..count].iter().map(|&b| usize::from(b)).collect())
}

/// Loads an image/label file pair.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<(IdxImages, Vec<usize>)> {
    let img_bytes = std::fs::read(images_path).map_err(|e| Error::io(images_path, e))?;
    let lbl_bytes = std::fs::read(labels_path).map_err(|e| Error::io(labels_path, e))?;
    let images = parse_idx_images(&img_bytes, &images_path.display().to_string())?;
    let labels = parse_idx_labels(&lbl_bytes, &labels_path.display().to_string())?;
    if images.images.len() != labels.len() {
        return Err(IdxError::CountMismatch {
            images: images.images.len(),
            labels: labels.len(),
        }
        .into());
    }
    Ok((images, labels))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn images_file(count: u32, rows: u32, cols: u32, pixels: &[u8]) -> Vec<u8> {
        let mut b = Vec::new();
        for v in [IMAGES_MAGIC, count, rows, cols] {
            b.extend_from_slice(&v.to_be_bytes());
        }
        b.extend_from_slice(pixels);
        b
    }

    #[test]
    fn parses_two_small_images() {
        let bytes = images_file(2, 2, 2, &[0, 255, 51, 102, 1, 2, 3, 4]);
        let imgs = parse_idx_images(&bytes, "img").unwrap();
        assert_eq!((imgs.rows, imgs.cols), (2, 2));
        assert_eq!(imgs.images[0], vec![0.0, 1.0, 51.0 / 255.0, 102.0 / 255.0]);
        assert_eq!(imgs.images[1][3], 4.0 / 255.0);
    }

    #[test]
    fn rejects_wrong_magic() {
        let mut bytes = images_file(1, 1, 1, &[0]);
        bytes[3] = 0x01;
        let err = parse_idx_images(&bytes, "img").unwrap_err();
        assert!(matches!(
            err,
            IdxError::BadMagic {
                expected: IMAGES_MAGIC,
                found: 0x0801,
                ..
            }
        ));
        assert!(err.to_string().contains("0x00000803"));
    }

    #[test]
    fn rejects_truncation() {
        let bytes = images_file(2, 2, 2, &[0; 7]);
        assert!(matches!(
            parse_idx_images(&bytes, "img"),
            Err(IdxError::Truncated {
                needed: 24,
                found: 23,
                ..
            })
        ));
        assert!(matches!(
            parse_idx_labels(&[0, 0, 8], "lbl"),
            Err(IdxError::Truncated { .. })
        ));
    }
}
