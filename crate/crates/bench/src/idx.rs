//! IDX image and label files (big-endian, unsigned-byte payload).

use std::path::Path;

use sketchogd::model::LabeledExample;

use crate::error::{BenchError, Result};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

struct Cursor<'a> {
    what: &'a str,
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(BenchError::Data(format!(
                "{}: truncated at byte offset {}, needed {n} more bytes, {} available",
                self.what,
                self.pos,
                self.bytes.len() - self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn magic(&mut self, expected: u32) -> Result<()> {
        let at = self.pos;
        let m = self.u32()?;
        if m != expected {
            return Err(BenchError::Data(format!(
                "{}: bad magic 0x{m:08x} at byte offset {at}, expected 0x{expected:08x}",
                self.what
            )));
        }
        Ok(())
    }
}

/// Images as `(rows, cols, pixels scaled to [0, 1])`.
pub fn parse_images(bytes: &[u8]) -> Result<(usize, usize, Vec<Vec<f64>>)> {
    let mut c = Cursor { what: "images", bytes, pos: 0 };
    c.magic(IMAGES_MAGIC)?;
    let n = c.u32()? as usize;
    let rows = c.u32()? as usize;
    let cols = c.u32()? as usize;
    let mut images = Vec::with_capacity(n.min(1 << 20));
    for _ in 0..n {
        images.push(c.take(rows * cols)?.iter().map(|&b| b as f64 / 255.0).collect());
    }
    Ok((rows, cols, images))
}

pub fn parse_labels(bytes: &[u8]) -> Result<Vec<usize>> {
    let mut c = Cursor { what: "labels", bytes, pos: 0 };
    c.magic(LABELS_MAGIC)?;
    let n = c.u32()? as usize;
    Ok(c.take(n)?.iter().map(|&b| b as usize).collect())
}

/// Pairs images with labels; returns the image side lengths too.
pub fn parse_idx_pair(images: &[u8], labels: &[u8]) -> Result<(usize, usize, Vec<LabeledExample>)> {
    let (rows, cols, xs) = parse_images(images)?;
    let ys = parse_labels(labels)?;
    if xs.len() != ys.len() {
        return Err(BenchError::Data(format!("{} images but {} labels (count fields at byte offset 4)", xs.len(), ys.len())));
    }
    Ok((rows, cols, xs.into_iter().zip(ys).map(|(x, y)| LabeledExample::new(x, y)).collect()))
}

pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<(usize, usize, Vec<LabeledExample>)> {
    let images = std::fs::read(images_path).map_err(|e| BenchError::io(images_path, e))?;
    let labels = std::fs::read(labels_path).map_err(|e| BenchError::io(labels_path, e))?;
    parse_idx_pair(&images, &labels)
}

/// Encodes images (pixel bytes) and labels as IDX, mainly for tests and fixtures.
pub fn encode_idx(rows: usize, cols: usize, images: &[Vec<u8>], labels: &[u8]) -> (Vec<u8>, Vec<u8>) {
    let mut img = Vec::new();
    img.extend_from_slice(&IMAGES_MAGIC.to_be_bytes());
    for v in [images.len(), rows, cols] {
        img.extend_from_slice(&(v as u32).to_be_bytes());
    }
    for im in images {
        img.extend_from_slice(im);
    }
    let mut lab = Vec::new();
    lab.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    lab.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    lab.extend_from_slice(labels);
    (img, lab)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_images_round_trip() {
        let (img, lab) = encode_idx(2, 2, &[vec![0, 1, 2, 255], vec![10, 20, 30, 40]], &[3, 7]);
        let (r, c, ex) = parse_idx_pair(&img, &lab).unwrap();
        assert_eq!((r, c), (2, 2));
        assert_eq!(ex[0].x, vec![0.0, 1.0 / 255.0, 2.0 / 255.0, 1.0]);
        assert_eq!(ex[1].y, 7);
    }

    #[test]
    fn wrong_magic_names_offset() {
        let (img, _) = encode_idx(1, 1, &[vec![0]], &[0]);
        let err = parse_labels(&img).unwrap_err().to_string();
        assert!(err.contains("offset 0") && err.contains("0x00000803"), "{err}");
    }

    #[test]
    fn empty_and_truncated() {
        assert!(parse_images(&[]).unwrap_err().to_string().contains("truncated"));
        let (mut img, lab) = encode_idx(2, 2, &[vec![1, 2, 3, 4]], &[0]);
        img.pop();
        assert!(parse_idx_pair(&img, &lab).unwrap_err().to_string().contains("offset 16"));
    }

    #[test]
    fn count_mismatch() {
        let (img, _) = encode_idx(1, 1, &[vec![0], vec![1]], &[]);
        let (_, lab) = encode_idx(1, 1, &[], &[4]);
        assert!(parse_idx_pair(&img, &lab).is_err());
    }
}
