//! Big-endian IDX image/label files, upsampled to the network input size.

use std::path::Path;

use super::{read_file, DataError, Dataset, IMAGE_SIZE};

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;

struct Reader<'a> {
    file: &'a str,
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn u32(&mut self) -> Result<u32, DataError> {
        let b = self.take(4)?;
        Ok(u32::from_be_bytes(b.try_into().expect("4 bytes")))
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], DataError> {
        if self.buf.len() - self.pos < n {
            return Err(DataError::UnexpectedEof(self.file.to_string()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn magic(&mut self, expected: u32) -> Result<(), DataError> {
        let found = self.u32()?;
        if found != expected {
            return Err(DataError::BadMagic {
                file: self.file.to_string(),
                expected,
                found,
            });
        }
        Ok(())
    }
}

/// `(count, rows, cols, pixels)` from an IDX3 image file.
pub fn parse_images(file: &str, bytes: &[u8]) -> Result<(usize, usize, usize, Vec<u8>), DataError> {
    let mut r = Reader { file, buf: bytes, pos: 0 };
    r.magic(IMAGE_MAGIC)?;
    let n = r.u32()? as usize;
    let rows = r.u32()? as usize;
    let cols = r.u32()? as usize;
    let pixels = r.take(n * rows * cols)?.to_vec();
    Ok((n, rows, cols, pixels))
}

pub fn parse_labels(file: &str, bytes: &[u8]) -> Result<Vec<u8>, DataError> {
    let mut r = Reader { file, buf: bytes, pos: 0 };
    r.magic(LABEL_MAGIC)?;
    let n = r.u32()? as usize;
    Ok(r.take(n)?.to_vec())
}

/// Bilinear resize with half-pixel centers and edge clamping.
pub fn resize_bilinear(src: &[f32], sh: usize, sw: usize, dh: usize, dw: usize) -> Vec<f32> {
    let coords = |d: usize, s: usize| -> Vec<(usize, usize, f32)> {
        (0..d)
            .map(|i| {
                let x = ((i as f32 + 0.5) * s as f32 / d as f32 - 0.5).clamp(0.0, (s - 1) as f32);
                let x0 = x.floor() as usize;
                let x1 = (x0 + 1).min(s - 1);
                (x0, x1, x - x0 as f32)
            })
            .collect()
    };
    let ys = coords(dh, sh);
    let xs = coords(dw, sw);
    let mut out = Vec::with_capacity(dh * dw);
    for &(y0, y1, fy) in &ys {
        for &(x0, x1, fx) in &xs {
            let top = src[y0 * sw + x0] * (1.0 - fx) + src[y0 * sw + x1] * fx;
            let bottom = src[y1 * sw + x0] * (1.0 - fx) + src[y1 * sw + x1] * fx;
            out.push(top * (1.0 - fy) + bottom * fy);
        }
    }
    out
}

/// Loads an image/label file pair, scaling pixels to [0, 1] and resizing to 48×48.
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset, DataError> {
    let (ip, lp) = (images_path.as_ref(), labels_path.as_ref());
    let (n, rows, cols, pixels) = parse_images(&ip.display().to_string(), &read_file(ip)?)?;
    let labels = parse_labels(&lp.display().to_string(), &read_file(lp)?)?;
    if labels.len() != n {
        return Err(DataError::LengthMismatch {
            images: n,
            labels: labels.len(),
        });
    }
    let mut images = Vec::with_capacity(n * IMAGE_SIZE * IMAGE_SIZE);
    let scaled: Vec<f32> = pixels.iter().map(|&p| p as f32 / 255.0).collect();
    for item in scaled.chunks_exact((rows * cols).max(1)).take(n) {
        images.extend(resize_bilinear(item, rows, cols, IMAGE_SIZE, IMAGE_SIZE));
    }
    let labels: Vec<usize> = labels.into_iter().map(usize::from).collect();
    let classes = labels.iter().max().map_or(0, |&m| m + 1).max(10);
    Dataset::new(IMAGE_SIZE, IMAGE_SIZE, images, labels, classes)
}

/// Loads `train-*` or `t10k-*` files from a directory in the standard layout.
pub fn load_idx_dir(dir: impl AsRef<Path>, train: bool) -> Result<Dataset, DataError> {
    let prefix = if train { "train" } else { "t10k" };
    let dir = dir.as_ref();
    load_idx(
        dir.join(format!("{prefix}-images-idx3-ubyte")),
        dir.join(format!("{prefix}-labels-idx1-ubyte")),
    )
}
