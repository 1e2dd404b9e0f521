//! IDX image and label files (the MNIST distribution format).

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::features::{Dataset, Distribution};

pub const IMAGE_MAGIC: u32 = 2051;
pub const LABEL_MAGIC: u32 = 2049;

/// Environment variable naming the directory with the MNIST IDX files.
pub const DATA_DIR_ENV: &str = "RFGD_DATA_DIR";

pub const TRAIN_IMAGES: &str = "train-images-idx3-ubyte";
pub const TRAIN_LABELS: &str = "train-labels-idx1-ubyte";
pub const TEST_IMAGES: &str = "t10k-images-idx3-ubyte";
pub const TEST_LABELS: &str = "t10k-labels-idx1-ubyte";

/// Raw contents of an image/label file pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxData {
    pub rows: usize,
    pub cols: usize,
    /// `count * rows * cols` bytes, image after image.
    pub pixels: Vec<u8>,
    pub labels: Vec<u8>,
}

impl IdxData {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn pixel_count(&self) -> usize {
        self.rows * self.cols
    }

    /// Image `i` scaled to `[0, 1]`.
    pub fn image(&self, i: usize) -> Vec<f64> {
        let p = self.pixel_count();
        self.pixels[i * p..(i + 1) * p].iter().map(|&b| b as f64 / 255.0).collect()
    }

    /// Images whose label is in `classes`, optionally subsampled to `count`
    /// (seeded), as a dataset with the label as target.
    pub fn select(&self, classes: &[u8], count: Option<usize>, seed: u64) -> Result<Dataset> {
        let mut idx: Vec<usize> = (0..self.len()).filter(|&i| classes.contains(&self.labels[i])).collect();
        if let Some(k) = count {
            if k > idx.len() {
                return Err(Error::invalid(format!(
                    "requested {k} images but only {} match the classes",
                    idx.len()
                )));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            idx.shuffle(&mut rng);
            idx.truncate(k);
            idx.sort_unstable();
        }
        let p = self.pixel_count();
        let points = DMatrix::from_fn(idx.len(), p, |r, c| self.pixels[idx[r] * p + c] as f64 / 255.0);
        let targets = DVector::from_iterator(idx.len(), idx.iter().map(|&i| self.labels[i] as f64));
        Dataset::new(points, targets, Distribution::External)
    }
}

fn fail(path: &Path, reason: impl Into<String>) -> Error {
    Error::Idx {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

fn be_u32(bytes: &[u8], at: usize, path: &Path) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| fail(path, "truncated header"))
}

fn read_images(path: &Path) -> Result<(usize, usize, usize, Vec<u8>)> {
    let bytes = fs::read(path)?;
    let magic = be_u32(&bytes, 0, path)?;
    if magic != IMAGE_MAGIC {
        return Err(fail(path, format!("bad image magic {magic:#010x}")));
    }
    let count = be_u32(&bytes, 4, path)? as usize;
    let rows = be_u32(&bytes, 8, path)? as usize;
    let cols = be_u32(&bytes, 12, path)? as usize;
    let need = count * rows * cols;
    let payload = &bytes[16..];
    if payload.len() < need {
        return Err(fail(path, format!("truncated payload: {} of {need} bytes", payload.len())));
    }
    Ok((count, rows, cols, payload[..need].to_vec()))
}

fn read_labels(path: &Path) -> Result<Vec<u8>> {
    let bytes = fs::read(path)?;
    let magic = be_u32(&bytes, 0, path)?;
    if magic != LABEL_MAGIC {
        return Err(fail(path, format!("bad label magic {magic:#010x}")));
    }
    let count = be_u32(&bytes, 4, path)? as usize;
    let payload = &bytes[8..];
    if payload.len() < count {
        return Err(fail(path, format!("truncated payload: {} of {count} bytes", payload.len())));
    }
    Ok(payload[..count].to_vec())
}

pub fn load_idx(images: &Path, labels: &Path) -> Result<IdxData> {
    let (count, rows, cols, pixels) = read_images(images)?;
    let labels_v = read_labels(labels)?;
    if labels_v.len() != count {
        return Err(fail(
            labels,
            format!("{} labels for {count} images", labels_v.len()),
        ));
    }
    Ok(IdxData {
        rows,
        cols,
        pixels,
        labels: labels_v,
    })
}

/// The directory named by [`DATA_DIR_ENV`], if set.
pub fn data_dir_from_env() -> Option<PathBuf> {
    std::env::var_os(DATA_DIR_ENV).map(PathBuf::from)
}

pub fn write_idx_images(path: &Path, rows: usize, cols: usize, pixels: &[u8]) -> Result<()> {
    let p = rows * cols;
    if p == 0 || !pixels.len().is_multiple_of(p) {
        return Err(Error::invalid("pixel buffer is not a whole number of images"));
    }
    let mut out = Vec::with_capacity(16 + pixels.len());
    for v in [IMAGE_MAGIC, (pixels.len() / p) as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(pixels);
    fs::write(path, out)?;
    Ok(())
}

pub fn write_idx_labels(path: &Path, labels: &[u8]) -> Result<()> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn magic_constants() {
        assert_eq!(IMAGE_MAGIC.to_be_bytes(), [0, 0, 8, 3]);
        assert_eq!(LABEL_MAGIC.to_be_bytes(), [0, 0, 8, 1]);
    }

    #[test]
    fn round_trip_and_rejects() {
        let dir = tempfile::tempdir().unwrap();
        let (im, lb) = (dir.path().join("im"), dir.path().join("lb"));
        let pixels: Vec<u8> = (0..8).map(|v| v * 30).collect();
        write_idx_images(&im, 2, 2, &pixels).unwrap();
        write_idx_labels(&lb, &[1, 0]).unwrap();
        let d = load_idx(&im, &lb).unwrap();
        assert_eq!((d.rows, d.cols, d.len()), (2, 2, 2));
        assert_eq!(d.pixels, pixels);
        assert_eq!(d.labels, vec![1, 0]);
        assert_eq!(d.image(1)[3], 210.0 / 255.0);

        // label file passed as images
        assert!(matches!(load_idx(&lb, &lb), Err(Error::Idx { .. })));
        write_idx_labels(&lb, &[1]).unwrap();
        assert!(matches!(load_idx(&im, &lb), Err(Error::Idx { .. })));
        let mut raw = fs::read(&im).unwrap();
        raw.truncate(raw.len() - 1);
        fs::write(&im, raw).unwrap();
        write_idx_labels(&lb, &[1, 0]).unwrap();
        assert!(matches!(load_idx(&im, &lb), Err(Error::Idx { .. })));
    }

    #[test]
    fn class_selection() {
        let d = IdxData {
            rows: 1,
            cols: 2,
            pixels: vec![0, 255, 10, 20, 30, 40, 50, 60],
            labels: vec![0, 7, 1, 0],
        };
        let s = d.select(&[0, 1], None, 0).unwrap();
        assert_eq!(s.len(), 3);
        assert_eq!(s.targets.as_slice(), &[0.0, 1.0, 0.0]);
        assert_eq!(s.points[(0, 1)], 1.0);
        let a = d.select(&[0, 1], Some(2), 9).unwrap();
        let b = d.select(&[0, 1], Some(2), 9).unwrap();
        assert_eq!(a, b);
        assert!(d.select(&[0, 1], Some(4), 9).is_err());
    }
}
