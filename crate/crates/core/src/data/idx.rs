//! IDX (MNIST) binary files: big-endian magic `0x00000803` for `u8` images of
//! rank 3 and `0x00000801` for `u8` labels of rank 1.

use std::fs;
use std::path::Path;

use super::{ImageShape, LabeledDataset};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

fn parse_err(location: &str, message: impl Into<String>) -> Error {
    Error::Parse {
        location: location.to_string(),
        message: message.into(),
    }
}

fn read_u32(bytes: &[u8], offset: usize, location: &str) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| parse_err(location, "truncated header"))
}

/// Returns `(count, rows, cols, pixels scaled to [0, 1])`.
pub fn parse_idx_images(bytes: &[u8], location: &str) -> Result<(usize, usize, usize, Vec<f64>)> {
    let magic = read_u32(bytes, 0, location)?;
    if magic != IMAGES_MAGIC {
        return Err(parse_err(location, format!("bad image magic {magic:#010x}")));
    }
    let n = read_u32(bytes, 4, location)? as usize;
    let rows = read_u32(bytes, 8, location)? as usize;
    let cols = read_u32(bytes, 12, location)? as usize;
    let payload = &bytes[16..];
    let expected = n * rows * cols;
    if payload.len() < expected {
        return Err(parse_err(
            location,
            format!("truncated payload: expected {expected} bytes, found {}", payload.len()),
        ));
    }
    let pixels = payload[..expected].iter().map(|&b| f64::from(b) / 255.0).collect();
    Ok((n, rows, cols, pixels))
}

pub fn parse_idx_labels(bytes: &[u8], location: &str) -> Result<Vec<usize>> {
    let magic = read_u32(bytes, 0, location)?;
    if magic != LABELS_MAGIC {
        return Err(parse_err(location, format!("bad label magic {magic:#010x}")));
    }
    let n = read_u32(bytes, 4, location)? as usize;
    let payload = &bytes[8..];
    if payload.len() < n {
        return Err(parse_err(
            location,
            format!("truncated payload: expected {n} labels, found {}", payload.len()),
        ));
    }
    Ok(payload[..n].iter().map(|&b| usize::from(b)).collect())
}

/// Loads an IDX image/label pair as a 10-class dataset.
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<LabeledDataset> {
    let images_path = images_path.as_ref();
    let labels_path = labels_path.as_ref();
    let img_loc = images_path.display().to_string();
    let lbl_loc = labels_path.display().to_string();
    let (n, rows, cols, pixels) = parse_idx_images(&fs::read(images_path)?, &img_loc)?;
    let labels = parse_idx_labels(&fs::read(labels_path)?, &lbl_loc)?;
    if labels.len() != n {
        return Err(parse_err(
            &lbl_loc,
            format!("{} labels for {n} images in {img_loc}", labels.len()),
        ));
    }
    if let Some(bad) = labels.iter().find(|&&y| y > 9) {
        return Err(parse_err(&lbl_loc, format!("label {bad} outside 0-9")));
    }
    let name = images_path
        .file_stem()
        .map_or_else(|| "idx".to_string(), |s| s.to_string_lossy().into_owned());
    let mut ds = LabeledDataset::new(name, Matrix::from_vec(n, rows * cols, pixels)?, labels, 10)?;
    ds.image_shape = Some(ImageShape {
        height: rows,
        width: cols,
        channels: 1,
    });
    Ok(ds)
}
