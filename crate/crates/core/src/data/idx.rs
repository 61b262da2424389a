//! Reader for the IDX raster format (MNIST family). Images are flattened and
//! scaled to `[0, 1]`.

use std::fs;
use std::path::Path;

use crate::data::DatasetSource;
use crate::error::{Error, Result};
use crate::model::LabeledExample;

const IMAGE_MAGIC: u32 = 0x0000_0803;
const LABEL_MAGIC: u32 = 0x0000_0801;

fn read_u32(bytes: &[u8], at: usize) -> Option<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
}

fn malformed(path: &Path, reason: impl Into<String>) -> Error {
    Error::Idx {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

pub fn parse_images(path: &Path, bytes: &[u8]) -> Result<Vec<Vec<f64>>> {
    let magic = read_u32(bytes, 0).ok_or_else(|| malformed(path, "truncated header"))?;
    if magic != IMAGE_MAGIC {
        return Err(malformed(path, format!("bad image magic {magic:#010x}")));
    }
    let count = read_u32(bytes, 4).ok_or_else(|| malformed(path, "truncated header"))? as usize;
    let rows = read_u32(bytes, 8).ok_or_else(|| malformed(path, "truncated header"))? as usize;
    let cols = read_u32(bytes, 12).ok_or_else(|| malformed(path, "truncated header"))? as usize;
    let pixels = rows * cols;
    let body = &bytes[16..];
    if body.len() != count * pixels {
        return Err(malformed(
            path,
            format!(
                "expected {} pixel bytes, found {}",
                count * pixels,
                body.len()
            ),
        ));
    }
    if pixels == 0 {
        return Ok(vec![Vec::new(); count]);
    }
    Ok(body
        .chunks_exact(pixels)
        .map(|img| img.iter().map(|&p| f64::from(p) / 255.0).collect())
        .collect())
}

pub fn parse_labels(path: &Path, bytes: &[u8]) -> Result<Vec<usize>> {
    let magic = read_u32(bytes, 0).ok_or_else(|| malformed(path, "truncated header"))?;
    if magic != LABEL_MAGIC {
        return Err(malformed(path, format!("bad label magic {magic:#010x}")));
    }
    let count = read_u32(bytes, 4).ok_or_else(|| malformed(path, "truncated header"))? as usize;
    let body = &bytes[8..];
    if body.len() != count {
        return Err(malformed(
            path,
            format!("expected {count} labels, found {}", body.len()),
        ));
    }
    Ok(body.iter().map(|&l| usize::from(l)).collect())
}

/// Load an image/label file pair. `class_count` defaults to `max label + 1`.
pub fn load_idx(images: &Path, labels: &Path, class_count: Option<usize>) -> Result<DatasetSource> {
    let image_bytes = fs::read(images).map_err(|e| Error::io(images, e))?;
    let label_bytes = fs::read(labels).map_err(|e| Error::io(labels, e))?;
    let features = parse_images(images, &image_bytes)?;
    let labels_v = parse_labels(labels, &label_bytes)?;
    if features.len() != labels_v.len() {
        return Err(malformed(
            labels,
            format!("{} labels for {} images", labels_v.len(), features.len()),
        ));
    }
    let class_count = class_count.unwrap_or_else(|| labels_v.iter().max().map_or(0, |&m| m + 1));
    let examples = features
        .into_iter()
        .zip(labels_v)
        .map(|(features, label)| LabeledExample { features, label })
        .collect();
    DatasetSource::new(examples, class_count)
}
