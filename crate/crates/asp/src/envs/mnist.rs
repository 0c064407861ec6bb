//! IDX-format image ingestion plus a deterministic synthetic fallback for
//! machines without the real dataset. The synthetic images are procedural
//! digit-like blobs, clearly flagged as non-benchmark data.

use std::path::Path;

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::models::IMAGE_DIM;

pub const IDX_IMAGE_MAGIC: u32 = 2051;
pub const IDX_LABEL_MAGIC: u32 = 2049;
pub const IMAGE_SIDE: usize = 28;

/// Images as flattened rows in [0, 1] with digit labels (labels are only
/// used to color visualizations).
#[derive(Debug, Clone, PartialEq)]
pub struct ImageDataset {
    pub images: Array2<f64>,
    pub labels: Vec<u8>,
    /// False for the procedural fallback data.
    pub from_idx_files: bool,
}

impl ImageDataset {
    pub fn len(&self) -> usize {
        self.images.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn read_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    let slice = bytes.get(offset..offset + 4).ok_or_else(|| Error::Format {
        offset: offset as u64,
        message: "file truncated while reading a 32-bit header field".into(),
    })?;
    Ok(u32::from_be_bytes(slice.try_into().unwrap()))
}

/// Parse an IDX image file (magic 2051) into `[0,1]`-normalized rows.
pub fn load_idx_images(path: &Path) -> Result<Array2<f64>> {
    let bytes = std::fs::read(path)?;
    let magic = read_u32(&bytes, 0)?;
    if magic != IDX_IMAGE_MAGIC {
        return Err(Error::Format {
            offset: 0,
            message: format!("bad image magic {magic}, expected {IDX_IMAGE_MAGIC}"),
        });
    }
    let count = read_u32(&bytes, 4)? as usize;
    let rows = read_u32(&bytes, 8)? as usize;
    let cols = read_u32(&bytes, 12)? as usize;
    if rows != IMAGE_SIDE || cols != IMAGE_SIDE {
        return Err(Error::Format {
            offset: 8,
            message: format!("expected {IMAGE_SIDE}x{IMAGE_SIDE} images, got {rows}x{cols}"),
        });
    }
    let expected = 16 + count * rows * cols;
    if bytes.len() < expected {
        return Err(Error::Format {
            offset: bytes.len() as u64,
            message: format!(
                "image payload truncated: have {} bytes, need {expected}",
                bytes.len()
            ),
        });
    }
    let data: Vec<f64> = bytes[16..expected]
        .iter()
        .map(|b| *b as f64 / 255.0)
        .collect();
    Array2::from_shape_vec((count, rows * cols), data).map_err(|e| Error::Format {
        offset: 16,
        message: e.to_string(),
    })
}

/// Parse an IDX label file (magic 2049).
pub fn load_idx_labels(path: &Path) -> Result<Vec<u8>> {
    let bytes = std::fs::read(path)?;
    let magic = read_u32(&bytes, 0)?;
    if magic != IDX_LABEL_MAGIC {
        return Err(Error::Format {
            offset: 0,
            message: format!("bad label magic {magic}, expected {IDX_LABEL_MAGIC}"),
        });
    }
    let count = read_u32(&bytes, 4)? as usize;
    let expected = 8 + count;
    if bytes.len() < expected {
        return Err(Error::Format {
            offset: bytes.len() as u64,
            message: format!(
                "label payload truncated: have {} bytes, need {expected}",
                bytes.len()
            ),
        });
    }
    Ok(bytes[8..expected].to_vec())
}

/// Load paired image/label IDX files.
pub fn mnist_load(image_path: &Path, label_path: &Path) -> Result<ImageDataset> {
    let images = load_idx_images(image_path)?;
    let labels = load_idx_labels(label_path)?;
    if images.nrows() != labels.len() {
        return Err(Error::Format {
            offset: 4,
            message: format!("{} images but {} labels", images.nrows(), labels.len()),
        });
    }
    if images.is_empty() {
        return Err(Error::Format {
            offset: 4,
            message: "dataset is empty".into(),
        });
    }
    Ok(ImageDataset {
        images,
        labels,
        from_idx_files: true,
    })
}

/// Deterministic procedural digit-like blobs: each "digit" class is a loop
/// or stroke pattern with per-sample jitter. Not benchmark data — only a
/// stand-in so the VAE pipeline runs offline.
pub fn synthetic_digits(count: usize, rng: &mut ChaCha8Rng) -> ImageDataset {
    let mut images = Array2::zeros((count, IMAGE_DIM));
    let mut labels = Vec::with_capacity(count);
    for n in 0..count {
        let label = (n % 10) as u8;
        labels.push(label);
        let cx = 13.5 + rng.random_range(-2.0..2.0);
        let cy = 13.5 + rng.random_range(-2.0..2.0);
        let rot: f64 = rng.random_range(-0.3..0.3);
        let scale = 1.0 + rng.random_range(-0.15..0.15);
        for py in 0..IMAGE_SIDE {
            for px in 0..IMAGE_SIDE {
                let x = (px as f64 - cx) / (6.0 * scale);
                let y = (py as f64 - cy) / (8.0 * scale);
                let (x, y) = (x * rot.cos() - y * rot.sin(), x * rot.sin() + y * rot.cos());
                let v = digit_intensity(label, x, y);
                if v > 0.0 {
                    let noisy = (v + rng.random_range(-0.08..0.08)).clamp(0.0, 1.0);
                    images[(n, py * IMAGE_SIDE + px)] = noisy;
                }
            }
        }
    }
    ImageDataset {
        images,
        labels,
        from_idx_files: false,
    }
}

/// Smooth stroke membership for each class in normalized coordinates
/// (x in roughly [-1,1], y in [-1,1]).
fn digit_intensity(label: u8, x: f64, y: f64) -> f64 {
    let stroke = |d: f64| (1.2 - (d / 0.34).powi(2)).clamp(0.0, 1.0);
    match label {
        // Ring.
        0 => stroke(((x * x + y * y).sqrt() - 0.75).abs()),
        // Vertical bar.
        1 => stroke(x.abs()) * if y.abs() <= 0.9 { 1.0 } else { 0.0 },
        // Top arc plus bottom bar.
        2 => {
            let arc = stroke(((x * x + (y + 0.45) * (y + 0.45)).sqrt() - 0.45).abs())
                * if y <= -0.1 { 1.0 } else { 0.0 };
            let bar = stroke((y - 0.8).abs()) * if x.abs() <= 0.7 { 1.0 } else { 0.0 };
            arc.max(bar)
        }
        // Two right-facing arcs.
        3 => {
            let top = stroke(((x * x + (y + 0.45) * (y + 0.45)).sqrt() - 0.45).abs());
            let bottom = stroke(((x * x + (y - 0.45) * (y - 0.45)).sqrt() - 0.45).abs());
            (top.max(bottom)) * if x >= -0.2 { 1.0 } else { 0.0 }
        }
        // Two bars and a crossbar.
        4 => {
            let right = stroke((x - 0.35).abs()) * if y.abs() <= 0.9 { 1.0 } else { 0.0 };
            let left = stroke((x + 0.35).abs()) * if (-0.9..=0.1).contains(&y) { 1.0 } else { 0.0 };
            let cross = stroke((y - 0.1).abs()) * if x.abs() <= 0.6 { 1.0 } else { 0.0 };
            right.max(left).max(cross)
        }
        // Top bar, left bar, bottom arc.
        5 => {
            let top = stroke((y + 0.8).abs()) * if x.abs() <= 0.6 { 1.0 } else { 0.0 };
            let left = stroke((x + 0.45).abs()) * if (-0.8..=0.0).contains(&y) { 1.0 } else { 0.0 };
            let arc = stroke(((x * x + (y - 0.45) * (y - 0.45)).sqrt() - 0.45).abs())
                * if y >= 0.0 { 1.0 } else { 0.0 };
            top.max(left).max(arc)
        }
        // Loop at the bottom plus an ascender.
        6 => {
            let loop_ = stroke(((x * x + (y - 0.35) * (y - 0.35)).sqrt() - 0.45).abs());
            let asc = stroke((x + 0.42).abs()) * if y <= 0.3 { 1.0 } else { 0.0 };
            loop_.max(asc)
        }
        // Top bar plus diagonal.
        7 => {
            let top = stroke((y + 0.8).abs()) * if x.abs() <= 0.6 { 1.0 } else { 0.0 };
            let diag = stroke((x - (0.5 - 0.6 * (y + 0.8))).abs())
                * if (-0.8..=0.9).contains(&y) { 1.0 } else { 0.0 };
            top.max(diag)
        }
        // Two stacked rings.
        8 => {
            let top = stroke(((x * x + (y + 0.42) * (y + 0.42)).sqrt() - 0.4).abs());
            let bottom = stroke(((x * x + (y - 0.42) * (y - 0.42)).sqrt() - 0.44).abs());
            top.max(bottom)
        }
        // Loop at the top plus a descender.
        _ => {
            let loop_ = stroke(((x * x + (y + 0.35) * (y + 0.35)).sqrt() - 0.45).abs());
            let desc = stroke((x - 0.42).abs()) * if y >= -0.3 { 1.0 } else { 0.0 };
            loop_.max(desc)
        }
    }
}
