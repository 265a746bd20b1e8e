//! IDX container files (the MNIST distribution format), unsigned-byte payloads only.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::data::{Dataset, Targets};
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::Scalar;

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputPrecision {
    #[default]
    Fp,
    /// Inputs restricted to the grid `k / 255`.
    Fixed8bit,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdxImages {
    pub n: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

fn idx_err(offset: usize, msg: impl Into<String>) -> Error {
    Error::Idx { offset, msg: msg.into() }
}

fn be_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| idx_err(offset, "file ends inside the header"))
}

fn check_magic(bytes: &[u8], expected: u32) -> Result<()> {
    let magic = be_u32(bytes, 0)?;
    if magic != expected {
        return Err(idx_err(0, format!("bad magic 0x{magic:08x}, expected 0x{expected:08x}")));
    }
    Ok(())
}

pub fn parse_idx_images(bytes: &[u8]) -> Result<IdxImages> {
    check_magic(bytes, IMAGES_MAGIC)?;
    let n = be_u32(bytes, 4)? as usize;
    let rows = be_u32(bytes, 8)? as usize;
    let cols = be_u32(bytes, 12)? as usize;
    let want = n * rows * cols;
    let body = &bytes[16..];
    if body.len() != want {
        return Err(idx_err(
            16,
            format!("{n}x{rows}x{cols} images need {want} payload bytes, found {}", body.len()),
        ));
    }
    Ok(IdxImages {
        n,
        rows,
        cols,
        pixels: body.to_vec(),
    })
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    check_magic(bytes, LABELS_MAGIC)?;
    let n = be_u32(bytes, 4)? as usize;
    let body = &bytes[8..];
    if body.len() != n {
        return Err(idx_err(8, format!("{n} labels declared, found {} payload bytes", body.len())));
    }
    Ok(body.to_vec())
}

pub fn encode_idx_images(img: &IdxImages) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + img.pixels.len());
    for v in [IMAGES_MAGIC, img.n as u32, img.rows as u32, img.cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(&img.pixels);
    out
}

pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

/// Pixels as `[N, 1, rows, cols]` scaled to `[0, 1]` by `k / 255`, which is
/// already the fixed 8-bit grid.
pub fn images_tensor<T: Scalar>(img: &IdxImages) -> Result<Tensor<T>> {
    let scale = T::lit(255.0);
    let data = img.pixels.iter().map(|&p| T::lit(p as f64) / scale).collect();
    Tensor::from_vec(&[img.n, 1, img.rows, img.cols], data)
}

pub fn load_idx_images(path: impl AsRef<Path>) -> Result<IdxImages> {
    parse_idx_images(&std::fs::read(path)?)
}

pub fn load_idx_labels(path: impl AsRef<Path>) -> Result<Vec<u8>> {
    parse_idx_labels(&std::fs::read(path)?)
}

/// Image and label files as one classification set; the class count is
/// `max(label) + 1` unless given.
pub fn load_idx_dataset<T: Scalar>(images: impl AsRef<Path>, labels: impl AsRef<Path>, n_classes: Option<usize>) -> Result<Dataset<T>> {
    let img = load_idx_images(images.as_ref())?;
    let lab = load_idx_labels(labels)?;
    if lab.len() != img.n {
        return Err(idx_err(
            4,
            format!("label file has {} entries, image file has {}", lab.len(), img.n),
        ));
    }
    let labels: Vec<usize> = lab.into_iter().map(usize::from).collect();
    let n_classes = n_classes.unwrap_or_else(|| labels.iter().max().map_or(1, |m| m + 1));
    let name = images
        .as_ref()
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "idx".into());
    Dataset::new(name, images_tensor(&img)?, Targets::Classes { labels, n_classes })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture() -> IdxImages {
        IdxImages {
            n: 4,
            rows: 2,
            cols: 3,
            pixels: (0..24).map(|i| (i * 11) as u8).collect(),
        }
    }

    #[test]
    fn four_image_round_trip() {
        let img = fixture();
        let back = parse_idx_images(&encode_idx_images(&img)).unwrap();
        assert_eq!(back, img);
        let t = images_tensor::<f32>(&back).unwrap();
        assert_eq!(t.shape(), &[4, 1, 2, 3]);
        for (v, &p) in t.to_vec().iter().zip(&img.pixels) {
            assert_eq!(*v, p as f32 / 255.0);
        }
    }

    #[test]
    fn bad_magic_names_expected_value() {
        let mut bytes = encode_idx_images(&fixture());
        bytes[3] = 0x01;
        let msg = parse_idx_images(&bytes).unwrap_err().to_string();
        assert!(msg.contains("0x00000803"), "{msg}");
        assert!(msg.contains("offset 0"), "{msg}");
    }

    #[test]
    fn truncated_payload_reports_offset() {
        let mut bytes = encode_idx_images(&fixture());
        bytes.pop();
        let e = parse_idx_images(&bytes).unwrap_err();
        assert!(matches!(e, Error::Idx { offset: 16, .. }));
        assert!(parse_idx_labels(&encode_idx_labels(&[1, 2])[..9]).is_err());
    }

    #[test]
    fn label_count_must_match_images() {
        let dir = tempfile::tempdir().unwrap();
        let ip = dir.path().join("img");
        let lp = dir.path().join("lab");
        std::fs::write(&ip, encode_idx_images(&fixture())).unwrap();
        std::fs::write(&lp, encode_idx_labels(&[0, 1, 2])).unwrap();
        assert!(load_idx_dataset::<f32>(&ip, &lp, None).is_err());
        std::fs::write(&lp, encode_idx_labels(&[0, 1, 2, 1])).unwrap();
        let d = load_idx_dataset::<f32>(&ip, &lp, None).unwrap();
        assert_eq!(d.n_classes(), Some(3));
        assert_eq!(d.len(), 4);
    }
}
