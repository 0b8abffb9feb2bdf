//! Loading the four MNIST IDX files, plain or gzip-compressed.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use dpfed_core::data::{parse_idx_images, parse_idx_labels, Dataset};
use flate2::read::GzDecoder;

use crate::error::{Error, Result};

/// Environment variable consulted when no data directory is given.
pub const DATA_DIR_ENV: &str = "DPFED_DATA_DIR";

/// File names inside the data directory. A name that is missing on disk is
/// also tried with a `.gz` suffix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MnistFiles {
    pub train_images: String,
    pub train_labels: String,
    pub test_images: String,
    pub test_labels: String,
}

impl Default for MnistFiles {
    fn default() -> Self {
        Self {
            train_images: "train-images-idx3-ubyte".into(),
            train_labels: "train-labels-idx1-ubyte".into(),
            test_images: "t10k-images-idx3-ubyte".into(),
            test_labels: "t10k-labels-idx1-ubyte".into(),
        }
    }
}

/// Reads a file, transparently inflating gzip content.
pub fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let raw = fs::read(path).map_err(Error::io(path))?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(Error::io(path))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn locate(dir: &Path, name: &str) -> PathBuf {
    let plain = dir.join(name);
    if plain.exists() {
        return plain;
    }
    let gz = dir.join(format!("{name}.gz"));
    if gz.exists() {
        gz
    } else {
        plain
    }
}

pub fn load_split(dir: &Path, images: &str, labels: &str) -> Result<Dataset> {
    let img_path = locate(dir, images);
    let lbl_path = locate(dir, labels);
    let parse_err = |path: &Path| {
        let path = path.to_path_buf();
        move |source| Error::Parse { path, source }
    };
    let imgs = parse_idx_images(&read_maybe_gz(&img_path)?).map_err(parse_err(&img_path))?;
    let lbls = parse_idx_labels(&read_maybe_gz(&lbl_path)?).map_err(parse_err(&lbl_path))?;
    Dataset::from_idx(&imgs, lbls).map_err(parse_err(&img_path))
}

/// Training and test sets from `dir`.
pub fn load_mnist(dir: &Path, files: &MnistFiles) -> Result<(Dataset, Dataset)> {
    let train = load_split(dir, &files.train_images, &files.train_labels)?;
    let test = load_split(dir, &files.test_images, &files.test_labels)?;
    Ok((train, test))
}
