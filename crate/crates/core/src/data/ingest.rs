use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::Dataset;

/// Bilinear resample of a `src_w × src_h` grayscale image (pixel-centre aligned).
pub fn resize_bilinear(src: &[f64], src_w: usize, src_h: usize, side: usize) -> Vec<f64> {
    let sx = src_w as f64 / side as f64;
    let sy = src_h as f64 / side as f64;
    let coord = |dst: usize, scale: f64, len: usize| {
        let c = ((dst as f64 + 0.5) * scale - 0.5).clamp(0.0, (len - 1) as f64);
        let i0 = c.floor() as usize;
        let i1 = (i0 + 1).min(len - 1);
        (i0, i1, c - i0 as f64)
    };
    let mut out = Vec::with_capacity(side * side);
    for y in 0..side {
        let (y0, y1, fy) = coord(y, sy, src_h);
        for x in 0..side {
            let (x0, x1, fx) = coord(x, sx, src_w);
            let top = src[y0 * src_w + x0] * (1.0 - fx) + src[y0 * src_w + x1] * fx;
            let bot = src[y1 * src_w + x0] * (1.0 - fx) + src[y1 * src_w + x1] * fx;
            out.push(top * (1.0 - fy) + bot * fy);
        }
    }
    out
}

fn data_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Data {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

fn read_pgm(path: &Path, side: usize) -> Result<Vec<f64>> {
    let img = image::ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?
        .decode()
        .map_err(|e| data_err(path, format!("cannot decode image: {e}")))?
        .into_luma8();
    let (w, h) = img.dimensions();
    let pixels: Vec<f64> = img.as_raw().iter().map(|&v| v as f64 / 255.0).collect();
    Ok(resize_bilinear(&pixels, w as usize, h as usize, side))
}

/// Loads `root/<label>/*` for labels `0..classes`, resized to `side × side`.
///
/// Files are read in lexicographic path order within each class directory.
pub fn load_image_dir(root: impl AsRef<Path>, side: usize, classes: usize) -> Result<Dataset> {
    let root = root.as_ref();
    if side == 0 || classes < 2 {
        return Err(Error::invalid("side must be positive and classes at least 2"));
    }
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for class in 0..classes {
        let dir = root.join(class.to_string());
        if !dir.is_dir() {
            return Err(data_err(&dir, format!("missing class directory \"{class}\"")));
        }
        let mut files: Vec<PathBuf> = std::fs::read_dir(&dir)
            .map_err(|e| Error::io(&dir, e))?
            .map(|entry| entry.map(|e| e.path()).map_err(|e| Error::io(&dir, e)))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .filter(|p| p.is_file())
            .collect();
        files.sort();
        if files.is_empty() {
            return Err(data_err(&dir, format!("class directory \"{class}\" has no images")));
        }
        for file in files {
            data.extend(read_pgm(&file, side)?);
            labels.push(class);
        }
    }
    let n = labels.len();
    Dataset::new(Tensor::new(vec![n, 1, side, side], data)?, labels, classes)
}
