//! Contour overlays written as binary PPM.
//!
//! File layout (byte-exact):
//!
//! ```text
//! "P6\n<width> <height>\n255\n"   ASCII header, single spaces and newlines
//! width·height·3 bytes             RGB, row-major, top row first
//! ```
//!
//! The image is scaled by 255, rounded and clamped to `0..=255`. Boundary
//! pixels of the ground truth are drawn green, of the prediction red, and
//! yellow where both boundaries pass through the same pixel.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const GT_COLOUR: [u8; 3] = [0, 255, 0];
pub const PRED_COLOUR: [u8; 3] = [255, 0, 0];
pub const BOTH_COLOUR: [u8; 3] = [255, 255, 0];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl RgbImage {
    pub fn pixel(&self, y: usize, x: usize) -> [u8; 3] {
        let o = (y * self.width + x) * 3;
        [self.data[o], self.data[o + 1], self.data[o + 2]]
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.data);
        out
    }

    pub fn decode(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |why: &str| Error::format(path, why);
        let mut fields = Vec::with_capacity(4);
        let mut pos = 0;
        while fields.len() < 4 {
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos >= bytes.len() {
                return Err(bad("truncated header"));
            }
            fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("non-ASCII header"))?);
            pos += 1;
        }
        if fields[0] != "P6" || fields[3] != "255" {
            return Err(bad("expected a P6 image with maxval 255"));
        }
        let dim = |s: &str| s.parse::<usize>().map_err(|_| bad("bad dimension"));
        let (width, height) = (dim(fields[1])?, dim(fields[2])?);
        let data = &bytes[pos..];
        if data.len() != width * height * 3 {
            return Err(bad(&format!("expected {} pixel bytes, found {}", width * height * 3, data.len())));
        }
        Ok(RgbImage {
            width,
            height,
            data: data.to_vec(),
        })
    }
}

/// Pixels inside any class of `mask` (`H×W×C`) with a 4-neighbour outside
/// that class or on the image border.
pub fn contour<T: Scalar>(mask: &Tensor<T>) -> Result<Vec<bool>> {
    let (h, w, c) = mask.expect_map("contour")?;
    let on = |y: usize, x: usize, k: usize| mask.data()[(y * w + x) * c + k] > T::of(0.5);
    let mut out = vec![false; h * w];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = (0..c).any(|k| {
                on(y, x, k)
                    && (y == 0
                        || x == 0
                        || y + 1 == h
                        || x + 1 == w
                        || !on(y - 1, x, k)
                        || !on(y + 1, x, k)
                        || !on(y, x - 1, k)
                        || !on(y, x + 1, k))
            });
        }
    }
    Ok(out)
}

pub fn render_overlay<T: Scalar>(image: &Tensor<T>, pred: &Tensor<T>, gt: &Tensor<T>) -> Result<RgbImage> {
    let (h, w, c) = image.expect_map("render_overlay")?;
    if c != 3 {
        return Err(Error::Argument(format!("overlay needs an RGB image, got {c} channels")));
    }
    if pred.shape() != gt.shape() {
        return Err(Error::shape("render_overlay", pred.shape(), gt.shape()));
    }
    if pred.shape()[..2] != [h, w] {
        return Err(Error::shape("render_overlay", image.shape(), pred.shape()));
    }
    let (pc, gc) = (contour(pred)?, contour(gt)?);
    let mut data: Vec<u8> = image
        .data()
        .iter()
        .map(|v| (v.as_f64() * 255.0).round().clamp(0.0, 255.0) as u8)
        .collect();
    for i in 0..h * w {
        let colour = match (pc[i], gc[i]) {
            (true, true) => BOTH_COLOUR,
            (true, false) => PRED_COLOUR,
            (false, true) => GT_COLOUR,
            (false, false) => continue,
        };
        data[3 * i..3 * i + 3].copy_from_slice(&colour);
    }
    Ok(RgbImage {
        width: w,
        height: h,
        data,
    })
}

pub fn write_ppm(path: &Path, img: &RgbImage) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, img.encode()).map_err(|e| Error::io(path, e))
}

pub fn read_ppm(path: &Path) -> Result<RgbImage> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    RgbImage::decode(&bytes, path)
}
