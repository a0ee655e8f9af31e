//! Patch extraction and bilinear resizing.

use tensor::Tensor;

use crate::data::Image;
use crate::error::{Error, Result};

/// Integer square root of `p` if `p` is a perfect square.
pub fn exact_sqrt(p: usize) -> Option<usize> {
    let r = (p as f64).sqrt().round() as usize;
    (r * r == p).then_some(r)
}

/// Bilinear interpolation onto a `rows x cols` grid whose corners coincide
/// with the source corners.
pub fn bilinear_resize(image: &Image, rows: usize, cols: usize) -> Result<Image> {
    if rows < 2 || cols < 2 {
        return Err(Error::Input(format!("resize target {rows}x{cols} is below 2x2")));
    }
    if rows == image.rows() && cols == image.cols() {
        return Ok(image.clone());
    }
    let coord = |i: usize, target: usize, source: usize| -> (usize, usize, f64) {
        if source == 1 {
            return (0, 0, 0.0);
        }
        let x = i as f64 * (source - 1) as f64 / (target - 1) as f64;
        let lo = (x.floor() as usize).min(source - 2);
        (lo, lo + 1, x - lo as f64)
    };
    let mut out = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        let (r0, r1, fr) = coord(r, rows, image.rows());
        for c in 0..cols {
            let (c0, c1, fc) = coord(c, cols, image.cols());
            let top = image.get(r0, c0) * (1.0 - fc) + image.get(r0, c1) * fc;
            let bottom = image.get(r1, c0) * (1.0 - fc) + image.get(r1, c1) * fc;
            out.push(top * (1.0 - fr) + bottom * fr);
        }
    }
    Image::new(rows, cols, out)
}

/// Splits an image into `p` square patches, one flattened patch per row,
/// patches in row-major order over the patch grid.
///
/// Images that are not a square with side divisible by `sqrt(p)` are first
/// resized to the smallest such square covering them.
pub fn patchify(image: &Image, p: usize) -> Result<Tensor> {
    let grid = exact_sqrt(p).ok_or_else(|| Error::Config(format!("patch count {p} is not a perfect square")))?;
    let longest = image.rows().max(image.cols());
    let side = longest.div_ceil(grid) * grid;
    if image.rows() != side || image.cols() != side {
        let resized = bilinear_resize(image, side.max(2), side.max(2))?;
        return patchify(&resized, p);
    }
    Ok(split(image, grid))
}

fn split(image: &Image, grid: usize) -> Tensor {
    let k = image.rows() / grid;
    let mut data = Vec::with_capacity(image.rows() * image.cols());
    for pr in 0..grid {
        for pc in 0..grid {
            for r in 0..k {
                let start = (pr * k + r) * image.cols() + pc * k;
                data.extend_from_slice(&image.pixels()[start..start + k]);
            }
        }
    }
    Tensor::new(vec![grid * grid, k * k], data).expect("patch grid covers the image")
}

/// Model input for one image: resized to `p x p` so every patch holds
/// exactly `p` pixels, then patchified to a `p x p` matrix.
pub fn prepare_image(image: &Image, p: usize) -> Result<Tensor> {
    let grid = exact_sqrt(p).ok_or_else(|| Error::Config(format!("patch count {p} is not a perfect square")))?;
    let im = if image.rows() == p && image.cols() == p {
        image.clone()
    } else {
        bilinear_resize(image, p.max(2), p.max(2))?
    };
    Ok(split(&im, grid))
}
