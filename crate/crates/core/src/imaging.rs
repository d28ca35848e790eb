//! PNG encoding of normalized image tensors.

use std::io::Cursor;

use image::{ImageFormat, RgbImage};

use crate::error::{Error, Result};
use crate::training::denormalize_image;
use crate::Tensor;

/// 8-bit RGB pixels of a normalized `[3, H, W]` image.
pub fn to_rgb8(image: &Tensor) -> Result<RgbImage> {
    if image.rank() != 3 || image.shape()[0] != 3 {
        return Err(Error::InvalidArgument(format!("expected [3, H, W], got {:?}", image.shape())));
    }
    if !image.all_finite() {
        return Err(Error::Image("image contains non-finite values".into()));
    }
    let (h, w) = (image.shape()[1], image.shape()[2]);
    let x = denormalize_image(image)?;
    let d = x.data();
    let plane = h * w;
    Ok(RgbImage::from_fn(w as u32, h as u32, |px, py| {
        let i = py as usize * w + px as usize;
        image::Rgb([0, 1, 2].map(|c| quantize(d[c * plane + i])))
    }))
}

fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn encode(img: &RgbImage) -> Result<Vec<u8>> {
    let mut out = Cursor::new(Vec::new());
    img.write_to(&mut out, ImageFormat::Png).map_err(|e| Error::Image(e.to_string()))?;
    Ok(out.into_inner())
}

/// PNG bytes for one normalized `[3, H, W]` image.
pub fn encode_png(image: &Tensor) -> Result<Vec<u8>> {
    encode(&to_rgb8(image)?)
}

/// PNG bytes for a `[N, 3, H, W]` batch tiled into rows of `cols` images
/// with a one-pixel black gutter.
pub fn encode_grid(images: &Tensor, cols: usize) -> Result<Vec<u8>> {
    if images.rank() != 4 {
        return Err(Error::InvalidArgument(format!("expected [N, 3, H, W], got {:?}", images.shape())));
    }
    let (n, h, w) = (images.shape()[0], images.shape()[2] as u32, images.shape()[3] as u32);
    let cols = cols.clamp(1, n);
    let rows = n.div_ceil(cols);
    let gw = cols as u32 * (w + 1) - 1;
    let gh = rows as u32 * (h + 1) - 1;
    let mut grid = RgbImage::new(gw, gh);
    for k in 0..n {
        let tile = to_rgb8(&images.index_axis0(k))?;
        let (ox, oy) = ((k % cols) as u32 * (w + 1), (k / cols) as u32 * (h + 1));
        image::imageops::replace(&mut grid, &tile, ox as i64, oy as i64);
    }
    encode(&grid)
}
