//! Training images and the fixed per-channel normalization.

use std::path::{Path, PathBuf};

use image::imageops::FilterType;
use rand::Rng;

use crate::error::{Error, Result};
use crate::rng;
use crate::Tensor;

pub const MEAN: [f32; 3] = [0.485, 0.456, 0.406];
pub const STD: [f32; 3] = [0.229, 0.224, 0.225];

fn channel_of(shape: &[usize], what: &str) -> Result<(usize, usize)> {
    let (c, plane) = match shape.len() {
        3 => (shape[0], shape[1] * shape[2]),
        4 => (shape[1], shape[2] * shape[3]),
        _ => return Err(Error::InvalidArgument(format!("{what}: expected [3,H,W] or [N,3,H,W], got {shape:?}"))),
    };
    if c != 3 {
        return Err(Error::InvalidArgument(format!("{what}: expected 3 channels, got {c}")));
    }
    Ok((c, plane))
}

/// `(x − mean) / std` per channel. Accepts `[3,H,W]` or `[N,3,H,W]`.
pub fn normalize_image(x: &Tensor) -> Result<Tensor> {
    let (c, plane) = channel_of(x.shape(), "normalize_image")?;
    let mut out = x.clone();
    for (k, chunk) in out.data_mut().chunks_mut(plane).enumerate() {
        let ch = k % c;
        chunk.iter_mut().for_each(|v| *v = (*v - MEAN[ch]) / STD[ch]);
    }
    Ok(out)
}

/// Inverse of [`normalize_image`], clamped to `[0, 1]`.
pub fn denormalize_image(x: &Tensor) -> Result<Tensor> {
    let (c, plane) = channel_of(x.shape(), "denormalize_image")?;
    let mut out = x.clone();
    for (k, chunk) in out.data_mut().chunks_mut(plane).enumerate() {
        let ch = k % c;
        chunk.iter_mut().for_each(|v| *v = (*v * STD[ch] + MEAN[ch]).clamp(0.0, 1.0));
    }
    Ok(out)
}

/// Indexed source of `[3, R, R]` images with values in `[0, 1]`.
pub trait Dataset: Send + Sync {
    fn resolution(&self) -> usize;
    fn image(&self, index: u64) -> Tensor;

    /// Normalized batch `[n, 3, R, R]` of images `start..start+n`.
    fn batch(&self, start: u64, n: usize) -> Result<Tensor> {
        let imgs: Vec<Tensor> = (0..n as u64).map(|i| self.image(start + i)).collect();
        normalize_image(&Tensor::stack(&imgs)?)
    }
}

/// Procedural faces: a two-tone vertical background, a skin-coloured
/// ellipse and two dark eye ellipses, all with seeded jitter.
#[derive(Clone, Debug)]
pub struct SyntheticFaces {
    pub resolution: usize,
    pub seed: u64,
}

impl SyntheticFaces {
    pub fn new(resolution: usize, seed: u64) -> Self {
        Self { resolution, seed }
    }
}

fn coverage(dx: f32, dy: f32, rx: f32, ry: f32, soft: f32) -> f32 {
    let d = ((dx / rx).powi(2) + (dy / ry).powi(2)).sqrt();
    ((1.0 - d) / soft + 0.5).clamp(0.0, 1.0)
}

fn lerp3(a: [f32; 3], b: [f32; 3], t: f32) -> [f32; 3] {
    [a[0] + (b[0] - a[0]) * t, a[1] + (b[1] - a[1]) * t, a[2] + (b[2] - a[2]) * t]
}

impl Dataset for SyntheticFaces {
    fn resolution(&self) -> usize {
        self.resolution
    }

    fn image(&self, index: u64) -> Tensor {
        let mut r = rng::stream(self.seed, &[rng::label::DATA, index]);
        let mut color = |lo: f32, hi: f32| -> [f32; 3] { [0; 3].map(|_| r.random_range(lo..hi)) };
        let bg_top = color(0.05, 0.6);
        let bg_bottom = color(0.2, 0.9);
        let skin_base: f32 = r.random_range(0.45..0.9);
        let skin = [
            skin_base,
            skin_base * r.random_range(0.7..0.85),
            skin_base * r.random_range(0.55..0.75),
        ];
        let eye = [0.0f32; 3].map(|_| r.random_range(0.0..0.2));
        let cx = 0.5 + r.random_range(-0.06..0.06);
        let cy = 0.52 + r.random_range(-0.05..0.05);
        let rx = r.random_range(0.26..0.34);
        let ry = r.random_range(0.33..0.42);
        let eye_dx = rx * r.random_range(0.35..0.45);
        let eye_dy = ry * r.random_range(0.15..0.3);
        let eye_rx = rx * r.random_range(0.14..0.2);
        let eye_ry = ry * r.random_range(0.07..0.12);

        let res = self.resolution;
        let soft = 2.0 / res as f32;
        let plane = res * res;
        let mut data = vec![0.0f32; 3 * plane];
        for y in 0..res {
            for x in 0..res {
                let (u, v) = ((x as f32 + 0.5) / res as f32, (y as f32 + 0.5) / res as f32);
                let mut px = lerp3(bg_top, bg_bottom, v);
                let face = coverage(u - cx, v - cy, rx, ry, soft / rx.min(ry));
                px = lerp3(px, skin, face);
                for side in [-1.0, 1.0] {
                    let e = coverage(u - cx - side * eye_dx, v - cy + eye_dy, eye_rx, eye_ry, soft / eye_ry);
                    px = lerp3(px, eye, e * face);
                }
                for ch in 0..3 {
                    data[ch * plane + y * res + x] = px[ch].clamp(0.0, 1.0);
                }
            }
        }
        Tensor::new(vec![3, res, res], data).expect("image shape")
    }
}

/// RGB images from a directory, resized so the shorter side equals the
/// resolution and centre-cropped. Index `i` draws a seeded random file.
#[derive(Clone, Debug)]
pub struct ImageFolder {
    images: Vec<Tensor>,
    resolution: usize,
    seed: u64,
}

/// Resize-shorter-side then centre crop to `res × res`, as a `[3,res,res]`
/// tensor in `[0, 1]`.
pub fn prepare_image(img: &image::DynamicImage, res: usize) -> Tensor {
    let rgb = img.to_rgb8();
    let (w, h) = rgb.dimensions();
    let scale = res as f64 / w.min(h) as f64;
    let (nw, nh) = (
        ((w as f64 * scale).round() as u32).max(res as u32),
        ((h as f64 * scale).round() as u32).max(res as u32),
    );
    let resized = image::imageops::resize(&rgb, nw, nh, FilterType::Triangle);
    let (ox, oy) = ((nw - res as u32) / 2, (nh - res as u32) / 2);
    let plane = res * res;
    let mut data = vec![0.0f32; 3 * plane];
    for y in 0..res {
        for x in 0..res {
            let p = resized.get_pixel(ox + x as u32, oy + y as u32);
            for ch in 0..3 {
                data[ch * plane + y * res + x] = p[ch] as f32 / 255.0;
            }
        }
    }
    Tensor::new(vec![3, res, res], data).expect("image shape")
}

impl ImageFolder {
    pub fn open(dir: impl AsRef<Path>, resolution: usize, seed: u64) -> Result<Self> {
        let dir = dir.as_ref();
        let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.extension()
                    .and_then(|e| e.to_str())
                    .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg"))
            })
            .collect();
        paths.sort();
        if paths.is_empty() {
            return Err(Error::InvalidArgument(format!("no png/jpeg images in {}", dir.display())));
        }
        let images = paths
            .iter()
            .map(|p| {
                let img = image::open(p).map_err(|e| Error::Image(format!("{}: {e}", p.display())))?;
                Ok(prepare_image(&img, resolution))
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            images,
            resolution,
            seed,
        })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }
}

impl Dataset for ImageFolder {
    fn resolution(&self) -> usize {
        self.resolution
    }

    fn image(&self, index: u64) -> Tensor {
        let mut r = rng::stream(self.seed, &[rng::label::DATA, index]);
        self.images[r.random_range(0..self.images.len())].clone()
    }
}
