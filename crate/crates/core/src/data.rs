//! Synthetic underwater-style scenes and on-disk image/mask datasets.
//!
//! A dataset directory holds `images/<stem>.png` and `masks/<stem>.png` with matching stems.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use image::{GrayImage, ImageBuffer, Luma, Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::resize::resize_bilinear;
use crate::model::check_input_extents;
use crate::tensor::Tensor;

/// Training and inference resolution used for full-size runs.
pub const DEFAULT_TARGET: usize = 352;
/// Resolution of desk-scale runs.
pub const DESK_SIZE: usize = 96;

const MAX_ATTEMPTS: usize = 100;
const MIN_FOREGROUND: f64 = 0.02;
const MAX_FOREGROUND: f64 = 0.6;

/// One image/mask pair. `image` is `[1, 3, H, W]` in `[0, 1]`, `mask` is `[1, 1, H, W]` in `{0, 1}`.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub image: Tensor<f32>,
    pub mask: Tensor<f32>,
    pub id: String,
}

impl Sample {
    pub fn extents(&self) -> (usize, usize) {
        let s = self.mask.shape();
        (s[2], s[3])
    }

    pub fn foreground_fraction(&self) -> f64 {
        self.mask.data().iter().map(|&v| v as f64).sum::<f64>() / self.mask.len() as f64
    }
}

/// Stacks samples into `([B, 3, H, W], [B, 1, H, W])`.
pub fn batch(samples: &[&Sample]) -> Result<(Tensor<f32>, Tensor<f32>)> {
    let images: Vec<_> = samples.iter().map(|s| s.image.clone()).collect();
    let masks: Vec<_> = samples.iter().map(|s| s.mask.clone()).collect();
    Ok((Tensor::stack(&images)?, Tensor::stack(&masks)?))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Difficulty {
    Easy,
    Hard,
}

impl std::str::FromStr for Difficulty {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "easy" => Ok(Difficulty::Easy),
            "hard" => Ok(Difficulty::Hard),
            other => Err(Error::config(format!("unknown difficulty `{other}`, expected easy or hard"))),
        }
    }
}

/// Optional overrides of the sampled degradation strengths.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub blur_sigma: Option<f64>,
    pub noise_sigma: Option<f64>,
}

/// Intermediate products of [`generate_scene`], exposed for inspection.
#[derive(Clone, Debug)]
pub struct Scene {
    pub sample: Sample,
    /// Undegraded RGB composite `[1, 3, H, W]`.
    pub composite: Tensor<f32>,
    pub gains: [f64; 3],
    pub contrast: f64,
    pub blur_sigma: f64,
    pub noise_sigma: f64,
}

#[derive(Clone, Debug)]
enum Shape {
    Ellipse { cx: f64, cy: f64, a: f64, b: f64, theta: f64 },
    Polygon(Vec<(f64, f64)>),
}

impl Shape {
    fn random<R: Rng>(rng: &mut R, h: usize, w: usize, radius: (f64, f64), center: (f64, f64)) -> Self {
        let side = h.min(w) as f64;
        let cx = rng.random_range(center.0..center.1) * w as f64;
        let cy = rng.random_range(center.0..center.1) * h as f64;
        let r = rng.random_range(radius.0..radius.1) * side;
        match rng.random_range(0..3) {
            0 => Shape::Ellipse {
                cx,
                cy,
                a: r,
                b: r * rng.random_range(0.5..1.0),
                theta: rng.random_range(0.0..PI),
            },
            1 => {
                // Convex polygon from sorted angles on a circle.
                let n = rng.random_range(3..8);
                let mut angles: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..2.0 * PI)).collect();
                angles.sort_by(|a, b| a.total_cmp(b));
                Shape::Polygon(angles.iter().map(|t| (cx + r * t.cos(), cy + r * t.sin())).collect())
            }
            _ => {
                let points = rng.random_range(5..8);
                let inner = rng.random_range(0.45..0.7);
                let phase = rng.random_range(0.0..PI);
                Shape::Polygon(
                    (0..2 * points)
                        .map(|i| {
                            let t = phase + PI * i as f64 / points as f64;
                            let rr = if i % 2 == 0 { r } else { r * inner };
                            (cx + rr * t.cos(), cy + rr * t.sin())
                        })
                        .collect(),
                )
            }
        }
    }

    fn contains(&self, x: f64, y: f64) -> bool {
        match self {
            Shape::Ellipse { cx, cy, a, b, theta } => {
                let (s, c) = theta.sin_cos();
                let (dx, dy) = (x - cx, y - cy);
                let u = (dx * c + dy * s) / a;
                let v = (-dx * s + dy * c) / b;
                u * u + v * v <= 1.0
            }
            Shape::Polygon(pts) => {
                // Even-odd rule.
                let mut inside = false;
                let mut j = pts.len() - 1;
                for i in 0..pts.len() {
                    let (xi, yi) = pts[i];
                    let (xj, yj) = pts[j];
                    if (yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi {
                        inside = !inside;
                    }
                    j = i;
                }
                inside
            }
        }
    }

    fn rasterize(&self, h: usize, w: usize) -> Vec<bool> {
        (0..h * w)
            .map(|i| self.contains((i % w) as f64 + 0.5, (i / w) as f64 + 0.5))
            .collect()
    }
}

fn color_distance(a: [f64; 3], b: [f64; 3]) -> f64 {
    a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

fn random_color<R: Rng>(rng: &mut R) -> [f64; 3] {
    [rng.random_range(0.05..0.95), rng.random_range(0.05..0.95), rng.random_range(0.05..0.95)]
}

/// Low-frequency background: a base color, a linear gradient and two slow sinusoids per channel.
fn background<R: Rng>(rng: &mut R, h: usize, w: usize) -> ([f64; 3], Vec<[f64; 3]>) {
    let base = [rng.random_range(0.25..0.75), rng.random_range(0.25..0.75), rng.random_range(0.25..0.75)];
    let mut params = Vec::new();
    for _ in 0..3 {
        let gx = rng.random_range(-0.15..0.15);
        let gy = rng.random_range(-0.15..0.15);
        let waves: Vec<(f64, f64, f64, f64)> = (0..2)
            .map(|_| {
                (
                    rng.random_range(0.02..0.06),
                    rng.random_range(0.5..2.0),
                    rng.random_range(0.0..2.0 * PI),
                    rng.random_range(0.0..PI),
                )
            })
            .collect();
        params.push((gx, gy, waves));
    }
    let pixels = (0..h * w)
        .map(|i| {
            let u = (i % w) as f64 / w as f64 - 0.5;
            let v = (i / w) as f64 / h as f64 - 0.5;
            let mut px = [0.0; 3];
            for (ch, (gx, gy, waves)) in params.iter().enumerate() {
                let mut val = base[ch] + gx * u + gy * v;
                for &(amp, freq, phase, dir) in waves {
                    let t = u * dir.cos() + v * dir.sin();
                    val += amp * (2.0 * PI * freq * t + phase).sin();
                }
                px[ch] = val.clamp(0.0, 1.0);
            }
            px
        })
        .collect();
    (base, pixels)
}

fn paint(pixels: &mut [[f64; 3]], shape_mask: &[bool], color: [f64; 3], w: usize, shade: (f64, f64)) {
    for (i, px) in pixels.iter_mut().enumerate() {
        if shape_mask[i] {
            let u = (i % w) as f64;
            let v = (i / w) as f64;
            let s = 1.0 + shade.0 * (u / w as f64 - 0.5) + shade.1 * (v / w as f64 - 0.5);
            for ch in 0..3 {
                px[ch] = (color[ch] * s).clamp(0.0, 1.0);
            }
        }
    }
}

/// Separable Gaussian blur with replicate borders, radius `ceil(3 sigma)`.
fn gaussian_blur(plane: &mut [f64], h: usize, w: usize, sigma: f64) {
    if sigma <= 0.0 {
        return;
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let mut kernel: Vec<f64> = (-radius..=radius).map(|d| (-(d * d) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let total: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= total);
    let clamp = |i: isize, n: usize| i.clamp(0, n as isize - 1) as usize;
    let mut tmp = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            tmp[y * w + x] = kernel
                .iter()
                .enumerate()
                .map(|(t, k)| k * plane[y * w + clamp(x as isize + t as isize - radius, w)])
                .sum();
        }
    }
    for y in 0..h {
        for x in 0..w {
            plane[y * w + x] = kernel
                .iter()
                .enumerate()
                .map(|(t, k)| k * tmp[clamp(y as isize + t as isize - radius, h) * w + x])
                .sum();
        }
    }
}

fn planar(pixels: &[[f64; 3]]) -> Vec<f64> {
    let n = pixels.len();
    let mut out = vec![0.0; 3 * n];
    for (i, px) in pixels.iter().enumerate() {
        for ch in 0..3 {
            out[ch * n + i] = px[ch];
        }
    }
    out
}

fn to_tensor(shape: Vec<usize>, data: &[f64]) -> Tensor<f32> {
    Tensor::from_vec(shape, data.iter().map(|&v| v as f32).collect()).expect("length matches shape")
}

/// Deterministic synthetic scene: one to three foreground shapes over a smooth background,
/// degraded by a blue-green cast, contrast compression, blur, and noise. Hard scenes add
/// look-alike distractors that are not part of the mask.
pub fn generate_scene(seed: u64, h: usize, w: usize, difficulty: Difficulty, cfg: &SynthConfig) -> Result<Scene> {
    check_input_extents(h, w)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..MAX_ATTEMPTS {
        if let Some(scene) = try_scene(&mut rng, seed, h, w, difficulty, cfg) {
            return Ok(scene);
        }
    }
    Err(Error::Generation(format!(
        "seed {seed}: no valid scene after {MAX_ATTEMPTS} attempts"
    )))
}

fn try_scene<R: Rng>(rng: &mut R, seed: u64, h: usize, w: usize, difficulty: Difficulty, cfg: &SynthConfig) -> Option<Scene> {
    let (bg_mean, mut pixels) = background(rng, h, w);
    let n = h * w;

    let count = rng.random_range(1..=3);
    let shapes: Vec<Vec<bool>> = (0..count)
        .map(|_| Shape::random(rng, h, w, (0.1, 0.28), (0.2, 0.8)).rasterize(h, w))
        .collect();
    let mut mask = vec![false; n];
    for s in &shapes {
        for (m, &v) in mask.iter_mut().zip(s) {
            *m |= v;
        }
    }
    let fraction = mask.iter().filter(|&&m| m).count() as f64 / n as f64;
    if !(MIN_FOREGROUND..=MAX_FOREGROUND).contains(&fraction) || shapes.iter().any(|s| !s.contains(&true)) {
        return None;
    }

    let mut fg = random_color(rng);
    let mut tries = 0;
    while color_distance(fg, bg_mean) < 0.45 {
        fg = random_color(rng);
        tries += 1;
        if tries > 200 {
            return None;
        }
    }

    if difficulty == Difficulty::Hard {
        for _ in 0..rng.random_range(1..=2) {
            let d = Shape::random(rng, h, w, (0.05, 0.12), (0.1, 0.9)).rasterize(h, w);
            let d: Vec<bool> = d.iter().zip(&mask).map(|(&d, &m)| d && !m).collect();
            let jitter = [0, 1, 2].map(|ch| (fg[ch] + rng.random_range(-0.06..0.06)).clamp(0.0, 1.0));
            paint(&mut pixels, &d, jitter, w, (0.0, 0.0));
        }
    }
    for s in &shapes {
        let color = [0, 1, 2].map(|ch| (fg[ch] + rng.random_range(-0.05..0.05)).clamp(0.0, 1.0));
        let shade = (rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2));
        paint(&mut pixels, s, color, w, shade);
    }
    let composite = planar(&pixels);

    let gains = [rng.random_range(0.3..0.6), rng.random_range(0.8..1.0), rng.random_range(0.8..1.0)];
    let contrast = rng.random_range(0.5..0.8);
    let (blur_range, noise_range) = match difficulty {
        Difficulty::Easy => ((0.5, 1.5), (0.01, 0.03)),
        Difficulty::Hard => ((1.5, 3.0), (0.03, 0.06)),
    };
    let blur_sampled = rng.random_range(blur_range.0..blur_range.1);
    let noise_sampled = rng.random_range(noise_range.0..noise_range.1);
    let blur_sigma = cfg.blur_sigma.unwrap_or(blur_sampled);
    let noise_sigma = cfg.noise_sigma.unwrap_or(noise_sampled);

    let mut image = composite.clone();
    for (ch, plane) in image.chunks_mut(n).enumerate() {
        for v in plane.iter_mut() {
            *v = 0.5 + contrast * (gains[ch] * *v - 0.5);
        }
        gaussian_blur(plane, h, w, blur_sigma);
    }
    if noise_sigma > 0.0 {
        let noise = Normal::new(0.0, noise_sigma).ok()?;
        for v in image.iter_mut() {
            *v += noise.sample(rng);
        }
    }
    image.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));

    let mask: Vec<f64> = mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect();
    Some(Scene {
        sample: Sample {
            image: to_tensor(vec![1, 3, h, w], &image),
            mask: to_tensor(vec![1, 1, h, w], &mask),
            id: format!("scene_{seed:016x}"),
        },
        composite: to_tensor(vec![1, 3, h, w], &composite),
        gains,
        contrast,
        blur_sigma,
        noise_sigma,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
}

const SPLIT_STRIDE: u64 = 1 << 31;

/// Generator seed of sample `index` in `split`. Training and validation seeds come from disjoint
/// half-ranges of a block of `2^32` seeds per dataset seed.
pub fn scene_seed(dataset_seed: u64, split: Split, index: usize) -> Result<u64> {
    if index as u64 >= SPLIT_STRIDE {
        return Err(Error::config(format!("sample index {index} exceeds the per-split range")));
    }
    let offset = match split {
        Split::Train => 0,
        Split::Val => SPLIT_STRIDE,
    };
    Ok(dataset_seed.wrapping_mul(2 * SPLIT_STRIDE).wrapping_add(offset + index as u64))
}

/// `n` in-memory scenes of one split.
pub fn synth_split(
    dataset_seed: u64,
    split: Split,
    n: usize,
    size: usize,
    difficulty: Difficulty,
    cfg: &SynthConfig,
) -> Result<Vec<Sample>> {
    (0..n)
        .map(|i| {
            let seed = scene_seed(dataset_seed, split, i)?;
            Ok(generate_scene(seed, size, size, difficulty, cfg)?.sample)
        })
        .collect()
}

fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn save_rgb(path: &Path, image: &Tensor<f32>) -> Result<()> {
    let (_, c, h, w) = image.dims4()?;
    if c != 3 {
        return Err(Error::validation(format!("expected 3 channels, got {c}")));
    }
    let d = image.data();
    let n = h * w;
    let img: RgbImage = ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
        let i = y as usize * w + x as usize;
        Rgb([to_u8(d[i]), to_u8(d[n + i]), to_u8(d[2 * n + i])])
    });
    img.save(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes the first channel of `[1, C, H, W]` as 8-bit grayscale.
pub fn save_gray(path: &Path, map: &Tensor<f32>) -> Result<()> {
    let (_, _, h, w) = map.dims4()?;
    let d = map.data();
    let img: GrayImage = ImageBuffer::from_fn(w as u32, h as u32, |x, y| Luma([to_u8(d[y as usize * w + x as usize])]));
    img.save(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

fn open_image(path: &Path) -> Result<image::DynamicImage> {
    image::open(path).map_err(|source| match source {
        image::ImageError::IoError(e) => Error::io(path, e),
        source => Error::Image {
            path: path.to_path_buf(),
            source,
        },
    })
}

/// Reads an RGB image as `[1, 3, H, W]` in `[0, 1]`.
pub fn load_rgb(path: &Path) -> Result<Tensor<f32>> {
    let img = open_image(path)?.to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut data = vec![0.0f32; 3 * h * w];
    for (x, y, px) in img.enumerate_pixels() {
        let i = y as usize * w + x as usize;
        for ch in 0..3 {
            data[ch * h * w + i] = px[ch] as f32 / 255.0;
        }
    }
    Tensor::from_vec(vec![1, 3, h, w], data)
}

/// Reads a grayscale map as `[1, 1, H, W]` in `[0, 1]`.
pub fn load_gray(path: &Path) -> Result<Tensor<f32>> {
    let img = open_image(path)?.to_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    Tensor::from_vec(vec![1, 1, h, w], img.pixels().map(|p| p[0] as f32 / 255.0).collect())
}

/// Nearest-neighbour resize with half-pixel centers.
pub fn resize_nearest(x: &Tensor<f32>, out_h: usize, out_w: usize) -> Result<Tensor<f32>> {
    let (b, c, h, w) = x.dims4()?;
    if out_h == 0 || out_w == 0 {
        return Err(Error::config("resize target must be positive"));
    }
    let src = |o: usize, n_in: usize, n_out: usize| (((o as f64 + 0.5) * n_in as f64 / n_out as f64) as usize).min(n_in - 1);
    let d = x.data();
    let mut out = Vec::with_capacity(b * c * out_h * out_w);
    for plane in d.chunks(h * w) {
        for oy in 0..out_h {
            let sy = src(oy, h, out_h);
            for ox in 0..out_w {
                out.push(plane[sy * w + src(ox, w, out_w)]);
            }
        }
    }
    Tensor::from_vec(vec![b, c, out_h, out_w], out)
}

/// Loads an image/mask pair resized to `target x target`: the image bilinearly, the mask by
/// nearest neighbour followed by a 0.5 threshold.
pub fn load_pair(image_path: &Path, mask_path: &Path, target: usize) -> Result<Sample> {
    let image = load_rgb(image_path)?;
    let mask = load_gray(mask_path)?;
    if image.shape()[2..] != mask.shape()[2..] {
        return Err(Error::validation(format!(
            "image {} is {:?} but mask {} is {:?}",
            image_path.display(),
            &image.shape()[2..],
            mask_path.display(),
            &mask.shape()[2..]
        )));
    }
    let image = resize_bilinear(&image, target, target)?;
    let mask = resize_nearest(&mask, target, target)?.map(|v| if v >= 0.5 { 1.0 } else { 0.0 });
    let id = image_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(Sample { image, mask, id })
}

pub fn images_dir(root: &Path) -> PathBuf {
    root.join("images")
}

pub fn masks_dir(root: &Path) -> PathBuf {
    root.join("masks")
}

/// Sorted PNG stems of a directory.
pub fn png_stems(dir: &Path) -> Result<Vec<String>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut stems = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")) {
            if let Some(stem) = path.file_stem() {
                stems.push(stem.to_string_lossy().into_owned());
            }
        }
    }
    stems.sort();
    Ok(stems)
}

/// Loads every pair of a dataset directory in stem order.
pub fn load_dataset(root: &Path, target: usize) -> Result<Vec<Sample>> {
    check_input_extents(target, target)?;
    let images = images_dir(root);
    let masks = masks_dir(root);
    let stems = png_stems(&images)?;
    if stems.is_empty() {
        return Err(Error::validation(format!("no PNG images under {}", images.display())));
    }
    stems
        .iter()
        .map(|stem| {
            let mask = masks.join(format!("{stem}.png"));
            if !mask.exists() {
                return Err(Error::validation(format!("missing mask {}", mask.display())));
            }
            load_pair(&images.join(format!("{stem}.png")), &mask, target)
        })
        .collect()
}

/// Writes samples in the dataset layout, naming files by sample id.
pub fn write_dataset(root: &Path, samples: &[Sample]) -> Result<()> {
    for dir in [images_dir(root), masks_dir(root)] {
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    for s in samples {
        save_rgb(&images_dir(root).join(format!("{}.png", s.id)), &s.image)?;
        save_gray(&masks_dir(root).join(format!("{}.png", s.id)), &s.mask)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_scene() {
        let cfg = SynthConfig::default();
        let a = generate_scene(0, 64, 64, Difficulty::Hard, &cfg).unwrap();
        let b = generate_scene(0, 64, 64, Difficulty::Hard, &cfg).unwrap();
        assert_eq!(a.sample, b.sample);
        let c = generate_scene(1, 64, 64, Difficulty::Hard, &cfg).unwrap();
        assert_ne!(a.sample.image, c.sample.image);
    }

    #[test]
    fn extents_must_divide_by_32() {
        assert!(matches!(
            generate_scene(0, 100, 96, Difficulty::Easy, &SynthConfig::default()),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn samples_are_binary_and_in_range() {
        for seed in 0..20 {
            let s = generate_scene(seed, 96, 96, Difficulty::Hard, &SynthConfig::default()).unwrap().sample;
            assert!(s.mask.data().iter().all(|&v| v == 0.0 || v == 1.0));
            assert!(s.image.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn without_blur_and_noise_only_cast_and_contrast_remain() {
        let cfg = SynthConfig {
            blur_sigma: Some(0.0),
            noise_sigma: Some(0.0),
        };
        let scene = generate_scene(3, 32, 64, Difficulty::Easy, &cfg).unwrap();
        let n = 32 * 64;
        for (i, (&img, &raw)) in scene.sample.image.data().iter().zip(scene.composite.data()).enumerate() {
            let ch = i / n;
            let expect = (0.5 + scene.contrast * (scene.gains[ch] * raw as f64 - 0.5)).clamp(0.0, 1.0);
            assert!((img as f64 - expect).abs() < 1e-6);
        }
    }

    #[test]
    fn split_seeds_are_disjoint() {
        let train: Vec<u64> = (0..100).map(|i| scene_seed(7, Split::Train, i).unwrap()).collect();
        let val: Vec<u64> = (0..100).map(|i| scene_seed(7, Split::Val, i).unwrap()).collect();
        assert!(train.iter().all(|t| !val.contains(t)));
    }

    #[test]
    fn nearest_resize_to_same_size_is_identity() {
        let x = Tensor::from_fn(vec![1, 1, 5, 7], |i| (i % 2) as f32);
        assert_eq!(resize_nearest(&x, 5, 7).unwrap(), x);
    }
}
