//! Synthetic shape-segmentation data and training-time augmentation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::config::IGNORE_INDEX;
use crate::error::{Error, Result};
use crate::ops;
use crate::tensor::{LabelMap, Tensor};

/// Class 0 is a textured background; class `k >= 1` is drawn as a rectangle,
/// disc or triangle (cycling with `k`) in its own colour.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub n_images: usize,
    pub size: (usize, usize),
    pub n_classes: usize,
    pub max_shapes: usize,
    /// Per-pixel Gaussian noise.
    pub noise: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            n_images: 50,
            size: (96, 96),
            n_classes: 4,
            max_shapes: 3,
            noise: 0.04,
            seed: 7,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_images == 0 || self.max_shapes == 0 {
            return Err(Error::Config("n_images and max_shapes must be >= 1".into()));
        }
        if self.n_classes < 2 || self.n_classes > 255 {
            return Err(Error::Config("n_classes must lie in [2, 255]".into()));
        }
        if self.size.0 < 8 || self.size.1 < 8 {
            return Err(Error::Config("images must be at least 8x8".into()));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::Config("noise must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct Sample {
    /// `(1, 3, H, W)`, values roughly in `[-0.5, 0.5]`.
    pub image: Tensor<f32>,
    pub label: LabelMap,
}

const PALETTE: [[f64; 3]; 6] = [
    [0.9, 0.2, 0.2],
    [0.2, 0.85, 0.25],
    [0.2, 0.3, 0.9],
    [0.9, 0.85, 0.2],
    [0.8, 0.3, 0.9],
    [0.2, 0.85, 0.85],
];

fn class_colour(k: usize) -> [f64; 3] {
    if k == 0 {
        return [0.45, 0.45, 0.45];
    }
    let base = PALETTE[(k - 1) % PALETTE.len()];
    // Later cycles are darkened so colours stay distinct.
    let shade = 1.0 - 0.3 * ((k - 1) / PALETTE.len()) as f64;
    base.map(|v| v * shade)
}

fn inside(kind: usize, cy: f64, cx: f64, ry: f64, rx: f64, y: f64, x: f64) -> bool {
    let (dy, dx) = ((y - cy) / ry, (x - cx) / rx);
    match kind {
        0 => dy.abs() <= 1.0 && dx.abs() <= 1.0,
        1 => dy * dy + dx * dx <= 1.0,
        // apex up, base at dy = 1
        _ => (-1.0..=1.0).contains(&dy) && dx.abs() <= (dy + 1.0) / 2.0,
    }
}

pub fn generate(cfg: &SyntheticConfig) -> Result<Vec<Sample>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (h, w) = cfg.size;
    let noise = Normal::new(0.0, cfg.noise).map_err(|e| Error::Config(e.to_string()))?;
    let side = h.min(w) as f64;
    let mut out = Vec::with_capacity(cfg.n_images);
    for _ in 0..cfg.n_images {
        let mut colour = vec![[0.0f64; 3]; h * w];
        let mut label = vec![0u32; h * w];
        let bg = class_colour(0).map(|v| v + rng.random_range(-0.1..0.1));
        let (fy, fx) = (rng.random_range(0.2..0.6), rng.random_range(0.2..0.6));
        let phase = rng.random_range(0.0..std::f64::consts::TAU);
        for y in 0..h {
            for x in 0..w {
                let t = 0.08 * (fy * y as f64 + fx * x as f64 + phase).sin();
                colour[y * w + x] = bg.map(|v| v + t);
            }
        }
        let shapes = rng.random_range(1..=cfg.max_shapes);
        for _ in 0..shapes {
            let k = rng.random_range(1..cfg.n_classes);
            let kind = (k - 1) % 3;
            let ry = rng.random_range(0.12..0.3) * side;
            let rx = rng.random_range(0.12..0.3) * side;
            let cy = rng.random_range(0.0..h as f64);
            let cx = rng.random_range(0.0..w as f64);
            let c = class_colour(k).map(|v| v + rng.random_range(-0.08..0.08));
            for y in 0..h {
                for x in 0..w {
                    if inside(kind, cy, cx, ry, rx, y as f64 + 0.5, x as f64 + 0.5) {
                        colour[y * w + x] = c;
                        label[y * w + x] = k as u32;
                    }
                }
            }
        }
        let image = Tensor::from_fn([1, 3, h, w], |_, ch, y, x| {
            (colour[y * w + x][ch] - 0.5 + noise.sample(&mut rng)) as f32
        });
        out.push(Sample {
            image,
            label: LabelMap::new(1, h, w, label)?,
        });
    }
    Ok(out)
}

/// Nearest-neighbour label resize on half-pixel centres.
pub fn resize_labels(l: &LabelMap, out_h: usize, out_w: usize) -> LabelMap {
    let sy = l.h as f64 / out_h as f64;
    let sx = l.w as f64 / out_w as f64;
    let mut data = Vec::with_capacity(l.n * out_h * out_w);
    for n in 0..l.n {
        for y in 0..out_h {
            let iy = (((y as f64 + 0.5) * sy) as usize).min(l.h - 1);
            for x in 0..out_w {
                let ix = (((x as f64 + 0.5) * sx) as usize).min(l.w - 1);
                data.push(l.at(n, iy, ix));
            }
        }
    }
    LabelMap::new(l.n, out_h, out_w, data).expect("sizes match")
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentParams {
    pub crop: (usize, usize),
    pub scale_range: (f64, f64),
    pub flip_prob: f64,
}

/// Random rescale, random crop (padding with zeros and ignore labels when the
/// rescaled sample is smaller than the crop) and random horizontal flip.
pub fn augment<R: Rng + ?Sized>(s: &Sample, p: &AugmentParams, rng: &mut R) -> Result<Sample> {
    let (h, w) = (s.label.h, s.label.w);
    let scale = if p.scale_range.0 == p.scale_range.1 {
        p.scale_range.0
    } else {
        rng.random_range(p.scale_range.0..p.scale_range.1)
    };
    let sh = ((h as f64 * scale).round() as usize).max(1);
    let sw = ((w as f64 * scale).round() as usize).max(1);
    let img = ops::bilinear_resize(&s.image, sh, sw)?;
    let lbl = resize_labels(&s.label, sh, sw);
    let (ch, cw) = p.crop;
    // Placement of the scaled sample inside the crop window (may be negative).
    let off = |full: usize, crop: usize, rng: &mut R| -> isize {
        if full >= crop {
            -(rng.random_range(0..=full - crop) as isize)
        } else {
            rng.random_range(0..=crop - full) as isize
        }
    };
    let oy = off(sh, ch, rng);
    let ox = off(sw, cw, rng);
    let flip = rng.random_bool(p.flip_prob);
    let mut image = Tensor::zeros([1, 3, ch, cw]);
    let mut label = vec![IGNORE_INDEX; ch * cw];
    for y in 0..ch {
        let sy = y as isize - oy;
        if sy < 0 || sy >= sh as isize {
            continue;
        }
        for x in 0..cw {
            let sx = x as isize - ox;
            if sx < 0 || sx >= sw as isize {
                continue;
            }
            let (sy, sx) = (sy as usize, sx as usize);
            label[y * cw + x] = lbl.at(0, sy, sx);
            for c in 0..3 {
                image.set(0, c, y, x, img.at(0, c, sy, sx));
            }
        }
    }
    let mut label = LabelMap::new(1, ch, cw, label)?;
    if flip {
        image = image.flip_horizontal();
        label = label.flip_horizontal();
    }
    Ok(Sample { image, label })
}
