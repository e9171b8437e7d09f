use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::real::Real;
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Random square crop followed by a bilinear resize.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub enabled: bool,
    /// Range of the crop's area as a fraction of the image.
    pub scale: (f64, f64),
    pub out_side: usize,
}

impl AugmentConfig {
    pub fn new(out_side: usize) -> Self {
        AugmentConfig {
            enabled: true,
            scale: (0.5, 1.0),
            out_side,
        }
    }

    pub fn disabled(out_side: usize) -> Self {
        AugmentConfig {
            enabled: false,
            ..Self::new(out_side)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.scale;
        if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
            return Err(Error::Config(format!("crop scale ({lo}, {hi}) must satisfy 0 < lo <= hi <= 1")));
        }
        if self.out_side == 0 {
            return Err(Error::Config("augment output side must be positive".into()));
        }
        Ok(())
    }
}

fn hwc(image: &Tensor<impl Real>) -> Result<(usize, usize, usize)> {
    match *image.shape() {
        [h, w] => Ok((h, w, 1)),
        [h, w, c] => Ok((h, w, c)),
        _ => Err(Error::Shape {
            op: "augment",
            lhs: image.shape().to_vec(),
            rhs: vec![0, 0, 1],
        }),
    }
}

/// Bilinear resample of the square window at (y0, x0) with side `crop` to
/// `out`×`out`, half-pixel centred. Equal sizes copy the window verbatim.
pub fn resize_window<T: Real>(image: &Tensor<T>, y0: usize, x0: usize, crop: usize, out: usize) -> Result<Tensor<T>> {
    let (h, w, c) = hwc(image)?;
    if crop == 0 || y0 + crop > h || x0 + crop > w || out == 0 {
        return Err(Error::Config(format!(
            "window {crop} at ({y0}, {x0}) does not fit a {h}x{w} image"
        )));
    }
    let src = image.data();
    let at = |y: usize, x: usize, ch: usize| src[((y0 + y) * w + x0 + x) * c + ch];
    let mut data = Vec::with_capacity(out * out * c);
    if crop == out {
        for y in 0..out {
            for x in 0..out {
                for ch in 0..c {
                    data.push(at(y, x, ch));
                }
            }
        }
    } else {
        let scale = crop as f64 / out as f64;
        let coord = |i: usize| {
            let s = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (crop - 1) as f64);
            let lo = s.floor() as usize;
            let hi = (lo + 1).min(crop - 1);
            (lo, hi, T::from_f64(s - lo as f64))
        };
        let cols: Vec<_> = (0..out).map(coord).collect();
        for y in 0..out {
            let (ya, yb, fy) = coord(y);
            for &(xa, xb, fx) in &cols {
                for ch in 0..c {
                    let top = at(ya, xa, ch) + (at(ya, xb, ch) - at(ya, xa, ch)) * fx;
                    let bot = at(yb, xa, ch) + (at(yb, xb, ch) - at(yb, xa, ch)) * fx;
                    data.push(top + (bot - top) * fy);
                }
            }
        }
    }
    Tensor::from_vec(&[out, out, c], data)
}

/// Deterministic full-frame resize (centre square when not square).
pub fn fit_side<T: Real>(image: &Tensor<T>, side: usize) -> Result<Tensor<T>> {
    let (h, w, _) = hwc(image)?;
    let s = h.min(w);
    resize_window(image, (h - s) / 2, (w - s) / 2, s, side)
}

/// Samples an area fraction in the configured range, takes a square crop of
/// that area at a random position and resizes it to `out_side`. Disabled
/// configs return the image unchanged.
pub fn augment<T: Real>(image: &Tensor<T>, cfg: &AugmentConfig, rng: &mut Rng) -> Result<Tensor<T>> {
    if !cfg.enabled {
        return Ok(image.clone());
    }
    let (h, w, _) = hwc(image)?;
    let s = h.min(w);
    let area = rng.uniform_in(cfg.scale.0, cfg.scale.1);
    let crop = ((area.sqrt() * s as f64).round() as usize).clamp(1, s);
    let y0 = rng.below(h - crop + 1);
    let x0 = rng.below(w - crop + 1);
    resize_window(image, y0, x0, crop, cfg.out_side)
}
