//! Image ↔ patch-token conversion, 2-D sine–cosine positional encodings and
//! uniform random masking.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::real::Real;
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Non-overlapping p×p tiles of an h×w×c image, one flattened tile per row.
///
/// Rows follow the patch grid in row-major order; within a row the layout is
/// pixel-major, channel-minor.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchSet<T: Real = f64> {
    pub patches: Tensor<T>,
    pub grid: (usize, usize),
    pub patch_size: usize,
    pub channels: usize,
}

impl<T: Real> PatchSet<T> {
    pub fn len(&self) -> usize {
        self.grid.0 * self.grid.1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn patch_dim(&self) -> usize {
        self.patch_size * self.patch_size * self.channels
    }

    pub fn image_dims(&self) -> (usize, usize, usize) {
        (self.grid.0 * self.patch_size, self.grid.1 * self.patch_size, self.channels)
    }
}

fn image_dims<T: Real>(image: &Tensor<T>) -> Result<(usize, usize, usize)> {
    match image.shape() {
        [h, w] => Ok((*h, *w, 1)),
        [h, w, c] => Ok((*h, *w, *c)),
        other => Err(Error::Shape {
            op: "patchify",
            lhs: other.to_vec(),
            rhs: vec![],
        }),
    }
}

pub fn patchify<T: Real>(image: &Tensor<T>, p: usize) -> Result<PatchSet<T>> {
    let (h, w, c) = image_dims(image)?;
    if p == 0 || h % p != 0 || w % p != 0 {
        return Err(Error::Ingestion { h, w, p });
    }
    let (rows, cols) = (h / p, w / p);
    let dim = p * p * c;
    let src = image.data();
    let mut out = Vec::with_capacity(rows * cols * dim);
    for gr in 0..rows {
        for gc in 0..cols {
            for py in 0..p {
                let y = gr * p + py;
                let start = (y * w + gc * p) * c;
                out.extend_from_slice(&src[start..start + p * c]);
            }
        }
    }
    Ok(PatchSet {
        patches: Tensor::from_vec(&[rows * cols, dim], out)?,
        grid: (rows, cols),
        patch_size: p,
        channels: c,
    })
}

pub fn unpatchify<T: Real>(ps: &PatchSet<T>) -> Tensor<T> {
    let p = ps.patch_size;
    let c = ps.channels;
    let (rows, cols) = ps.grid;
    let (h, w) = (rows * p, cols * p);
    let mut out = vec![T::zero(); h * w * c];
    let src = ps.patches.data();
    let dim = ps.patch_dim();
    for gr in 0..rows {
        for gc in 0..cols {
            let patch = &src[(gr * cols + gc) * dim..(gr * cols + gc + 1) * dim];
            for py in 0..p {
                let y = gr * p + py;
                let start = (y * w + gc * p) * c;
                out[start..start + p * c].copy_from_slice(&patch[py * p * c..(py + 1) * p * c]);
            }
        }
    }
    Tensor::from_vec(&[h, w, c], out).expect("grid dimensions are positive")
}

/// Fixed 2-D sine–cosine table, one row per grid position.
#[derive(Clone, Debug, PartialEq)]
pub struct PosEncoding<T: Real = f64> {
    pub table: Tensor<T>,
}

/// The first half of each row encodes the grid row, the second half the grid
/// column. Each half is `[sin(pos·ω₀..), cos(pos·ω₀..)]` with ωᵢ = 10000^(−i/(d/4)).
pub fn sincos_pos_encoding<T: Real>(grid: (usize, usize), d: usize) -> Result<PosEncoding<T>> {
    if d == 0 || !d.is_multiple_of(4) {
        return Err(Error::Config(format!(
            "positional encoding width {d} must be a positive multiple of 4"
        )));
    }
    let (rows, cols) = grid;
    let quarter = d / 4;
    let omega: Vec<f64> = (0..quarter)
        .map(|i| 1.0 / 10_000f64.powf(i as f64 / quarter as f64))
        .collect();
    let mut data = Vec::with_capacity(rows * cols * d);
    for r in 0..rows {
        for c in 0..cols {
            for pos in [r as f64, c as f64] {
                data.extend(omega.iter().map(|w| T::from_f64((pos * w).sin())));
                data.extend(omega.iter().map(|w| T::from_f64((pos * w).cos())));
            }
        }
    }
    Ok(PosEncoding {
        table: Tensor::from_vec(&[rows * cols, d], data)?,
    })
}

/// Which patches the encoder sees and how to restore the original order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskPlan {
    pub visible_idx: Vec<usize>,
    pub masked_idx: Vec<usize>,
    /// `restore_perm[j]` is the position of patch `j` in `visible_idx ∥ masked_idx`.
    pub restore_perm: Vec<usize>,
    pub ratio: f64,
}

/// round(r·n) with halves rounded up.
pub fn mask_count(n: usize, ratio: f64) -> usize {
    ((ratio * n as f64) + 0.5).floor() as usize
}

impl MaskPlan {
    pub fn len(&self) -> usize {
        self.restore_perm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.restore_perm.is_empty()
    }

    /// Builds a plan from an explicit masked set.
    pub fn from_masked(n: usize, masked: &[usize], ratio: f64) -> Result<MaskPlan> {
        let mut is_masked = vec![false; n];
        for &m in masked {
            if m >= n || is_masked[m] {
                return Err(Error::Config(format!("invalid masked index {m} for {n} patches")));
            }
            is_masked[m] = true;
        }
        let visible_idx: Vec<usize> = (0..n).filter(|&i| !is_masked[i]).collect();
        let masked_idx: Vec<usize> = (0..n).filter(|&i| is_masked[i]).collect();
        let mut restore_perm = vec![0; n];
        for (pos, &i) in visible_idx.iter().chain(&masked_idx).enumerate() {
            restore_perm[i] = pos;
        }
        Ok(MaskPlan {
            visible_idx,
            masked_idx,
            restore_perm,
            ratio,
        })
    }

    pub fn none(n: usize) -> MaskPlan {
        Self::from_masked(n, &[], 0.0).expect("empty mask is valid")
    }

    pub fn is_masked(&self, i: usize) -> bool {
        self.masked_idx.binary_search(&i).is_ok()
    }
}

/// Masks round(r·n) patches chosen uniformly without replacement.
pub fn random_mask(n: usize, ratio: f64, rng: &mut Rng) -> Result<MaskPlan> {
    if n == 0 {
        return Err(Error::Config("cannot mask an empty patch set".into()));
    }
    if !(0.0..1.0).contains(&ratio) {
        return Err(Error::Config(format!("mask ratio {ratio} outside [0, 1)")));
    }
    let k = mask_count(n, ratio);
    let perm = rng.permutation(n);
    MaskPlan::from_masked(n, &perm[..k], ratio)
}
