//! Deterministic synthetic corpora standing in for real CT scans at desk scale.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::manifest::{write_manifest, Manifest, Record};
use crate::data::pgm::encode_pgm;
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Motif {
    /// Class 0: horizontal intensity ramp plus an ellipse; class 1: vertical ramp
    /// plus an ellipse.
    CtPhantom,
    /// Gratings, checkerboards, blobs and rings; a generic-domain corpus.
    Texture,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub motif: Motif,
    pub noise_std: f64,
    pub side: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn ct(side: usize, n_train: usize, n_test: usize, seed: u64) -> Self {
        SyntheticSpec {
            motif: Motif::CtPhantom,
            noise_std: 0.05,
            side,
            n_train,
            n_test,
            seed,
        }
    }

    pub fn texture(side: usize, n_train: usize, n_test: usize, seed: u64) -> Self {
        SyntheticSpec {
            motif: Motif::Texture,
            ..Self::ct(side, n_train, n_test, seed)
        }
    }
}

fn coords(side: usize, x: usize, y: usize) -> (f64, f64) {
    let d = (side.max(2) - 1) as f64;
    (x as f64 / d, y as f64 / d)
}

fn ct_phantom(side: usize, label: u8, rng: &mut Rng) -> Vec<f64> {
    let (cx, cy) = (rng.uniform_in(0.3, 0.7), rng.uniform_in(0.3, 0.7));
    let (rx, ry) = (rng.uniform_in(0.15, 0.3), rng.uniform_in(0.15, 0.3));
    let boost = rng.uniform_in(0.2, 0.35);
    let mut img = Vec::with_capacity(side * side);
    for y in 0..side {
        for x in 0..side {
            let (u, v) = coords(side, x, y);
            let ramp = if label == 0 { u } else { v };
            let mut val = 0.15 + 0.5 * ramp;
            let e = ((u - cx) / rx).powi(2) + ((v - cy) / ry).powi(2);
            if e <= 1.0 {
                val += boost;
            }
            img.push(val);
        }
    }
    img
}

fn texture(side: usize, family: usize, rng: &mut Rng) -> Vec<f64> {
    let tau = std::f64::consts::TAU;
    let mut img = vec![0.0; side * side];
    match family {
        0 => {
            let theta = rng.uniform_in(0.0, std::f64::consts::PI);
            let freq = rng.uniform_in(1.0, 4.0);
            let phase = rng.uniform_in(0.0, tau);
            for y in 0..side {
                for x in 0..side {
                    let (u, v) = coords(side, x, y);
                    let t = u * theta.cos() + v * theta.sin();
                    img[y * side + x] = 0.5 + 0.35 * (tau * freq * t + phase).sin();
                }
            }
        }
        1 => {
            let cells = 2 + rng.below(4);
            let (lo, hi) = (rng.uniform_in(0.1, 0.4), rng.uniform_in(0.6, 0.9));
            for y in 0..side {
                for x in 0..side {
                    let on = (x * cells / side + y * cells / side).is_multiple_of(2);
                    img[y * side + x] = if on { hi } else { lo };
                }
            }
        }
        2 => {
            let blobs = 2 + rng.below(4);
            let params: Vec<_> = (0..blobs)
                .map(|_| (rng.uniform(), rng.uniform(), rng.uniform_in(0.05, 0.2), rng.uniform_in(0.3, 0.7)))
                .collect();
            for y in 0..side {
                for x in 0..side {
                    let (u, v) = coords(side, x, y);
                    let s: f64 = params
                        .iter()
                        .map(|(cx, cy, r, a)| a * (-((u - cx).powi(2) + (v - cy).powi(2)) / (2.0 * r * r)).exp())
                        .sum();
                    img[y * side + x] = 0.1 + s;
                }
            }
        }
        _ => {
            let (cx, cy) = (rng.uniform_in(0.3, 0.7), rng.uniform_in(0.3, 0.7));
            let freq = rng.uniform_in(2.0, 6.0);
            for y in 0..side {
                for x in 0..side {
                    let (u, v) = coords(side, x, y);
                    let r = ((u - cx).powi(2) + (v - cy).powi(2)).sqrt();
                    img[y * side + x] = 0.5 + 0.35 * (tau * freq * r).cos();
                }
            }
        }
    }
    img
}

/// One image in [0, 1] for the given motif and label.
pub fn synth_image(spec: &SyntheticSpec, index: usize, label: u8, rng: &mut Rng) -> Tensor<f64> {
    let side = spec.side;
    let mut img = match spec.motif {
        Motif::CtPhantom => ct_phantom(side, label, rng),
        Motif::Texture => texture(side, index % 4, rng),
    };
    if spec.noise_std > 0.0 {
        img.iter_mut().for_each(|v| *v += spec.noise_std * rng.normal());
    }
    img.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    Tensor::from_vec(&[side, side, 1], img).expect("side is positive")
}

fn label_for(spec: &SyntheticSpec, index: usize) -> u8 {
    match spec.motif {
        Motif::CtPhantom => (index % 2) as u8,
        Motif::Texture => (index % 4 % 2) as u8,
    }
}

fn write_split(spec: &SyntheticSpec, dest: &Path, name: &str, count: usize, stream: u64) -> Result<Manifest> {
    let dir = dest.join(name);
    fs::create_dir_all(&dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    let root = Rng::new(spec.seed).derive(stream);
    let mut records = Vec::with_capacity(count);
    for i in 0..count {
        let label = label_for(spec, i);
        let img = synth_image(spec, i, label, &mut root.derive(i as u64));
        let rel = format!("{name}/img_{i:05}.pgm");
        let path = dest.join(&rel);
        fs::write(&path, encode_pgm(&img)?).map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
        records.push(Record {
            path: rel,
            label: Some(label),
        });
    }
    let m = Manifest {
        root: dest.to_path_buf(),
        records,
        side: spec.side,
        channels: 1,
    };
    write_manifest(&m, &dest.join(format!("{name}.csv")))?;
    Ok(m)
}

/// Writes `train/`, `test/`, `train.csv` and `test.csv` under `dest` and
/// returns the two manifests.
pub fn synth_dataset(spec: &SyntheticSpec, dest: &Path) -> Result<(Manifest, Manifest)> {
    if spec.side == 0 || spec.n_train == 0 {
        return Err(Error::Config("synthetic corpus needs a positive side and train count".into()));
    }
    let train = write_split(spec, dest, "train", spec.n_train, 0)?;
    let test = if spec.n_test > 0 {
        write_split(spec, dest, "test", spec.n_test, 1)?
    } else {
        Manifest {
            root: dest.to_path_buf(),
            records: Vec::new(),
            side: spec.side,
            channels: 1,
        }
    };
    Ok((train, test))
}

/// Manifest paths written by [`synth_dataset`].
pub fn synth_manifest_paths(dest: &Path) -> (PathBuf, PathBuf) {
    (dest.join("train.csv"), dest.join("test.csv"))
}
