//! Stochastic image transformations used for pseudo-labelling and
//! augmentation: horizontal flips and right-angle rotations.
//!
//! Every transform is a pure pixel permutation on a square grid, so the
//! pixel-value multiset is preserved bit-exactly and every spec has an exact
//! inverse within the same family.

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use rand::Rng;

/// Right-angle rotation, applied clockwise.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rotation {
    R0,
    R90,
    R180,
    R270,
}

impl Rotation {
    pub const ALL: [Rotation; 4] = [Rotation::R0, Rotation::R90, Rotation::R180, Rotation::R270];

    /// Number of clockwise quarter turns.
    fn quarter_turns(self) -> usize {
        match self {
            Rotation::R0 => 0,
            Rotation::R90 => 1,
            Rotation::R180 => 2,
            Rotation::R270 => 3,
        }
    }

    fn from_quarter_turns(k: usize) -> Rotation {
        Rotation::ALL[k % 4]
    }
}

/// A sampled transformation: optional horizontal flip followed by a rotation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TransformSpec {
    pub horizontal_flip: bool,
    pub rotation: Rotation,
}

impl TransformSpec {
    pub fn identity() -> Self {
        Self { horizontal_flip: false, rotation: Rotation::R0 }
    }

    /// The spec that undoes this one. Flip-carrying specs are involutions;
    /// pure rotations invert by rotating the remaining quarter turns.
    pub fn inverse(self) -> Self {
        if self.horizontal_flip {
            self
        } else {
            Self {
                horizontal_flip: false,
                rotation: Rotation::from_quarter_turns(4 - self.rotation.quarter_turns()),
            }
        }
    }
}

/// Draws a transform: flip with probability 0.5, rotation uniform over the
/// four right angles.
pub fn sample_transform(rng: &mut impl Rng) -> TransformSpec {
    TransformSpec {
        horizontal_flip: rng.gen_bool(0.5),
        rotation: Rotation::ALL[rng.gen_range(0..4)],
    }
}

/// Applies `spec` to a `[c, s, s]` image: flip first, then rotate.
pub fn apply_transform(spec: TransformSpec, x: &Tensor) -> Result<Tensor> {
    let shape = x.shape();
    if shape.len() != 3 || shape[1] != shape[2] {
        return Err(Error::Dimension(format!(
            "transforms expect a square [c, s, s] image; got {shape:?}"
        )));
    }
    let (c, s) = (shape[0], shape[1]);
    let src = x.values();
    let mut out = vec![0.0; src.len()];
    let turns = spec.rotation.quarter_turns();
    for ch in 0..c {
        let off = ch * s * s;
        for i in 0..s {
            for j in 0..s {
                let sj = if spec.horizontal_flip { s - 1 - j } else { j };
                // Destination of (i, j) after `turns` clockwise quarter turns.
                let (di, dj) = match turns {
                    0 => (i, j),
                    1 => (j, s - 1 - i),
                    2 => (s - 1 - i, s - 1 - j),
                    _ => (s - 1 - j, i),
                };
                out[off + di * s + dj] = src[off + i * s + sj];
            }
        }
    }
    Tensor::new(shape, out)
}

/// `K` independently sampled transforms of `x`.
pub fn k_augmentations(x: &Tensor, k: usize, rng: &mut impl Rng) -> Result<Vec<Tensor>> {
    if k < 1 {
        return Err(Error::Config(format!("K must be ≥ 1; got {k}")));
    }
    (0..k)
        .map(|_| apply_transform(sample_transform(rng), x))
        .collect()
}
