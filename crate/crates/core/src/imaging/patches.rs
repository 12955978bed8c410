//! Training pairs cut from a luminance corpus.
//!
//! Every corpus image (and each pre-downscaled copy of it) is degraded once;
//! patches are then cut on a stride grid from the degraded/ground-truth pair
//! and transformed by elements of the dihedral group. The full index of
//! `(source, position, transform)` is reshuffled each epoch from a seeded RNG.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::resize::{bicubic_resize, degrade, Degraded};
use super::PlanarImage;
use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentConfig {
    /// Quarter turns.
    #[serde(default)]
    pub rotations: bool,
    /// Horizontal mirror (combined with rotations this gives all 8 elements).
    #[serde(default)]
    pub flips: bool,
    /// Extra copies of each source image downscaled by these factors.
    #[serde(default)]
    pub prescales: Vec<f64>,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self::full()
    }
}

impl AugmentConfig {
    pub fn none() -> Self {
        Self {
            rotations: false,
            flips: false,
            prescales: Vec::new(),
        }
    }

    pub fn full() -> Self {
        Self {
            rotations: true,
            flips: true,
            prescales: vec![0.9, 0.8, 0.7, 0.6],
        }
    }

    /// Dihedral group elements in use (see [`PlanarImage::dihedral`]).
    pub fn transforms(&self) -> Vec<usize> {
        match (self.rotations, self.flips) {
            (false, false) => vec![0],
            (true, false) => vec![0, 1, 2, 3],
            (false, true) => vec![0, 4],
            (true, true) => (0..8).collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (i, f) in self.prescales.iter().enumerate() {
            if !(*f > 0.0 && *f <= 1.0) {
                return Err(Error::config(
                    format!("augment.prescales[{i}]"),
                    format!("must be in (0, 1], got {f}"),
                ));
            }
        }
        Ok(())
    }
}

/// A degraded input patch and its ground truth on the same grid.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchPair {
    pub lr: PlanarImage,
    pub hr: PlanarImage,
}

#[derive(Clone, Copy, Debug)]
struct Site {
    source: usize,
    x: usize,
    y: usize,
    transform: usize,
}

pub struct PatchSampler {
    sources: Vec<Degraded>,
    sites: Vec<Site>,
    order: Vec<usize>,
    cursor: usize,
    epoch: usize,
    patch_size: usize,
    rng: ChaCha8Rng,
}

impl PatchSampler {
    pub fn new(
        corpus: &[PlanarImage],
        scale: usize,
        patch_size: usize,
        stride: usize,
        augment: &AugmentConfig,
        seed: u64,
    ) -> Result<Self> {
        if corpus.is_empty() {
            return Err(Error::InvalidArgument {
                op: "sample_patches",
                reason: "corpus is empty".into(),
            });
        }
        if patch_size == 0 || stride == 0 {
            return Err(Error::InvalidArgument {
                op: "sample_patches",
                reason: format!("patch size {patch_size} and stride {stride} must be positive"),
            });
        }
        augment.validate()?;
        let mut factors = vec![1.0];
        factors.extend(augment.prescales.iter().copied().filter(|&f| f != 1.0));
        let transforms = augment.transforms();

        let mut sources = Vec::new();
        let mut sites = Vec::new();
        for (i, img) in corpus.iter().enumerate() {
            if img.channels() != 1 {
                return Err(Error::InvalidArgument {
                    op: "sample_patches",
                    reason: format!(
                        "corpus image {i} has {} channels, expected 1",
                        img.channels()
                    ),
                });
            }
            for &f in &factors {
                let w = (img.width() as f64 * f).round() as usize;
                let h = (img.height() as f64 * f).round() as usize;
                if w < patch_size || h < patch_size {
                    continue;
                }
                let src = if f == 1.0 {
                    img.clone()
                } else {
                    bicubic_resize(img, w, h, true)?
                };
                let d = degrade(&src, scale)?;
                if d.hr.width() < patch_size || d.hr.height() < patch_size {
                    continue;
                }
                let id = sources.len();
                for y in (0..=d.hr.height() - patch_size).step_by(stride) {
                    for x in (0..=d.hr.width() - patch_size).step_by(stride) {
                        for &t in &transforms {
                            sites.push(Site {
                                source: id,
                                x,
                                y,
                                transform: t,
                            });
                        }
                    }
                }
                sources.push(d);
            }
        }
        if sites.is_empty() {
            return Err(Error::InvalidArgument {
                op: "sample_patches",
                reason: format!("no corpus image is at least {patch_size}x{patch_size}"),
            });
        }
        let mut sampler = Self {
            order: (0..sites.len()).collect(),
            sources,
            sites,
            cursor: 0,
            epoch: 0,
            patch_size,
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        sampler.order.shuffle(&mut sampler.rng);
        Ok(sampler)
    }

    /// Pairs per epoch.
    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn patch_size(&self) -> usize {
        self.patch_size
    }

    /// The `i`-th pair in unshuffled index order.
    pub fn pair(&self, i: usize) -> PatchPair {
        let s = self.sites[i];
        let d = &self.sources[s.source];
        let p = self.patch_size;
        let cut = |img: &PlanarImage| {
            img.crop(s.x, s.y, p, p)
                .expect("site lies inside its source")
                .dihedral(s.transform)
        };
        PatchPair {
            lr: cut(&d.upscaled),
            hr: cut(&d.hr),
        }
    }

    /// Next pair of the seeded stream.
    pub fn next_pair(&mut self) -> PatchPair {
        if self.cursor == self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.cursor = 0;
            self.epoch += 1;
        }
        let i = self.order[self.cursor];
        self.cursor += 1;
        self.pair(i)
    }

    /// `(inputs, targets)`, each `(batch, 1, patch, patch)`.
    pub fn next_batch(&mut self, batch: usize) -> (Tensor<f32>, Tensor<f32>) {
        let p = self.patch_size;
        let shape = Shape::new(batch, 1, p, p);
        let mut lr = Vec::with_capacity(shape.len());
        let mut hr = Vec::with_capacity(shape.len());
        for _ in 0..batch {
            let pair = self.next_pair();
            lr.extend_from_slice(pair.lr.data());
            hr.extend_from_slice(pair.hr.data());
        }
        (
            Tensor::from_vec(shape, lr).expect("batch size"),
            Tensor::from_vec(shape, hr).expect("batch size"),
        )
    }
}
