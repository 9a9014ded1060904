//! In-memory decoded datasets and seeded batch iteration.
//!
//! Images are cached as planar u8 so a full experiment's datasets fit in
//! memory; batches materialize f32 tensors (v/255) on the fly. Every epoch
//! reshuffles with a (seed, epoch)-derived permutation, the final short batch
//! is included, and a fixed (seed, epoch) always yields the same order.

use std::path::PathBuf;

use rand::seq::SliceRandom;
use rayon::prelude::*;

use super::imageio::decode_rgb8;
use super::{LabeledImageSet, PairedImageSet};
use crate::error::{Error, Result};
use crate::rng::substream;
use crate::tensor::Tensor;

/// A labeled dataset decoded into memory (planar CHW u8 per image).
#[derive(Debug, Clone)]
pub struct LoadedSet {
    pub h: usize,
    pub w: usize,
    pub images: Vec<Vec<u8>>,
    pub labels: Vec<usize>,
    pub class_names: Vec<String>,
}

fn decode_chw(path: &PathBuf) -> Result<(usize, usize, Vec<u8>)> {
    let img = decode_rgb8(path)?;
    let plane = img.height * img.width;
    let mut chw = vec![0u8; plane * 3];
    for (i, px) in img.pixels.chunks_exact(3).enumerate() {
        chw[i] = px[0];
        chw[plane + i] = px[1];
        chw[2 * plane + i] = px[2];
    }
    Ok((img.height, img.width, chw))
}

fn check_uniform(
    op: &'static str,
    expect: Option<(usize, usize)>,
    got: (usize, usize),
    path: &PathBuf,
) -> Result<(usize, usize)> {
    match expect {
        None => Ok(got),
        Some(r) if r == got => Ok(r),
        Some(r) => Err(Error::ShapeMismatch {
            op,
            dim: "image resolution",
            expected: format!("{:?}", r),
            actual: format!("{:?} ({})", got, path.display()),
        }),
    }
}

impl LoadedSet {
    /// Decodes every entry of a labeled set; all images must share one
    /// resolution.
    pub fn load(set: &LabeledImageSet) -> Result<Self> {
        Self::load_concat(&[set])
    }

    /// Decodes the concatenation of several sets sharing one vocabulary.
    /// Entries are merged in a canonical order (root, then relative path) so
    /// the result does not depend on argument order.
    pub fn load_concat(sets: &[&LabeledImageSet]) -> Result<Self> {
        let first = sets.first().ok_or_else(|| Error::DatasetTooSmall {
            reason: "no datasets given".into(),
        })?;
        for set in sets {
            if set.class_names != first.class_names {
                return Err(Error::VocabularyMismatch {
                    detail: format!(
                        "{:?} ({}) vs {:?} ({})",
                        first.class_names,
                        first.root.display(),
                        set.class_names,
                        set.root.display()
                    ),
                });
            }
        }
        let mut paths: Vec<(PathBuf, usize)> = sets
            .iter()
            .flat_map(|set| {
                set.entries
                    .iter()
                    .map(|(rel, label)| (set.root.join(rel), *label))
            })
            .collect();
        paths.sort();

        let decoded: Vec<Result<(usize, usize, Vec<u8>)>> =
            paths.par_iter().map(|(p, _)| decode_chw(p)).collect();
        let mut resolution = None;
        let mut images = Vec::with_capacity(paths.len());
        let mut labels = Vec::with_capacity(paths.len());
        for ((path, label), item) in paths.iter().zip(decoded) {
            let (h, w, chw) = item?;
            resolution = Some(check_uniform("LoadedSet::load", resolution, (h, w), path)?);
            images.push(chw);
            labels.push(*label);
        }
        let (h, w) = resolution.ok_or_else(|| Error::DatasetTooSmall {
            reason: "dataset holds no images".into(),
        })?;
        Ok(LoadedSet {
            h,
            w,
            images,
            labels,
            class_names: first.class_names.clone(),
        })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// Assembles the images at `indices` into an NCHW f32 batch.
    pub fn gather(&self, indices: &[usize]) -> (Tensor, Vec<usize>) {
        let mut batch = Tensor::zeros(indices.len(), 3, self.h, self.w);
        let sample_len = batch.sample_len();
        let data = batch.data_mut();
        for (slot, &idx) in indices.iter().enumerate() {
            let dst = &mut data[slot * sample_len..(slot + 1) * sample_len];
            for (d, &v) in dst.iter_mut().zip(&self.images[idx]) {
                *d = v as f32 / 255.0;
            }
        }
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        (batch, labels)
    }
}

/// Seeded epoch permutation shared by both iterators.
fn epoch_permutation(len: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..len).collect();
    let mut rng = substream(seed, &format!("batch/{epoch}"));
    order.shuffle(&mut rng);
    order
}

/// Iterator of shuffled (batch tensor, labels) minibatches.
pub struct BatchIter<'a> {
    set: &'a LoadedSet,
    order: Vec<usize>,
    batch_size: usize,
    cursor: usize,
}

impl<'a> Iterator for BatchIter<'a> {
    type Item = (Tensor, Vec<usize>);

    fn next(&mut self) -> Option<Self::Item> {
        if self.cursor >= self.order.len() {
            return None;
        }
        let end = (self.cursor + self.batch_size).min(self.order.len());
        let indices = &self.order[self.cursor..end];
        self.cursor = end;
        Some(self.set.gather(indices))
    }
}

/// Reshuffled minibatches over a loaded set for one epoch.
pub fn batch_iter(set: &LoadedSet, batch_size: usize, seed: u64, epoch: usize) -> BatchIter<'_> {
    assert!(batch_size >= 1, "batch_size must be >= 1");
    BatchIter {
        set,
        order: epoch_permutation(set.len(), seed, epoch),
        batch_size,
        cursor: 0,
    }
}

/// A paired dataset decoded into memory.
#[derive(Debug, Clone)]
pub struct LoadedPairs {
    pub h: usize,
    pub w: usize,
    pub clean: Vec<Vec<u8>>,
    pub low: Vec<Vec<u8>>,
}

impl LoadedPairs {
    pub fn load(pairs: &PairedImageSet) -> Result<Self> {
        let decoded: Vec<Result<((usize, usize, Vec<u8>), (usize, usize, Vec<u8>))>> = pairs
            .entries
            .par_iter()
            .map(|(c, l)| Ok((decode_chw(c)?, decode_chw(l)?)))
            .collect();
        let mut resolution = None;
        let mut clean = Vec::with_capacity(pairs.len());
        let mut low = Vec::with_capacity(pairs.len());
        for ((cpath, lpath), item) in pairs.entries.iter().zip(decoded) {
            let ((ch, cw, cimg), (lh, lw, limg)) = item?;
            resolution = Some(check_uniform("LoadedPairs::load", resolution, (ch, cw), cpath)?);
            resolution = Some(check_uniform("LoadedPairs::load", resolution, (lh, lw), lpath)?);
            clean.push(cimg);
            low.push(limg);
        }
        let (h, w) = resolution.ok_or_else(|| Error::DatasetTooSmall {
            reason: "paired set holds no images".into(),
        })?;
        Ok(LoadedPairs { h, w, clean, low })
    }

    pub fn len(&self) -> usize {
        self.clean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clean.is_empty()
    }

    /// Keeps only the listed indices (used for train/validation splits).
    pub fn subset(&self, indices: &[usize]) -> LoadedPairs {
        LoadedPairs {
            h: self.h,
            w: self.w,
            clean: indices.iter().map(|&i| self.clean[i].clone()).collect(),
            low: indices.iter().map(|&i| self.low[i].clone()).collect(),
        }
    }

    pub fn gather(&self, indices: &[usize]) -> (Tensor, Tensor) {
        let mut a = Tensor::zeros(indices.len(), 3, self.h, self.w);
        let mut b = Tensor::zeros(indices.len(), 3, self.h, self.w);
        let sample_len = a.sample_len();
        for (slot, &idx) in indices.iter().enumerate() {
            for (d, &v) in a.data_mut()[slot * sample_len..(slot + 1) * sample_len]
                .iter_mut()
                .zip(&self.clean[idx])
            {
                *d = v as f32 / 255.0;
            }
            for (d, &v) in b.data_mut()[slot * sample_len..(slot + 1) * sample_len]
                .iter_mut()
                .zip(&self.low[idx])
            {
                *d = v as f32 / 255.0;
            }
        }
        (a, b)
    }
}

/// Iterator of shuffled (clean batch, low batch) minibatches.
pub struct PairBatchIter<'a> {
    pairs: &'a LoadedPairs,
    order: Vec<usize>,
    batch_size: usize,
    cursor: usize,
}

impl<'a> Iterator for PairBatchIter<'a> {
    type Item = (Tensor, Tensor);

    fn next(&mut self) -> Option<Self::Item> {
        if self.cursor >= self.order.len() {
            return None;
        }
        let end = (self.cursor + self.batch_size).min(self.order.len());
        let indices = &self.order[self.cursor..end];
        self.cursor = end;
        Some(self.pairs.gather(indices))
    }
}

pub fn pair_batch_iter(
    pairs: &LoadedPairs,
    batch_size: usize,
    seed: u64,
    epoch: usize,
) -> PairBatchIter<'_> {
    assert!(batch_size >= 1, "batch_size must be >= 1");
    PairBatchIter {
        pairs,
        order: epoch_permutation(pairs.len(), seed, epoch),
        batch_size,
        cursor: 0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_set(n: usize) -> LoadedSet {
        LoadedSet {
            h: 2,
            w: 2,
            images: (0..n).map(|i| vec![i as u8; 12]).collect(),
            labels: (0..n).map(|i| i % 3).collect(),
            class_names: vec!["a".into(), "b".into(), "c".into()],
        }
    }

    #[test]
    fn batch_sizes_include_final_short_batch() {
        let set = tiny_set(10);
        let sizes: Vec<usize> = batch_iter(&set, 3, 0, 0).map(|(t, _)| t.n()).collect();
        assert_eq!(sizes, vec![3, 3, 3, 1]);
    }

    #[test]
    fn epochs_reshuffle_and_runs_repeat() {
        let set = tiny_set(32);
        let order = |epoch| -> Vec<usize> {
            batch_iter(&set, 32, 9, epoch)
                .flat_map(|(t, _)| {
                    (0..t.n())
                        .map(|i| (t.data()[i * 12] * 255.0).round() as usize)
                        .collect::<Vec<_>>()
                })
                .collect()
        };
        assert_ne!(order(0), order(1));
        assert_eq!(order(0), order(0));
    }

    #[test]
    fn every_epoch_covers_the_multiset() {
        let set = tiny_set(11);
        let mut seen: Vec<usize> = batch_iter(&set, 4, 5, 3)
            .flat_map(|(t, _)| {
                (0..t.n())
                    .map(|i| (t.data()[i * 12] * 255.0).round() as usize)
                    .collect::<Vec<_>>()
            })
            .collect();
        seen.sort();
        assert_eq!(seen, (0..11).collect::<Vec<_>>());
    }

    #[test]
    fn gather_scales_to_unit_range() {
        let set = LoadedSet {
            h: 1,
            w: 1,
            images: vec![vec![255, 0, 51]],
            labels: vec![0],
            class_names: vec!["x".into()],
        };
        let (t, labels) = set.gather(&[0]);
        assert_eq!(labels, vec![0]);
        assert_eq!(t.data()[0], 1.0);
        assert_eq!(t.data()[1], 0.0);
        assert!((t.data()[2] - 0.2).abs() < 1e-6);
    }
}
