//! Dataset ingestion and synthesis: IDX (MNIST-compatible) binary files, a
//! procedural glyph generator for desk-scale experiments, deterministic
//! splits, and the random-distortion harness for robustness evaluation.

mod distort;
mod glyphs;
mod idx;

pub use distort::{distort, DistortionConfig};
pub use glyphs::{draw_glyph, gen_glyphs, gen_glyphs_with, GlyphConfig, GlyphKind, GLYPH_ROSTER};
pub use idx::{load_idx, write_idx, IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC};

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// An immutable labeled image set. All images share one H x W x C shape and
/// hold scalars in [0, 1].
#[derive(Debug, Clone)]
pub struct Dataset<S: Scalar> {
    images: Vec<Tensor<S>>,
    labels: Vec<usize>,
    classes: usize,
}

impl<S: Scalar> Dataset<S> {
    pub fn new(images: Vec<Tensor<S>>, labels: Vec<usize>, classes: usize) -> Result<Dataset<S>> {
        if images.len() != labels.len() {
            return Err(Error::InvalidArgument(format!(
                "{} images but {} labels",
                images.len(),
                labels.len()
            )));
        }
        if images.is_empty() {
            return Err(Error::InvalidArgument("empty dataset".into()));
        }
        let shape = images[0].shape().to_vec();
        for (i, img) in images.iter().enumerate() {
            if img.shape() != shape {
                return Err(Error::ShapeMismatch {
                    context: format!("dataset image {i}"),
                    expected: shape,
                    got: img.shape().to_vec(),
                });
            }
            if img.rank() != 3 {
                return Err(Error::InvalidArgument(format!(
                    "dataset image {i} is not H x W x C: {:?}",
                    img.shape()
                )));
            }
            if img
                .data()
                .iter()
                .any(|&v| v < S::zero() || v > S::one() || !v.is_finite())
            {
                return Err(Error::InvalidArgument(format!(
                    "dataset image {i} has pixels outside [0, 1]"
                )));
            }
        }
        for (i, &label) in labels.iter().enumerate() {
            if label >= classes {
                return Err(Error::InvalidArgument(format!(
                    "label {label} of sample {i} out of range for {classes} classes"
                )));
            }
        }
        Ok(Dataset {
            images,
            labels,
            classes,
        })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn shape(&self) -> &[usize] {
        self.images[0].shape()
    }

    pub fn image(&self, i: usize) -> &Tensor<S> {
        &self.images[i]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn images(&self) -> &[Tensor<S>] {
        &self.images
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Tensor<S>, usize)> {
        self.images.iter().zip(self.labels.iter().copied())
    }

    /// Split off a shuffled fraction (the first return holds `fraction` of
    /// the samples).
    pub fn split_fraction<R: Rng>(
        &self,
        fraction: f64,
        rng: &mut R,
    ) -> Result<(Dataset<S>, Dataset<S>)> {
        if !(0.0..1.0).contains(&fraction) || fraction == 0.0 {
            return Err(Error::InvalidArgument(format!(
                "split fraction must be in (0, 1), got {fraction}"
            )));
        }
        let mut indices: Vec<usize> = (0..self.len()).collect();
        indices.shuffle(rng);
        let cut = ((self.len() as f64) * fraction).round() as usize;
        let cut = cut.clamp(1, self.len() - 1);
        let take = |idx: &[usize]| -> Result<Dataset<S>> {
            Dataset::new(
                idx.iter().map(|&i| self.images[i].clone()).collect(),
                idx.iter().map(|&i| self.labels[i]).collect(),
                self.classes,
            )
        };
        Ok((take(&indices[..cut])?, take(&indices[cut..])?))
    }

    /// Keep only samples whose labels fall below `classes` (used to carve
    /// class subsets for small experiments), capped at `limit` per class.
    pub fn restrict_classes(&self, classes: usize, limit: usize) -> Result<Dataset<S>> {
        let mut images = Vec::new();
        let mut labels = Vec::new();
        let mut per_class = vec![0usize; classes];
        for (img, label) in self.iter() {
            if label < classes && per_class[label] < limit {
                per_class[label] += 1;
                images.push(img.clone());
                labels.push(label);
            }
        }
        Dataset::new(images, labels, classes)
    }
}

/// Train/validation/test splits of one dataset source.
#[derive(Debug, Clone)]
pub struct SplitDataset<S: Scalar> {
    pub train: Dataset<S>,
    pub val: Dataset<S>,
    pub test: Dataset<S>,
}

impl<S: Scalar> SplitDataset<S> {
    pub fn classes(&self) -> usize {
        self.train.classes()
    }

    pub fn shape(&self) -> &[usize] {
        self.train.shape()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny(n: usize) -> Dataset<f32> {
        let images = (0..n)
            .map(|i| Tensor::filled(&[2, 2, 1], (i % 2) as f32))
            .collect();
        let labels = (0..n).map(|i| i % 2).collect();
        Dataset::new(images, labels, 2).unwrap()
    }

    #[test]
    fn label_range_and_length_checks() {
        let images = vec![Tensor::<f32>::zeros(&[2, 2, 1]); 2];
        assert!(Dataset::new(images.clone(), vec![0], 2).is_err());
        assert!(Dataset::new(images.clone(), vec![0, 2], 2).is_err());
        assert!(Dataset::new(images, vec![0, 1], 2).is_ok());
    }

    #[test]
    fn pixel_range_validated() {
        let images = vec![Tensor::<f32>::filled(&[2, 2, 1], 1.5)];
        assert!(Dataset::new(images, vec![0], 2).is_err());
    }

    #[test]
    fn split_fraction_partitions() {
        let ds = tiny(10);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (a, b) = ds.split_fraction(0.3, &mut rng).unwrap();
        assert_eq!(a.len(), 3);
        assert_eq!(b.len(), 7);
        assert_eq!(a.classes(), 2);
    }
}
