use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::transforms::{apply_chain, random_chain, TransformChain, TransformSet, TransformSetKind};

use super::Dataset;

/// Evaluation-time corruption: each image is independently distorted with
/// `probability` by a random transformation chain.
#[derive(Debug, Clone)]
pub struct DistortionConfig {
    pub probability: f64,
    pub kind: TransformSetKind,
    pub min_len: usize,
    pub max_len: usize,
    pub seed: u64,
}

impl DistortionConfig {
    /// Standard-set distortions with chain lengths in [1, 5].
    pub fn standard(seed: u64) -> DistortionConfig {
        DistortionConfig {
            probability: 0.5,
            kind: TransformSetKind::Standard,
            min_len: 1,
            max_len: 5,
            seed,
        }
    }

    /// Coarse distortions (flips and +-90 degree rotations), chains of 1-2.
    pub fn coarse(seed: u64) -> DistortionConfig {
        DistortionConfig {
            probability: 0.5,
            kind: TransformSetKind::Coarse,
            min_len: 1,
            max_len: 2,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.probability) {
            return Err(Error::Config(format!(
                "distortion probability {} outside [0, 1]",
                self.probability
            )));
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            return Err(Error::Config(format!(
                "invalid distortion chain length range [{}, {}]",
                self.min_len, self.max_len
            )));
        }
        Ok(())
    }
}

/// Distort a dataset. Labels and image shapes are never altered; the applied
/// chain per image is returned for trace comparison (empty for untouched
/// images).
pub fn distort<S: Scalar>(
    ds: &Dataset<S>,
    cfg: &DistortionConfig,
) -> Result<(Dataset<S>, Vec<TransformChain>)> {
    cfg.validate()?;
    let set = TransformSet::of_kind(cfg.kind);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut images = Vec::with_capacity(ds.len());
    let mut chains = Vec::with_capacity(ds.len());
    for img in ds.images() {
        if rng.gen::<f64>() < cfg.probability {
            let chain = random_chain(&mut rng, cfg.min_len, cfg.max_len, &set)?;
            images.push(apply_chain(img, &chain)?);
            chains.push(chain);
        } else {
            images.push(img.clone());
            chains.push(TransformChain::new(cfg.max_len));
        }
    }
    let distorted = Dataset::new(images, ds.labels().to_vec(), ds.classes())?;
    Ok((distorted, chains))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::gen_glyphs;

    #[test]
    fn probability_zero_is_the_identity() {
        let ds: Dataset<f32> = gen_glyphs(10, 2, 16, 1).unwrap();
        let mut cfg = DistortionConfig::coarse(5);
        cfg.probability = 0.0;
        let (out, chains) = distort(&ds, &cfg).unwrap();
        for (a, b) in ds.images().iter().zip(out.images().iter()) {
            assert!(a.bit_eq(b));
        }
        assert!(chains.iter().all(|c| c.is_empty()));
    }

    #[test]
    fn probability_one_distorts_everything() {
        let ds: Dataset<f32> = gen_glyphs(50, 2, 16, 2).unwrap();
        let mut cfg = DistortionConfig::coarse(5);
        cfg.probability = 1.0;
        let (out, chains) = distort(&ds, &cfg).unwrap();
        assert!(chains.iter().all(|c| !c.is_empty()));
        assert_eq!(out.len(), ds.len());
        assert_eq!(out.labels(), ds.labels());
        assert_eq!(out.shape(), ds.shape());
    }

    #[test]
    fn distortion_fraction_tracks_probability() {
        let ds: Dataset<f32> = gen_glyphs(5_000, 2, 12, 3).unwrap();
        let cfg = DistortionConfig::coarse(7);
        let (_, chains) = distort(&ds, &cfg).unwrap();
        let distorted = chains.iter().filter(|c| !c.is_empty()).count();
        let n = ds.len() as f64;
        let sigma = (n * 0.25).sqrt();
        assert!(
            (distorted as f64 - 0.5 * n).abs() < 3.0 * sigma,
            "{distorted} of {n}"
        );
    }

    #[test]
    fn deterministic_given_seed() {
        let ds: Dataset<f32> = gen_glyphs(30, 2, 16, 4).unwrap();
        let cfg = DistortionConfig::standard(9);
        let (a, _) = distort(&ds, &cfg).unwrap();
        let (b, _) = distort(&ds, &cfg).unwrap();
        for (x, y) in a.images().iter().zip(b.images().iter()) {
            assert!(x.bit_eq(y));
        }
    }

    #[test]
    fn invalid_config_rejected() {
        let mut cfg = DistortionConfig::standard(0);
        cfg.probability = 1.5;
        assert!(cfg.validate().is_err());
        let mut cfg = DistortionConfig::standard(0);
        cfg.min_len = 0;
        assert!(cfg.validate().is_err());
    }
}
