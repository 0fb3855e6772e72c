//! Procedural glyph dataset: orientation-sensitive shapes (bars, corners,
//! arcs, ...) with per-sample jitter in position and thickness, so that flips
//! and rotations matter and desk-scale experiments stay self-contained.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::Dataset;

/// Available glyph shapes, in roster order (class i draws shape
/// `GLYPH_ROSTER[i]`). The first two have no flip or rotation symmetry at
/// all, which makes them the default pair for small distortion experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GlyphKind {
    /// Corner with unequal arms.
    LShape,
    /// Quarter ring with a radial tick at one end.
    Arc,
    /// Top bar with a centered stem.
    TShape,
    HorizontalBar,
    VerticalBar,
    Cross,
    /// Main-diagonal stroke.
    Diagonal,
    /// Two vertical arms joined by a bottom bar.
    UShape,
    ZShape,
    /// Full ring; invariant under every flip and rotation.
    Ring,
}

pub const GLYPH_ROSTER: [GlyphKind; 10] = [
    GlyphKind::LShape,
    GlyphKind::Arc,
    GlyphKind::TShape,
    GlyphKind::HorizontalBar,
    GlyphKind::VerticalBar,
    GlyphKind::Cross,
    GlyphKind::Diagonal,
    GlyphKind::UShape,
    GlyphKind::ZShape,
    GlyphKind::Ring,
];

#[derive(Debug, Clone)]
pub struct GlyphConfig {
    pub classes: usize,
    pub per_class: usize,
    pub size: usize,
    /// Maximum absolute position offset in pixels.
    pub jitter: usize,
    /// Base stroke thickness; each sample uses `thickness` or `thickness+1`.
    pub thickness: usize,
    /// Amplitude of additive uniform pixel noise (0 disables).
    pub noise: f64,
    pub seed: u64,
}

impl GlyphConfig {
    pub fn new(classes: usize, per_class: usize, size: usize, seed: u64) -> GlyphConfig {
        GlyphConfig {
            classes,
            per_class,
            size,
            jitter: 1,
            thickness: 2,
            noise: 0.0,
            seed,
        }
    }
}

/// Generate a balanced, shuffled glyph dataset. Deterministic given the seed.
pub fn gen_glyphs<S: Scalar>(
    per_class: usize,
    classes: usize,
    size: usize,
    seed: u64,
) -> Result<Dataset<S>> {
    gen_glyphs_with(&GlyphConfig::new(classes, per_class, size, seed))
}

pub fn gen_glyphs_with<S: Scalar>(cfg: &GlyphConfig) -> Result<Dataset<S>> {
    if cfg.classes == 0 || cfg.classes > GLYPH_ROSTER.len() {
        return Err(Error::InvalidArgument(format!(
            "glyph class count {} out of range (1..={})",
            cfg.classes,
            GLYPH_ROSTER.len()
        )));
    }
    if cfg.size < 12 {
        return Err(Error::InvalidArgument(format!(
            "glyph size {} too small (need at least 12)",
            cfg.size
        )));
    }
    if cfg.per_class == 0 {
        return Err(Error::InvalidArgument("per_class must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let jitter = cfg.jitter as i64;
    let mut images = Vec::with_capacity(cfg.classes * cfg.per_class);
    let mut labels = Vec::with_capacity(cfg.classes * cfg.per_class);
    for class in 0..cfg.classes {
        for _ in 0..cfg.per_class {
            let dy = rng.gen_range(-jitter..=jitter);
            let dx = rng.gen_range(-jitter..=jitter);
            let t = cfg.thickness + rng.gen_range(0..2usize);
            let mut img: Tensor<S> = draw_glyph(GLYPH_ROSTER[class], cfg.size, t, dy, dx);
            if cfg.noise > 0.0 {
                for v in img.data_mut() {
                    let noisy =
                        v.to_f64_lossy() + rng.gen_range(-cfg.noise..cfg.noise);
                    *v = S::from_f64(noisy.clamp(0.0, 1.0));
                }
            }
            images.push(img);
            labels.push(class);
        }
    }
    let mut order: Vec<usize> = (0..images.len()).collect();
    order.shuffle(&mut rng);
    Dataset::new(
        order.iter().map(|&i| images[i].clone()).collect(),
        order.iter().map(|&i| labels[i]).collect(),
        cfg.classes,
    )
}

/// Draw one glyph on an otherwise-black canvas. Pure function of its
/// arguments; jitter offsets shift the whole shape (clipped at the border).
pub fn draw_glyph<S: Scalar>(
    kind: GlyphKind,
    size: usize,
    thickness: usize,
    dy: i64,
    dx: i64,
) -> Tensor<S> {
    let mut canvas = Canvas {
        img: Tensor::zeros(&[size, size, 1]),
        size: size as i64,
        dy,
        dx,
    };
    let s = size as i64;
    let m = (s / 8).max(1);
    let t = thickness as i64;
    let mid = s / 2;
    match kind {
        GlyphKind::LShape => {
            // Long vertical arm, shorter horizontal foot.
            canvas.rect(m, s - m, m, m + t);
            canvas.rect(s - m - t, s - m, m, m + (s - 2 * m) * 2 / 3);
        }
        GlyphKind::Arc => {
            // Top-right quarter ring plus a leftward tick at the top end.
            let c = (s - 1) as f64 / 2.0;
            let radius = (s - 2 * m) as f64 / 2.0;
            canvas.ring_quadrant(c, radius, t as f64);
            let top = (c - radius).round() as i64;
            canvas.rect(top, top + t, mid - 2 * t, mid);
        }
        GlyphKind::TShape => {
            canvas.rect(m, m + t, m, s - m);
            canvas.rect(m, s - m, mid - t / 2, mid - t / 2 + t);
        }
        GlyphKind::HorizontalBar => {
            canvas.rect(mid - t / 2, mid - t / 2 + t, m, s - m);
        }
        GlyphKind::VerticalBar => {
            canvas.rect(m, s - m, mid - t / 2, mid - t / 2 + t);
        }
        GlyphKind::Cross => {
            canvas.rect(mid - t / 2, mid - t / 2 + t, m, s - m);
            canvas.rect(m, s - m, mid - t / 2, mid - t / 2 + t);
        }
        GlyphKind::Diagonal => {
            for i in m..s - m {
                canvas.rect(i, i + 1, i, (i + t).min(s - m));
            }
        }
        GlyphKind::UShape => {
            canvas.rect(m, s - m, m, m + t);
            canvas.rect(m, s - m, s - m - t, s - m);
            canvas.rect(s - m - t, s - m, m, s - m);
        }
        GlyphKind::ZShape => {
            canvas.rect(m, m + t, m, s - m);
            canvas.rect(s - m - t, s - m, m, s - m);
            for i in m..s - m {
                let c0 = s - m - (i - m) - 1;
                canvas.rect(i, i + 1, c0.max(m), (c0 + t).min(s - m));
            }
        }
        GlyphKind::Ring => {
            let c = (s - 1) as f64 / 2.0;
            let radius = (s - 2 * m) as f64 / 2.0;
            canvas.ring(c, radius, t as f64);
        }
    }
    canvas.img
}

struct Canvas<S: Scalar> {
    img: Tensor<S>,
    size: i64,
    dy: i64,
    dx: i64,
}

impl<S: Scalar> Canvas<S> {
    /// Fill a half-open row/column range, jitter-shifted and clipped.
    fn rect(&mut self, r0: i64, r1: i64, c0: i64, c1: i64) {
        for r in r0 + self.dy..r1 + self.dy {
            if r < 0 || r >= self.size {
                continue;
            }
            for c in c0 + self.dx..c1 + self.dx {
                if c < 0 || c >= self.size {
                    continue;
                }
                self.img.set3(r as usize, c as usize, 0, S::one());
            }
        }
    }

    fn ring_pixels(&mut self, center: f64, radius: f64, t: f64, quadrant_only: bool) {
        let cy = center + self.dy as f64;
        let cx = center + self.dx as f64;
        for r in 0..self.size {
            for c in 0..self.size {
                let d = ((r as f64 - cy).powi(2) + (c as f64 - cx).powi(2)).sqrt();
                if (d - radius).abs() <= t / 2.0 {
                    let in_quadrant = (r as f64) <= cy && (c as f64) >= cx;
                    if !quadrant_only || in_quadrant {
                        self.img.set3(r as usize, c as usize, 0, S::one());
                    }
                }
            }
        }
    }

    fn ring(&mut self, center: f64, radius: f64, t: f64) {
        self.ring_pixels(center, radius, t, false);
    }

    fn ring_quadrant(&mut self, center: f64, radius: f64, t: f64) {
        self.ring_pixels(center, radius, t, true);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transforms::flip;

    #[test]
    fn same_seed_gives_bit_identical_datasets() {
        let a: Dataset<f32> = gen_glyphs(20, 3, 16, 99).unwrap();
        let b: Dataset<f32> = gen_glyphs(20, 3, 16, 99).unwrap();
        assert_eq!(a.labels(), b.labels());
        for (x, y) in a.images().iter().zip(b.images().iter()) {
            assert!(x.bit_eq(y));
        }
        let c: Dataset<f32> = gen_glyphs(20, 3, 16, 100).unwrap();
        assert!(a.images().iter().zip(c.images().iter()).any(|(x, y)| !x.bit_eq(y)));
    }

    #[test]
    fn classes_are_balanced() {
        let ds: Dataset<f32> = gen_glyphs(100, 2, 16, 5).unwrap();
        assert_eq!(ds.len(), 200);
        let ones = ds.labels().iter().filter(|&&l| l == 1).count();
        assert_eq!(ones, 100);
    }

    #[test]
    fn horizontal_bar_is_flip_symmetric_but_l_shape_is_not() {
        let bar: Tensor<f32> = draw_glyph(GlyphKind::HorizontalBar, 16, 2, 0, 0);
        assert!(flip(&bar, true, false).bit_eq(&bar));
        let l: Tensor<f32> = draw_glyph(GlyphKind::LShape, 16, 2, 0, 0);
        assert!(!flip(&l, true, false).bit_eq(&l));
    }

    #[test]
    fn first_two_roster_shapes_have_no_dihedral_symmetry() {
        // Every non-identity combination of flips and quarter rotations must
        // change the drawn image, otherwise coarse distortions could leave
        // these classes untouched.
        use crate::transforms::{rotate, ChainEffect};
        for kind in [GlyphKind::LShape, GlyphKind::Arc] {
            let img: Tensor<f32> = draw_glyph(kind, 16, 2, 0, 0);
            for angle in [0, 90, 180, 270] {
                for (h, v) in [(false, false), (true, false), (false, true), (true, true)] {
                    let effect = ChainEffect {
                        angle_deg: angle,
                        flip_h: h,
                        flip_v: v,
                    };
                    if effect.is_identity() {
                        continue;
                    }
                    let rotated = if angle == 0 { img.clone() } else { rotate(&img, angle) };
                    let transformed = if h || v {
                        flip(&rotated, h, v)
                    } else {
                        rotated
                    };
                    assert!(
                        !transformed.bit_eq(&img),
                        "{kind:?} invariant under angle={angle}, flips=({h},{v})"
                    );
                }
            }
        }
    }

    #[test]
    fn class_count_capped_by_roster() {
        assert!(gen_glyphs::<f32>(5, 11, 16, 0).is_err());
        assert!(gen_glyphs::<f32>(5, 10, 16, 0).is_ok());
    }

    #[test]
    fn pixels_stay_in_unit_range_with_noise() {
        let mut cfg = GlyphConfig::new(4, 30, 16, 3);
        cfg.noise = 0.2;
        let ds: Dataset<f32> = gen_glyphs_with(&cfg).unwrap();
        for img in ds.images() {
            for &v in img.data() {
                assert!((0.0..=1.0).contains(&v));
            }
        }
    }

    #[test]
    fn nearest_centroid_baseline_separates_clean_glyphs() {
        // Sanity oracle: the synthetic task must be learnable. A
        // nearest-centroid classifier fit on train should exceed 95% on test.
        let train: Dataset<f32> = gen_glyphs(50, 4, 16, 11).unwrap();
        let test: Dataset<f32> = gen_glyphs(50, 4, 16, 12).unwrap();
        let dim: usize = train.shape().iter().product();
        let mut centroids = vec![vec![0.0f64; dim]; train.classes()];
        let mut counts = vec![0usize; train.classes()];
        for (img, label) in train.iter() {
            counts[label] += 1;
            for (acc, &v) in centroids[label].iter_mut().zip(img.data()) {
                *acc += v as f64;
            }
        }
        for (centroid, &count) in centroids.iter_mut().zip(counts.iter()) {
            for v in centroid.iter_mut() {
                *v /= count as f64;
            }
        }
        let mut correct = 0;
        for (img, label) in test.iter() {
            let mut best = (f64::INFINITY, 0usize);
            for (class, centroid) in centroids.iter().enumerate() {
                let dist: f64 = centroid
                    .iter()
                    .zip(img.data())
                    .map(|(&c, &v)| (c - v as f64).powi(2))
                    .sum();
                if dist < best.0 {
                    best = (dist, class);
                }
            }
            if best.1 == label {
                correct += 1;
            }
        }
        let accuracy = correct as f64 / test.len() as f64;
        assert!(accuracy > 0.95, "nearest-centroid accuracy {accuracy}");
    }
}
