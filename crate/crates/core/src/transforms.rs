//! Discrete image transformations (flips and small/coarse rotations).
//!
//! A chain of transformations is never applied step by step. Its net effect is
//! canonicalized to (cumulative rotation angle, flip state) and replayed from
//! the original image in a single pass: rotate once, then flip. Repeated
//! resampling would make `rot(+a)` followed by `rot(-a)` lossy; canonical
//! replay keeps every chain exactly invertible at the chain level.

use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Rotation angles of the standard action set, in the order they are indexed.
pub const STANDARD_ANGLES: [i32; 8] = [-1, -2, -4, -8, 8, 4, 2, 1];

/// Rotation angles of the coarse set used by the distortion harness.
pub const COARSE_ANGLES: [i32; 2] = [-90, 90];

/// A single image transformation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Transform {
    /// Mirror left-right (column reversal).
    FlipH,
    /// Mirror top-bottom (row reversal).
    FlipV,
    /// Both mirrors; identical to a 180-degree rotation.
    FlipBoth,
    /// Rotation by whole degrees, positive counterclockwise.
    Rotate(i32),
}

impl Transform {
    /// The transformation undoing this one. Flips are self-inverse and
    /// `Rotate(a)` maps to `Rotate(-a)`.
    pub fn inverse(self) -> Transform {
        match self {
            Transform::FlipH => Transform::FlipH,
            Transform::FlipV => Transform::FlipV,
            Transform::FlipBoth => Transform::FlipBoth,
            Transform::Rotate(a) => Transform::Rotate(-a),
        }
    }

    /// Short stable string used in traces: `flip_h`, `flip_v`, `flip_hv`,
    /// `rot(+8)`, `rot(-90)`, ...
    pub fn label(self) -> String {
        match self {
            Transform::FlipH => "flip_h".into(),
            Transform::FlipV => "flip_v".into(),
            Transform::FlipBoth => "flip_hv".into(),
            Transform::Rotate(a) => format!("rot({a:+})"),
        }
    }

    pub fn parse(s: &str) -> Result<Transform> {
        match s {
            "flip_h" => Ok(Transform::FlipH),
            "flip_v" => Ok(Transform::FlipV),
            "flip_hv" => Ok(Transform::FlipBoth),
            _ => {
                let angle = s
                    .strip_prefix("rot(")
                    .and_then(|rest| rest.strip_suffix(')'))
                    .and_then(|num| num.parse::<i32>().ok())
                    .ok_or_else(|| {
                        Error::InvalidArgument(format!("unknown transform label {s:?}"))
                    })?;
                Ok(Transform::Rotate(angle))
            }
        }
    }
}

/// Which action set is active.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransformSetKind {
    /// 3 flips + 8 small rotations (n = 11).
    Standard,
    /// 3 flips + rotations by +-90 degrees (n = 5).
    Coarse,
}

impl TransformSetKind {
    pub fn name(self) -> &'static str {
        match self {
            TransformSetKind::Standard => "standard",
            TransformSetKind::Coarse => "coarse",
        }
    }

    pub fn parse(s: &str) -> Result<TransformSetKind> {
        match s {
            "standard" => Ok(TransformSetKind::Standard),
            "coarse" => Ok(TransformSetKind::Coarse),
            _ => Err(Error::Config(format!(
                "unknown transform set {s:?} (expected standard|coarse)"
            ))),
        }
    }
}

/// An indexed, inverse-closed set of transformations.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransformSet {
    kind: TransformSetKind,
    transforms: Vec<Transform>,
}

impl TransformSet {
    pub fn standard() -> TransformSet {
        let mut transforms = vec![Transform::FlipH, Transform::FlipV, Transform::FlipBoth];
        transforms.extend(STANDARD_ANGLES.iter().map(|&a| Transform::Rotate(a)));
        TransformSet {
            kind: TransformSetKind::Standard,
            transforms,
        }
    }

    pub fn coarse() -> TransformSet {
        let mut transforms = vec![Transform::FlipH, Transform::FlipV, Transform::FlipBoth];
        transforms.extend(COARSE_ANGLES.iter().map(|&a| Transform::Rotate(a)));
        TransformSet {
            kind: TransformSetKind::Coarse,
            transforms,
        }
    }

    pub fn of_kind(kind: TransformSetKind) -> TransformSet {
        match kind {
            TransformSetKind::Standard => TransformSet::standard(),
            TransformSetKind::Coarse => TransformSet::coarse(),
        }
    }

    pub fn kind(&self) -> TransformSetKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.transforms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transforms.is_empty()
    }

    pub fn get(&self, j: usize) -> Result<Transform> {
        self.transforms.get(j).copied().ok_or_else(|| {
            Error::InvalidAction(format!(
                "transform index {j} out of range for the {} set of {} transforms",
                self.kind.name(),
                self.transforms.len()
            ))
        })
    }

    pub fn index_of(&self, t: Transform) -> Option<usize> {
        self.transforms.iter().position(|&x| x == t)
    }

    /// Index of the inverse of transform `j` within this set.
    pub fn inverse_index(&self, j: usize) -> Result<usize> {
        let inv = self.get(j)?.inverse();
        self.index_of(inv).ok_or_else(|| {
            Error::InvalidAction(format!(
                "inverse of transform {j} is missing from the {} set",
                self.kind.name()
            ))
        })
    }

    pub fn transforms(&self) -> &[Transform] {
        &self.transforms
    }
}

/// An ordered chain of transformations with a hard length cap.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransformChain {
    items: Vec<Transform>,
    cap: usize,
}

impl TransformChain {
    /// Default cap, matching the environment's default `max_len`.
    pub const DEFAULT_CAP: usize = 10;

    pub fn new(cap: usize) -> TransformChain {
        TransformChain {
            items: Vec::new(),
            cap,
        }
    }

    pub fn from_transforms(items: Vec<Transform>, cap: usize) -> Result<TransformChain> {
        if items.len() > cap {
            return Err(Error::ChainTooLong {
                len: items.len(),
                cap,
            });
        }
        Ok(TransformChain { items, cap })
    }

    pub fn push(&mut self, t: Transform) -> Result<()> {
        if self.items.len() == self.cap {
            return Err(Error::ChainTooLong {
                len: self.items.len() + 1,
                cap: self.cap,
            });
        }
        self.items.push(t);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn cap(&self) -> usize {
        self.cap
    }

    pub fn clear(&mut self) {
        self.items.clear();
    }

    pub fn transforms(&self) -> &[Transform] {
        &self.items
    }

    pub fn labels(&self) -> Vec<String> {
        self.items.iter().map(|t| t.label()).collect()
    }
}

/// Net effect of a chain: rotate once by `angle_deg`, then apply the flips.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChainEffect {
    /// Cumulative rotation, normalized to [0, 360).
    pub angle_deg: i32,
    pub flip_h: bool,
    pub flip_v: bool,
}

impl ChainEffect {
    pub fn identity() -> ChainEffect {
        ChainEffect {
            angle_deg: 0,
            flip_h: false,
            flip_v: false,
        }
    }

    pub fn of_chain(chain: &TransformChain) -> ChainEffect {
        let mut angle: i64 = 0;
        let mut flip_h = false;
        let mut flip_v = false;
        for t in chain.transforms() {
            match *t {
                Transform::FlipH => flip_h = !flip_h,
                Transform::FlipV => flip_v = !flip_v,
                Transform::FlipBoth => {
                    flip_h = !flip_h;
                    flip_v = !flip_v;
                }
                Transform::Rotate(a) => angle += a as i64,
            }
        }
        ChainEffect {
            angle_deg: angle.rem_euclid(360) as i32,
            flip_h,
            flip_v,
        }
    }

    /// Geometric composition: the map "`self`, then `later`".
    ///
    /// Flips do not commute with rotations; moving the earlier flip past the
    /// later rotation negates the rotation when the earlier flip is a single
    /// reflection (`flip_h ^ flip_v`).
    pub fn then(self, later: ChainEffect) -> ChainEffect {
        let reflects = self.flip_h ^ self.flip_v;
        let signed = if reflects {
            -later.angle_deg
        } else {
            later.angle_deg
        };
        ChainEffect {
            angle_deg: (self.angle_deg as i64 + signed as i64).rem_euclid(360) as i32,
            flip_h: self.flip_h ^ later.flip_h,
            flip_v: self.flip_v ^ later.flip_v,
        }
    }

    /// True when the effect is the identity map on pixels. Covers both the
    /// trivial form and the flip-both + 180-degree form (they are the same
    /// permutation).
    pub fn is_identity(self) -> bool {
        match (self.flip_h, self.flip_v) {
            (false, false) => self.angle_deg == 0,
            (true, true) => self.angle_deg == 180,
            _ => false,
        }
    }
}

/// Apply a chain to the original image via canonical replay.
///
/// An empty chain returns a copy of the original. Rotations by multiples of
/// 90 degrees on square images and all flips are exact pixel permutations.
pub fn apply_chain<S: Scalar>(original: &Tensor<S>, chain: &TransformChain) -> Result<Tensor<S>> {
    if original.rank() != 3 {
        return Err(Error::ShapeMismatch {
            context: "apply_chain input (expected H x W x C)".into(),
            expected: vec![0, 0, 0],
            got: original.shape().to_vec(),
        });
    }
    if chain.len() > chain.cap() {
        return Err(Error::ChainTooLong {
            len: chain.len(),
            cap: chain.cap(),
        });
    }
    let effect = ChainEffect::of_chain(chain);
    let rotated = if effect.angle_deg == 0 {
        original.clone()
    } else {
        rotate(original, effect.angle_deg)
    };
    if effect.flip_h || effect.flip_v {
        Ok(flip(&rotated, effect.flip_h, effect.flip_v))
    } else {
        Ok(rotated)
    }
}

/// Mirror an image. `h` reverses columns, `v` reverses rows.
pub fn flip<S: Scalar>(img: &Tensor<S>, h: bool, v: bool) -> Tensor<S> {
    let (rows, cols, ch) = (img.shape()[0], img.shape()[1], img.shape()[2]);
    let mut out = Tensor::zeros(img.shape());
    for r in 0..rows {
        let sr = if v { rows - 1 - r } else { r };
        for c in 0..cols {
            let sc = if h { cols - 1 - c } else { c };
            for k in 0..ch {
                out.set3(r, c, k, img.at3(sr, sc, k));
            }
        }
    }
    out
}

/// Rotate counterclockwise by whole degrees about the image center,
/// resampling bilinearly into the original frame with zero fill.
///
/// The sine/cosine of quarter-turn angles are exact, so those rotations land
/// on grid points and reduce to pixel permutations on square images.
pub fn rotate<S: Scalar>(img: &Tensor<S>, angle_deg: i32) -> Tensor<S> {
    let norm = angle_deg.rem_euclid(360);
    if norm == 0 {
        return img.clone();
    }
    let (sin, cos) = match norm {
        90 => (1.0, 0.0),
        180 => (0.0, -1.0),
        270 => (-1.0, 0.0),
        a => {
            let rad = (a as f64).to_radians();
            (rad.sin(), rad.cos())
        }
    };
    let (rows, cols, ch) = (img.shape()[0], img.shape()[1], img.shape()[2]);
    let cy = (rows as f64 - 1.0) / 2.0;
    let cx = (cols as f64 - 1.0) / 2.0;
    let mut out = Tensor::zeros(img.shape());
    for r in 0..rows {
        let y = r as f64 - cy;
        for c in 0..cols {
            let x = c as f64 - cx;
            // Inverse mapping; y grows downward, so this is the screen-CCW
            // rotation by +angle.
            let src_x = x * cos - y * sin + cx;
            let src_y = x * sin + y * cos + cy;
            let r0 = src_y.floor();
            let c0 = src_x.floor();
            let fy = src_y - r0;
            let fx = src_x - c0;
            let r0 = r0 as i64;
            let c0 = c0 as i64;
            for k in 0..ch {
                let sample = |ri: i64, ci: i64| -> f64 {
                    if ri < 0 || ci < 0 || ri >= rows as i64 || ci >= cols as i64 {
                        0.0
                    } else {
                        img.at3(ri as usize, ci as usize, k).to_f64_lossy()
                    }
                };
                let v = sample(r0, c0) * (1.0 - fy) * (1.0 - fx)
                    + sample(r0, c0 + 1) * (1.0 - fy) * fx
                    + sample(r0 + 1, c0) * fy * (1.0 - fx)
                    + sample(r0 + 1, c0 + 1) * fy * fx;
                out.set3(r, c, k, S::from_f64(v));
            }
        }
    }
    out
}

/// Sample a chain of uniform length in `[min_len, max_len]` with transforms
/// drawn uniformly from `set`.
pub fn random_chain<R: Rng>(
    rng: &mut R,
    min_len: usize,
    max_len: usize,
    set: &TransformSet,
) -> Result<TransformChain> {
    if min_len == 0 || min_len > max_len {
        return Err(Error::InvalidArgument(format!(
            "invalid chain length range [{min_len}, {max_len}]"
        )));
    }
    let len = rng.gen_range(min_len..=max_len);
    let mut chain = TransformChain::new(max_len);
    for _ in 0..len {
        let j = rng.gen_range(0..set.len());
        chain.push(set.get(j)?)?;
    }
    Ok(chain)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn image(rows: usize, cols: usize) -> Tensor<f32> {
        let data = (0..rows * cols).map(|i| i as f32 / 7.0).collect();
        Tensor::from_vec(&[rows, cols, 1], data).unwrap()
    }

    #[test]
    fn empty_chain_returns_copy() {
        let img = image(4, 4);
        let out = apply_chain(&img, &TransformChain::new(10)).unwrap();
        assert!(out.bit_eq(&img));
    }

    #[test]
    fn flip_h_is_column_reversal() {
        let img = Tensor::from_vec(&[2, 2, 1], vec![1.0f32, 2.0, 3.0, 4.0]).unwrap();
        let chain =
            TransformChain::from_transforms(vec![Transform::FlipH], 10).unwrap();
        let out = apply_chain(&img, &chain).unwrap();
        // [[a,b],[c,d]] -> [[b,a],[d,c]]
        assert_eq!(out.data(), &[2.0, 1.0, 4.0, 3.0]);
    }

    #[test]
    fn double_flip_is_identity() {
        let img = image(5, 5);
        let chain =
            TransformChain::from_transforms(vec![Transform::FlipH, Transform::FlipH], 10)
                .unwrap();
        assert!(apply_chain(&img, &chain).unwrap().bit_eq(&img));
    }

    #[test]
    fn opposite_rotations_cancel_exactly() {
        let img = image(6, 6);
        let chain = TransformChain::from_transforms(
            vec![Transform::Rotate(8), Transform::Rotate(-8)],
            10,
        )
        .unwrap();
        assert!(apply_chain(&img, &chain).unwrap().bit_eq(&img));
    }

    #[test]
    fn quarter_turn_moves_horizontal_bar_to_vertical() {
        // 1-pixel-wide horizontal bar through the center row.
        let size = 7;
        let mut img = Tensor::<f32>::zeros(&[size, size, 1]);
        for c in 0..size {
            img.set3(size / 2, c, 0, 1.0);
        }
        let chain =
            TransformChain::from_transforms(vec![Transform::Rotate(90)], 10).unwrap();
        let out = apply_chain(&img, &chain).unwrap();
        // Exact permutation: out(r, c) = in(c, size-1-r).
        for r in 0..size {
            for c in 0..size {
                let expected = img.at3(c, size - 1 - r, 0);
                assert_eq!(out.at3(r, c, 0), expected, "pixel ({r},{c})");
            }
        }
        // And it is a vertical bar.
        for r in 0..size {
            assert_eq!(out.at3(r, size / 2, 0), 1.0);
        }
    }

    #[test]
    fn rotation_of_180_equals_flip_both() {
        let img = image(5, 4);
        let rot = TransformChain::from_transforms(vec![Transform::Rotate(180)], 10).unwrap();
        let fb = TransformChain::from_transforms(vec![Transform::FlipBoth], 10).unwrap();
        assert!(apply_chain(&img, &rot)
            .unwrap()
            .bit_eq(&apply_chain(&img, &fb).unwrap()));
    }

    #[test]
    fn inverse_is_total_and_closed_on_both_sets() {
        for set in [TransformSet::standard(), TransformSet::coarse()] {
            for j in 0..set.len() {
                let inv = set.inverse_index(j).unwrap();
                assert!(inv < set.len());
                // Inverting twice returns to the start.
                assert_eq!(set.inverse_index(inv).unwrap(), j);
            }
        }
    }

    #[test]
    fn inverse_examples() {
        assert_eq!(Transform::FlipV.inverse(), Transform::FlipV);
        assert_eq!(Transform::Rotate(4).inverse(), Transform::Rotate(-4));
        assert_eq!(Transform::Rotate(90).inverse(), Transform::Rotate(-90));
    }

    #[test]
    fn labels_round_trip() {
        for t in TransformSet::standard()
            .transforms()
            .iter()
            .chain(TransformSet::coarse().transforms())
        {
            assert_eq!(Transform::parse(&t.label()).unwrap(), *t);
        }
        assert_eq!(Transform::Rotate(8).label(), "rot(+8)");
        assert_eq!(Transform::Rotate(-90).label(), "rot(-90)");
        assert_eq!(Transform::FlipBoth.label(), "flip_hv");
    }

    #[test]
    fn chain_cap_enforced() {
        let mut chain = TransformChain::new(2);
        chain.push(Transform::FlipH).unwrap();
        chain.push(Transform::FlipV).unwrap();
        assert!(matches!(
            chain.push(Transform::FlipH),
            Err(Error::ChainTooLong { .. })
        ));
        assert!(TransformChain::from_transforms(vec![Transform::FlipH; 3], 2).is_err());
    }

    #[test]
    fn random_chain_rejects_empty_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(random_chain(&mut rng, 0, 3, &TransformSet::standard()).is_err());
        assert!(random_chain(&mut rng, 4, 3, &TransformSet::standard()).is_err());
    }

    #[test]
    fn random_chain_length_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let chain = random_chain(&mut rng, 1, 1, &TransformSet::standard()).unwrap();
        assert_eq!(chain.len(), 1);
    }

    #[test]
    fn random_chain_frequencies_are_uniform() {
        // 10^4 draws of single transforms; each of the 11 ids should appear
        // with frequency 1/11 within 3 sigma of the binomial deviation.
        let set = TransformSet::standard();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let draws = 10_000;
        let mut counts = vec![0usize; set.len()];
        for _ in 0..draws {
            let chain = random_chain(&mut rng, 1, 1, &set).unwrap();
            let j = set.index_of(chain.transforms()[0]).unwrap();
            counts[j] += 1;
        }
        let p = 1.0 / set.len() as f64;
        let sigma = (draws as f64 * p * (1.0 - p)).sqrt();
        for (j, &count) in counts.iter().enumerate() {
            let dev = (count as f64 - draws as f64 * p).abs();
            assert!(dev <= 3.0 * sigma, "transform {j}: count {count}");
        }
    }

    #[test]
    fn coarse_chains_only_use_coarse_transforms() {
        let set = TransformSet::coarse();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let chain = random_chain(&mut rng, 1, 2, &set).unwrap();
            for t in chain.transforms() {
                match t {
                    Transform::FlipH | Transform::FlipV | Transform::FlipBoth => {}
                    Transform::Rotate(a) => assert!(*a == 90 || *a == -90),
                }
            }
        }
    }

    #[test]
    fn chain_followed_by_reversed_inverses_is_identity() {
        let set = TransformSet::standard();
        let img = image(9, 9);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let chain = random_chain(&mut rng, 1, 10, &set).unwrap();
            let mut round_trip: Vec<Transform> = chain.transforms().to_vec();
            round_trip.extend(chain.transforms().iter().rev().map(|t| t.inverse()));
            let full = TransformChain::from_transforms(round_trip, 20).unwrap();
            assert!(apply_chain(&img, &full).unwrap().bit_eq(&img));
        }
    }

    #[test]
    fn effect_composition_matches_pixelwise_composition() {
        // Composing effects algebraically must match applying the chains one
        // after the other, for exact-permutation (coarse) transforms.
        let set = TransformSet::coarse();
        let img = image(8, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let first = random_chain(&mut rng, 1, 3, &set).unwrap();
            let second = random_chain(&mut rng, 1, 3, &set).unwrap();
            let step1 = apply_chain(&img, &first).unwrap();
            let step2 = apply_chain(&step1, &second).unwrap();

            let combined = ChainEffect::of_chain(&first).then(ChainEffect::of_chain(&second));
            let mut direct_chain = TransformChain::new(4);
            if combined.angle_deg != 0 {
                direct_chain.push(Transform::Rotate(combined.angle_deg)).unwrap();
            }
            if combined.flip_h {
                direct_chain.push(Transform::FlipH).unwrap();
            }
            if combined.flip_v {
                direct_chain.push(Transform::FlipV).unwrap();
            }
            let direct = apply_chain(&img, &direct_chain).unwrap();
            assert!(direct.bit_eq(&step2), "effect {combined:?}");
        }
    }

    #[test]
    fn identity_effect_detection() {
        assert!(ChainEffect::identity().is_identity());
        assert!(ChainEffect {
            angle_deg: 180,
            flip_h: true,
            flip_v: true
        }
        .is_identity());
        assert!(!ChainEffect {
            angle_deg: 0,
            flip_h: true,
            flip_v: false
        }
        .is_identity());
        assert!(!ChainEffect {
            angle_deg: 90,
            flip_h: false,
            flip_v: false
        }
        .is_identity());
    }

    #[test]
    fn rotation_output_keeps_shape_and_range() {
        let img = image(6, 9);
        let chain = TransformChain::from_transforms(vec![Transform::Rotate(37)], 10).unwrap();
        let out = apply_chain(&img, &chain).unwrap();
        assert_eq!(out.shape(), img.shape());
        let max_in = img.data().iter().cloned().fold(f32::MIN, f32::max);
        for &v in out.data() {
            assert!(v >= 0.0 && v <= max_in + 1e-6);
        }
    }
}
