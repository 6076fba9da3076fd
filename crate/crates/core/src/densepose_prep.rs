//! DensePose encoding, simplification and the upper-body box used for ROI placement.

use serde::{Deserialize, Serialize};

use crate::body::dp;
use crate::error::{Error, Result};
use crate::imaging::{BoundingBox, Image};
use crate::perception::DensePoseMap;

/// Parts whitened by default: torso, feet and legs.
pub const DEFAULT_SIMPLIFICATION_SET: [u8; 12] = [1, 2, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14];

/// Parts that define the upper-body box: torso, arms and head.
pub const UPPER_BODY_PARTS: [u8; 12] = [1, 2, 15, 16, 17, 18, 19, 20, 21, 22, 23, 24];

/// A set of DensePose parts to paint white.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<u8>", into = "Vec<u8>")]
pub struct SimplificationSet(Vec<u8>);

impl Default for SimplificationSet {
    fn default() -> Self {
        Self(DEFAULT_SIMPLIFICATION_SET.to_vec())
    }
}

impl TryFrom<Vec<u8>> for SimplificationSet {
    type Error = Error;
    fn try_from(v: Vec<u8>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<SimplificationSet> for Vec<u8> {
    fn from(s: SimplificationSet) -> Self {
        s.0
    }
}

impl SimplificationSet {
    pub fn new(parts: impl IntoIterator<Item = u8>) -> Result<Self> {
        let mut v: Vec<u8> = parts.into_iter().collect();
        v.sort_unstable();
        v.dedup();
        if let Some(p) = v.iter().find(|p| **p == 0 || **p > dp::NUM_PARTS) {
            return Err(Error::invalid(format!("simplification part {p} outside 1..=24")));
        }
        Ok(Self(v))
    }

    pub fn parts(&self) -> &[u8] {
        &self.0
    }

    pub fn contains(&self, part: u8) -> bool {
        self.0.binary_search(&part).is_ok()
    }
}

/// Encoded DensePose image with the simplified parts painted white.
#[derive(Debug, Clone, PartialEq)]
pub struct SimplifiedDensePoseMap {
    pub data: Image,
    pub set: SimplificationSet,
}

/// Part index stored in channel 0 of an encoded pixel.
#[inline]
pub fn decode_part(v: f32) -> u8 {
    (v * dp::NUM_PARTS as f32).round().clamp(0.0, dp::NUM_PARTS as f32) as u8
}

/// Paint every pixel whose part belongs to `set` white; leave the rest untouched.
pub fn simplify(dp_img: &Image, set: &SimplificationSet) -> Result<SimplifiedDensePoseMap> {
    if dp_img.channels() != 3 {
        return Err(Error::invalid(format!("encoded DensePose needs 3 channels, got {}", dp_img.channels())));
    }
    let mut data = dp_img.clone();
    let (h, w) = dp_img.dims();
    for y in 0..h {
        for x in 0..w {
            if set.contains(decode_part(dp_img.get(0, y, x))) {
                for c in 0..3 {
                    data.set(c, y, x, 1.0);
                }
            }
        }
    }
    Ok(SimplifiedDensePoseMap { data, set: set.clone() })
}

/// Three-channel encoding: part / 24, u, v. Background is black.
pub fn encode_iuv(map: &DensePoseMap) -> Result<Image> {
    map.validate()?;
    let n = map.height * map.width;
    let mut data = Vec::with_capacity(3 * n);
    data.extend(map.part.iter().map(|p| *p as f32 / dp::NUM_PARTS as f32));
    data.extend_from_slice(&map.u);
    data.extend_from_slice(&map.v);
    Image::from_vec(3, map.height, map.width, data)
}

/// Inverse of [`encode_iuv`]; tolerant to 8-bit quantization of the part channel.
pub fn decode_iuv(img: &Image) -> Result<DensePoseMap> {
    if img.channels() != 3 {
        return Err(Error::invalid("IUV image must have 3 channels"));
    }
    let (h, w) = img.dims();
    let mut map = DensePoseMap::empty(h, w);
    for y in 0..h {
        for x in 0..w {
            map.set(y, x, decode_part(img.get(0, y, x)), img.get(1, y, x), img.get(2, y, x));
        }
    }
    map.validate()?;
    Ok(map)
}

/// Tight box over torso, arm and head pixels; `None` when none are visible.
pub fn upper_body_bbox(map: &DensePoseMap) -> Option<BoundingBox> {
    let mut bbox: Option<BoundingBox> = None;
    for y in 0..map.height {
        for x in 0..map.width {
            if UPPER_BODY_PARTS.contains(&map.part_at(y, x)) {
                match bbox.as_mut() {
                    Some(b) => b.include(x, y),
                    None => bbox = Some(BoundingBox::singleton(x, y)),
                }
            }
        }
    }
    bbox
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::{decode_png, encode_png};
    use proptest::prelude::*;

    fn random_map(seed: u64, h: usize, w: usize) -> DensePoseMap {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut m = DensePoseMap::empty(h, w);
        for y in 0..h {
            for x in 0..w {
                let p = rng.gen_range(0..=24u8);
                m.set(y, x, p, rng.gen(), rng.gen());
            }
        }
        m
    }

    #[test]
    fn encoding_examples() {
        let mut m = DensePoseMap::empty(1, 2);
        m.set(0, 1, 24, 0.5, 0.25);
        let e = encode_iuv(&m).unwrap();
        assert_eq!(e.pixel(0, 0), vec![0.0, 0.0, 0.0]);
        assert_eq!(e.pixel(0, 1), vec![1.0, 0.5, 0.25]);
        m.part[0] = 25;
        assert!(encode_iuv(&m).is_err());
    }

    #[test]
    fn every_part_survives_png_round_trip() {
        let mut m = DensePoseMap::empty(1, 25);
        for p in 0..=24u8 {
            m.set(0, p as usize, p, 0.4, 0.6);
        }
        let back = decode_iuv(&decode_png(&encode_png(&encode_iuv(&m).unwrap()).unwrap()).unwrap()).unwrap();
        assert_eq!(back.part, m.part);
    }

    #[test]
    fn torso_whitens_background_stays_black() {
        let mut m = DensePoseMap::empty(1, 3);
        m.set(0, 1, dp::TORSO_FRONT, 0.3, 0.3);
        m.set(0, 2, dp::UPPER_ARM_LEFT[0], 0.3, 0.3);
        let s = simplify(&encode_iuv(&m).unwrap(), &SimplificationSet::default()).unwrap();
        assert_eq!(s.data.pixel(0, 0), vec![0.0; 3]);
        assert_eq!(s.data.pixel(0, 1), vec![1.0; 3]);
        assert_eq!(s.data.pixel(0, 2), vec![15.0 / 24.0, 0.3, 0.3]);
    }

    #[test]
    fn every_part_toggles_independently() {
        let mut m = DensePoseMap::empty(1, 25);
        for p in 0..=24u8 {
            m.set(0, p as usize, p, 0.25, 0.75);
        }
        let enc = encode_iuv(&m).unwrap();
        for toggled in 1..=24u8 {
            let set = SimplificationSet::new([toggled]).unwrap();
            let s = simplify(&enc, &set).unwrap();
            for p in 0..=24u8 {
                let i = p as usize;
                if p == toggled {
                    assert_eq!(s.data.pixel(0, i), vec![1.0; 3]);
                } else {
                    assert_eq!(s.data.pixel(0, i), enc.pixel(0, i), "part {p} with set {{{toggled}}}");
                }
            }
        }
    }

    #[test]
    fn default_set_keeps_arms_hands_and_head() {
        let set = SimplificationSet::default();
        for p in 1..=24u8 {
            assert_eq!(!set.contains(p), matches!(p, 3 | 4 | 15..=24), "part {p}");
        }
    }

    #[test]
    fn rejects_out_of_range_set() {
        assert!(SimplificationSet::new([0]).is_err());
        assert!(SimplificationSet::new([25]).is_err());
        assert!(serde_json::from_str::<SimplificationSet>("[1, 30]").is_err());
        let s: SimplificationSet = serde_json::from_str("[2, 1, 2]").unwrap();
        assert_eq!(s.parts(), &[1, 2]);
    }

    #[test]
    fn encode_decode_round_trip() {
        let m = random_map(4, 9, 11);
        assert_eq!(decode_iuv(&encode_iuv(&m).unwrap()).unwrap(), m);
    }

    #[test]
    fn upper_body_box_examples() {
        assert!(upper_body_bbox(&DensePoseMap::empty(4, 4)).is_none());
        let mut m = DensePoseMap::empty(100, 100);
        m.set(60, 40, dp::TORSO_BACK, 0.5, 0.5);
        let b = upper_body_bbox(&m).unwrap();
        assert_eq!((b.x0, b.y0, b.x1, b.y1), (40, 60, 40, 60));
        // legs and hands do not count
        m.set(90, 90, 9, 0.5, 0.5);
        m.set(0, 99, dp::RIGHT_HAND, 0.5, 0.5);
        assert_eq!(upper_body_bbox(&m).unwrap(), b);
    }

    fn brute_force_bbox(m: &DensePoseMap) -> Option<(usize, usize, usize, usize)> {
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for y in 0..m.height {
            for x in 0..m.width {
                if UPPER_BODY_PARTS.contains(&m.part[y * m.width + x]) {
                    xs.push(x);
                    ys.push(y);
                }
            }
        }
        if xs.is_empty() {
            return None;
        }
        Some((*xs.iter().min()?, *ys.iter().min()?, *xs.iter().max()?, *ys.iter().max()?))
    }

    #[test]
    fn two_blob_box_matches_scan() {
        let mut m = DensePoseMap::empty(40, 50);
        for y in 3..9 {
            for x in 5..12 {
                m.set(y, x, 23, 0.1, 0.1);
            }
        }
        for y in 20..35 {
            for x in 30..44 {
                m.set(y, x, 2, 0.1, 0.1);
            }
        }
        let b = upper_body_bbox(&m).unwrap();
        assert_eq!(Some((b.x0, b.y0, b.x1, b.y1)), brute_force_bbox(&m));
    }

    proptest! {
        #[test]
        fn simplify_is_idempotent(seed in any::<u64>(), mask in any::<u32>()) {
            let enc = encode_iuv(&random_map(seed, 6, 7)).unwrap();
            let set = SimplificationSet::new((1..=24u8).filter(|p| mask & (1 << p) != 0)).unwrap();
            let once = simplify(&enc, &set).unwrap();
            let twice = simplify(&once.data, &set).unwrap();
            prop_assert_eq!(&once.data, &twice.data);
        }

        #[test]
        fn bbox_is_monotone(seed in any::<u64>(), y in 0usize..12, x in 0usize..12, part in 1u8..=24) {
            let mut m = random_map(seed, 12, 12);
            let before = upper_body_bbox(&m);
            m.set(y, x, part, 0.5, 0.5);
            let after = upper_body_bbox(&m);
            if let (Some(b), Some(a)) = (before, after) {
                if UPPER_BODY_PARTS.contains(&part) {
                    prop_assert!(a.contains(&b));
                }
            }
            prop_assert_eq!(
                after.map(|b| (b.x0, b.y0, b.x1, b.y1)),
                brute_force_bbox(&m)
            );
        }
    }
}
