//! Binary-mask codecs: single-channel {0, 255} PNG plus an optional
//! run-length JSON sidecar. RLE counts alternate 0-runs and 1-runs in
//! row-major order and always start with the 0-run (possibly zero-length).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::BinaryMask;

pub fn encode_mask_png(mask: &BinaryMask, path: &Path) -> Result<()> {
    let pixels: Vec<u8> = mask.data().iter().map(|&v| v * 255).collect();
    let img = image::GrayImage::from_raw(mask.width as u32, mask.height as u32, pixels)
        .expect("buffer length matches dimensions");
    img.save(path).map_err(Error::from)
}

pub fn decode_mask_png(path: &Path) -> Result<BinaryMask> {
    let img = image::open(path)?.into_luma8();
    let (w, h) = img.dimensions();
    let mut data = Vec::with_capacity((w * h) as usize);
    for &v in img.as_raw() {
        match v {
            0 => data.push(0u8),
            255 => data.push(1u8),
            other => {
                return Err(Error::input(format!(
                    "{}: non-binary pixel value {other} (expected 0 or 255)",
                    path.display()
                )))
            }
        }
    }
    BinaryMask::new(h as usize, w as usize, data)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RleMask {
    /// [height, width]
    pub size: [usize; 2],
    pub counts: Vec<usize>,
}

pub fn mask_to_rle(mask: &BinaryMask) -> RleMask {
    let mut counts = Vec::new();
    let mut current: u8 = 0;
    let mut run: usize = 0;
    for &v in mask.data() {
        if v == current {
            run += 1;
        } else {
            counts.push(run);
            current = v;
            run = 1;
        }
    }
    counts.push(run);
    RleMask {
        size: [mask.height, mask.width],
        counts,
    }
}

pub fn rle_to_mask(rle: &RleMask) -> Result<BinaryMask> {
    let numel = rle.size[0] * rle.size[1];
    let total: usize = rle.counts.iter().sum();
    if total != numel {
        return Err(Error::input(format!(
            "RLE counts sum to {total} but size is {}x{} = {numel}",
            rle.size[0], rle.size[1]
        )));
    }
    let mut data = Vec::with_capacity(numel);
    for (i, &run) in rle.counts.iter().enumerate() {
        let bit = (i % 2) as u8;
        data.extend(std::iter::repeat(bit).take(run));
    }
    BinaryMask::new(rle.size[0], rle.size[1], data)
}

pub fn write_rle(rle: &RleMask, path: &Path) -> Result<()> {
    fs::write(path, serde_json::to_string(rle)?)?;
    Ok(())
}

pub fn read_rle(path: &Path) -> Result<RleMask> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_mask(rng: &mut impl Rng, h: usize, w: usize) -> BinaryMask {
        let data = (0..h * w).map(|_| rng.gen_range(0..=1u8)).collect();
        BinaryMask::new(h, w, data).unwrap()
    }

    #[test]
    fn png_round_trip_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for i in 0..20 {
            let h = rng.gen_range(1..=48);
            let w = rng.gen_range(1..=48);
            let mask = random_mask(&mut rng, h, w);
            let path = dir.path().join(format!("m{i}.png"));
            encode_mask_png(&mask, &path).unwrap();
            let back = decode_mask_png(&path).unwrap();
            assert_eq!(mask.data(), back.data());
            assert_eq!((mask.height, mask.width), (back.height, back.width));
        }
    }

    #[test]
    fn decode_rejects_non_binary_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("gray.png");
        let img = image::GrayImage::from_raw(2, 2, vec![0, 255, 128, 0]).unwrap();
        img.save(&path).unwrap();
        let err = decode_mask_png(&path).unwrap_err().to_string();
        assert!(err.contains("128"), "{err}");
    }

    #[test]
    fn rle_all_zero_mask() {
        let rle = mask_to_rle(&BinaryMask::zeros(4, 4));
        assert_eq!(rle.size, [4, 4]);
        assert_eq!(rle.counts, vec![16]);
    }

    #[test]
    fn rle_single_one_at_origin() {
        let mut mask = BinaryMask::zeros(2, 2);
        mask.set(0, 0, 1);
        let rle = mask_to_rle(&mask);
        assert_eq!(rle.counts, vec![0, 1, 3]);
        assert_eq!(rle_to_mask(&rle).unwrap().data(), mask.data());
    }

    #[test]
    fn rle_all_ones_mask() {
        let mask = BinaryMask::new(2, 2, vec![1; 4]).unwrap();
        let rle = mask_to_rle(&mask);
        assert_eq!(rle.counts, vec![0, 4]);
        assert_eq!(rle_to_mask(&rle).unwrap().data(), mask.data());
    }

    #[test]
    fn rle_rejects_wrong_total() {
        let rle = RleMask {
            size: [2, 2],
            counts: vec![3],
        };
        assert!(rle_to_mask(&rle).is_err());
    }

    #[test]
    fn rle_round_trip_200_random_masks() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let h = rng.gen_range(1..=64);
            let w = rng.gen_range(1..=64);
            let mask = random_mask(&mut rng, h, w);
            let back = rle_to_mask(&mask_to_rle(&mask)).unwrap();
            assert_eq!(mask.data(), back.data());
        }
    }

    #[test]
    fn rle_json_sidecar_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.rle.json");
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let mask = random_mask(&mut rng, 8, 5);
        let rle = mask_to_rle(&mask);
        write_rle(&rle, &path).unwrap();
        assert_eq!(read_rle(&path).unwrap(), rle);
    }

    proptest! {
        #[test]
        fn prop_rle_round_trip(h in 1usize..32, w in 1usize..32, seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mask = random_mask(&mut rng, h, w);
            let rle = mask_to_rle(&mask);
            // counts structure: starts with the 0-run, only the first may
            // be zero, and the total covers the mask
            prop_assert!(rle.counts.iter().skip(1).all(|&c| c > 0));
            prop_assert_eq!(rle.counts.iter().sum::<usize>(), h * w);
            let back = rle_to_mask(&rle).unwrap();
            prop_assert_eq!(mask.data(), back.data());
        }
    }
}
