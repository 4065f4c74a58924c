//! Corpus statistics: counts by reasoning type, altitude and illumination,
//! plus the small-object fraction. The small-object test is strict:
//! mask area / image area < 2%, so a mask covering exactly 2% is not small.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::record::{Illumination, ReasoningSample, ALTITUDES_M};
use crate::error::Result;
use crate::metrics::ReasoningType;
use crate::parallel::par_map;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub total: usize,
    /// Indexed by `ReasoningType::index()`.
    pub by_type: [usize; 3],
    /// Indexed parallel to `ALTITUDES_M`.
    pub by_altitude: [usize; 3],
    /// day, night.
    pub by_illumination: [usize; 2],
    pub small_objects: usize,
}

/// Integer form of area / (h*w) < 0.02, exact at the boundary.
pub fn is_small_object(area: u64, height: usize, width: usize) -> bool {
    50 * area < (height as u64) * (width as u64)
}

pub fn corpus_stats(root: &Path, samples: &[ReasoningSample]) -> Result<CorpusStats> {
    let masks = par_map(samples, |s| {
        crate::data::codec::decode_mask_png(&root.join(&s.mask_path))
    });
    let mut stats = CorpusStats {
        total: samples.len(),
        by_type: [0; 3],
        by_altitude: [0; 3],
        by_illumination: [0; 2],
        small_objects: 0,
    };
    for (sample, mask) in samples.iter().zip(masks) {
        let mask = mask?;
        stats.by_type[sample.reasoning_type.index()] += 1;
        let alt_idx = ALTITUDES_M
            .iter()
            .position(|&a| a == sample.altitude_m)
            .expect("validated altitude");
        stats.by_altitude[alt_idx] += 1;
        stats.by_illumination[match sample.illumination {
            Illumination::Day => 0,
            Illumination::Night => 1,
        }] += 1;
        if is_small_object(mask.area(), mask.height, mask.width) {
            stats.small_objects += 1;
        }
    }
    Ok(stats)
}

impl CorpusStats {
    pub fn small_object_fraction(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.small_objects as f64 / self.total as f64
        }
    }

    pub fn type_fractions(&self) -> [f64; 3] {
        let n = self.total.max(1) as f64;
        [
            self.by_type[0] as f64 / n,
            self.by_type[1] as f64 / n,
            self.by_type[2] as f64 / n,
        ]
    }

    pub fn to_markdown(&self) -> String {
        let mut out = String::new();
        out.push_str("| statistic | value |\n|---|---|\n");
        out.push_str(&format!("| samples | {} |\n", self.total));
        for t in ReasoningType::ALL {
            out.push_str(&format!(
                "| {} | {} |\n",
                t.as_str(),
                self.by_type[t.index()]
            ));
        }
        for (i, alt) in ALTITUDES_M.iter().enumerate() {
            out.push_str(&format!("| altitude {alt} m | {} |\n", self.by_altitude[i]));
        }
        out.push_str(&format!("| day | {} |\n", self.by_illumination[0]));
        out.push_str(&format!("| night | {} |\n", self.by_illumination[1]));
        out.push_str(&format!(
            "| small-object fraction | {:.4} |\n",
            self.small_object_fraction()
        ));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::codec::encode_mask_png;
    use crate::data::record::parse_record;
    use crate::data::synth::{read_scenes, synthesize_dataset, target_mask};
    use crate::raster::BinaryMask;

    #[test]
    fn small_object_threshold_is_strict() {
        // 100x100 image: 2% is exactly 200 pixels
        assert!(is_small_object(199, 100, 100));
        assert!(!is_small_object(200, 100, 100));
        assert!(!is_small_object(201, 100, 100));
        assert!(is_small_object(0, 100, 100));
    }

    fn write_sample(
        root: &Path,
        id: &str,
        rtype: &str,
        altitude: u32,
        illum: &str,
        area: usize,
    ) -> ReasoningSample {
        std::fs::create_dir_all(root.join("masks")).unwrap();
        let mut mask = BinaryMask::zeros(100, 100);
        for i in 0..area {
            mask.set(i / 100, i % 100, 1);
        }
        encode_mask_png(&mask, &root.join(format!("masks/{id}.png"))).unwrap();
        parse_record(&format!(
            r#"{{"id":"{id}","image_path":"images/{id}.png","mask_path":"masks/{id}.png",
               "reasoning_type":"{rtype}","question":"q","cot":[],"answer":"a",
               "altitude_m":{altitude},"illumination":"{illum}"}}"#
        ))
        .unwrap()
    }

    #[test]
    fn counts_and_small_fraction_from_known_corpus() {
        let dir = tempfile::tempdir().unwrap();
        let samples = vec![
            write_sample(dir.path(), "a", "spatial", 30, "day", 199),
            write_sample(dir.path(), "b", "spatial", 60, "night", 200),
            write_sample(dir.path(), "c", "attribute", 60, "day", 100),
            write_sample(dir.path(), "d", "scene", 100, "day", 5000),
        ];
        let stats = corpus_stats(dir.path(), &samples).unwrap();
        assert_eq!(stats.total, 4);
        assert_eq!(stats.by_type, [2, 1, 1]);
        assert_eq!(stats.by_altitude, [1, 2, 1]);
        assert_eq!(stats.by_illumination, [3, 1]);
        assert_eq!(stats.small_objects, 2);
        assert_eq!(stats.small_object_fraction(), 0.5);
        let fsum: f64 = stats.type_fractions().iter().sum();
        assert!((fsum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn every_mask_small_gives_fraction_one() {
        let dir = tempfile::tempdir().unwrap();
        let samples = vec![
            write_sample(dir.path(), "a", "spatial", 30, "day", 100),
            write_sample(dir.path(), "b", "scene", 60, "night", 100),
        ];
        let stats = corpus_stats(dir.path(), &samples).unwrap();
        assert_eq!(stats.small_object_fraction(), 1.0);
    }

    #[test]
    fn synthetic_corpus_matches_generator_bookkeeping() {
        let dir = tempfile::tempdir().unwrap();
        let out = synthesize_dataset(dir.path(), 12, 19, 64).unwrap();
        let stats = corpus_stats(dir.path(), &out.samples).unwrap();
        let scenes = read_scenes(&dir.path().join("scenes.json")).unwrap();

        let mut want = CorpusStats {
            total: scenes.len(),
            by_type: [0; 3],
            by_altitude: [0; 3],
            by_illumination: [0; 2],
            small_objects: 0,
        };
        for s in &scenes {
            want.by_type[s.reasoning_type.index()] += 1;
            let ai = ALTITUDES_M.iter().position(|&a| a == s.altitude_m).unwrap();
            want.by_altitude[ai] += 1;
            want.by_illumination[(s.illumination == Illumination::Night) as usize] += 1;
            let m = target_mask(s);
            if is_small_object(m.area(), m.height, m.width) {
                want.small_objects += 1;
            }
        }
        assert_eq!(stats, want);
        assert_eq!(stats.by_type, [4, 4, 4]);
    }

    #[test]
    fn markdown_table_lists_all_rows() {
        let stats = CorpusStats {
            total: 3,
            by_type: [1, 1, 1],
            by_altitude: [3, 0, 0],
            by_illumination: [2, 1],
            small_objects: 1,
        };
        let md = stats.to_markdown();
        for needle in ["spatial", "attribute", "scene", "altitude 30 m", "night", "0.3333"] {
            assert!(md.contains(needle), "missing {needle}:\n{md}");
        }
    }
}
