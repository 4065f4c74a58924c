//! Region metrics: per-image IoU, dataset gIoU and cIoU, mergeable
//! accumulation keyed by reasoning type, and the mask alignment check.
//!
//! gIoU averages per-image IoUs; cIoU divides total intersection by total
//! union. The two diverge whenever mask sizes vary, so both are tracked.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::BinaryMask;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReasoningType {
    Spatial,
    Attribute,
    Scene,
}

impl ReasoningType {
    pub const ALL: [ReasoningType; 3] = [
        ReasoningType::Spatial,
        ReasoningType::Attribute,
        ReasoningType::Scene,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ReasoningType::Spatial => "spatial",
            ReasoningType::Attribute => "attribute",
            ReasoningType::Scene => "scene",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "spatial" => Ok(ReasoningType::Spatial),
            "attribute" => Ok(ReasoningType::Attribute),
            "scene" => Ok(ReasoningType::Scene),
            other => Err(Error::input(format!(
                "reasoning_type: expected one of spatial|attribute|scene, got {other:?}"
            ))),
        }
    }

    pub fn index(self) -> usize {
        match self {
            ReasoningType::Spatial => 0,
            ReasoningType::Attribute => 1,
            ReasoningType::Scene => 2,
        }
    }
}

impl fmt::Display for ReasoningType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One prediction/target comparison.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IouSample {
    pub iou: f64,
    pub intersection: u64,
    pub union: u64,
}

/// Pixel-set IoU. Both masks empty counts as a perfect prediction (IoU 1).
pub fn iou(pred: &BinaryMask, target: &BinaryMask) -> Result<IouSample> {
    if !pred.same_shape(target) {
        return Err(Error::input(format!(
            "iou shape mismatch: {}x{} vs {}x{}",
            pred.height, pred.width, target.height, target.width
        )));
    }
    let mut intersection = 0u64;
    let mut union = 0u64;
    for (&p, &t) in pred.data().iter().zip(target.data()) {
        intersection += (p & t) as u64;
        union += (p | t) as u64;
    }
    let iou = if union == 0 {
        1.0
    } else {
        intersection as f64 / union as f64
    };
    Ok(IouSample {
        iou,
        intersection,
        union,
    })
}

#[derive(Clone, Debug, Default, PartialEq)]
struct TypeBucket {
    ious: Vec<f64>,
    intersection: u64,
    union: u64,
}

/// Mergeable running metric state, one bucket per reasoning type.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricAccumulator {
    buckets: [TypeBucket; 3],
}

impl MetricAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, rtype: ReasoningType, sample: IouSample) {
        let b = &mut self.buckets[rtype.index()];
        b.ious.push(sample.iou);
        b.intersection += sample.intersection;
        b.union += sample.union;
    }

    pub fn count(&self, rtype: ReasoningType) -> usize {
        self.buckets[rtype.index()].ious.len()
    }

    pub fn total_count(&self) -> usize {
        self.buckets.iter().map(|b| b.ious.len()).sum()
    }

    /// Mean per-image IoU for one reasoning type; None when no samples.
    pub fn giou_type(&self, rtype: ReasoningType) -> Option<f64> {
        let b = &self.buckets[rtype.index()];
        if b.ious.is_empty() {
            None
        } else {
            Some(b.ious.iter().sum::<f64>() / b.ious.len() as f64)
        }
    }

    /// Total-intersection over total-union for one type; None when absent.
    pub fn ciou_type(&self, rtype: ReasoningType) -> Option<f64> {
        let b = &self.buckets[rtype.index()];
        if b.ious.is_empty() {
            return None;
        }
        Some(ratio_or_empty_convention(b.intersection, b.union))
    }

    /// Mean per-image IoU across every sample.
    pub fn giou(&self) -> Result<f64> {
        let n = self.total_count();
        if n == 0 {
            return Err(Error::input("no samples accumulated"));
        }
        let sum: f64 = self.buckets.iter().flat_map(|b| b.ious.iter()).sum();
        Ok(sum / n as f64)
    }

    /// Dataset-total intersection over union across every sample.
    pub fn ciou(&self) -> Result<f64> {
        if self.total_count() == 0 {
            return Err(Error::input("no samples accumulated"));
        }
        let i: u64 = self.buckets.iter().map(|b| b.intersection).sum();
        let u: u64 = self.buckets.iter().map(|b| b.union).sum();
        Ok(ratio_or_empty_convention(i, u))
    }

    /// Combine shard results; order of samples within a type follows the
    /// merge order.
    pub fn merge(&mut self, other: &MetricAccumulator) {
        for (mine, theirs) in self.buckets.iter_mut().zip(&other.buckets) {
            mine.ious.extend_from_slice(&theirs.ious);
            mine.intersection += theirs.intersection;
            mine.union += theirs.union;
        }
    }

    pub fn merged(mut a: MetricAccumulator, b: &MetricAccumulator) -> MetricAccumulator {
        a.merge(b);
        a
    }
}

fn ratio_or_empty_convention(intersection: u64, union: u64) -> f64 {
    if union == 0 {
        1.0
    } else {
        intersection as f64 / union as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MiscoverageDenom {
    /// |P \ T| / |P| (precision-style, the default reading).
    Prediction,
    /// |P \ T| / |image \ T|.
    ImageComplement,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MaskAlignReport {
    pub coverage: f64,
    pub miscoverage: f64,
    pub aligned: bool,
}

/// Coverage/miscoverage quality gate: aligned iff coverage ≥ 0.95 and
/// miscoverage ≤ 0.05, both bounds inclusive.
pub fn mask_alignment_check(pred: &BinaryMask, reference: &BinaryMask) -> Result<MaskAlignReport> {
    mask_alignment_check_with(pred, reference, MiscoverageDenom::Prediction)
}

pub fn mask_alignment_check_with(
    pred: &BinaryMask,
    reference: &BinaryMask,
    denom: MiscoverageDenom,
) -> Result<MaskAlignReport> {
    if !pred.same_shape(reference) {
        return Err(Error::input("mask alignment shape mismatch"));
    }
    let ref_area = reference.area();
    if ref_area == 0 {
        return Err(Error::input(
            "mask alignment undefined for an empty reference mask",
        ));
    }
    let mut covered = 0u64;
    let mut spill = 0u64;
    for (&p, &t) in pred.data().iter().zip(reference.data()) {
        covered += (p & t) as u64;
        spill += (p & (1 - t)) as u64;
    }
    let pred_area = pred.area();
    let coverage = covered as f64 / ref_area as f64;
    let miscoverage = match denom {
        MiscoverageDenom::Prediction => {
            if pred_area == 0 {
                0.0
            } else {
                spill as f64 / pred_area as f64
            }
        }
        MiscoverageDenom::ImageComplement => {
            let total = (pred.height * pred.width) as u64;
            let complement = total - ref_area;
            if complement == 0 {
                0.0
            } else {
                spill as f64 / complement as f64
            }
        }
    };
    Ok(MaskAlignReport {
        coverage,
        miscoverage,
        aligned: coverage >= 0.95 && miscoverage <= 0.05,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask(h: usize, w: usize, ones: &[(usize, usize)]) -> BinaryMask {
        let mut m = BinaryMask::zeros(h, w);
        for &(y, x) in ones {
            m.set(y, x, 1);
        }
        m
    }

    fn block(h: usize, w: usize, y0: usize, x0: usize, s: usize) -> BinaryMask {
        let mut m = BinaryMask::zeros(h, w);
        for y in y0..y0 + s {
            for x in x0..x0 + s {
                m.set(y, x, 1);
            }
        }
        m
    }

    #[test]
    fn iou_identity_and_disjoint() {
        let a = block(4, 4, 0, 0, 2);
        assert_eq!(iou(&a, &a).unwrap().iou, 1.0);
        let b = block(4, 4, 2, 2, 2);
        assert_eq!(iou(&a, &b).unwrap().iou, 0.0);
    }

    #[test]
    fn iou_offset_blocks() {
        // 3x3 at (0,0) vs 3x3 at (1,1): overlap 2x2=4, union 9+9-4=14
        let a = block(8, 8, 0, 0, 3);
        let b = block(8, 8, 1, 1, 3);
        let s = iou(&a, &b).unwrap();
        assert_eq!(s.intersection, 4);
        assert_eq!(s.union, 14);
        assert!((s.iou - 4.0 / 14.0).abs() < 1e-15);
    }

    #[test]
    fn iou_both_empty_is_one() {
        let a = BinaryMask::zeros(3, 3);
        assert_eq!(iou(&a, &a).unwrap().iou, 1.0);
    }

    #[test]
    fn iou_shape_mismatch_is_input_error() {
        let a = BinaryMask::zeros(3, 3);
        let b = BinaryMask::zeros(3, 4);
        assert!(iou(&a, &b).is_err());
    }

    #[test]
    fn giou_vs_ciou_divergence() {
        // masks engineered for IoUs 0.5 (I=1,U=2) and 0.1 (I=1,U=10)
        let p1 = mask(4, 4, &[(0, 0)]);
        let t1 = mask(4, 4, &[(0, 0), (0, 1)]);
        let p2 = mask(4, 4, &[(1, 0)]);
        let t2 = mask(
            4,
            4,
            &[
                (1, 0),
                (1, 1),
                (1, 2),
                (1, 3),
                (2, 0),
                (2, 1),
                (2, 2),
                (2, 3),
                (3, 0),
                (3, 1),
            ],
        );
        let mut acc = MetricAccumulator::new();
        acc.add(ReasoningType::Spatial, iou(&p1, &t1).unwrap());
        acc.add(ReasoningType::Spatial, iou(&p2, &t2).unwrap());
        assert!((acc.giou().unwrap() - 0.3).abs() < 1e-12);
        assert!((acc.ciou().unwrap() - 2.0 / 12.0).abs() < 1e-12);
    }

    #[test]
    fn merge_matches_single_pass_and_is_associative() {
        let samples = [
            (ReasoningType::Spatial, 3, 7),
            (ReasoningType::Attribute, 1, 4),
            (ReasoningType::Scene, 5, 5),
            (ReasoningType::Spatial, 0, 9),
        ];
        let mk = |items: &[(ReasoningType, u64, u64)]| {
            let mut acc = MetricAccumulator::new();
            for &(t, i, u) in items {
                acc.add(
                    t,
                    IouSample {
                        iou: i as f64 / u as f64,
                        intersection: i,
                        union: u,
                    },
                );
            }
            acc
        };
        let whole = mk(&samples);
        let a = mk(&samples[..2]);
        let b = mk(&samples[2..3]);
        let c = mk(&samples[3..]);
        let ab_c = MetricAccumulator::merged(MetricAccumulator::merged(a.clone(), &b), &c);
        let a_bc = MetricAccumulator::merged(a, &MetricAccumulator::merged(b, &c));
        for acc in [&ab_c, &a_bc] {
            assert!((acc.giou().unwrap() - whole.giou().unwrap()).abs() < 1e-12);
            assert!((acc.ciou().unwrap() - whole.ciou().unwrap()).abs() < 1e-12);
        }
        let mut id = MetricAccumulator::merged(whole.clone(), &MetricAccumulator::new());
        assert_eq!(id.giou().unwrap(), whole.giou().unwrap());
        id.merge(&MetricAccumulator::new());
        assert_eq!(id, whole);
    }

    #[test]
    fn empty_accumulator_errors() {
        let acc = MetricAccumulator::new();
        assert!(acc.giou().is_err());
        assert!(acc.ciou().is_err());
        assert!(acc.giou_type(ReasoningType::Scene).is_none());
    }

    #[test]
    fn all_empty_dataset_ciou_is_one() {
        let mut acc = MetricAccumulator::new();
        let empty = BinaryMask::zeros(4, 4);
        acc.add(ReasoningType::Scene, iou(&empty, &empty).unwrap());
        assert_eq!(acc.ciou().unwrap(), 1.0);
        assert_eq!(acc.giou().unwrap(), 1.0);
    }

    #[test]
    fn mask_align_thresholds() {
        // reference: 100 pixels; pred covers 96 of them plus 4 outside
        // -> coverage 0.96, miscoverage 4/100 = 0.04
        let reference = block(20, 20, 0, 0, 10);
        let mut pred = block(20, 20, 0, 0, 10);
        for i in 0..4 {
            pred.set(0, i, 0); // drop 4 covered pixels -> 96
            pred.set(15, i, 1); // add 4 spill pixels -> area back to 100
        }
        let r = mask_alignment_check(&pred, &reference).unwrap();
        assert!((r.coverage - 0.96).abs() < 1e-12);
        assert!((r.miscoverage - 0.04).abs() < 1e-12);
        assert!(r.aligned);
    }

    #[test]
    fn mask_align_high_coverage_required() {
        // coverage 0.94 fails even with tiny miscoverage
        let reference = block(20, 20, 0, 0, 10);
        let mut pred = reference.clone();
        for i in 0..6 {
            pred.set(0, i, 0); // 94 covered, no spill
        }
        let r = mask_alignment_check(&pred, &reference).unwrap();
        assert!((r.coverage - 0.94).abs() < 1e-12);
        assert_eq!(r.miscoverage, 0.0);
        assert!(!r.aligned);
    }

    #[test]
    fn mask_align_boundary_inclusive() {
        // coverage exactly 19/20 = 0.95, miscoverage exactly 1/20 = 0.05
        let mut reference = BinaryMask::zeros(10, 10);
        for i in 0..20 {
            reference.set(i / 10, i % 10, 1);
        }
        let mut pred = BinaryMask::zeros(10, 10);
        for i in 0..19 {
            pred.set(i / 10, i % 10, 1); // 19 of the 20 reference pixels
        }
        pred.set(9, 9, 1); // 1 spill pixel -> |P| = 20
        let r = mask_alignment_check(&pred, &reference).unwrap();
        assert_eq!(r.coverage, 0.95);
        assert_eq!(r.miscoverage, 0.05);
        assert!(r.aligned);
    }

    #[test]
    fn mask_align_empty_reference_errors() {
        let pred = block(4, 4, 0, 0, 2);
        assert!(mask_alignment_check(&pred, &BinaryMask::zeros(4, 4)).is_err());
    }

    #[test]
    fn mask_align_empty_prediction_has_zero_miscoverage() {
        let reference = block(4, 4, 0, 0, 2);
        let r = mask_alignment_check(&BinaryMask::zeros(4, 4), &reference).unwrap();
        assert_eq!(r.coverage, 0.0);
        assert_eq!(r.miscoverage, 0.0);
        assert!(!r.aligned);
    }

    #[test]
    fn miscoverage_alternative_denominator() {
        // 4x4 image, reference 4 px, pred = 2 spill pixels only
        let reference = block(4, 4, 0, 0, 2);
        let pred = mask(4, 4, &[(3, 3), (3, 2)]);
        let prec = mask_alignment_check_with(&pred, &reference, MiscoverageDenom::Prediction)
            .unwrap();
        assert_eq!(prec.miscoverage, 1.0);
        let comp =
            mask_alignment_check_with(&pred, &reference, MiscoverageDenom::ImageComplement)
                .unwrap();
        assert!((comp.miscoverage - 2.0 / 12.0).abs() < 1e-12);
    }
}
