//! Split evaluation: stream samples through a frozen model, accumulate
//! per-type IoU, and return the accumulator for report formatting.
//!
//! Metrics are computed on the decoder's output grid; ground-truth masks
//! are nearest-resampled to that grid once at load time, matching the
//! target the losses train against.

use std::path::Path;

use crate::backbone::Vocabulary;
use crate::data::record::ReasoningSample;
use crate::error::Result;
use crate::metrics::{iou, MetricAccumulator, ReasoningType};
use crate::model::{build_instruction, Model};
use crate::parallel::par_map;
use crate::params::ParamStore;
use crate::raster::{BinaryMask, ImageBuf};

/// A record with its image and mask resident in memory, ready for the model.
pub struct EvalSample {
    pub id: String,
    pub reasoning_type: ReasoningType,
    pub instruction: String,
    pub answer: String,
    pub image: ImageBuf,
    pub target: BinaryMask,
}

/// Loads records from disk and resamples targets to `target_size`.
pub fn load_samples(
    root: &Path,
    records: &[ReasoningSample],
    target_size: (usize, usize),
) -> Result<Vec<EvalSample>> {
    let loaded = par_map(records, |rec| -> Result<EvalSample> {
        let (image, mask) = rec.load(root)?;
        Ok(EvalSample {
            id: rec.id.clone(),
            reasoning_type: rec.reasoning_type,
            instruction: build_instruction(&rec.question, &rec.cot),
            answer: rec.answer.clone(),
            image,
            target: mask.resized_nearest(target_size.0, target_size.1),
        })
    });
    loaded.into_iter().collect()
}

/// Evaluates an arbitrary predictor; the model path and the test oracles
/// share this accumulation logic.
pub fn evaluate_with<F>(samples: &[EvalSample], predict: F) -> Result<MetricAccumulator>
where
    F: Fn(&EvalSample) -> Result<BinaryMask> + Sync + Send,
{
    let scored = par_map(samples, |s| -> Result<_> {
        let pred = predict(s)?;
        Ok((s.reasoning_type, iou(&pred, &s.target)?))
    });
    let mut acc = MetricAccumulator::new();
    for r in scored {
        let (rtype, sample) = r?;
        acc.add(rtype, sample);
    }
    Ok(acc)
}

/// Full model evaluation over a split.
pub fn evaluate_samples(
    model: &Model,
    store: &ParamStore,
    vocab: &Vocabulary,
    samples: &[EvalSample],
) -> Result<MetricAccumulator> {
    evaluate_with(samples, |s| {
        model.predict_mask(store, &s.image, &s.instruction, vocab)
    })
}
