//! Full model wiring: dual-path encoder, mask-token reasoning backbone and
//! hierarchical decoder, with the composite training objective
//! total = w_txt * CE + w_bce * BCE + w_dice * Dice.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::backbone::{Backbone, BackboneConfig, SequenceLayout, TextSupervision, Vocabulary};
use crate::decoder::{DecoderConfig, HierDecoder};
use crate::encoder::{Encoder, EncoderConfig, PYRAMID_LEVELS};
use crate::error::{Error, Result};
use crate::graph::{Graph, Value};
use crate::losses::LossWeights;
use crate::params::ParamStore;
use crate::raster::{BinaryMask, ImageBuf};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub backbone: BackboneConfig,
    pub decoder: DecoderConfig,
    pub supervision: TextSupervision,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.backbone.validate()?;
        self.decoder.validate(PYRAMID_LEVELS)?;
        if self.backbone.embed_dim != self.decoder.embed_dim {
            return Err(Error::config(format!(
                "mask-embedding width mismatch: backbone emits {}, decoder expects {}",
                self.backbone.embed_dim, self.decoder.embed_dim
            )));
        }
        Ok(())
    }
}

pub struct Model {
    pub encoder: Encoder,
    pub backbone: Backbone,
    pub decoder: HierDecoder,
    cfg: ModelConfig,
}

pub struct EvalForward {
    pub fused: Value,
    pub per_level: Vec<Value>,
    pub layout: SequenceLayout,
}

pub struct TrainForward {
    pub total: Value,
    /// Absent when the sample yields no text targets.
    pub txt: Option<Value>,
    pub bce: Value,
    pub dice: Value,
    pub fused: Value,
    pub layout: SequenceLayout,
}

/// Instruction text fed to the backbone: the question followed by the CoT
/// trace, when one is present.
pub fn build_instruction(question: &str, cot: &[String]) -> String {
    if cot.is_empty() {
        question.to_string()
    } else {
        format!("{} {}", question, cot.join(" "))
    }
}

impl Model {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        cfg: &ModelConfig,
        vocab_size: usize,
    ) -> Result<Self> {
        cfg.validate()?;
        let encoder = Encoder::new(store, rng, &cfg.encoder)?;
        let backbone = Backbone::new(
            store,
            rng,
            &cfg.backbone,
            vocab_size,
            cfg.encoder.out_channels(),
        )?;
        let decoder = HierDecoder::new(store, rng, &cfg.decoder, &cfg.encoder.fine_channels)?;
        Ok(Model {
            encoder,
            backbone,
            decoder,
            cfg: cfg.clone(),
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn forward_eval(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        image: &ImageBuf,
        instruction: &str,
        vocab: &Vocabulary,
    ) -> Result<EvalForward> {
        let enc = self.encoder.encode(g, store, image)?;
        let (seq, layout) = self
            .backbone
            .assemble_tokens(g, store, enc.f_out, instruction, vocab)?;
        let hidden = self.backbone.forward_reasoning(g, store, seq);
        let e = self
            .backbone
            .extract_mask_embedding(g, store, hidden, &layout);
        let dec = self.decoder.decode(g, store, &enc.pyramid, e)?;
        Ok(EvalForward {
            fused: dec.fused,
            per_level: dec.per_level,
            layout,
        })
    }

    pub fn predict_mask(
        &self,
        store: &ParamStore,
        image: &ImageBuf,
        instruction: &str,
        vocab: &Vocabulary,
    ) -> Result<BinaryMask> {
        let mut g = Graph::new();
        let out = self.forward_eval(&mut g, store, image, instruction, vocab)?;
        self.decoder.binarize(&g, out.fused)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn forward_train(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        image: &ImageBuf,
        instruction: &str,
        answer: &str,
        target: &BinaryMask,
        vocab: &Vocabulary,
        weights: &LossWeights,
    ) -> Result<TrainForward> {
        weights.validate()?;
        let out_size = self.cfg.decoder.output_size;
        if (target.height, target.width) != out_size {
            return Err(Error::input(format!(
                "target mask is {}x{} but the decoder emits {}x{}",
                target.height, target.width, out_size.0, out_size.1
            )));
        }
        let enc = self.encoder.encode(g, store, image)?;
        let (seq, layout) = self.backbone.assemble_training(
            g,
            store,
            enc.f_out,
            instruction,
            answer,
            vocab,
            self.cfg.supervision,
        )?;
        let hidden = self.backbone.forward_reasoning(g, store, seq);
        let e = self
            .backbone
            .extract_mask_embedding(g, store, hidden, &layout);
        let dec = self.decoder.decode(g, store, &enc.pyramid, e)?;

        let target_f = target.to_f32();
        let bce = g.bce_with_logits(dec.fused, target_f.clone());
        let probs = g.sigmoid(dec.fused);
        let dice = g.dice_loss(probs, target_f, weights.dice_eps);

        let mut terms = vec![g.scale(bce, weights.ref_bce), g.scale(dice, weights.dice)];
        let txt = if layout.text_targets.is_empty() {
            None
        } else {
            let logits = self.backbone.text_logits(g, store, hidden);
            let txt = g.cross_entropy_rows(logits, layout.text_targets.clone());
            terms.push(g.scale(txt, weights.txt));
            Some(txt)
        };
        let total = g.add_n(&terms);
        Ok(TrainForward {
            total,
            txt,
            bce,
            dice,
            fused: dec.fused,
            layout,
        })
    }
}
