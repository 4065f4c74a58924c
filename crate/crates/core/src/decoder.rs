//! Hierarchical mask decoder.
//!
//! Each consumed pyramid level is projected to the mask-embedding width and
//! scored as per-pixel dot products against the embedding. Decoding runs
//! coarse to fine: the coarsest level's logits are computed directly, every
//! finer level first has its features modulated by the level above,
//!
//!   F' = F ⊙ (σ(M_above) + 1),
//!
//! bounding the multiplier in (1, 2). The per-level logits are upsampled to
//! the output size and blended with learnable coefficients γ (initialized
//! 1/n, unconstrained). Binarization thresholds σ(M̂) at 0.5.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, Value};
use crate::nn::Conv2dLayer;
use crate::params::{ParamId, ParamStore};
use crate::raster::BinaryMask;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecoderConfig {
    /// Number of pyramid levels consumed, deepest first; 1..=3.
    pub depth: usize,
    /// Mask-embedding width shared by every projected level.
    pub embed_dim: usize,
    /// Spatial size of the fused mask (height, width).
    pub output_size: (usize, usize),
}

impl Default for DecoderConfig {
    fn default() -> Self {
        DecoderConfig {
            depth: 2,
            embed_dim: 32,
            output_size: (64, 64),
        }
    }
}

impl DecoderConfig {
    pub fn validate(&self, pyramid_levels: usize) -> Result<()> {
        if self.depth == 0 {
            return Err(Error::config("decoder depth must be at least 1"));
        }
        if self.depth > pyramid_levels {
            return Err(Error::config(format!(
                "decoder depth {} exceeds the {} pyramid levels",
                self.depth, pyramid_levels
            )));
        }
        if self.embed_dim == 0 {
            return Err(Error::config("decoder embed_dim must be positive"));
        }
        if self.output_size.0 == 0 || self.output_size.1 == 0 {
            return Err(Error::config("decoder output size must be positive"));
        }
        Ok(())
    }
}

pub struct DecodeOut {
    /// Fused logits M̂ (1 × H × W) at the configured output size.
    pub fused: Value,
    /// Raw per-level logits, finest consumed level first.
    pub per_level: Vec<Value>,
}

pub struct HierDecoder {
    cfg: DecoderConfig,
    /// 1x1 projections for the consumed levels, finest consumed first.
    projs: Vec<Conv2dLayer>,
    /// γ coefficients, index l-1 for level l (finest consumed = index 0).
    pub gamma: ParamId,
}

impl HierDecoder {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        cfg: &DecoderConfig,
        pyramid_channels: &[usize],
    ) -> Result<Self> {
        cfg.validate(pyramid_channels.len())?;
        let n = cfg.depth;
        let consumed = &pyramid_channels[pyramid_channels.len() - n..];
        let projs = consumed
            .iter()
            .enumerate()
            .map(|(i, &c)| {
                Conv2dLayer::new(
                    store,
                    rng,
                    &format!("decoder.proj{}", i + 1),
                    c,
                    cfg.embed_dim,
                    1,
                    1,
                    0,
                )
            })
            .collect();
        let gamma = store.register(
            "decoder.gamma",
            Tensor::full(&[n], 1.0 / n as f32),
        );
        Ok(HierDecoder {
            cfg: cfg.clone(),
            projs,
            gamma,
        })
    }

    pub fn config(&self) -> &DecoderConfig {
        &self.cfg
    }

    /// Per-pixel dot products ⟨e, F[:, i, j]⟩ on an already-projected map.
    pub fn compute_level_mask(&self, g: &mut Graph, features: Value, e: Value) -> Value {
        let fs = g.shape(features).to_vec();
        let es = g.shape(e).to_vec();
        assert_eq!(fs.len(), 3, "level features must be c×h×w");
        assert_eq!(
            es,
            vec![1, fs[0]],
            "embedding width {:?} must match feature channels {}",
            es,
            fs[0]
        );
        let (c, h, w) = (fs[0], fs[1], fs[2]);
        let flat = g.reshape(features, vec![c, h * w]);
        let scores = g.matmul(e, flat);
        g.reshape(scores, vec![1, h, w])
    }

    /// F ⊙ (σ(M_above) + 1) with M_above resampled to F's spatial size.
    pub fn modulate_features(&self, g: &mut Graph, features: Value, m_above: Value) -> Value {
        let fs = g.shape(features).to_vec();
        let resampled = g.bilinear_resize(m_above, fs[1], fs[2]);
        let gate = g.sigmoid(resampled);
        let gate = g.add_const(gate, 1.0);
        g.mul_broadcast_chan(features, gate)
    }

    /// Σ_l γ_l · upsample(M_l); masks ordered finest first, matching γ.
    pub fn fuse_level_masks(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        masks: &[Value],
        output_size: (usize, usize),
    ) -> Result<Value> {
        if masks.is_empty() {
            return Err(Error::input("no level masks to fuse"));
        }
        let gamma = g.param(store, self.gamma);
        let mut terms = Vec::with_capacity(masks.len());
        for (l, &m) in masks.iter().enumerate() {
            let up = g.bilinear_resize(m, output_size.0, output_size.1);
            terms.push(g.scale_by_elem(up, gamma, l));
        }
        Ok(g.add_n(&terms))
    }

    /// Full decode; `pyramid` is the encoder's fine-to-coarse level list.
    pub fn decode(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        pyramid: &[Value],
        e: Value,
    ) -> Result<DecodeOut> {
        let n = self.cfg.depth;
        if n > pyramid.len() {
            return Err(Error::config(format!(
                "decoder depth {} exceeds the {} pyramid levels",
                n,
                pyramid.len()
            )));
        }
        // consumed[0] is the finest consumed level (l=1), consumed[n-1]
        // the coarsest (l=n)
        let consumed = &pyramid[pyramid.len() - n..];

        let mut per_level: Vec<Option<Value>> = vec![None; n];
        let mut above: Option<Value> = None;
        for l in (0..n).rev() {
            let projected = self.projs[l].forward(g, store, consumed[l]);
            let features = match above {
                // coarsest level: no level above, no modulation
                None => projected,
                Some(m) => self.modulate_features(g, projected, m),
            };
            let mask = self.compute_level_mask(g, features, e);
            per_level[l] = Some(mask);
            above = Some(mask);
        }
        let per_level: Vec<Value> = per_level.into_iter().map(|m| m.unwrap()).collect();
        let fused = self.fuse_level_masks(g, store, &per_level, self.cfg.output_size)?;
        Ok(DecodeOut { fused, per_level })
    }

    /// σ(M̂) ≥ 0.5, i.e. logits ≥ 0.
    pub fn binarize(&self, g: &Graph, fused: Value) -> Result<BinaryMask> {
        let s = g.shape(fused).to_vec();
        assert_eq!(s[0], 1, "fused mask must have one channel");
        BinaryMask::from_logits(s[1], s[2], g.value(fused).data())
    }
}
