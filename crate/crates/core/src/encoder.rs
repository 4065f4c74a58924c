//! Dual-path encoder: a low-resolution global (semantic) path and a
//! high-resolution fine (structural) path, joined by gated residual fusion.
//!
//! The global path patchifies a downsampled view of the image and refines
//! it through three convolutional stages; the fine path is a strided stack
//! emitting a three-level pyramid at strides 4/8/16 of its own input. At
//! each active stage the fine features are aligned (bilinear resample, then
//! 1x1 channel projection) and injected through a sigmoid gate:
//!
//!   F_k = B_k(F_{k-1}) + G_k(B_k(F_{k-1}), A_k(F_s)) ⊙ A_k(F_s)
//!
//! A final output-level fusion adds a projected view of the coarsest
//! pyramid level. The number of visual tokens is fixed by the global input
//! size and patch size alone, so raising the fine resolution never raises
//! the token budget.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, Value};
use crate::nn::Conv2dLayer;
use crate::params::ParamStore;
use crate::raster::ImageBuf;
use crate::tensor::Tensor;

pub const PYRAMID_LEVELS: usize = 3;
pub const PYRAMID_STRIDES: [usize; 3] = [4, 8, 16];
const FUSION_STAGES: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionDirection {
    /// Structural features gated into the semantic latents (the default).
    FineIntoGlobal,
    /// No latent fusion; paths meet only in the final sum.
    Sum,
    /// Semantic latents gated into the pyramid levels instead.
    GlobalIntoFine,
}

impl FusionDirection {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "fine_into_global" => Ok(FusionDirection::FineIntoGlobal),
            "sum" => Ok(FusionDirection::Sum),
            "global_into_fine" => Ok(FusionDirection::GlobalIntoFine),
            other => Err(Error::config(format!(
                "fusion_direction: expected fine_into_global|sum|global_into_fine, got {other:?}"
            ))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            FusionDirection::FineIntoGlobal => "fine_into_global",
            FusionDirection::Sum => "sum",
            FusionDirection::GlobalIntoFine => "global_into_fine",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub global_input_size: usize,
    pub fine_input_size: usize,
    pub patch_size: usize,
    /// Channel counts: entry 0 after patchify, entries 1..=3 after each
    /// stage transform.
    pub global_channels: Vec<usize>,
    /// Channel counts of the three pyramid levels, fine to coarse.
    pub fine_channels: Vec<usize>,
    /// Subset of {1,2,3,4}: 1..3 are latent fusion stages, 4 the final sum.
    pub active_fusion_stages: Vec<usize>,
    pub fusion_direction: FusionDirection,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            global_input_size: 64,
            fine_input_size: 256,
            patch_size: 8,
            global_channels: vec![32, 32, 32, 32],
            fine_channels: vec![16, 24, 32],
            active_fusion_stages: vec![1, 2, 3, 4],
            fusion_direction: FusionDirection::FineIntoGlobal,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.global_input_size == 0 || self.fine_input_size == 0 {
            return Err(Error::config("encoder input sizes must be positive"));
        }
        if self.patch_size == 0 || self.global_input_size % self.patch_size != 0 {
            return Err(Error::config(format!(
                "patch_size {} must divide global_input_size {}",
                self.patch_size, self.global_input_size
            )));
        }
        if self.fine_input_size < self.global_input_size {
            return Err(Error::config(
                "fine_input_size must be at least global_input_size",
            ));
        }
        if self.fine_input_size % 16 != 0 {
            return Err(Error::config(
                "fine_input_size must be divisible by 16 for integer pyramid halving",
            ));
        }
        if self.global_channels.len() != FUSION_STAGES + 1 {
            return Err(Error::config("global_channels needs 4 entries"));
        }
        if self.fine_channels.len() != PYRAMID_LEVELS {
            return Err(Error::config("fine_channels needs 3 entries"));
        }
        if self.global_channels.iter().chain(&self.fine_channels).any(|&c| c == 0) {
            return Err(Error::config("channel counts must be positive"));
        }
        let mut seen = [false; 5];
        for &s in &self.active_fusion_stages {
            if !(1..=4).contains(&s) {
                return Err(Error::config(format!(
                    "active_fusion_stages entries must be in 1..=4, got {s}"
                )));
            }
            if seen[s] {
                return Err(Error::config(format!("duplicate fusion stage {s}")));
            }
            seen[s] = true;
        }
        Ok(())
    }

    pub fn token_grid(&self) -> usize {
        self.global_input_size / self.patch_size
    }

    /// Visual tokens fed to the backbone; depends only on the global path.
    pub fn token_count(&self) -> usize {
        self.token_grid() * self.token_grid()
    }

    pub fn out_channels(&self) -> usize {
        self.global_channels[FUSION_STAGES]
    }

    pub fn pyramid_sizes(&self) -> [usize; 3] {
        [
            self.fine_input_size / PYRAMID_STRIDES[0],
            self.fine_input_size / PYRAMID_STRIDES[1],
            self.fine_input_size / PYRAMID_STRIDES[2],
        ]
    }

    fn stage_active(&self, stage: usize) -> bool {
        self.active_fusion_stages.contains(&stage)
    }
}

struct ReverseStage {
    transform: Conv2dLayer,
    align: Conv2dLayer,
    gate: Conv2dLayer,
}

pub struct Encoder {
    cfg: EncoderConfig,
    patch: Conv2dLayer,
    stages: Vec<Conv2dLayer>,
    fine: Vec<Conv2dLayer>,
    aligns: Vec<Conv2dLayer>,
    gates: Vec<Conv2dLayer>,
    w_f: Conv2dLayer,
    w_s: Conv2dLayer,
    align_out: Conv2dLayer,
    reverse: Vec<ReverseStage>,
}

pub struct EncodeOut {
    /// Fused semantic grid (out_channels × tokens × tokens).
    pub f_out: Value,
    /// Structural pyramid, fine to coarse, as consumed by the decoder.
    pub pyramid: Vec<Value>,
}

impl Encoder {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        cfg: &EncoderConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        let gc = &cfg.global_channels;
        let fc = &cfg.fine_channels;
        let patch = Conv2dLayer::new(
            store,
            rng,
            "encoder.global.patch",
            3,
            gc[0],
            cfg.patch_size,
            cfg.patch_size,
            0,
        );
        let stages = (1..=FUSION_STAGES)
            .map(|k| {
                Conv2dLayer::new(
                    store,
                    rng,
                    &format!("encoder.global.stage{k}"),
                    gc[k - 1],
                    gc[k],
                    3,
                    1,
                    1,
                )
            })
            .collect();
        // strided stack: stride 4 then two halvings -> strides 4/8/16
        let fine = vec![
            Conv2dLayer::new(store, rng, "encoder.fine.level1", 3, fc[0], 4, 4, 0),
            Conv2dLayer::new(store, rng, "encoder.fine.level2", fc[0], fc[1], 2, 2, 0),
            Conv2dLayer::new(store, rng, "encoder.fine.level3", fc[1], fc[2], 2, 2, 0),
        ];
        let aligns = (1..=FUSION_STAGES)
            .map(|k| {
                Conv2dLayer::new(
                    store,
                    rng,
                    &format!("encoder.align{k}"),
                    fc[k - 1],
                    gc[k],
                    1,
                    1,
                    0,
                )
            })
            .collect();
        let gates = (1..=FUSION_STAGES)
            .map(|k| {
                Conv2dLayer::new(
                    store,
                    rng,
                    &format!("encoder.gate{k}"),
                    2 * gc[k],
                    gc[k],
                    1,
                    1,
                    0,
                )
            })
            .collect();
        let out_c = cfg.out_channels();
        let w_f = Conv2dLayer::new(store, rng, "encoder.final.w_f", out_c, out_c, 1, 1, 0);
        let w_s = Conv2dLayer::new(store, rng, "encoder.final.w_s", out_c, out_c, 1, 1, 0);
        let align_out = Conv2dLayer::new(
            store,
            rng,
            "encoder.final.align_out",
            fc[PYRAMID_LEVELS - 1],
            out_c,
            1,
            1,
            0,
        );
        let reverse = if cfg.fusion_direction == FusionDirection::GlobalIntoFine {
            (1..=FUSION_STAGES)
                .map(|k| ReverseStage {
                    transform: Conv2dLayer::new(
                        store,
                        rng,
                        &format!("encoder.rev.stage{k}"),
                        fc[k - 1],
                        fc[k - 1],
                        3,
                        1,
                        1,
                    ),
                    align: Conv2dLayer::new(
                        store,
                        rng,
                        &format!("encoder.rev.align{k}"),
                        gc[k],
                        fc[k - 1],
                        1,
                        1,
                        0,
                    ),
                    gate: Conv2dLayer::new(
                        store,
                        rng,
                        &format!("encoder.rev.gate{k}"),
                        2 * fc[k - 1],
                        fc[k - 1],
                        1,
                        1,
                        0,
                    ),
                })
                .collect()
        } else {
            Vec::new()
        };
        Ok(Encoder {
            cfg: cfg.clone(),
            patch,
            stages,
            fine,
            aligns,
            gates,
            w_f,
            w_s,
            align_out,
            reverse,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.cfg
    }

    /// Resize the image onto both paths and run the path trunks.
    pub fn extract_dual(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        image: &ImageBuf,
    ) -> Result<(Value, Vec<Value>)> {
        let s = self.cfg.global_input_size;
        let global_in = image.resized(s, s);
        let f = self.cfg.fine_input_size;
        let fine_in = image.resized(f, f);

        let gi = g.constant(Tensor::new(vec![3, s, s], global_in.data().to_vec()));
        let f0 = self.patch.forward(g, store, gi);
        let f0 = g.tanh(f0);

        let fi = g.constant(Tensor::new(vec![3, f, f], fine_in.data().to_vec()));
        let mut pyramid = Vec::with_capacity(PYRAMID_LEVELS);
        let mut cur = fi;
        for level in &self.fine {
            cur = level.forward(g, store, cur);
            cur = g.tanh(cur);
            pyramid.push(cur);
        }
        Ok((f0, pyramid))
    }

    /// Stage transform B_k alone (used when a stage's fusion is inactive).
    pub fn stage_transform(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        f_prev: Value,
        k: usize,
    ) -> Value {
        let b = self.stages[k - 1].forward(g, store, f_prev);
        g.tanh(b)
    }

    /// A_k: resample pyramid level k to the semantic grid, then project its
    /// channels.
    pub fn align_stage(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        pyramid: &[Value],
        k: usize,
    ) -> Value {
        assert!((1..=FUSION_STAGES).contains(&k), "stage index {k} out of range");
        let t = self.cfg.token_grid();
        let resampled = g.bilinear_resize(pyramid[k - 1], t, t);
        self.aligns[k - 1].forward(g, store, resampled)
    }

    /// Gated residual fusion: B_k(F_prev) + G_k(B_k(F_prev), F̃) ⊙ F̃.
    pub fn fuse_stage(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        f_prev: Value,
        aligned: Value,
        k: usize,
    ) -> Value {
        let b = self.stage_transform(g, store, f_prev, k);
        assert_eq!(
            g.shape(b),
            g.shape(aligned),
            "aligned features must match the stage-{k} latent shape"
        );
        let cat = g.concat_channels(&[b, aligned]);
        let gate_logits = self.gates[k - 1].forward(g, store, cat);
        let gate = g.sigmoid(gate_logits);
        let scaled = g.mul(gate, aligned);
        g.add(b, scaled)
    }

    /// Sigmoid gate activations for stage k, for boundedness checks.
    pub fn stage_gate(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        f_prev: Value,
        aligned: Value,
        k: usize,
    ) -> Value {
        let b = self.stage_transform(g, store, f_prev, k);
        let cat = g.concat_channels(&[b, aligned]);
        let gate_logits = self.gates[k - 1].forward(g, store, cat);
        g.sigmoid(gate_logits)
    }

    /// F_out = W_f·F_f3 (+ W_s·A_o(F_s) when the structural term is on).
    pub fn final_fuse(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        f3: Value,
        pyramid: &[Value],
        include_structural: bool,
    ) -> Value {
        let projected = self.w_f.forward(g, store, f3);
        if !include_structural {
            return projected;
        }
        let t = self.cfg.token_grid();
        let coarse = g.bilinear_resize(pyramid[PYRAMID_LEVELS - 1], t, t);
        let aligned = self.align_out.forward(g, store, coarse);
        let structural = self.w_s.forward(g, store, aligned);
        g.add(projected, structural)
    }

    fn reverse_fuse(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        level: Value,
        global_latent: Value,
        k: usize,
    ) -> Value {
        let rev = &self.reverse[k - 1];
        let b = rev.transform.forward(g, store, level);
        let b = g.tanh(b);
        let shape = g.shape(level).to_vec();
        let resampled = g.bilinear_resize(global_latent, shape[1], shape[2]);
        let aligned = rev.align.forward(g, store, resampled);
        let cat = g.concat_channels(&[b, aligned]);
        let gate_logits = rev.gate.forward(g, store, cat);
        let gate = g.sigmoid(gate_logits);
        let scaled = g.mul(gate, aligned);
        g.add(b, scaled)
    }

    /// Full pipeline: dual extraction, active latent fusion stages, final
    /// fusion. Returns the fused grid and the pyramid the decoder reads.
    pub fn encode(&self, g: &mut Graph, store: &ParamStore, image: &ImageBuf) -> Result<EncodeOut> {
        let (f0, mut pyramid) = self.extract_dual(g, store, image)?;
        let mut f = f0;
        for k in 1..=FUSION_STAGES {
            match self.cfg.fusion_direction {
                FusionDirection::FineIntoGlobal => {
                    if self.cfg.stage_active(k) {
                        let aligned = self.align_stage(g, store, &pyramid, k);
                        f = self.fuse_stage(g, store, f, aligned, k);
                    } else {
                        f = self.stage_transform(g, store, f, k);
                    }
                }
                FusionDirection::Sum => {
                    f = self.stage_transform(g, store, f, k);
                }
                FusionDirection::GlobalIntoFine => {
                    f = self.stage_transform(g, store, f, k);
                    if self.cfg.stage_active(k) {
                        pyramid[k - 1] = self.reverse_fuse(g, store, pyramid[k - 1], f, k);
                    }
                }
            }
        }
        let f_out = self.final_fuse(g, store, f, &pyramid, self.cfg.stage_active(4));
        Ok(EncodeOut { f_out, pyramid })
    }
}
