//! Causal reasoning backbone.
//!
//! Visual tokens (projected grid cells), instruction tokens, and one
//! learnable Mask Token form a sequence processed by a small pre-norm
//! causal transformer. The Mask Token sits last so causal attention lets it
//! read every visual and text position; its hidden state, passed through a
//! two-layer linear projection, is the mask embedding handed to the
//! decoder. During training the answer tokens are appended after the Mask
//! Token, which leaves its hidden state untouched (causality) while giving
//! the text head next-token targets.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, Value};
use crate::nn::{EmbeddingTable, LayerNormLayer, Linear};
use crate::params::{ParamId, ParamStore};

pub const PAD_ID: u32 = 0;
pub const ANS_ID: u32 = 1;
pub const MASK_PLACEHOLDER_ID: u32 = 2;
pub const UNK_ID: u32 = 3;
const SPECIALS: [&str; 4] = ["<pad>", "<ans>", "<mask>", "<unk>"];

/// Word-level vocabulary with dense ids; ids 0..=3 are reserved specials.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    token_to_id: BTreeMap<String, u32>,
    id_to_token: Vec<String>,
}

/// Lowercase whitespace tokenization with edge punctuation stripped.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|w| {
            w.trim_matches(|c: char| c.is_ascii_punctuation())
                .to_lowercase()
        })
        .filter(|w| !w.is_empty())
        .collect()
}

impl Vocabulary {
    /// Deterministic construction: sorted unique tokens after the specials.
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>) -> Self {
        let mut words = std::collections::BTreeSet::new();
        for t in texts {
            for w in tokenize(t) {
                words.insert(w);
            }
        }
        let mut id_to_token: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        id_to_token.extend(words.into_iter().filter(|w| !SPECIALS.contains(&w.as_str())));
        let token_to_id = id_to_token
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Vocabulary {
            token_to_id,
            id_to_token,
        }
    }

    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        self.id_to_token.is_empty()
    }

    pub fn id(&self, token: &str) -> u32 {
        *self.token_to_id.get(token).unwrap_or(&UNK_ID)
    }

    pub fn token(&self, id: u32) -> &str {
        self.id_to_token
            .get(id as usize)
            .map(String::as_str)
            .unwrap_or("<unk>")
    }

    /// Unknown words map to UNK rather than erroring.
    pub fn encode(&self, text: &str) -> Vec<u32> {
        tokenize(text).iter().map(|w| self.id(w)).collect()
    }

    pub fn to_json(&self) -> String {
        let map: BTreeMap<&str, u32> = self
            .token_to_id
            .iter()
            .map(|(k, &v)| (k.as_str(), v))
            .collect();
        serde_json::to_string_pretty(&map).expect("vocabulary serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let map: BTreeMap<String, u32> = serde_json::from_str(text)?;
        let mut id_to_token = vec![String::new(); map.len()];
        for (tok, id) in &map {
            let idx = *id as usize;
            if idx >= id_to_token.len() || !id_to_token[idx].is_empty() {
                return Err(Error::input("vocabulary ids must be dense and unique"));
            }
            id_to_token[idx] = tok.clone();
        }
        for (i, special) in SPECIALS.iter().enumerate() {
            if id_to_token.get(i).map(String::as_str) != Some(*special) {
                return Err(Error::input(format!(
                    "vocabulary must reserve id {i} for {special}"
                )));
            }
        }
        Ok(Vocabulary {
            token_to_id: map,
            id_to_token,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackboneConfig {
    pub d_model: usize,
    pub depth: usize,
    pub heads: usize,
    pub d_ff: usize,
    /// Output dimension of the mask-embedding projection; must equal the
    /// decoder's per-level feature channel count.
    pub embed_dim: usize,
    pub max_seq: usize,
    /// Learned absolute positional embeddings; disabled only for the
    /// permutation diagnostics.
    pub positional: bool,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        BackboneConfig {
            d_model: 128,
            depth: 2,
            heads: 4,
            d_ff: 256,
            embed_dim: 32,
            max_seq: 512,
            positional: true,
        }
    }
}

impl BackboneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.depth == 0 || self.heads == 0 {
            return Err(Error::config("backbone dims must be positive"));
        }
        if self.d_model % self.heads != 0 {
            return Err(Error::config(format!(
                "d_model {} must be divisible by heads {}",
                self.d_model, self.heads
            )));
        }
        if self.embed_dim == 0 || self.d_ff == 0 || self.max_seq == 0 {
            return Err(Error::config("backbone dims must be positive"));
        }
        Ok(())
    }
}

/// Positions of the spans inside an assembled sequence.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SequenceLayout {
    pub len: usize,
    pub visual_span: (usize, usize),
    pub text_span: (usize, usize),
    pub mask_token_index: usize,
    /// Token ids of the text region (instruction, and in training mode the
    /// trailing answer marker and answer words).
    pub text_ids: Vec<u32>,
    /// (position, target id) pairs for the text loss; empty outside
    /// training.
    pub text_targets: Vec<(usize, usize)>,
}

struct Block {
    ln1: LayerNormLayer,
    wq: Linear,
    wk: Linear,
    wv: Linear,
    wo: Linear,
    ln2: LayerNormLayer,
    ff1: Linear,
    ff2: Linear,
}

pub struct Backbone {
    cfg: BackboneConfig,
    vocab_size: usize,
    tok_emb: EmbeddingTable,
    pos_emb: EmbeddingTable,
    vis_proj: Linear,
    mask_token: ParamId,
    blocks: Vec<Block>,
    ln_f: LayerNormLayer,
    proj1: Linear,
    proj2: Linear,
    lm_head: Linear,
}

/// Which text positions the language loss supervises.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TextSupervision {
    AnswerOnly,
    CotAndAnswer,
}

impl Default for TextSupervision {
    fn default() -> Self {
        TextSupervision::AnswerOnly
    }
}

impl Backbone {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        cfg: &BackboneConfig,
        vocab_size: usize,
        visual_channels: usize,
    ) -> Result<Self> {
        cfg.validate()?;
        if vocab_size < SPECIALS.len() {
            return Err(Error::config("vocabulary too small"));
        }
        let d = cfg.d_model;
        let tok_emb = EmbeddingTable::new(store, rng, "backbone.tok_emb", vocab_size, d);
        let pos_emb = EmbeddingTable::new(store, rng, "backbone.pos_emb", cfg.max_seq, d);
        let vis_proj = Linear::new(store, rng, "backbone.vis_proj", visual_channels, d);
        let mask_token = store.register(
            "backbone.mask_token",
            crate::nn::uniform_tensor(rng, vec![1, d], 1.0 / (d as f32).sqrt()),
        );
        let blocks = (0..cfg.depth)
            .map(|l| {
                let p = format!("backbone.layer{l}");
                Block {
                    ln1: LayerNormLayer::new(store, &format!("{p}.ln1"), d),
                    wq: Linear::new(store, rng, &format!("{p}.wq"), d, d),
                    wk: Linear::with_bias(store, rng, &format!("{p}.wk"), d, d, false),
                    wv: Linear::new(store, rng, &format!("{p}.wv"), d, d),
                    wo: Linear::new(store, rng, &format!("{p}.wo"), d, d),
                    ln2: LayerNormLayer::new(store, &format!("{p}.ln2"), d),
                    ff1: Linear::new(store, rng, &format!("{p}.ff1"), d, cfg.d_ff),
                    ff2: Linear::new(store, rng, &format!("{p}.ff2"), cfg.d_ff, d),
                }
            })
            .collect();
        let ln_f = LayerNormLayer::new(store, "backbone.ln_f", d);
        let proj1 = Linear::new(store, rng, "backbone.mask_proj1", d, d);
        let proj2 = Linear::new(store, rng, "backbone.mask_proj2", d, cfg.embed_dim);
        let lm_head = Linear::new(store, rng, "backbone.lm_head", d, vocab_size);
        Ok(Backbone {
            cfg: cfg.clone(),
            vocab_size,
            tok_emb,
            pos_emb,
            vis_proj,
            mask_token,
            blocks,
            ln_f,
            proj1,
            proj2,
            lm_head,
        })
    }

    pub fn config(&self) -> &BackboneConfig {
        &self.cfg
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    /// [visual tokens] ++ [instruction tokens] ++ [Mask Token]; evaluation
    /// form, mask_token_index = len − 1.
    pub fn assemble_tokens(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        visual: Value,
        instruction: &str,
        vocab: &Vocabulary,
    ) -> Result<(Value, SequenceLayout)> {
        self.assemble(g, store, visual, instruction, vocab, None, TextSupervision::AnswerOnly)
    }

    /// Training form: answer marker and answer tokens appended after the
    /// Mask Token. Causality keeps the Mask Token hidden state identical to
    /// the evaluation form.
    pub fn assemble_training(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        visual: Value,
        instruction: &str,
        answer: &str,
        vocab: &Vocabulary,
        supervision: TextSupervision,
    ) -> Result<(Value, SequenceLayout)> {
        self.assemble(
            g,
            store,
            visual,
            instruction,
            vocab,
            Some(answer),
            supervision,
        )
    }

    #[allow(clippy::too_many_arguments)]
    fn assemble(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        visual: Value,
        instruction: &str,
        vocab: &Vocabulary,
        answer: Option<&str>,
        supervision: TextSupervision,
    ) -> Result<(Value, SequenceLayout)> {
        let vshape = g.shape(visual).to_vec();
        assert_eq!(vshape.len(), 3, "visual input must be c×h×w");
        let (c, hw) = (vshape[0], vshape[1] * vshape[2]);
        let instr_ids = vocab.encode(instruction);
        if instr_ids.is_empty() {
            return Err(Error::input("instruction is empty after tokenization"));
        }

        let flat = g.reshape(visual, vec![c, hw]);
        let tokens_cf = g.transpose(flat);
        let vis_tokens = self.vis_proj.forward(g, store, tokens_cf);

        let mut parts = vec![vis_tokens];
        let text_ids: Vec<u32>;
        let mut text_targets: Vec<(usize, usize)> = Vec::new();
        let text_start = hw;
        let mask_index = hw + instr_ids.len();

        match answer {
            None => {
                let emb = self
                    .tok_emb
                    .forward(g, store, &ids_usize(&instr_ids));
                parts.push(emb);
                let mtok = g.param(store, self.mask_token);
                parts.push(mtok);
                text_ids = instr_ids.clone();
            }
            Some(ans) => {
                let mut answer_ids = vocab.encode(ans);
                if answer_ids.is_empty() {
                    answer_ids = vec![UNK_ID];
                }
                let emb = self.tok_emb.forward(g, store, &ids_usize(&instr_ids));
                parts.push(emb);
                let mtok = g.param(store, self.mask_token);
                parts.push(mtok);
                let mut tail = vec![ANS_ID];
                tail.extend_from_slice(&answer_ids);
                let tail_emb = self.tok_emb.forward(g, store, &ids_usize(&tail));
                parts.push(tail_emb);

                // position p predicts the token at p+1; the answer marker
                // predicts the first answer word
                for (i, &tok) in answer_ids.iter().enumerate() {
                    text_targets.push((mask_index + 1 + i, tok as usize));
                }
                if supervision == TextSupervision::CotAndAnswer {
                    for p in text_start..text_start + instr_ids.len() - 1 {
                        let next = instr_ids[p - text_start + 1];
                        text_targets.push((p, next as usize));
                    }
                }
                let mut all_text = instr_ids.clone();
                all_text.extend_from_slice(&tail);
                text_ids = all_text;
            }
        }

        let seq = g.concat_rows(&parts);
        let len = g.shape(seq)[0];
        if len > self.cfg.max_seq {
            return Err(Error::input(format!(
                "sequence length {len} exceeds max_seq {}",
                self.cfg.max_seq
            )));
        }
        let seq = if self.cfg.positional {
            let ids: Vec<usize> = (0..len).collect();
            let pos = self.pos_emb.forward(g, store, &ids);
            g.add(seq, pos)
        } else {
            seq
        };
        let layout = SequenceLayout {
            len,
            visual_span: (0, hw),
            text_span: (text_start, text_start + text_ids.len()),
            mask_token_index: mask_index,
            text_ids,
            text_targets,
        };
        Ok((seq, layout))
    }

    /// Pre-norm causal transformer stack.
    pub fn forward_reasoning(&self, g: &mut Graph, store: &ParamStore, seq: Value) -> Value {
        let d = self.cfg.d_model;
        let heads = self.cfg.heads;
        let dh = d / heads;
        let scale = 1.0 / (dh as f32).sqrt();
        let mut x = seq;
        for block in &self.blocks {
            let normed = block.ln1.forward(g, store, x);
            let q = block.wq.forward(g, store, normed);
            let k = block.wk.forward(g, store, normed);
            let v = block.wv.forward(g, store, normed);
            let mut head_outs = Vec::with_capacity(heads);
            for h in 0..heads {
                let (a, b) = (h * dh, (h + 1) * dh);
                let qh = g.slice_cols(q, a, b);
                let kh = g.slice_cols(k, a, b);
                let vh = g.slice_cols(v, a, b);
                let scores = g.matmul_bt(qh, kh);
                let scores = g.scale(scores, scale);
                let probs = g.causal_softmax(scores);
                head_outs.push(g.matmul(probs, vh));
            }
            let ctx = g.concat_cols(&head_outs);
            let attn = block.wo.forward(g, store, ctx);
            x = g.add(x, attn);
            let normed = block.ln2.forward(g, store, x);
            let h1 = block.ff1.forward(g, store, normed);
            let h1 = g.gelu(h1);
            let h2 = block.ff2.forward(g, store, h1);
            x = g.add(x, h2);
        }
        self.ln_f.forward(g, store, x)
    }

    /// Two-layer linear projection of the Mask Token hidden state.
    pub fn extract_mask_embedding(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        hidden: Value,
        layout: &SequenceLayout,
    ) -> Value {
        let rows = g.shape(hidden)[0];
        assert!(
            layout.mask_token_index < rows,
            "mask token index {} outside sequence of {} positions",
            layout.mask_token_index,
            rows
        );
        let h = g.extract_row(hidden, layout.mask_token_index);
        let h = self.proj1.forward(g, store, h);
        self.proj2.forward(g, store, h)
    }

    /// Vocabulary logits at every position.
    pub fn text_logits(&self, g: &mut Graph, store: &ParamStore, hidden: Value) -> Value {
        self.lm_head.forward(g, store, hidden)
    }
}

fn ids_usize(ids: &[u32]) -> Vec<usize> {
    ids.iter().map(|&i| i as usize).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::assert_gradients_match;
    use crate::tensor::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_cfg() -> BackboneConfig {
        BackboneConfig {
            d_model: 16,
            depth: 2,
            heads: 2,
            d_ff: 24,
            embed_dim: 8,
            max_seq: 128,
            positional: true,
        }
    }

    fn vocab() -> Vocabulary {
        Vocabulary::build(["segment the red circle left of the square", "a blue one"])
    }

    fn build(cfg: &BackboneConfig, vocab_size: usize, seed: u64) -> (ParamStore, Backbone) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bb = Backbone::new(&mut store, &mut rng, cfg, vocab_size, 4).unwrap();
        (store, bb)
    }

    fn visual_grid(g: &mut Graph, seed: u64) -> Value {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<f32> = (0..4 * 2 * 2).map(|_| rng.gen_range(-1.0..1.0)).collect();
        g.constant(Tensor::new(vec![4, 2, 2], data))
    }

    #[test]
    fn vocabulary_is_deterministic_and_round_trips() {
        let v1 = vocab();
        let v2 = vocab();
        assert_eq!(v1, v2);
        assert_eq!(v1.id("<pad>"), PAD_ID);
        assert_eq!(v1.id("<ans>"), ANS_ID);
        assert_eq!(v1.id("<mask>"), MASK_PLACEHOLDER_ID);
        assert_eq!(v1.id("never-seen-word"), UNK_ID);
        let json = v1.to_json();
        let back = Vocabulary::from_json(&json).unwrap();
        assert_eq!(back, v1);
    }

    #[test]
    fn tokenizer_strips_edge_punctuation() {
        assert_eq!(tokenize("Segment the RED circle."), ["segment", "the", "red", "circle"]);
    }

    #[test]
    fn assemble_length_and_mask_position() {
        let v = vocab();
        let (store, bb) = build(&small_cfg(), v.len(), 1);
        let mut g = Graph::new();
        let vis = visual_grid(&mut g, 2);
        // 4 visual tokens + 5 instruction words + mask
        let (seq, layout) = bb
            .assemble_tokens(&mut g, &store, vis, "segment the red circle one", &v)
            .unwrap();
        assert_eq!(layout.len, 4 + 5 + 1);
        assert_eq!(layout.mask_token_index, layout.len - 1);
        assert_eq!(layout.visual_span, (0, 4));
        assert_eq!(layout.text_span, (4, 9));
        assert_eq!(g.shape(seq), &[10, 16]);
    }

    #[test]
    fn assemble_rejects_empty_instruction() {
        let v = vocab();
        let (store, bb) = build(&small_cfg(), v.len(), 3);
        let mut g = Graph::new();
        let vis = visual_grid(&mut g, 4);
        assert!(bb.assemble_tokens(&mut g, &store, vis, "  ... ", &v).is_err());
    }

    #[test]
    fn assemble_is_deterministic() {
        let v = vocab();
        let (store, bb) = build(&small_cfg(), v.len(), 5);
        let mut ga = Graph::new();
        let visa = visual_grid(&mut ga, 6);
        let (sa, la) = bb.assemble_tokens(&mut ga, &store, visa, "the red circle", &v).unwrap();
        let mut gb = Graph::new();
        let visb = visual_grid(&mut gb, 6);
        let (sb, lb) = bb.assemble_tokens(&mut gb, &store, visb, "the red circle", &v).unwrap();
        assert_eq!(ga.value(sa).data(), gb.value(sb).data());
        assert_eq!(la, lb);
    }

    #[test]
    fn hidden_length_matches_input_length() {
        let v = vocab();
        let (store, bb) = build(&small_cfg(), v.len(), 7);
        for words in [1usize, 5, 40] {
            let text = vec!["red"; words].join(" ");
            let mut g = Graph::new();
            let vis = visual_grid(&mut g, 8);
            let (seq, layout) = bb.assemble_tokens(&mut g, &store, vis, &text, &v).unwrap();
            let hidden = bb.forward_reasoning(&mut g, &store, seq);
            assert_eq!(g.shape(hidden), &[layout.len, 16]);
        }
    }

    #[test]
    fn causality_later_positions_cannot_leak_back() {
        let v = vocab();
        let (store, bb) = build(&small_cfg(), v.len(), 9);
        // same prefix (instruction + mask token), different answer suffix
        let mut ga = Graph::new();
        let visa = visual_grid(&mut ga, 10);
        let (sa, la) = bb
            .assemble_training(&mut ga, &store, visa, "the red circle", "red circle", &v,
                TextSupervision::AnswerOnly)
            .unwrap();
        let ha = bb.forward_reasoning(&mut ga, &store, sa);

        let mut gb = Graph::new();
        let visb = visual_grid(&mut gb, 10);
        let (sb, lb) = bb
            .assemble_training(&mut gb, &store, visb, "the red circle", "blue square one", &v,
                TextSupervision::AnswerOnly)
            .unwrap();
        let hb = bb.forward_reasoning(&mut gb, &store, sb);

        assert_eq!(la.mask_token_index, lb.mask_token_index);
        let d = 16;
        let idx = la.mask_token_index;
        let row_a = &ga.value(ha).data()[idx * d..(idx + 1) * d];
        let row_b = &gb.value(hb).data()[idx * d..(idx + 1) * d];
        assert_eq!(row_a, row_b, "mask token state must ignore the suffix");
    }

    #[test]
    fn mask_token_state_depends_on_text_and_visual() {
        let v = vocab();
        let (store, bb) = build(&small_cfg(), v.len(), 11);
        let d = 16;
        let embed = |g: &mut Graph, vis_seed: u64, text: &str| {
            let vis = visual_grid(g, vis_seed);
            let (seq, layout) = bb.assemble_tokens(g, &store, vis, text, &v).unwrap();
            let hidden = bb.forward_reasoning(g, &store, seq);
            let idx = layout.mask_token_index;
            g.value(hidden).data()[idx * d..(idx + 1) * d].to_vec()
        };
        let mut g1 = Graph::new();
        let base = embed(&mut g1, 12, "the red circle");
        let mut g2 = Graph::new();
        let text_changed = embed(&mut g2, 12, "the blue square");
        let mut g3 = Graph::new();
        let vis_changed = embed(&mut g3, 13, "the red circle");
        assert_ne!(base, text_changed);
        assert_ne!(base, vis_changed);
    }

    #[test]
    fn attention_rows_sum_to_one() {
        // direct check on the softmax op as used by the stack
        let mut g = Graph::new();
        let data: Vec<f32> = (0..49).map(|i| ((i * 13 % 7) as f32) * 0.3 - 1.0).collect();
        let scores = g.constant(Tensor::new(vec![7, 7], data));
        let probs = g.causal_softmax(scores);
        for r in 0..7 {
            let sum: f32 = g.value(probs).data()[r * 7..(r + 1) * 7].iter().sum();
            assert!((sum - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn permuting_visual_tokens_matters_only_with_positions() {
        let v = vocab();
        for positional in [true, false] {
            let cfg = BackboneConfig {
                positional,
                depth: 1,
                ..small_cfg()
            };
            let (store, bb) = build(&cfg, v.len(), 15);
            let d = 16;
            let run = |perm: bool| {
                let mut g = Graph::new();
                let mut rng = ChaCha8Rng::seed_from_u64(16);
                let mut data: Vec<f32> =
                    (0..4 * 2 * 2).map(|_| rng.gen_range(-1.0..1.0)).collect();
                if perm {
                    // swap the first two spatial cells in every channel
                    for c in 0..4 {
                        data.swap(c * 4, c * 4 + 1);
                    }
                }
                let vis = g.constant(Tensor::new(vec![4, 2, 2], data));
                let (seq, layout) = bb.assemble_tokens(&mut g, &store, vis, "red circle", &v).unwrap();
                let hidden = bb.forward_reasoning(&mut g, &store, seq);
                let idx = layout.mask_token_index;
                g.value(hidden).data()[idx * d..(idx + 1) * d].to_vec()
            };
            let base = run(false);
            let permuted = run(true);
            if positional {
                assert_ne!(base, permuted, "positional model must see the permutation");
            } else {
                for (a, b) in base.iter().zip(&permuted) {
                    assert!(
                        (a - b).abs() < 1e-5,
                        "depth-1 positionless mask state should be permutation-invariant"
                    );
                }
            }
        }
    }

    #[test]
    fn mask_embedding_identity_projection() {
        let cfg = BackboneConfig {
            embed_dim: 16, // = d_model so identity is expressible
            ..small_cfg()
        };
        let v = vocab();
        let (mut store, bb) = build(&cfg, v.len(), 17);
        let d = 16;
        let mut eye = vec![0.0f32; d * d];
        for i in 0..d {
            eye[i * d + i] = 1.0;
        }
        for name in ["backbone.mask_proj1.w", "backbone.mask_proj2.w"] {
            store.set(store.lookup(name).unwrap(), Tensor::new(vec![d, d], eye.clone())).unwrap();
        }
        for name in ["backbone.mask_proj1.b", "backbone.mask_proj2.b"] {
            store.set(store.lookup(name).unwrap(), Tensor::zeros(&[d])).unwrap();
        }
        let mut g = Graph::new();
        let vis = visual_grid(&mut g, 18);
        let (seq, layout) = bb.assemble_tokens(&mut g, &store, vis, "red circle", &v).unwrap();
        let hidden = bb.forward_reasoning(&mut g, &store, seq);
        let e = bb.extract_mask_embedding(&mut g, &store, hidden, &layout);
        let idx = layout.mask_token_index;
        let expected = &g.value(hidden).data()[idx * d..(idx + 1) * d].to_vec();
        assert_eq!(g.value(e).data(), &expected[..]);
        assert_eq!(g.shape(e), &[1, d]);
    }

    #[test]
    fn text_logit_shapes_and_uniform_ce() {
        let v = vocab();
        let (mut store, bb) = build(&small_cfg(), v.len(), 19);
        // zero the head -> uniform distribution -> CE = ln(vocab)
        let w = store.lookup("backbone.lm_head.w").unwrap();
        let shape = store.get(w).shape().to_vec();
        store.set(w, Tensor::zeros(&shape)).unwrap();
        let mut g = Graph::new();
        let vis = visual_grid(&mut g, 20);
        let (seq, layout) = bb.assemble_tokens(&mut g, &store, vis, "red circle", &v).unwrap();
        let hidden = bb.forward_reasoning(&mut g, &store, seq);
        let logits = bb.text_logits(&mut g, &store, hidden);
        assert_eq!(g.shape(logits), &[layout.len, v.len()]);
        let ce = g.cross_entropy_rows(logits, vec![(0, 2), (3, 1)]);
        assert!((g.value(ce).item() - (v.len() as f32).ln()).abs() < 1e-5);
    }

    #[test]
    fn backbone_gradients_match_finite_differences() {
        let cfg = BackboneConfig {
            d_model: 8,
            depth: 1,
            heads: 2,
            d_ff: 12,
            embed_dim: 4,
            max_seq: 64,
            positional: true,
        };
        let v = vocab();
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let bb = Backbone::new(&mut store, &mut rng, &cfg, v.len(), 3).unwrap();
        let mut vis_rng = ChaCha8Rng::seed_from_u64(22);
        let vis_data: Vec<f32> = (0..3 * 2 * 2).map(|_| vis_rng.gen_range(-1.0..1.0)).collect();
        assert_gradients_match(
            &mut store,
            &mut |g, s| {
                let vis = g.constant(Tensor::new(vec![3, 2, 2], vis_data.clone()));
                let (seq, layout) = bb
                    .assemble_training(g, s, vis, "red circle", "circle", &v,
                        TextSupervision::AnswerOnly)
                    .unwrap();
                let hidden = bb.forward_reasoning(g, s, seq);
                let e = bb.extract_mask_embedding(g, s, hidden, &layout);
                let logits = bb.text_logits(g, s, hidden);
                let ce = g.cross_entropy_rows(logits, layout.text_targets.clone());
                let esq = g.mul(e, e);
                let esum = g.sum_all(esq);
                g.add(ce, esum)
            },
            &|name| name.starts_with("backbone."),
            4,
            1e-3,
        );
    }
}
