//! Dataset layer: record schema, mask codecs, deterministic splits,
//! synthetic scene generation, corpus statistics and CoT transforms.

pub mod codec;
pub mod record;
pub mod split;
pub mod stats;
pub mod synth;
pub mod transforms;
