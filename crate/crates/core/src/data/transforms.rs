//! Chain-of-thought corruption transforms: token masking, step shuffling
//! and semantic word substitution, plus the trivial on/off modes. Every
//! mode is deterministic in (seed, sample index), so corpus order does not
//! change individual outcomes.

use std::fmt;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::record::ReasoningSample;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CotMode {
    On,
    Off,
    Mask,
    Shuffle,
    Semantic,
}

impl CotMode {
    pub const ALL: [CotMode; 5] = [
        CotMode::On,
        CotMode::Off,
        CotMode::Mask,
        CotMode::Shuffle,
        CotMode::Semantic,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CotMode::On => "on",
            CotMode::Off => "off",
            CotMode::Mask => "mask",
            CotMode::Shuffle => "shuffle",
            CotMode::Semantic => "semantic",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "on" => Ok(CotMode::On),
            "off" => Ok(CotMode::Off),
            "mask" => Ok(CotMode::Mask),
            "shuffle" => Ok(CotMode::Shuffle),
            "semantic" => Ok(CotMode::Semantic),
            other => Err(Error::input(format!(
                "cot mode: expected one of on, off, mask, shuffle, semantic; got {other:?}"
            ))),
        }
    }
}

impl Default for CotMode {
    fn default() -> Self {
        CotMode::On
    }
}

impl fmt::Display for CotMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Swaps each recognized content word for a different one of its class,
/// preserving fluency while breaking the stated facts.
fn corrupt_word(word: &str) -> &str {
    match word {
        "red" => "blue",
        "blue" => "green",
        "green" => "yellow",
        "yellow" => "purple",
        "purple" => "orange",
        "orange" => "red",
        "circle" => "square",
        "square" => "triangle",
        "triangle" => "circle",
        "left" => "right",
        "right" => "left",
        "leftmost" => "rightmost",
        "rightmost" => "leftmost",
        "nearest" => "farthest",
        "farthest" => "nearest",
        "closest" => "farthest",
        "largest" => "smallest",
        "smallest" => "largest",
        "top-left" => "bottom-right",
        "top-right" => "bottom-left",
        "bottom-left" => "top-right",
        "bottom-right" => "top-left",
        "isolated" => "crowded",
        other => other,
    }
}

fn mask_step(step: &str, rng: &mut ChaCha8Rng) -> String {
    step.split_whitespace()
        .map(|w| {
            if rng.gen_bool(0.5) {
                "<unk>"
            } else {
                w
            }
        })
        .collect::<Vec<_>>()
        .join(" ")
}

fn corrupt_step(step: &str) -> String {
    step.split_whitespace()
        .map(corrupt_word)
        .collect::<Vec<_>>()
        .join(" ")
}

/// Applies `mode` to every sample's CoT trace in place.
pub fn apply_cot_mode(samples: &mut [ReasoningSample], mode: CotMode, seed: u64) {
    match mode {
        CotMode::On => {}
        CotMode::Off => {
            for s in samples.iter_mut() {
                s.cot.clear();
            }
        }
        CotMode::Mask => {
            for (i, s) in samples.iter_mut().enumerate() {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(i as u64);
                s.cot = s.cot.iter().map(|step| mask_step(step, &mut rng)).collect();
            }
        }
        CotMode::Shuffle => {
            for (i, s) in samples.iter_mut().enumerate() {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(i as u64);
                s.cot.shuffle(&mut rng);
            }
        }
        CotMode::Semantic => {
            for s in samples.iter_mut() {
                s.cot = s.cot.iter().map(|step| corrupt_step(step)).collect();
            }
        }
    }
}
