//! Architecture and fusion hyperparameters.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Real;

/// Which cross-modal sublayer the decoder blocks use.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionMode {
    AudioOnly,
    VideoOnly,
    Concatenate,
    AdaavaAudio,
    AdaavaVideo,
}

impl FusionMode {
    pub const ALL: [FusionMode; 5] = [
        FusionMode::AudioOnly,
        FusionMode::VideoOnly,
        FusionMode::Concatenate,
        FusionMode::AdaavaAudio,
        FusionMode::AdaavaVideo,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FusionMode::AudioOnly => "audio_only",
            FusionMode::VideoOnly => "video_only",
            FusionMode::Concatenate => "concatenate",
            FusionMode::AdaavaAudio => "adaava_audio",
            FusionMode::AdaavaVideo => "adaava_video",
        }
    }

    pub fn uses_audio(self) -> bool {
        self != FusionMode::VideoOnly
    }

    /// Whether the mode cannot run without visual features.
    pub fn needs_visual(self) -> bool {
        matches!(
            self,
            FusionMode::VideoOnly | FusionMode::AdaavaAudio | FusionMode::AdaavaVideo
        )
    }

    pub fn uses_visual(self) -> bool {
        self != FusionMode::AudioOnly
    }

    pub fn is_adaava(self) -> bool {
        matches!(self, FusionMode::AdaavaAudio | FusionMode::AdaavaVideo)
    }
}

impl fmt::Display for FusionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FusionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FusionMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = FusionMode::ALL.iter().map(|m| m.as_str()).collect();
                Error::Config(format!("unknown fusion mode {s:?}; expected one of {}", names.join(", ")))
            })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub d: usize,
    pub heads: usize,
    pub encoder_blocks: usize,
    pub decoder_blocks: usize,
    pub mlp_ratio: Real,
    /// Confidence threshold of the AdaAVA masks.
    pub beta: Real,
    pub fusion_mode: FusionMode,
    /// Longest token sequence, `<sos>` and `<eos>` included.
    pub max_caption_len: usize,
    pub vocab_size: usize,
    /// Width of an audio encoder input row (256 for 4×64 mel patches).
    pub audio_in_dim: usize,
    /// Rows of the encoder positional table.
    pub max_audio_len: usize,
    pub visual_in_dim: usize,
    pub dropout: Real,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d: 128,
            heads: 4,
            encoder_blocks: 2,
            decoder_blocks: 2,
            mlp_ratio: 4.0,
            beta: 0.13,
            fusion_mode: FusionMode::AdaavaAudio,
            max_caption_len: 22,
            vocab_size: 64,
            audio_in_dim: 256,
            max_audio_len: 256,
            visual_in_dim: 1024,
            dropout: 0.1,
        }
    }
}

impl ModelConfig {
    /// The full-size architecture: width 512, 8 heads, 12 encoder and 4
    /// decoder blocks.
    pub fn full_scale() -> Self {
        ModelConfig {
            d: 512,
            heads: 8,
            encoder_blocks: 12,
            decoder_blocks: 4,
            ..Default::default()
        }
    }

    pub fn mlp_hidden(&self) -> usize {
        ((self.d as Real) * self.mlp_ratio).round().max(1.0) as usize
    }

    /// Every violated invariant, reported together.
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.d == 0 || self.heads == 0 || !self.d.is_multiple_of(self.heads) {
            problems.push(format!("d = {} must be a positive multiple of heads = {}", self.d, self.heads));
        }
        if !(0.0..=1.0).contains(&self.beta) {
            problems.push(format!("beta = {} outside [0, 1]", self.beta));
        }
        if !(self.mlp_ratio > 0.0 && self.mlp_ratio.is_finite()) {
            problems.push(format!("mlp_ratio = {} must be positive", self.mlp_ratio));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            problems.push(format!("dropout = {} outside [0, 1)", self.dropout));
        }
        if self.decoder_blocks == 0 {
            problems.push("decoder_blocks must be at least 1".into());
        }
        if self.max_caption_len < 3 {
            problems.push(format!("max_caption_len = {} < 3", self.max_caption_len));
        }
        if self.vocab_size < 5 {
            problems.push(format!("vocab_size = {} leaves no room for words", self.vocab_size));
        }
        if self.fusion_mode.uses_audio() && (self.audio_in_dim == 0 || self.max_audio_len == 0) {
            problems.push("audio_in_dim and max_audio_len must be positive".into());
        }
        if self.fusion_mode.uses_visual() && self.visual_in_dim == 0 {
            problems.push("visual_in_dim must be positive".into());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }
}
