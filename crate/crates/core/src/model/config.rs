use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which modalities reach the fusion stage. Single-modality runs replace the
/// other modality's aligned features with zeros.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InputModality {
    #[default]
    Both,
    VisualOnly,
    TextualOnly,
}

/// Dimensional hyperparameters of the fusion model and the ablation switches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Number of visual region embeddings per record.
    pub visual_tokens: usize,
    /// Visual embedding width.
    pub d_visual_in: usize,
    /// Number of textual token embeddings per record.
    pub textual_tokens: usize,
    /// Textual embedding width.
    pub d_textual_in: usize,
    /// Common aligned width; also the fused width.
    pub d_align: usize,
    pub d_key: usize,
    pub d_value: usize,
    pub heads: usize,
    /// Number of sequential self-attention blocks.
    pub depth_smsam: usize,
    /// Common sequence length both modalities are resampled to.
    pub seq_len: usize,
    pub n_genres: usize,
    pub ffn_hidden: Vec<usize>,
    pub enable_mcam: bool,
    pub enable_smsam: bool,
    pub input_modality: InputModality,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            visual_tokens: 6,
            d_visual_in: 48,
            textual_tokens: 4,
            d_textual_in: 32,
            d_align: 64,
            d_key: 16,
            d_value: 16,
            heads: 4,
            depth_smsam: 4,
            seq_len: 8,
            n_genres: 13,
            ffn_hidden: vec![512, 128],
            enable_mcam: true,
            enable_smsam: true,
            input_modality: InputModality::Both,
        }
    }
}

impl ModelConfig {
    /// Returns every violated constraint, or `Ok` for a usable config.
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        let positive = [
            ("visual_tokens", self.visual_tokens),
            ("d_visual_in", self.d_visual_in),
            ("textual_tokens", self.textual_tokens),
            ("d_textual_in", self.d_textual_in),
            ("d_align", self.d_align),
            ("d_key", self.d_key),
            ("d_value", self.d_value),
            ("heads", self.heads),
            ("seq_len", self.seq_len),
            ("n_genres", self.n_genres),
        ];
        for (name, v) in positive {
            if v == 0 {
                problems.push(format!("{name} must be positive"));
            }
        }
        if self.heads * self.d_value != self.d_align {
            problems.push(format!(
                "heads * d_value must equal d_align ({} * {} != {})",
                self.heads, self.d_value, self.d_align
            ));
        }
        if let Some(i) = self.ffn_hidden.iter().position(|&w| w == 0) {
            problems.push(format!("ffn_hidden[{i}] must be positive"));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems))
        }
    }

    /// Fused representation width (equal to the aligned width).
    pub fn d_fused(&self) -> usize {
        self.d_align
    }

    /// Tiny configuration used for gradient checks.
    pub fn tiny() -> Self {
        ModelConfig {
            visual_tokens: 3,
            d_visual_in: 6,
            textual_tokens: 2,
            d_textual_in: 5,
            d_align: 16,
            d_key: 4,
            d_value: 4,
            heads: 4,
            depth_smsam: 2,
            seq_len: 4,
            n_genres: 5,
            ffn_hidden: vec![12, 8],
            ..ModelConfig::default()
        }
    }
}
