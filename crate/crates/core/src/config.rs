use serde::{Deserialize, Serialize};

use crate::error::{LameError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskMode {
    /// Exactly one class per instance, softmax over labels.
    MultiClass,
    /// Any subset of labels per instance, independent sigmoids.
    MultiLabel,
}

/// Divisor applied to label-attention scores.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionScale {
    /// `sqrt(d_h / heads)`, the usual multi-head convention.
    #[default]
    PerHead,
    /// `sqrt(d_h)`, as written for single-head attention.
    FullWidth,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub hidden: usize,
    pub layers: usize,
    pub encoder_heads: usize,
    pub label_heads: usize,
    pub ffn_mult: usize,
    pub max_seq_len: usize,
    pub vocab_size: usize,
    pub num_labels: usize,
    pub label_attention_blocks: usize,
    pub task: TaskMode,
    pub attention_scale: AttentionScale,
    pub dropout: f64,
    pub layer_norm_eps: f64,
    pub init_std: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            hidden: 64,
            layers: 2,
            encoder_heads: 4,
            label_heads: 4,
            ffn_mult: 4,
            max_seq_len: 128,
            vocab_size: 0,
            num_labels: 0,
            label_attention_blocks: 1,
            task: TaskMode::MultiClass,
            attention_scale: AttentionScale::PerHead,
            dropout: 0.0,
            layer_norm_eps: 1e-12,
            init_std: 0.02,
        }
    }
}

impl ModelConfig {
    /// Desk-scale defaults for a given vocabulary and label set.
    pub fn desk_scale(vocab_size: usize, num_labels: usize, task: TaskMode) -> Self {
        ModelConfig {
            vocab_size,
            num_labels,
            task,
            ..Default::default()
        }
    }

    pub fn head_width(&self, heads: usize) -> usize {
        self.hidden / heads
    }

    pub fn ffn_width(&self) -> usize {
        self.hidden * self.ffn_mult
    }

    pub fn label_attention_scale(&self) -> f64 {
        match self.attention_scale {
            AttentionScale::PerHead => (self.head_width(self.label_heads) as f64).sqrt(),
            AttentionScale::FullWidth => (self.hidden as f64).sqrt(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("hidden", self.hidden),
            ("layers", self.layers),
            ("encoder_heads", self.encoder_heads),
            ("label_heads", self.label_heads),
            ("ffn_mult", self.ffn_mult),
            ("vocab_size", self.vocab_size),
            ("num_labels", self.num_labels),
            ("label_attention_blocks", self.label_attention_blocks),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(LameError::config(format!("{name} must be positive")));
        }
        if self.hidden < 2 {
            return Err(LameError::config("hidden width must be at least 2"));
        }
        if self.hidden % self.encoder_heads != 0 || self.hidden % self.label_heads != 0 {
            return Err(LameError::config(format!(
                "hidden width {} not divisible by encoder heads {} and label heads {}",
                self.hidden, self.encoder_heads, self.label_heads
            )));
        }
        if self.max_seq_len < 3 {
            return Err(LameError::config("max_seq_len must be at least 3"));
        }
        if self.vocab_size < 5 {
            return Err(LameError::config("vocab_size must exceed the 4 special tokens"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(LameError::config("dropout must be in [0, 1)"));
        }
        if !(self.layer_norm_eps >= 0.0 && self.init_std > 0.0) {
            return Err(LameError::config("layer_norm_eps must be >= 0 and init_std > 0"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_desk_scale() {
        let c = ModelConfig::desk_scale(100, 5, TaskMode::MultiClass);
        assert_eq!((c.hidden, c.layers, c.encoder_heads, c.label_heads), (64, 2, 4, 4));
        assert_eq!((c.ffn_mult, c.max_seq_len, c.label_attention_blocks), (4, 128, 1));
        assert_eq!(c.attention_scale, AttentionScale::PerHead);
        assert_eq!(c.dropout, 0.0);
        c.validate().unwrap();
        assert_eq!(c.label_attention_scale(), 4.0);
    }

    #[test]
    fn rejects_indivisible_heads() {
        let mut c = ModelConfig::desk_scale(100, 5, TaskMode::MultiClass);
        c.label_heads = 12;
        assert!(c.validate().is_err());
        c.hidden = 768;
        c.encoder_heads = 12;
        c.validate().unwrap();
    }

    #[test]
    fn toml_round_trip() {
        let c = ModelConfig::desk_scale(321, 10, TaskMode::MultiLabel);
        let s = toml::to_string(&c).unwrap();
        let back: ModelConfig = toml::from_str(&s).unwrap();
        assert_eq!(c, back);
    }
}
