use serde::{Deserialize, Serialize};

/// What the view-encoder modulation is conditioned on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilmMode {
    /// No modulation; every query sees the same lead features.
    Off,
    /// `(γ, β)` from the query embedding alone.
    Query,
    /// `(γ, β)` from the query and the recorded lead's own embedding.
    QueryKey,
}

/// How recorded-lead features are combined per query.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fusion {
    /// Angle attention.
    Gaa,
    /// Uniform `1/l` weights.
    Mean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Number of view-transformation blocks `L`.
    pub blocks: usize,
    /// Encoder channel count `c`.
    pub channels: usize,
    /// Angle-embedding width `d`.
    pub embed_dim: usize,
    /// Attention projection width `d'`.
    pub attn_dim: usize,
    /// Sinusoidal frequency count `K`.
    pub n_freq: usize,
    /// Head upsampling factors; their product is the encoder downsampling.
    pub upsample: Vec<usize>,
    /// Channel width after each head stage.
    pub head_channels: Vec<usize>,
    /// Number of per-lead deviation slots.
    pub n_slots: usize,
    pub film: FilmMode,
    pub fusion: Fusion,
    /// SE bottleneck ratio.
    pub se_reduction: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig::with_channels(64)
    }
}

impl ModelConfig {
    /// Defaults with `c = channels`; head widths halve per stage down to 8.
    pub fn with_channels(channels: usize) -> Self {
        let upsample = vec![2, 2, 2];
        let mut head_channels = Vec::new();
        let mut w = channels;
        for _ in &upsample {
            w = (w / 2).max(8);
            head_channels.push(w);
        }
        ModelConfig {
            blocks: 4,
            channels,
            embed_dim: 64,
            attn_dim: 64,
            n_freq: 6,
            upsample,
            head_channels,
            n_slots: crate::dataset::N_VIEWS,
            film: FilmMode::QueryKey,
            fusion: Fusion::Gaa,
            se_reduction: 4,
        }
    }

    /// Ratio `t / t'`.
    pub fn downsample(&self) -> usize {
        self.upsample.iter().product()
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.blocks == 0 {
            return Err("blocks must be at least 1".into());
        }
        if self.channels == 0 || self.embed_dim == 0 || self.attn_dim == 0 || self.n_freq == 0 {
            return Err("widths must be positive".into());
        }
        if self.upsample.is_empty() || self.upsample.contains(&0) {
            return Err("upsample factors must be positive".into());
        }
        if self.head_channels.len() != self.upsample.len() || self.head_channels.contains(&0) {
            return Err("one positive head width per upsample stage is required".into());
        }
        if self.n_freq > 30 {
            return Err("n_freq above 30 overflows the frequency ladder".into());
        }
        if self.se_reduction == 0 || self.channels / self.se_reduction == 0 {
            return Err("se_reduction must leave at least one bottleneck channel".into());
        }
        Ok(())
    }
}
