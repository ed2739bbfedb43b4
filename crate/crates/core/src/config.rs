//! Architecture hyper-parameters and the named presets.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stft::StftConfig;

/// Down-sampling conv, LSTM and up-sampling deconv settings of one block type.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BandConfig {
    /// Output channels of the down-sampling convolution.
    pub channels: usize,
    /// Kernel size along frequency.
    pub kernel: usize,
    /// Stride along frequency.
    pub stride: usize,
    /// LSTM hidden units.
    pub hidden: usize,
}

impl BandConfig {
    /// Frequency extent after zero-padding `bins` so the kernel tiles it.
    pub fn padded(&self, bins: usize) -> usize {
        (bins - self.kernel).div_ceil(self.stride) * self.stride + self.kernel
    }

    /// Number of down-sampled frequency positions.
    pub fn positions(&self, bins: usize) -> usize {
        (self.padded(bins) - self.kernel) / self.stride + 1
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Variant {
    /// `modules` × (full-band block, sub-band block).
    Fsb,
    /// Stack of `layers` full-band blocks and no sub-band blocks.
    FullBand { layers: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub modules: usize,
    pub embed_dim: usize,
    pub full_band: BandConfig,
    pub sub_band: BandConfig,
    pub mics: usize,
    pub stft: StftConfig,
    pub variant: Variant,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            modules: 3,
            embed_dim: 32,
            full_band: BandConfig { channels: 8, kernel: 8, stride: 4, hidden: 256 },
            sub_band: BandConfig { channels: 64, kernel: 5, stride: 5, hidden: 64 },
            mics: 6,
            stft: StftConfig::default(),
            variant: Variant::Fsb,
        }
    }
}

impl ModelConfig {
    /// Named preset such as `fsb-6ch`, `fb6-6ch`, `fb9-2ch`.
    pub fn preset(name: &str) -> Result<Self> {
        let (arch, mics) = name.rsplit_once('-').ok_or_else(|| Error::Config(format!("unknown preset {name:?}")))?;
        let mics = match mics {
            "6ch" => 6,
            "2ch" => 2,
            "1ch" => 1,
            _ => return Err(Error::Config(format!("unknown channel count in preset {name:?}"))),
        };
        let variant = match arch {
            "fsb" => Variant::Fsb,
            "fb6" => Variant::FullBand { layers: 6 },
            "fb9" => Variant::FullBand { layers: 9 },
            _ => return Err(Error::Config(format!("unknown architecture in preset {name:?}"))),
        };
        Ok(Self { mics, variant, ..Self::default() })
    }

    pub const PRESETS: [&'static str; 9] =
        ["fsb-6ch", "fsb-2ch", "fsb-1ch", "fb6-6ch", "fb6-2ch", "fb6-1ch", "fb9-6ch", "fb9-2ch", "fb9-1ch"];

    /// Small configuration for desk-scale training runs.
    pub fn toy() -> Self {
        Self {
            modules: 1,
            embed_dim: 8,
            full_band: BandConfig { channels: 4, kernel: 8, stride: 4, hidden: 32 },
            sub_band: BandConfig { channels: 8, kernel: 5, stride: 5, hidden: 8 },
            mics: 1,
            stft: StftConfig::default(),
            variant: Variant::Fsb,
        }
    }

    /// Smallest complete network; used for exhaustive gradient checks.
    pub fn tiny() -> Self {
        Self {
            embed_dim: 4,
            full_band: BandConfig { channels: 2, kernel: 8, stride: 4, hidden: 4 },
            sub_band: BandConfig { channels: 4, kernel: 5, stride: 5, hidden: 4 },
            ..Self::toy()
        }
    }

    pub fn with_hop_ms(mut self, hop_ms: f64) -> Result<Self> {
        self.stft = StftConfig::with_hop_ms(hop_ms)?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        self.stft.validate()?;
        let f = self.freq_bins();
        let fb = &self.full_band;
        let sb = &self.sub_band;
        let extents = [self.embed_dim, self.mics, fb.channels, fb.kernel, fb.stride, fb.hidden];
        if extents.contains(&0) || self.modules == 0 {
            return Err(Error::Config("all extents must be at least 1".into()));
        }
        if fb.kernel > f {
            return Err(Error::Config(format!("full-band kernel {} exceeds {} bins", fb.kernel, f)));
        }
        match self.variant {
            Variant::Fsb => {
                if [sb.channels, sb.kernel, sb.stride, sb.hidden].contains(&0) || sb.kernel > f {
                    return Err(Error::Config("invalid sub-band settings".into()));
                }
            }
            Variant::FullBand { layers: 0 } => {
                return Err(Error::Config("full-band stack needs at least one layer".into()));
            }
            Variant::FullBand { .. } => {}
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn freq_bins(&self) -> usize {
        self.stft.freq_bins()
    }

    pub fn input_channels(&self) -> usize {
        2 * self.mics
    }

    /// Number of (full-band, optional sub-band) stages.
    pub fn stages(&self) -> usize {
        match self.variant {
            Variant::Fsb => self.modules,
            Variant::FullBand { layers } => layers,
        }
    }

    pub fn has_sub_band(&self) -> bool {
        matches!(self.variant, Variant::Fsb)
    }

    /// `A`: flattened frame embedding size of the full-band LSTM.
    pub fn frame_dim(&self) -> usize {
        self.full_band.channels * self.full_band.positions(self.freq_bins())
    }

    pub fn sub_bands(&self) -> usize {
        self.sub_band.positions(self.freq_bins())
    }
}
