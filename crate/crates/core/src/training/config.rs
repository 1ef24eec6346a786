use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::models::{default_cap, default_gamma};
use crate::{Result, VpnError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Plain cross-entropy, no noise.
    Baseline,
    /// Baseline plus standard-normal noise on a random subset of pixels.
    Random,
    /// Base model and generator trained together on the VPN loss.
    Joint,
    /// Generator trained on the VPN loss against a frozen base model.
    FixedBase,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Baseline => "baseline",
            Mode::Random => "random",
            Mode::Joint => "joint",
            Mode::FixedBase => "fixed_base",
        })
    }
}

impl FromStr for Mode {
    type Err = VpnError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "baseline" => Ok(Mode::Baseline),
            "random" => Ok(Mode::Random),
            "joint" => Ok(Mode::Joint),
            "fixed_base" | "fixed" => Ok(Mode::FixedBase),
            other => Err(VpnError::Contract(format!("unknown training mode `{other}`"))),
        }
    }
}

impl Mode {
    pub fn uses_generator(self) -> bool {
        matches!(self, Mode::Joint | Mode::FixedBase)
    }
}

/// Hyper-parameters of one training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub mode: Mode,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Noise draws per sample per step (`m`).
    pub noise_size: usize,
    /// Label-bias coefficient; `None` means `0.01 / |Y|`.
    pub gamma: Option<f64>,
    /// Bound on `||sigma||_2`; `None` means `0.1 * sqrt(d)`.
    pub cap: Option<f64>,
    pub seed: u64,
    pub random_pixel_fraction: f64,
    /// Draws per class hypothesis during noisy evaluation.
    pub samples_per_class: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            mode: Mode::Baseline,
            epochs: 40,
            learning_rate: 0.001,
            batch_size: 256,
            noise_size: 1,
            gamma: None,
            cap: None,
            seed: 0,
            random_pixel_fraction: 0.10,
            samples_per_class: 1,
        }
    }
}

impl TrainConfig {
    pub fn with_mode(mode: Mode) -> Self {
        TrainConfig {
            mode,
            ..TrainConfig::default()
        }
    }

    pub fn resolved_gamma(&self, class_count: usize) -> f64 {
        self.gamma.unwrap_or_else(|| default_gamma(class_count))
    }

    pub fn resolved_cap(&self, d: usize) -> f64 {
        self.cap.unwrap_or_else(|| default_cap(d))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(VpnError::Contract(msg));
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning rate must be positive, got {}", self.learning_rate));
        }
        if self.batch_size == 0 {
            return bad("batch size must be at least 1".into());
        }
        if self.noise_size == 0 {
            return bad("noise size m must be at least 1".into());
        }
        if self.samples_per_class == 0 {
            return bad("samples per class must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.random_pixel_fraction) {
            return bad(format!(
                "random pixel fraction must lie in [0, 1], got {}",
                self.random_pixel_fraction
            ));
        }
        if let Some(g) = self.gamma {
            if !(g >= 0.0 && g.is_finite()) {
                return bad(format!("gamma must be >= 0, got {g}"));
            }
        }
        if let Some(c) = self.cap {
            if !(c > 0.0 && c.is_finite()) {
                return bad(format!("cap must be positive, got {c}"));
            }
        }
        Ok(())
    }
}
