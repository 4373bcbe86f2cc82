use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::InputScaling;
use crate::error::{Error, Result};
use crate::model::{build_pvfaultnet, with_batchnorm, with_dropout, ArchitectureConfig, Init};

/// How the `decay` hyper-parameter is applied.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DecayMode {
    /// L2 penalty `decay * w` added to every gradient, constant learning rate.
    #[default]
    WeightDecay,
    /// Learning rate `lr / (1 + decay * epoch)` for zero-based `epoch`, no
    /// penalty.
    LrDecay,
}

impl FromStr for DecayMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "weight_decay" => Ok(Self::WeightDecay),
            "lr_decay" => Ok(Self::LrDecay),
            other => Err(Error::Parse(format!(
                "unknown decay mode '{other}' (weight_decay, lr_decay)"
            ))),
        }
    }
}

impl fmt::Display for DecayMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::WeightDecay => "weight_decay",
            Self::LrDecay => "lr_decay",
        })
    }
}

/// Regularization variant applied on top of the base classifier.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum Variant {
    #[default]
    #[serde(rename = "base")]
    Base,
    /// Batchnorm after each convolution.
    #[serde(rename = "batchnorm")]
    Batchnorm,
    /// Dropout 0.25 before each dense layer.
    #[serde(rename = "dropout25")]
    Dropout25,
    #[serde(rename = "batchnorm+dropout25")]
    BatchnormDropout25,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::Base,
        Variant::Batchnorm,
        Variant::Dropout25,
        Variant::BatchnormDropout25,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Base => "base",
            Variant::Batchnorm => "batchnorm",
            Variant::Dropout25 => "dropout25",
            Variant::BatchnormDropout25 => "batchnorm+dropout25",
        }
    }

    pub fn apply(self, base: &ArchitectureConfig) -> Result<ArchitectureConfig> {
        match self {
            Variant::Base => Ok(base.clone()),
            Variant::Batchnorm => with_batchnorm(base),
            Variant::Dropout25 => with_dropout(base, 0.25),
            Variant::BatchnormDropout25 => with_dropout(&with_batchnorm(base)?, 0.25),
        }
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL.into_iter().find(|v| v.name() == s).ok_or_else(|| {
            Error::Parse(format!(
                "unknown variant '{s}' (base, batchnorm, dropout25, batchnorm+dropout25)"
            ))
        })
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Training hyper-parameters. The optimizer defaults are the reference global
/// settings: 50 epochs, batch 32, SGD with momentum 0.9, learning rate 0.02,
/// decay 0.01. Centered inputs and the gradient-norm clip of 5 are what keep
/// that learning rate stable on the 29,160-input first dense layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub decay: f64,
    pub decay_mode: DecayMode,
    pub seed: u64,
    pub variant: Variant,
    pub input_side: usize,
    pub input_scaling: InputScaling,
    pub init: Init,
    /// Rescale the whole gradient to this L2 norm when it is larger; 0 disables.
    pub grad_clip: f64,
    /// Write `checkpoints/epoch_NNN.ckpt` every this many epochs; 0 disables
    /// the cadence (milestones and the final checkpoint are still written).
    pub checkpoint_every: usize,
    /// Epochs whose report is printed as a table and checkpointed.
    pub milestones: Vec<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 32,
            learning_rate: 0.02,
            momentum: 0.9,
            decay: 0.01,
            decay_mode: DecayMode::WeightDecay,
            seed: 0,
            variant: Variant::Base,
            input_side: 224,
            input_scaling: InputScaling::Centered,
            init: Init::HeNormal,
            grad_clip: 5.0,
            checkpoint_every: 0,
            milestones: vec![5, 15, 35, 50],
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be at least 1"));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::invalid(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            )));
        }
        if !(self.decay.is_finite() && self.decay >= 0.0) {
            return Err(Error::invalid(format!(
                "decay must be non-negative, got {}",
                self.decay
            )));
        }
        if !(self.grad_clip.is_finite() && self.grad_clip >= 0.0) {
            return Err(Error::invalid(format!(
                "gradient clip must be non-negative, got {}",
                self.grad_clip
            )));
        }
        self.architecture().map(|_| ())
    }

    pub fn architecture(&self) -> Result<ArchitectureConfig> {
        self.variant.apply(&build_pvfaultnet(self.input_side)?)
    }

    /// `(learning rate, weight decay)` in effect during zero-based `epoch`.
    pub fn schedule(&self, epoch: usize) -> (f64, f64) {
        match self.decay_mode {
            DecayMode::WeightDecay => (self.learning_rate, self.decay),
            DecayMode::LrDecay => (self.learning_rate / (1.0 + self.decay * epoch as f64), 0.0),
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Parse(format!("train config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }
}
