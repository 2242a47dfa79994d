//! Hyperparameters and the named profiles.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Named hyperparameter sets. `Ucf` and `Xd` carry the published full-scale
/// settings; `Desk` is the reduced profile used for local runs and tests.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    Ucf,
    Xd,
    Desk,
}

impl Profile {
    pub fn hyper_params(self) -> HyperParams {
        match self {
            Profile::Ucf => HyperParams {
                model: ModelConfig {
                    dim: 1024,
                    heads: 4,
                    hidden: 512,
                    sigma: 16.0,
                    kernel: 10,
                    ..ModelConfig::default()
                },
                loss: LossWeights {
                    lambda1: 1.0,
                    ..LossWeights::default()
                },
                train: TrainConfig {
                    batch_size: 128,
                    epochs: 50,
                    t_max: 200,
                    ..TrainConfig::default()
                },
            },
            Profile::Xd => HyperParams {
                model: ModelConfig {
                    dim: 1024,
                    heads: 4,
                    hidden: 128,
                    sigma: 6.0,
                    kernel: 5,
                    ..ModelConfig::default()
                },
                loss: LossWeights {
                    lambda1: 2.0,
                    ..LossWeights::default()
                },
                train: TrainConfig {
                    batch_size: 128,
                    epochs: 50,
                    t_max: 200,
                    ..TrainConfig::default()
                },
            },
            Profile::Desk => HyperParams::default(),
        }
    }
}

impl std::str::FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ucf" => Ok(Profile::Ucf),
            "xd" => Ok(Profile::Xd),
            "desk" => Ok(Profile::Desk),
            other => Err(Error::Config(format!(
                "unknown profile {other:?} (expected ucf, xd or desk)"
            ))),
        }
    }
}

/// Shape and regularization of the scoring network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Snippet feature dimension D.
    pub dim: usize,
    /// Attention heads.
    pub heads: usize,
    /// Concatenated attention width D_h; split evenly across heads.
    pub hidden: usize,
    /// Width of the Gaussian locality prior, in squared snippet steps.
    pub sigma: f64,
    /// Adds the locality prior to the attention map. Off reproduces the no-prior ablation.
    pub use_prior: bool,
    pub mlp_hidden: usize,
    pub mlp_out: usize,
    /// Temporal taps of the causal scoring convolution.
    pub kernel: usize,
    pub dropout: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            dim: 32,
            heads: 4,
            hidden: 32,
            sigma: 6.0,
            use_prior: true,
            mlp_hidden: 512,
            mlp_out: 128,
            kernel: 5,
            dropout: 0.1,
        }
    }
}

impl ModelConfig {
    pub fn head_dim(&self) -> usize {
        self.hidden / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.mlp_hidden == 0 || self.mlp_out == 0 {
            return Err(Error::Config("model dimensions must be positive".into()));
        }
        if self.heads == 0 || self.hidden == 0 || self.hidden % self.heads != 0 {
            return Err(Error::Config(format!(
                "heads ({}) must divide hidden ({}) exactly",
                self.heads, self.hidden
            )));
        }
        if !(self.sigma > 0.0) || !self.sigma.is_finite() {
            return Err(Error::Config(format!(
                "sigma must be positive, got {}",
                self.sigma
            )));
        }
        if self.kernel == 0 {
            return Err(Error::Config(
                "conv kernel must have at least one tap".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout must lie in [0, 1), got {}",
                self.dropout
            )));
        }
        Ok(())
    }
}

/// Which form of the MIL objective to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MilForm {
    /// Full binary cross-entropy; normal bags are pushed toward 0.
    BinaryCrossEntropy,
    /// Only the `−y·log p` term, so normal bags contribute nothing.
    PositiveOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    /// Weight of the dynamics ranking term.
    pub lambda1: f64,
    /// Weight of the dynamics alignment term.
    pub lambda2: f64,
    /// Margin of the dynamics ranking hinge.
    pub zeta: f64,
    /// Keeps the log in the alignment term finite.
    pub epsilon: f64,
    pub mil_form: MilForm,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda1: 1.0,
            lambda2: 1.0,
            zeta: 0.0,
            epsilon: 1e-7,
            mil_form: MilForm::BinaryCrossEntropy,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("zeta", self.zeta),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Config(format!(
                    "{name} must be a finite value >= 0, got {v}"
                )));
            }
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Config(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    /// Bags per step, split evenly between positive and negative.
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Longer bags are uniformly subsampled to this many snippets.
    pub t_max: usize,
    pub base_lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Write an intermediate checkpoint every this many epochs; 0 writes only the final one.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 8,
            epochs: 50,
            seed: 7,
            t_max: 40,
            base_lr: 5e-4,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 || self.batch_size % 2 != 0 {
            return Err(Error::Config(format!(
                "batch size must be even and >= 2, got {}",
                self.batch_size
            )));
        }
        if self.t_max < 2 {
            return Err(Error::Config(format!(
                "t_max must be >= 2, got {}",
                self.t_max
            )));
        }
        if !(self.base_lr >= 0.0)
            || !(0.0..1.0).contains(&self.beta1)
            || !(0.0..1.0).contains(&self.beta2)
        {
            return Err(Error::Config("invalid optimizer settings".into()));
        }
        if !(self.adam_eps > 0.0) {
            return Err(Error::Config("adam_eps must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct HyperParams {
    pub model: ModelConfig,
    pub loss: LossWeights,
    pub train: TrainConfig,
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.loss.validate()?;
        self.train.validate()
    }
}
