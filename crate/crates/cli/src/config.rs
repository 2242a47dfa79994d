//! Run configuration: defaults, then profile, then JSON file, then flags.

use std::fs;
use std::path::Path;

use ddl_core::config::{HyperParams, LossWeights, ModelConfig, Profile, TrainConfig};
use ddl_core::data::SynthSpec;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::CliError;

/// Everything a command may read, fully resolved before it runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub profile: Profile,
    pub model: ModelConfig,
    pub loss: LossWeights,
    pub train: TrainConfig,
    pub synth: SynthSpec,
}

impl RunConfig {
    pub fn for_profile(profile: Profile) -> Self {
        let HyperParams { model, loss, train } = profile.hyper_params();
        RunConfig {
            profile,
            model,
            loss,
            train,
            synth: SynthSpec::default(),
        }
    }

    /// Applies the profile (flag first, then the file's `profile` key), then
    /// the file's remaining keys. Unknown keys are rejected.
    pub fn resolve(profile_flag: Option<Profile>, file: Option<&Path>) -> Result<Self, CliError> {
        let overrides = match file {
            Some(path) => {
                let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
                let value: Value = serde_json::from_str(&text)
                    .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
                if !value.is_object() {
                    return Err(CliError::Config(format!(
                        "{}: expected a JSON object",
                        path.display()
                    )));
                }
                Some(value)
            }
            None => None,
        };
        let file_profile = match overrides.as_ref().and_then(|v| v.get("profile")) {
            Some(p) => Some(
                serde_json::from_value::<Profile>(p.clone())
                    .map_err(|e| CliError::Config(format!("profile: {e}")))?,
            ),
            None => None,
        };
        let profile = profile_flag.or(file_profile).unwrap_or(Profile::Desk);
        let mut merged =
            serde_json::to_value(RunConfig::for_profile(profile)).expect("config serializes");
        if let Some(mut o) = overrides {
            if let Some(obj) = o.as_object_mut() {
                obj.remove("profile");
            }
            merge(&mut merged, o);
        }
        serde_json::from_value(merged).map_err(|e| CliError::Config(format!("config file: {e}")))
    }

    pub fn hyper(&self) -> HyperParams {
        HyperParams {
            model: self.model.clone(),
            loss: self.loss.clone(),
            train: self.train.clone(),
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.hyper().validate()?;
        self.synth.validate()?;
        Ok(())
    }

    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(self).expect("config serializes");
        fs::write(path, text + "\n").map_err(|e| CliError::io(path, e))
    }
}

/// Recursively overlays `patch` onto `base`. Keys absent from `base` are kept
/// so that deserialization can reject them.
fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}
