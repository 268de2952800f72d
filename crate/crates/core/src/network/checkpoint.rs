use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AdamState, EpochLoss, ModelConfig, ModelParams};
use crate::data::io::write_atomic;
use crate::error::{Error, Result};

const FORMAT_VERSION: u32 = 1;

/// JSON model container. Floats are written in shortest round-trip form,
/// so saving and loading reproduces every parameter bit for bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format_version: u32,
    pub config: ModelConfig,
    pub seed: u64,
    pub params: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adam: Option<AdamState>,
    #[serde(default)]
    pub epochs_completed: usize,
    /// Loss curve of every epoch trained so far.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub curve: Vec<EpochLoss>,
}

impl Checkpoint {
    pub fn new(
        params: &ModelParams,
        seed: u64,
        adam: Option<AdamState>,
        epochs_completed: usize,
    ) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            config: params.config().clone(),
            seed,
            params: params.values.clone(),
            adam,
            epochs_completed,
            curve: Vec::new(),
        }
    }

    pub fn model(&self) -> Result<ModelParams> {
        ModelParams::from_values(self.config.clone(), self.params.clone())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Self = serde_json::from_str(text)?;
        if ck.format_version != FORMAT_VERSION {
            return Err(Error::InvalidConfig(format!(
                "unsupported checkpoint version {}",
                ck.format_version
            )));
        }
        ck.model()?;
        if let Some(a) = &ck.adam {
            if a.m.len() != ck.params.len() || a.v.len() != ck.params.len() {
                return Err(Error::ShapeMismatch(
                    "optimizer state does not match parameters".into(),
                ));
            }
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_json()?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::super::init_params;
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let params = init_params(&ModelConfig::tiny(), 11).unwrap();
        let mut adam = AdamState::new(params.len());
        adam.m[0] = 1.0 / 3.0;
        adam.v[1] = 1e-300;
        adam.step = 4;
        let ck = Checkpoint::new(&params, 11, Some(adam), 2);
        let back = Checkpoint::from_json(&ck.to_json().unwrap()).unwrap();
        assert_eq!(back, ck);
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back.params), bits(&params.values));
    }

    #[test]
    fn rejects_wrong_length() {
        let params = init_params(&ModelConfig::tiny(), 0).unwrap();
        let mut ck = Checkpoint::new(&params, 0, None, 0);
        ck.params.pop();
        assert!(Checkpoint::from_json(&ck.to_json().unwrap()).is_err());
    }
}
