//! The `--config` file: JSON with optional `training`, `denoiser`, `sampler`,
//! `sse`, `rules` and `evaluation` sections using the library's field names.

use std::path::Path;

use anyhow::{Context, Result};
use layoutdiff::evaluate::EvalConfig;
use layoutdiff::nn::DenoiserConfig;
use layoutdiff::sampler::SamplerConfig;
use layoutdiff::scene::RulesConfig;
use layoutdiff::sse::SseConfig;
use layoutdiff::train::TrainingConfig;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub training: TrainingConfig,
    /// Fields overriding the desk profile; `vocab_size` always follows the
    /// vocabulary.
    pub denoiser: Map<String, Value>,
    pub sampler: SamplerConfig,
    pub sse: Option<SseConfig>,
    pub rules: Option<RulesConfig>,
    pub evaluation: Option<EvalConfig>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text =
            std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn denoiser(&self, vocab_size: usize) -> Result<DenoiserConfig> {
        let mut base = serde_json::to_value(DenoiserConfig::desk(vocab_size))?;
        let obj = base
            .as_object_mut()
            .expect("config serializes to an object");
        for (k, v) in &self.denoiser {
            if !obj.contains_key(k) {
                anyhow::bail!("unknown denoiser field {k:?}");
            }
            obj.insert(k.clone(), v.clone());
        }
        obj.insert("vocab_size".into(), vocab_size.into());
        let cfg: DenoiserConfig = serde_json::from_value(base).context("denoiser section")?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_denoiser_overrides_desk_profile() {
        let cfg: RunConfig =
            serde_json::from_str(r#"{"denoiser": {"n_layers": 1, "vocab_size": 99}}"#).unwrap();
        let d = cfg.denoiser(7).unwrap();
        assert_eq!(d.n_layers, 1);
        assert_eq!(d.vocab_size, 7);
        assert_eq!(d.token_dim, DenoiserConfig::desk(7).token_dim);
        let bad: RunConfig = serde_json::from_str(r#"{"denoiser": {"layers": 1}}"#).unwrap();
        assert!(bad.denoiser(7).is_err());
        assert!(serde_json::from_str::<RunConfig>(r#"{"trainig": {}}"#).is_err());
    }
}
