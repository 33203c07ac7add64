//! On-disk model format: a directory with `manifest.json` and `weights.bin`
//! (little-endian f64, in parameter order).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::diffusion::ChannelSigmaData;
use crate::error::{Error, Result};
use crate::nn::{param_count, DenoiserConfig, DenoiserNet, TrainedDenoiser};
use crate::scene::CategoryVocabulary;
use crate::train::TrainingConfig;

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const WEIGHTS_FILE: &str = "weights.bin";
/// Parameter count reported for the reference implementation.
pub const REFERENCE_PARAM_COUNT: usize = 12_200_000;

/// How scenes are mapped to the network frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationPolicy {
    pub center: String,
    pub scale: String,
    pub vertical_axis: usize,
}

impl Default for NormalizationPolicy {
    fn default() -> Self {
        Self {
            center: "floor bounding-box center".into(),
            scale: "half the larger floor bounding-box side".into(),
            vertical_axis: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format_version: u32,
    pub denoiser: DenoiserConfig,
    pub vocabulary: Vec<String>,
    pub sigma_data: ChannelSigmaData,
    pub normalization: NormalizationPolicy,
    pub training: TrainingConfig,
    pub param_count: usize,
    pub reference_param_count: usize,
    /// Where the parameter count departs from the reference figure.
    pub param_count_note: String,
    pub weights_sha256: String,
    pub best_epoch: usize,
    pub best_validation_loss: f64,
}

/// Explains the gap between this network's size and the reference figure.
pub fn param_count_note(cfg: &DenoiserConfig) -> Result<String> {
    let n = param_count(cfg)?;
    let rel = (n as f64 - REFERENCE_PARAM_COUNT as f64) / REFERENCE_PARAM_COUNT as f64;
    Ok(format!(
        "{n} parameters ({:+.1}% vs {REFERENCE_PARAM_COUNT}); the point-set floor encoder uses shared layers {:?} \
         with no input or feature transform networks, whose sizes the reference leaves unstated",
        100.0 * rel,
        cfg.floor_hidden
    ))
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub manifest: Manifest,
    pub model: TrainedDenoiser,
    pub vocabulary: CategoryVocabulary,
}

fn weights_bytes(params: &[f64]) -> Vec<u8> {
    params.iter().flat_map(|p| p.to_le_bytes()).collect()
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl Checkpoint {
    pub fn new(
        model: TrainedDenoiser,
        vocabulary: CategoryVocabulary,
        training: TrainingConfig,
        best_epoch: usize,
        best_validation_loss: f64,
    ) -> Result<Self> {
        let cfg = model.net.config().clone();
        if cfg.vocab_size != vocabulary.len() {
            return Err(Error::Checkpoint(format!(
                "network expects {} categories but the vocabulary has {}",
                cfg.vocab_size,
                vocabulary.len()
            )));
        }
        let manifest = Manifest {
            format_version: FORMAT_VERSION,
            param_count: param_count(&cfg)?,
            reference_param_count: REFERENCE_PARAM_COUNT,
            param_count_note: param_count_note(&cfg)?,
            weights_sha256: sha256_hex(&weights_bytes(model.net.params())),
            denoiser: cfg,
            vocabulary: vocabulary.names().to_vec(),
            sigma_data: model.sigma_data,
            normalization: NormalizationPolicy::default(),
            training,
            best_epoch,
            best_validation_loss,
        };
        Ok(Self {
            manifest,
            model,
            vocabulary,
        })
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut json = serde_json::to_string_pretty(&self.manifest)?;
        json.push('\n');
        fs::write(dir.join(MANIFEST_FILE), json)?;
        fs::write(
            dir.join(WEIGHTS_FILE),
            weights_bytes(self.model.net.params()),
        )?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let text = fs::read_to_string(dir.join(MANIFEST_FILE))?;
        let manifest: Manifest = serde_json::from_str(&text)?;
        if manifest.format_version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format version {}",
                manifest.format_version
            )));
        }
        manifest.denoiser.validate()?;
        let expected = param_count(&manifest.denoiser)?;
        if manifest.param_count != expected {
            return Err(Error::Checkpoint(format!(
                "manifest lists {} parameters but its config implies {expected}",
                manifest.param_count
            )));
        }
        let bytes = fs::read(dir.join(WEIGHTS_FILE))?;
        if bytes.len() != 8 * expected {
            return Err(Error::Checkpoint(format!(
                "weights file holds {} bytes, expected {}",
                bytes.len(),
                8 * expected
            )));
        }
        if sha256_hex(&bytes) != manifest.weights_sha256 {
            return Err(Error::Checkpoint(
                "weights digest does not match the manifest".into(),
            ));
        }
        let params = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        let vocabulary = CategoryVocabulary::new(manifest.vocabulary.clone())?;
        if vocabulary.len() != manifest.denoiser.vocab_size {
            return Err(Error::Checkpoint(
                "vocabulary size does not match the network".into(),
            ));
        }
        let net = DenoiserNet::from_params(manifest.denoiser.clone(), params)?;
        Ok(Self {
            model: TrainedDenoiser {
                net,
                sigma_data: manifest.sigma_data,
            },
            vocabulary,
            manifest,
        })
    }

    /// SHA-256 of the serialized manifest, which also pins the weights.
    pub fn digest(&self) -> Result<String> {
        Ok(sha256_hex(
            serde_json::to_string(&self.manifest)?.as_bytes(),
        ))
    }
}
