use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::PipelineError;
use crate::codec::{CodecConfig, OctreePreset};
use crate::detect::DetectorParams;
use crate::eval::{ApConfig, BenchOptions};
use crate::netsim::{NetworkScenario, TELEOPERATION_PROFILE};
use crate::scenegen::SceneConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusSpec {
    pub scene: SceneConfig,
    pub n_frames: usize,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        CorpusSpec {
            scene: SceneConfig::default(),
            n_frames: 30,
        }
    }
}

impl CorpusSpec {
    /// Content hash of everything that determines the generated frames.
    pub fn hash(&self) -> String {
        sha256_hex(&serde_json::to_vec(self).expect("plain data serializes"))
    }
}

/// A full experiment. Codecs are given by label: `p0`..`p3`, `pqs=<scale>`
/// or `q·100+c` such as `905`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSpec {
    pub corpus: CorpusSpec,
    #[serde(with = "codec_labels")]
    pub codecs: Vec<CodecConfig>,
    pub detector: DetectorParams,
    pub ap: ApConfig,
    pub network: NetworkScenario,
    pub bench: BenchOptions,
    /// Batch size for the detector inference timing.
    pub inference_batch_size: usize,
    /// Requirement profile id used for the compliance table.
    pub compliance_profile: String,
    /// Not part of the config hash.
    pub out_dir: PathBuf,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        ExperimentSpec {
            corpus: CorpusSpec::default(),
            codecs: CodecConfig::standard_grid(),
            detector: DetectorParams::default(),
            ap: ApConfig::default(),
            network: NetworkScenario::default(),
            bench: BenchOptions::default(),
            inference_batch_size: 1,
            compliance_profile: TELEOPERATION_PROFILE.to_string(),
            out_dir: PathBuf::from("out"),
        }
    }
}

impl ExperimentSpec {
    /// Parses TOML, or JSON when the text starts with `{`.
    pub fn parse(text: &str) -> Result<Self, PipelineError> {
        let spec: ExperimentSpec = if text.trim_start().starts_with('{') {
            serde_json::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?
        } else {
            toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PipelineError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Config(m));
        if self.codecs.is_empty() {
            return bad("codec grid is empty".into());
        }
        if self.corpus.n_frames == 0 {
            return bad("corpus needs at least one frame".into());
        }
        if self.inference_batch_size == 0 {
            return bad("inference_batch_size must be at least 1".into());
        }
        if self.bench.repetitions < 3 {
            return bad(format!(
                "bench.repetitions must be at least 3, got {}",
                self.bench.repetitions
            ));
        }
        if crate::netsim::profile(&self.compliance_profile).is_none() {
            return bad(format!(
                "unknown requirement profile {:?}",
                self.compliance_profile
            ));
        }
        self.corpus
            .scene
            .validate()
            .map_err(|e| PipelineError::Config(e.to_string()))?;
        for c in &self.codecs {
            match c {
                CodecConfig::Octree(o) => o.validate(),
                CodecConfig::Quant(q) => q.validate(),
            }
            .map_err(|e| PipelineError::Config(e.to_string()))?;
        }
        self.detector
            .validate()
            .map_err(|e| PipelineError::Config(e.to_string()))?;
        self.ap.validate().map_err(PipelineError::Config)?;
        self.network
            .validate()
            .map_err(|e| PipelineError::Config(e.to_string()))?;
        Ok(())
    }

    /// SHA-256 over the canonical JSON form with `out_dir` blanked, so two
    /// specs that differ only in formatting or output location share a key.
    pub fn config_hash(&self) -> String {
        let canonical = ExperimentSpec {
            out_dir: PathBuf::new(),
            ..self.clone()
        };
        sha256_hex(&serde_json::to_vec(&canonical).expect("plain data serializes"))
    }

    /// A one-frame, one-config spec for smoke runs.
    pub fn smoke(out_dir: PathBuf) -> Self {
        ExperimentSpec {
            corpus: CorpusSpec {
                n_frames: 1,
                ..CorpusSpec::default()
            },
            codecs: vec![CodecConfig::Octree(OctreePreset::P2.config())],
            network: NetworkScenario {
                sim_duration_s: 1.0,
                ..NetworkScenario::default()
            },
            out_dir,
            ..ExperimentSpec::default()
        }
    }
}

pub(crate) fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

mod codec_labels {
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    use crate::codec::CodecConfig;

    pub fn serialize<S: Serializer>(v: &[CodecConfig], s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(v.iter().map(|c| c.label()))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<CodecConfig>, D::Error> {
        Vec::<String>::deserialize(d)?
            .iter()
            .map(|s| s.parse().map_err(D::Error::custom))
            .collect()
    }
}
