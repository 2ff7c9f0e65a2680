//! Run configuration: one TOML file with sections, fingerprinted by the
//! SHA-256 of its canonical JSON form (paths excluded).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::audio::synth::CorpusKind;
use crate::audio::TARGET_SAMPLE_RATE;
use crate::dsp::FrontendConfig;
use crate::encoder::{EncoderConfig, EncoderKind};
use crate::error::{Error, Result};
use crate::quantizer::LookupMode;

/// Prefix of environment variables that override `[paths]` entries.
pub const ENV_PREFIX: &str = "RQMIR_";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderSection {
    pub kind: EncoderKind,
    pub d_model: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn_mult: usize,
    pub conv_kernel: usize,
    pub max_rel_pos: usize,
}

impl Default for EncoderSection {
    fn default() -> Self {
        let e = EncoderConfig::default();
        Self {
            kind: e.kind,
            d_model: e.d_model,
            layers: e.layers,
            heads: e.heads,
            ffn_mult: e.ffn_mult,
            conv_kernel: e.conv_kernel,
            max_rel_pos: e.max_rel_pos,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FrontendSection {
    pub n_fft: usize,
    pub n_mels: usize,
    pub fmin: f64,
    pub fmax: f64,
}

impl Default for FrontendSection {
    fn default() -> Self {
        let f = FrontendConfig::default();
        Self {
            n_fft: f.n_fft,
            n_mels: f.n_mels,
            fmin: f.fmin,
            fmax: f.fmax,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QuantizerSection {
    pub codebook_size: usize,
    pub code_dim: usize,
    pub mode: LookupMode,
    pub seed: u64,
}

impl Default for QuantizerSection {
    fn default() -> Self {
        Self {
            codebook_size: 8192,
            code_dim: 16,
            mode: LookupMode::NearestNormalized,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MaskingSection {
    pub span_ms: f64,
    pub prob: f64,
    pub noise_std: f64,
}

impl Default for MaskingSection {
    fn default() -> Self {
        Self {
            span_ms: 400.0,
            prob: 0.6,
            noise_std: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerSection {
    pub lr: f64,
    pub warmup_steps: u64,
    pub steps: u64,
    pub batch_size: usize,
    pub checkpoint_every: u64,
}

impl Default for OptimizerSection {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            warmup_steps: 300,
            steps: 2000,
            batch_size: 4,
            checkpoint_every: 500,
        }
    }
}

/// Synthetic corpus used when no corpus directory is given.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusSection {
    pub kind: CorpusKind,
    pub clips: usize,
    pub clip_seconds: f64,
    pub seed: u64,
}

impl Default for CorpusSection {
    fn default() -> Self {
        Self {
            kind: CorpusKind::Mixed,
            clips: 200,
            clip_seconds: 5.0,
            seed: 1,
        }
    }
}

/// Which encoder layer a probe reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", untagged)]
pub enum LayerChoice {
    Index(usize),
    Named(LayerName),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerName {
    Last,
    Weighted,
}

impl Default for LayerChoice {
    fn default() -> Self {
        LayerChoice::Named(LayerName::Last)
    }
}

impl std::str::FromStr for LayerChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "last" => Ok(LayerChoice::Named(LayerName::Last)),
            "weighted" => Ok(LayerChoice::Named(LayerName::Weighted)),
            n => n
                .parse()
                .map(LayerChoice::Index)
                .map_err(|_| Error::Config(format!("layer must be `last`, `weighted` or an index, got `{}`", n))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeSection {
    pub hidden: usize,
    pub lr: f64,
    pub epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub batch_frames: usize,
    pub val_fraction: f64,
    pub layer: LayerChoice,
    pub finetune: bool,
    pub finetune_lr: f64,
    pub seed: u64,
    /// Synthetic probe data: clips per split and their length.
    pub train_clips: usize,
    pub test_clips: usize,
    pub clip_seconds: f64,
}

impl Default for ProbeSection {
    fn default() -> Self {
        Self {
            hidden: 512,
            lr: 1e-3,
            epochs: 100,
            patience: 10,
            batch_frames: 256,
            val_fraction: 0.2,
            layer: LayerChoice::default(),
            finetune: false,
            finetune_lr: 1e-5,
            seed: 11,
            train_clips: 40,
            test_clips: 20,
            clip_seconds: 5.0,
        }
    }
}

/// Locations; excluded from the fingerprint.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsSection {
    pub corpus: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub token_rate: u32,
    pub input_seconds: u32,
    pub encoder: EncoderSection,
    pub frontend: FrontendSection,
    pub quantizer: QuantizerSection,
    pub masking: MaskingSection,
    pub optimizer: OptimizerSection,
    pub corpus: CorpusSection,
    pub probe: ProbeSection,
    pub paths: PathsSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            token_rate: 25,
            input_seconds: 5,
            encoder: EncoderSection::default(),
            frontend: FrontendSection::default(),
            quantizer: QuantizerSection::default(),
            masking: MaskingSection::default(),
            optimizer: OptimizerSection::default(),
            corpus: CorpusSection::default(),
            probe: ProbeSection::default(),
            paths: PathsSection::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Parse, apply `RQMIR_*` path overrides, validate.
    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: RunConfig = toml::from_str(&s).map_err(|e| Error::Config(format!("{}: {}", path.display(), e)))?;
        cfg.apply_env(|k| std::env::var_os(k));
        cfg.validate()?;
        Ok(cfg)
    }

    /// Override `[paths]` from `RQMIR_CORPUS`, `RQMIR_OUT`, `RQMIR_CHECKPOINT`.
    pub fn apply_env(&mut self, get: impl Fn(&str) -> Option<std::ffi::OsString>) {
        let slots: [(&str, &mut Option<PathBuf>); 3] = [
            ("CORPUS", &mut self.paths.corpus),
            ("OUT", &mut self.paths.out),
            ("CHECKPOINT", &mut self.paths.checkpoint),
        ];
        for (key, slot) in slots {
            if let Some(v) = get(&format!("{ENV_PREFIX}{key}")) {
                *slot = Some(PathBuf::from(v));
            }
        }
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn encoder_config(&self) -> EncoderConfig {
        let e = &self.encoder;
        EncoderConfig {
            kind: e.kind,
            input_dim: self.frontend.n_mels,
            d_model: e.d_model,
            layers: e.layers,
            heads: e.heads,
            ffn_mult: e.ffn_mult,
            conv_kernel: e.conv_kernel,
            max_rel_pos: e.max_rel_pos,
            token_rate: self.token_rate,
            max_input_seconds: self.input_seconds,
        }
    }

    pub fn frontend_config(&self) -> FrontendConfig {
        let f = &self.frontend;
        FrontendConfig {
            sample_rate: TARGET_SAMPLE_RATE,
            token_rate: self.token_rate,
            n_fft: f.n_fft,
            n_mels: f.n_mels,
            fmin: f.fmin,
            fmax: f.fmax,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if ![25, 50, 75].contains(&self.token_rate) {
            return Err(Error::Config(format!("token_rate must be 25, 50 or 75 Hz, got {}", self.token_rate)));
        }
        self.frontend_config().validate()?;
        self.encoder_config().validate()?;
        let q = &self.quantizer;
        if q.codebook_size == 0 || q.code_dim == 0 {
            return Err(Error::Config("quantizer sizes must be positive".into()));
        }
        let m = &self.masking;
        if !(m.span_ms > 0.0) || !(0.0..=1.0).contains(&m.prob) || !(m.noise_std >= 0.0) {
            return Err(Error::Config("masking needs span_ms > 0, prob in [0, 1], noise_std >= 0".into()));
        }
        let o = &self.optimizer;
        if !(o.lr > 0.0) || o.batch_size == 0 {
            return Err(Error::Config("optimizer needs lr > 0 and batch_size >= 1".into()));
        }
        let c = &self.corpus;
        if !(c.clip_seconds > 0.0) {
            return Err(Error::Config("corpus clip_seconds must be positive".into()));
        }
        let p = &self.probe;
        if p.hidden == 0 || !(p.lr > 0.0) || !(0.0..1.0).contains(&p.val_fraction) || p.batch_frames == 0 {
            return Err(Error::Config("probe needs hidden >= 1, lr > 0, val_fraction in [0, 1)".into()));
        }
        if let LayerChoice::Index(i) = p.layer {
            if i > self.encoder.layers {
                return Err(Error::Config(format!("probe layer {} beyond {} encoder layers", i, self.encoder.layers)));
            }
        }
        Ok(())
    }

    /// Canonical JSON of every semantic field (sorted keys, no paths).
    pub fn canonical_json(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Some(m) = v.as_object_mut() {
            m.remove("paths");
        }
        v.to_string()
    }

    pub fn fingerprint(&self) -> String {
        hex::encode(Sha256::digest(self.canonical_json().as_bytes()))
    }
}
