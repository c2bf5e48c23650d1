use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::providers::HttpBackendConfig;
use crate::retrieval::{SearchOptions, WebSearchConfig};
use crate::stage::{LanguagePair, Temperatures};

use super::PipelineError;

/// Which detection branch gates retrieval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Cl,
    Cm,
    Hybrid,
    AlwaysRetrieve,
    NeverRetrieve,
}

impl Mode {
    pub const ALL: [Mode; 5] = [
        Mode::Cl,
        Mode::Cm,
        Mode::Hybrid,
        Mode::AlwaysRetrieve,
        Mode::NeverRetrieve,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Cl => "cl",
            Mode::Cm => "cm",
            Mode::Hybrid => "hybrid",
            Mode::AlwaysRetrieve => "always_retrieve",
            Mode::NeverRetrieve => "never_retrieve",
        }
    }

    pub fn uses_cross_language(self) -> bool {
        matches!(self, Mode::Cl | Mode::Hybrid)
    }

    pub fn uses_cross_model(self) -> bool {
        matches!(self, Mode::Cm | Mode::Hybrid)
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Mode::ALL
            .into_iter()
            .find(|m| m.as_str() == s.replace('-', "_"))
            .ok_or_else(|| {
                format!(
                    "unknown mode {s:?} (expected cl, cm, hybrid, always_retrieve, never_retrieve)"
                )
            })
    }
}

/// Whether consistency checks probe the paraphrases or the input question.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbationTarget {
    #[default]
    Variants,
    Original,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Thresholds {
    pub cl: f64,
    pub cm: f64,
    pub hybrid: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            cl: 0.6,
            cm: 0.8,
            hybrid: 1.2,
        }
    }
}

impl Thresholds {
    pub fn for_mode(&self, mode: Mode) -> Option<f64> {
        match mode {
            Mode::Cl => Some(self.cl),
            Mode::Cm => Some(self.cm),
            Mode::Hybrid => Some(self.hybrid),
            Mode::AlwaysRetrieve | Mode::NeverRetrieve => None,
        }
    }

    pub fn set_for_mode(&mut self, mode: Mode, value: f64) {
        match mode {
            Mode::Cl => self.cl = value,
            Mode::Cm => self.cm = value,
            Mode::Hybrid => self.hybrid = value,
            Mode::AlwaysRetrieve | Mode::NeverRetrieve => {}
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendSpec {
    Scripted { script: PathBuf },
    Http(HttpBackendConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderSpec {
    pub model: String,
    #[serde(flatten)]
    pub backend: BackendSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RetrieverSpec {
    Corpus { dir: PathBuf },
    Web(WebSearchConfig),
    Disabled,
}

/// Every tunable of a run. Secrets never live here, only the names of
/// the environment variables holding them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub k: usize,
    pub alpha: f64,
    pub mode: Mode,
    pub thresholds: Thresholds,
    pub languages: LanguagePair,
    pub temperatures: Temperatures,
    pub perturbation_target: PerturbationTarget,
    pub search: SearchOptions,
    pub parallelism: usize,
    pub answerer: ProviderSpec,
    pub verifier: ProviderSpec,
    pub retriever: RetrieverSpec,
    pub cache_dir: Option<PathBuf>,
    pub templates: Option<PathBuf>,
    pub runs_dir: PathBuf,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            k: 6,
            alpha: 1.0,
            mode: Mode::Hybrid,
            thresholds: Thresholds::default(),
            languages: LanguagePair::default(),
            temperatures: Temperatures::default(),
            perturbation_target: PerturbationTarget::Variants,
            search: SearchOptions::default(),
            parallelism: 4,
            answerer: ProviderSpec {
                model: "gpt-3.5-turbo".into(),
                backend: BackendSpec::Http(HttpBackendConfig {
                    endpoint: "https://api.openai.com/v1/chat/completions".into(),
                    api_key_env: Some("GATERAG_CHAT_API_KEY".into()),
                    ..HttpBackendConfig::default()
                }),
            },
            verifier: ProviderSpec {
                model: "qwen-max".into(),
                backend: BackendSpec::Http(HttpBackendConfig {
                    endpoint: "https://dashscope.aliyuncs.com/compatible-mode/v1/chat/completions"
                        .into(),
                    api_key_env: Some("GATERAG_VERIFIER_API_KEY".into()),
                    ..HttpBackendConfig::default()
                }),
            },
            retriever: RetrieverSpec::Web(WebSearchConfig::default()),
            cache_dir: Some(PathBuf::from(".gaterag-cache")),
            templates: None,
            runs_dir: PathBuf::from("runs"),
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let raw = std::fs::read_to_string(path)
            .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg: PipelineConfig = toml::from_str(&raw)
            .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        if let Some(base) = path.parent() {
            cfg.resolve_relative(base);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Interpret relative file paths as relative to `base`.
    pub fn resolve_relative(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for spec in [&mut self.answerer, &mut self.verifier] {
            if let BackendSpec::Scripted { script } = &mut spec.backend {
                fix(script);
            }
        }
        if let RetrieverSpec::Corpus { dir } = &mut self.retriever {
            fix(dir);
        }
        if let Some(p) = &mut self.cache_dir {
            fix(p);
        }
        if let Some(p) = &mut self.templates {
            fix(p);
        }
        fix(&mut self.runs_dir);
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn threshold(&self) -> Option<f64> {
        self.thresholds.for_mode(self.mode)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Config(m));
        if self.k == 0 {
            return bad("k must be at least 1".into());
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return bad(format!("alpha must be finite and >= 0, got {}", self.alpha));
        }
        for (name, t) in [
            ("cl", self.thresholds.cl),
            ("cm", self.thresholds.cm),
            ("hybrid", self.thresholds.hybrid),
        ] {
            if t.is_nan() || t < 0.0 {
                return bad(format!("threshold for {name} must be >= 0, got {t}"));
            }
        }
        if self.languages.source.trim().is_empty() || self.languages.target.trim().is_empty() {
            return bad("language codes must not be empty".into());
        }
        if self
            .languages
            .source
            .eq_ignore_ascii_case(&self.languages.target)
        {
            return bad(format!(
                "source and target language must differ (both {:?})",
                self.languages.source
            ));
        }
        for (name, t) in [
            ("diversify", self.temperatures.diversify),
            ("other", self.temperatures.other),
        ] {
            if !(0.0..=2.0).contains(&t) {
                return bad(format!("temperature {name} must lie in [0, 2], got {t}"));
            }
        }
        if self.search.per_query == 0 {
            return bad("search.per_query must be at least 1".into());
        }
        Ok(())
    }

    /// Short stable digest naming the run directory.
    pub fn digest(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))[..12].to_string()
    }
}
