//! TOML audit configuration and the built-in fixture data.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::classifier::{ClassifierKind, Hyperparams};
use crate::corpus::DocumentFormat;
use crate::embedding::BackendSpec;
use crate::error::{Error, Result};
use crate::lexica::{LexiconEntry, Template};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProbeSource {
    /// Native bias templates with neutral adjectives.
    #[default]
    Native,
    /// EEC templates with polar state and situation words.
    Eec,
    /// Templates mined from the configured corpus.
    CorpusMined,
}

impl std::fmt::Display for ProbeSource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ProbeSource::Native => "native",
            ProbeSource::Eec => "eec",
            ProbeSource::CorpusMined => "corpus-mined",
        })
    }
}

/// Unset fields fall back to [`Hyperparams::default_for`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifierConfig {
    pub kind: ClassifierKind,
    pub l2: Option<f64>,
    pub epochs: Option<usize>,
    pub learning_rate: Option<f64>,
    pub heldout_fraction: Option<f64>,
    pub hidden_units: Option<usize>,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            kind: ClassifierKind::Svm,
            l2: None,
            epochs: None,
            learning_rate: None,
            heldout_fraction: None,
            hidden_units: None,
        }
    }
}

impl ClassifierConfig {
    pub fn hyperparams(&self) -> Hyperparams {
        let d = Hyperparams::default_for(self.kind);
        Hyperparams {
            l2: self.l2.unwrap_or(d.l2),
            epochs: self.epochs.unwrap_or(d.epochs),
            learning_rate: self.learning_rate.unwrap_or(d.learning_rate),
            heldout_fraction: self.heldout_fraction.unwrap_or(d.heldout_fraction),
            hidden_units: self.hidden_units.unwrap_or(d.hidden_units),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusConfig {
    #[serde(default)]
    pub paths: Vec<PathBuf>,
    #[serde(default)]
    pub format: DocumentFormat,
    /// JSONL score store for masked sentences; the trained head is used when
    /// absent.
    pub scores: Option<PathBuf>,
    /// Upper bound on mined templates, taken in corpus order.
    pub max_templates: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuditConfig {
    #[serde(default = "default_language")]
    pub language: String,
    pub seed: u64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_bootstrap_b")]
    pub bootstrap_b: usize,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub template_source: ProbeSource,
    /// Template files; the built-in set for `language` when empty.
    #[serde(default)]
    pub templates: Vec<PathBuf>,
    /// Lexicon files; the built-in set for `language` when empty.
    #[serde(default)]
    pub lexicons: Vec<PathBuf>,
    /// Replaces the lexicon's nationality list, keeping this order.
    pub nationalities: Option<Vec<String>>,
    pub backend: BackendSpec,
    #[serde(default)]
    pub classifier: ClassifierConfig,
    #[serde(default)]
    pub corpus: CorpusConfig,
}

fn default_language() -> String {
    "en".to_string()
}

fn default_alpha() -> f64 {
    0.05
}

fn default_bootstrap_b() -> usize {
    1000
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

impl AuditConfig {
    /// Minimal configuration over the built-in fixtures.
    pub fn new(seed: u64, backend: BackendSpec) -> Self {
        AuditConfig {
            language: default_language(),
            seed,
            alpha: default_alpha(),
            bootstrap_b: default_bootstrap_b(),
            output_dir: default_output_dir(),
            template_source: ProbeSource::default(),
            templates: Vec::new(),
            lexicons: Vec::new(),
            nationalities: None,
            backend,
            classifier: ClassifierConfig::default(),
            corpus: CorpusConfig::default(),
        }
    }

    pub fn from_toml(text: &str, path: &Path) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    /// Read, resolve relative paths against the file's directory, validate.
    pub fn load(path: &Path) -> Result<Self> {
        Self::load_with_seed(path, None)
    }

    /// As [`AuditConfig::load`], with `seed` taking precedence over (or
    /// standing in for) the file's seed.
    pub fn load_with_seed(path: &Path, seed: Option<u64>) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(format!("reading config {}", path.display()), e))?;
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            message,
        };
        let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| parse_err(e.to_string()))?;
        if let Some(seed) = seed {
            let seed = i64::try_from(seed).map_err(|_| Error::invalid("seed exceeds the TOML integer range"))?;
            table.insert("seed".into(), toml::Value::Integer(seed));
        }
        let mut cfg: AuditConfig = table.try_into().map_err(|e: toml::de::Error| parse_err(e.to_string()))?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.resolve_paths(base);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.output_dir);
        self.templates.iter_mut().for_each(fix);
        self.lexicons.iter_mut().for_each(fix);
        self.corpus.paths.iter_mut().for_each(fix);
        if let Some(p) = self.corpus.scores.as_mut() {
            fix(p);
        }
        if let Some(p) = self.backend.path.as_mut() {
            fix(p);
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::invalid(format!("alpha {} outside (0, 1)", self.alpha)));
        }
        if self.bootstrap_b < 100 {
            return Err(Error::invalid(format!(
                "bootstrap_b must be at least 100, got {}",
                self.bootstrap_b
            )));
        }
        if self.language.is_empty() {
            return Err(Error::invalid("language is empty"));
        }
        self.backend.validate()?;
        if let Some(list) = &self.nationalities {
            if list.is_empty() {
                return Err(Error::invalid("nationality list is empty"));
            }
        }
        if self.template_source == ProbeSource::CorpusMined && self.corpus.paths.is_empty() {
            return Err(Error::invalid("corpus-mined templates need corpus.paths"));
        }
        let mut paths: Vec<&PathBuf> = self.templates.iter().chain(&self.lexicons).collect();
        paths.extend(&self.corpus.paths);
        paths.extend(self.corpus.scores.as_ref());
        paths.extend(self.backend.path.as_ref());
        for p in paths {
            if !p.exists() {
                return Err(Error::io(
                    format!("configured path {}", p.display()),
                    std::io::Error::from(std::io::ErrorKind::NotFound),
                ));
            }
        }
        Ok(())
    }

    pub fn templates(&self) -> Result<Vec<Template>> {
        if self.templates.is_empty() {
            return builtin_templates(&self.language);
        }
        let mut out = Vec::new();
        for p in &self.templates {
            out.extend(crate::lexica::load_templates(p)?);
        }
        Ok(out)
    }

    pub fn lexicon(&self) -> Result<Vec<LexiconEntry>> {
        if self.lexicons.is_empty() {
            return builtin_lexicon(&self.language);
        }
        let mut out = Vec::new();
        for p in &self.lexicons {
            out.extend(crate::lexica::load_lexicon(p)?);
        }
        Ok(out)
    }
}

pub mod fixtures {
    pub const MULTILINGUAL_TEMPLATES: &str = include_str!("../data/templates/multilingual.json");
    pub const EN_TRAINING_TEMPLATES: &str = include_str!("../data/templates/en_training.json");
    pub const EN_BIAS_TEMPLATES: &str = include_str!("../data/templates/en_bias.json");
    pub const EEC_TEMPLATES: &str = include_str!("../data/templates/eec.json");
    pub const MULTILINGUAL_LEXICON: &str = include_str!("../data/lexicons/multilingual.json");
    pub const EN_LEXICON: &str = include_str!("../data/lexicons/en.json");
    pub const EEC_WORDS: &str = include_str!("../data/lexicons/eec_words.json");
    pub const REFERENCE_CORPUS_STATS: &str = include_str!("../data/reference_corpus_stats.json");
    pub const REFERENCE_RELATIVE_SENTIMENT: &str =
        include_str!("../data/reference_relative_sentiment.csv");
}

fn parse_builtin<T: serde::de::DeserializeOwned>(name: &str, text: &str) -> Result<Vec<T>> {
    serde_json::from_str(text).map_err(|e| Error::Parse {
        path: PathBuf::from(format!("<builtin {name}>")),
        message: e.to_string(),
    })
}

/// English uses the full training and bias inventories plus EEC; other
/// languages get their single training and bias pair.
pub fn builtin_templates(language: &str) -> Result<Vec<Template>> {
    let mut out: Vec<Template> = if language == "en" {
        let mut v: Vec<Template> = parse_builtin("en_training", fixtures::EN_TRAINING_TEMPLATES)?;
        v.extend(parse_builtin::<Template>("en_bias", fixtures::EN_BIAS_TEMPLATES)?);
        v.extend(parse_builtin::<Template>("eec", fixtures::EEC_TEMPLATES)?);
        v
    } else {
        parse_builtin::<Template>("multilingual", fixtures::MULTILINGUAL_TEMPLATES)?
            .into_iter()
            .filter(|t| t.language == language)
            .collect()
    };
    for t in &out {
        t.validate()?;
    }
    if out.is_empty() {
        return Err(Error::invalid(format!("no built-in templates for language `{language}`")));
    }
    out.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(out)
}

pub fn builtin_lexicon(language: &str) -> Result<Vec<LexiconEntry>> {
    let entries: Vec<LexiconEntry> = if language == "en" {
        let mut v: Vec<LexiconEntry> = parse_builtin("en", fixtures::EN_LEXICON)?;
        v.extend(parse_builtin::<LexiconEntry>("eec_words", fixtures::EEC_WORDS)?);
        v
    } else {
        parse_builtin::<LexiconEntry>("multilingual", fixtures::MULTILINGUAL_LEXICON)?
            .into_iter()
            .filter(|e| e.language == language)
            .collect()
    };
    for (i, e) in entries.iter().enumerate() {
        e.validate().map_err(|message| Error::InvalidEntry {
            path: PathBuf::from("<builtin>"),
            index: i,
            message,
        })?;
    }
    if entries.is_empty() {
        return Err(Error::invalid(format!("no built-in lexicon for language `{language}`")));
    }
    Ok(entries)
}

/// The reference fixture as `(nationality, context positivity, relative sentiment)`.
pub fn reference_table() -> Result<Vec<(String, f64, f64)>> {
    let stats: Vec<crate::corpus::CorpusStats> =
        parse_builtin("reference_corpus_stats", fixtures::REFERENCE_CORPUS_STATS)?;
    let rel = crate::report::read_relative_sentiment(
        fixtures::REFERENCE_RELATIVE_SENTIMENT.as_bytes(),
        Path::new("<builtin reference table>"),
    )?;
    stats
        .into_iter()
        .map(|s| {
            let r = rel
                .iter()
                .find(|(n, _)| *n == s.nationality)
                .map(|(_, v)| *v)
                .ok_or_else(|| Error::invalid(format!("reference table lacks `{}`", s.nationality)))?;
            let p = s
                .context_positivity
                .ok_or_else(|| Error::invalid("reference table positivity missing"))?;
            Ok((s.nationality, p, r))
        })
        .collect()
}
