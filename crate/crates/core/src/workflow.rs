//! End-to-end commands: generation, auditing, corpus statistics,
//! correlation, robustness and reporting. Every command is a function of the
//! configuration and its input files.

use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::classifier::{self, ClassifierKind, SentimentModel, TrainReport};
use crate::config::{AuditConfig, ClassifierConfig, ProbeSource};
use crate::corpus::{self, ClassifierScorer, Correlation, CorpusStats, Extraction, ScoreStore, SentenceScorer};
use crate::embedding::{BackendKind, BackendSpec, EmbeddingVector, Encoder};
use crate::error::{Error, Result};
use crate::lexica::{
    self, LexiconEntry, LexiconKind, MinedTemplates, ProbeGroup, Slot, SlotFillers, Template,
    TemplateSource, TrainingInstance,
};
use crate::pipeline::{self, ClassifyParams, NationalityResult, PairedDiff, RobustnessMatrix};
use crate::report;

pub const TRAINING_FILE: &str = "training.jsonl";
pub const PROBES_FILE: &str = "probes.jsonl";
pub const MINED_FILE: &str = "mined_templates.json";
pub const SENTENCES_FILE: &str = "sentences.txt";
pub const MISSING_FILE: &str = "missing_embeddings.txt";
pub const MODEL_FILE: &str = "model.json";
pub const RESULTS_CSV: &str = "results.csv";
pub const RESULTS_JSON: &str = "results.json";
pub const PLOT_CSV: &str = "plot.csv";
pub const PLOT_JSON: &str = "plot.json";
pub const PLOT_SVG: &str = "plot.svg";
pub const CORPUS_STATS_FILE: &str = "corpus_stats.json";
pub const CORRELATION_FILE: &str = "correlation.json";
pub const ROBUSTNESS_CSV: &str = "robustness.csv";
pub const ROBUSTNESS_JSON: &str = "robustness.json";
pub const REPORT_FILE: &str = "report.md";

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)
            .map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    s
}

fn to_jsonl<T: Serialize>(items: &[T]) -> String {
    let mut s = String::new();
    for item in items {
        s.push_str(&serde_json::to_string(item).expect("serializable"));
        s.push('\n');
    }
    s
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Apply a `--backend` override: `synthetic`, `file:<store>` or
/// `external:<program> [args…]`.
pub fn apply_backend_override(spec: &mut BackendSpec, value: &str) -> Result<()> {
    let (kind, arg) = match value.split_once(':') {
        Some((k, a)) => (k, Some(a)),
        None => (value, None),
    };
    match (kind, arg) {
        ("synthetic", None) => spec.kind = BackendKind::Synthetic,
        ("file", Some(path)) if !path.is_empty() => {
            spec.kind = BackendKind::File;
            spec.path = Some(PathBuf::from(path));
        }
        ("external", Some(cmd)) if !cmd.trim().is_empty() => {
            spec.kind = BackendKind::External;
            spec.command = Some(cmd.split_whitespace().map(str::to_string).collect());
        }
        _ => {
            return Err(Error::invalid(format!(
                "backend `{value}` is not one of synthetic, file:<path>, external:<command>"
            )))
        }
    }
    spec.validate()
}

/// Templates and lexicon entries for the configured language.
#[derive(Clone, Debug)]
pub struct Inputs {
    pub language: String,
    pub templates: Vec<Template>,
    pub lexicon: Vec<LexiconEntry>,
    pub nationalities: Vec<String>,
}

impl Inputs {
    pub fn load(cfg: &AuditConfig) -> Result<Self> {
        let templates: Vec<Template> = cfg
            .templates()?
            .into_iter()
            .filter(|t| t.language == cfg.language)
            .collect();
        let lexicon: Vec<LexiconEntry> = cfg
            .lexicon()?
            .into_iter()
            .filter(|e| e.language == cfg.language)
            .collect();
        let nationalities = match &cfg.nationalities {
            Some(list) => list.clone(),
            None => lexica::select(&lexicon, LexiconKind::Nationality, &cfg.language)
                .into_iter()
                .map(|e| e.surface)
                .collect(),
        };
        if nationalities.is_empty() {
            return Err(Error::invalid(format!(
                "no nationalities for language `{}`",
                cfg.language
            )));
        }
        let unique: BTreeSet<&String> = nationalities.iter().collect();
        if unique.len() != nationalities.len() {
            return Err(Error::invalid("nationality list has duplicates"));
        }
        Ok(Inputs {
            language: cfg.language.clone(),
            templates,
            lexicon,
            nationalities,
        })
    }

    pub fn select(&self, kind: LexiconKind) -> Vec<LexiconEntry> {
        lexica::select(&self.lexicon, kind, &self.language)
    }

    /// Polar words the synthetic backend reads sentiment from.
    pub fn polarity_words(&self) -> Vec<(String, i8)> {
        let mut out: Vec<(String, i8)> = self
            .lexicon
            .iter()
            .filter(|e| {
                e.polarity != 0
                    && matches!(
                        e.kind,
                        LexiconKind::PolarAdjective | LexiconKind::StateWord | LexiconKind::SituationWord
                    )
            })
            .map(|e| (e.surface.clone(), e.polarity))
            .collect();
        out.sort();
        out.dedup();
        out
    }

    pub fn training_templates(&self) -> Vec<Template> {
        self.templates
            .iter()
            .filter(|t| t.has_slot(Slot::Noun) && t.has_slot(Slot::Adj) && !t.has_slot(Slot::Nationality))
            .cloned()
            .collect()
    }

    pub fn probe_templates(&self, source: ProbeSource) -> Vec<Template> {
        let want = match source {
            ProbeSource::Native => TemplateSource::Native,
            ProbeSource::Eec => TemplateSource::Eec,
            ProbeSource::CorpusMined => TemplateSource::CorpusMined,
        };
        self.templates
            .iter()
            .filter(|t| t.source == want && t.has_slot(Slot::Nationality))
            .cloned()
            .collect()
    }

    pub fn fillers(&self) -> SlotFillers {
        SlotFillers::new()
            .with(Slot::Noun, self.select(LexiconKind::Noun))
            .with(Slot::Adj, self.select(LexiconKind::NeutralAdjective))
            .with(Slot::State, self.select(LexiconKind::StateWord))
            .with(Slot::Situation, self.select(LexiconKind::SituationWord))
    }
}

/// Merged extraction over every configured corpus file.
pub fn read_corpus(cfg: &AuditConfig, terms: &[String]) -> Result<Extraction> {
    let mut total: Option<Extraction> = None;
    for path in &cfg.corpus.paths {
        let ex = corpus::extract_sentences(corpus::open_corpus(path)?, terms, cfg.corpus.format)?;
        log::info!(
            "{}: {} sentences, {} skipped lines",
            path.display(),
            ex.sentences_seen,
            ex.skipped_lines
        );
        total = Some(match total {
            None => ex,
            Some(mut acc) => {
                for (term, list) in ex.by_term {
                    acc.by_term.entry(term).or_default().extend(list);
                }
                acc.sentences_seen += ex.sentences_seen;
                acc.skipped_lines += ex.skipped_lines;
                acc
            }
        });
    }
    total.ok_or_else(|| Error::invalid("no corpus paths configured"))
}

#[derive(Clone, Debug)]
pub struct Generated {
    pub inputs: Inputs,
    pub training: Vec<TrainingInstance>,
    pub probes: Vec<ProbeGroup>,
    pub mined: Option<MinedTemplates>,
}

impl Generated {
    pub fn probe_text_count(&self) -> usize {
        self.probes.iter().map(|g| g.variants.len() + 1).sum()
    }
}

pub fn generate(cfg: &AuditConfig) -> Result<Generated> {
    let inputs = Inputs::load(cfg)?;
    let training = lexica::gen_training(
        &inputs.training_templates(),
        &inputs.select(LexiconKind::Noun),
        &inputs.select(LexiconKind::PolarAdjective),
    )?;
    let (templates, mined) = match cfg.template_source {
        ProbeSource::CorpusMined => {
            let ex = read_corpus(cfg, &inputs.nationalities)?;
            let mut seen = BTreeSet::new();
            let sentences: Vec<&String> = ex
                .by_term
                .values()
                .flatten()
                .filter(|s| seen.insert(s.as_str()))
                .collect();
            let mut mined =
                lexica::mine_corpus_templates(sentences, &inputs.nationalities, &cfg.language);
            if let Some(limit) = cfg.corpus.max_templates {
                mined.templates.truncate(limit);
            }
            log::info!(
                "mined {} templates ({} flagged, {} rejected)",
                mined.templates.len(),
                mined.flagged.len(),
                mined.rejected
            );
            (mined.templates.clone(), Some(mined))
        }
        source => (inputs.probe_templates(source), None),
    };
    if templates.is_empty() {
        return Err(Error::invalid(format!(
            "no {} probe templates for language `{}`",
            cfg.template_source, cfg.language
        )));
    }
    let probes = lexica::gen_probes(
        &templates,
        &inputs.fillers(),
        &inputs.nationalities,
        &cfg.backend.mask_token,
    )?;
    Ok(Generated {
        inputs,
        training,
        probes,
        mined,
    })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenSummary {
    pub n_training: usize,
    pub n_probe_groups: usize,
    pub n_probe_texts: usize,
}

pub fn cmd_gen(cfg: &AuditConfig) -> Result<GenSummary> {
    let g = generate(cfg)?;
    write_file(&cfg.output_dir.join(TRAINING_FILE), to_jsonl(&g.training))?;
    write_file(&cfg.output_dir.join(PROBES_FILE), to_jsonl(&g.probes))?;
    if let Some(m) = &g.mined {
        write_file(&cfg.output_dir.join(MINED_FILE), to_json(&m.templates))?;
    }
    Ok(GenSummary {
        n_training: g.training.len(),
        n_probe_groups: g.probes.len(),
        n_probe_texts: g.probe_text_count(),
    })
}

/// Every distinct text an audit will encode, in first-use order.
pub fn audit_texts(g: &Generated) -> Vec<String> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    let texts = g.training.iter().map(|t| t.text.as_str()).chain(
        g.probes
            .iter()
            .flat_map(|p| std::iter::once(p.baseline_text.as_str()).chain(p.variants.iter().map(|v| v.text.as_str()))),
    );
    for t in texts {
        if seen.insert(t) {
            out.push(t.to_string());
        }
    }
    out
}

/// Writes the sentence list for the embedding sidecar and returns its length.
pub fn cmd_extract_request(cfg: &AuditConfig) -> Result<usize> {
    let g = generate(cfg)?;
    let mut texts = audit_texts(&g);
    if !cfg.corpus.paths.is_empty() && cfg.corpus.scores.is_none() {
        let ex = read_corpus(cfg, &g.inputs.nationalities)?;
        let known: BTreeSet<String> = texts.iter().cloned().collect();
        texts.extend(
            corpus::masked_sentences(&ex, &cfg.backend.mask_token)
                .into_iter()
                .filter(|s| !known.contains(s)),
        );
    }
    if let Some(t) = texts.iter().find(|t| t.contains('\n') || t.contains('\r')) {
        return Err(Error::invalid(format!("text contains a line break: {t:?}")));
    }
    let mut body = texts.join("\n");
    if !body.is_empty() {
        body.push('\n');
    }
    write_file(&cfg.output_dir.join(SENTENCES_FILE), body)?;
    Ok(texts.len())
}

/// Texts the encoder cannot provide. Other encoder errors propagate.
pub fn missing_embeddings(encoder: &dyn Encoder, texts: &[String]) -> Result<Vec<String>> {
    let mut missing = Vec::new();
    for t in texts {
        match encoder.encode(t) {
            Ok(_) => {}
            Err(Error::MissingEmbedding { text }) => missing.push(text),
            Err(e) => return Err(e),
        }
    }
    Ok(missing)
}

pub fn build_encoder(cfg: &AuditConfig, inputs: &Inputs) -> Result<Box<dyn Encoder>> {
    cfg.backend.build(&inputs.polarity_words(), cfg.seed)
}

pub struct AuditRun {
    pub generated: Generated,
    pub model: SentimentModel,
    pub train_report: TrainReport,
    pub diffs: Vec<PairedDiff>,
    pub results: Vec<NationalityResult>,
}

fn train_head(
    cfg: &AuditConfig,
    training: &[TrainingInstance],
    encoder: &dyn Encoder,
) -> Result<(SentimentModel, TrainReport)> {
    let texts: Vec<&str> = training.iter().map(|t| t.text.as_str()).collect();
    let vectors = encoder.encode_batch(&texts)?;
    let data: Vec<(EmbeddingVector, i8)> = vectors
        .into_iter()
        .zip(training)
        .map(|(v, t)| (v, t.label))
        .collect();
    let (mut model, report) = classifier::train(
        &data,
        cfg.classifier.kind,
        &cfg.classifier.hyperparams(),
        cfg.seed,
    )?;
    model
        .metadata
        .insert("language".into(), serde_json::Value::from(cfg.language.clone()));
    model.metadata.insert(
        "mask_token".into(),
        serde_json::Value::from(cfg.backend.mask_token.clone()),
    );
    log::info!(
        "{} head: {} train, heldout accuracy {:.4}",
        cfg.classifier.kind,
        report.n_train,
        report.heldout_accuracy
    );
    Ok((model, report))
}

fn classify_params(cfg: &AuditConfig) -> ClassifyParams {
    ClassifyParams {
        alpha: cfg.alpha,
        bootstrap_b: cfg.bootstrap_b,
        level: 0.95,
        seed: cfg.seed,
    }
}

/// The audit without touching the output directory.
pub fn run_audit(cfg: &AuditConfig) -> Result<AuditRun> {
    let generated = generate(cfg)?;
    let encoder = build_encoder(cfg, &generated.inputs)?;
    if cfg.backend.kind == BackendKind::File {
        let missing = missing_embeddings(encoder.as_ref(), &audit_texts(&generated))?;
        if let Some(first) = missing.first() {
            return Err(Error::MissingEmbeddings {
                count: missing.len(),
                first: first.clone(),
            });
        }
    }
    run_audit_with(cfg, generated, encoder.as_ref())
}

pub fn run_audit_with(cfg: &AuditConfig, generated: Generated, encoder: &dyn Encoder) -> Result<AuditRun> {
    let (model, train_report) = train_head(cfg, &generated.training, encoder)?;
    let diffs = pipeline::paired_scores(&model, &generated.probes, encoder)?;
    let results = pipeline::classify_all(&diffs, &classify_params(cfg))?;
    Ok(AuditRun {
        generated,
        model,
        train_report,
        diffs,
        results,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditSummary {
    pub language: String,
    pub seed: u64,
    pub alpha: f64,
    pub bootstrap_b: usize,
    pub classifier: ClassifierKind,
    pub template_source: ProbeSource,
    pub backend: BackendKind,
    pub mask_token: String,
    pub n_training: usize,
    pub n_probe_groups: usize,
    pub train_report: TrainReport,
    pub results: Vec<NationalityResult>,
}

pub fn cmd_audit(cfg: &AuditConfig) -> Result<AuditRun> {
    let run = match run_audit(cfg) {
        Err(Error::MissingEmbeddings { count, first }) => {
            // list every missing text for the extractor
            let g = generate(cfg)?;
            let encoder = build_encoder(cfg, &g.inputs)?;
            let missing = missing_embeddings(encoder.as_ref(), &audit_texts(&g))?;
            let path = cfg.output_dir.join(MISSING_FILE);
            write_file(&path, missing.join("\n") + "\n")?;
            log::error!("{count} texts lack embeddings; listed in {}", path.display());
            return Err(Error::MissingEmbeddings { count, first });
        }
        other => other?,
    };
    let out = &cfg.output_dir;
    fs::create_dir_all(out).map_err(|e| Error::io(format!("creating {}", out.display()), e))?;
    run.model.save(&out.join(MODEL_FILE))?;
    write_file(&out.join(RESULTS_CSV), report::results_csv(&run.results)?)?;
    let summary = AuditSummary {
        language: cfg.language.clone(),
        seed: cfg.seed,
        alpha: cfg.alpha,
        bootstrap_b: cfg.bootstrap_b,
        classifier: cfg.classifier.kind,
        template_source: cfg.template_source,
        backend: cfg.backend.kind,
        mask_token: cfg.backend.mask_token.clone(),
        n_training: run.generated.training.len(),
        n_probe_groups: run.generated.probes.len(),
        train_report: run.train_report.clone(),
        results: run.results.clone(),
    };
    write_file(&out.join(RESULTS_JSON), to_json(&summary))?;
    let points = report::plot_points(&run.results);
    write_file(&out.join(PLOT_CSV), report::plot_csv(&points)?)?;
    write_file(&out.join(PLOT_JSON), to_json(&points))?;
    write_file(&out.join(PLOT_SVG), report::plot_svg(&points))?;
    Ok(run)
}

/// Context positivity per nationality over the configured corpus. Scores
/// come from `corpus.scores` when set, otherwise from the head saved by a
/// previous audit.
pub fn cmd_corpus_stats(cfg: &AuditConfig) -> Result<Vec<CorpusStats>> {
    let inputs = Inputs::load(cfg)?;
    let ex = read_corpus(cfg, &inputs.nationalities)?;
    let store;
    let model;
    let encoder;
    let head;
    let scorer: &dyn SentenceScorer = match &cfg.corpus.scores {
        Some(path) => {
            store = ScoreStore::load(path)?;
            &store
        }
        None => {
            model = SentimentModel::load(&cfg.output_dir.join(MODEL_FILE))?;
            encoder = build_encoder(cfg, &inputs)?;
            head = ClassifierScorer {
                model: &model,
                encoder: encoder.as_ref(),
            };
            &head
        }
    };
    let mut stats = Vec::with_capacity(inputs.nationalities.len());
    for n in &inputs.nationalities {
        let sentences = ex.by_term.get(n).map(Vec::as_slice).unwrap_or(&[]);
        stats.push(corpus::context_positivity(n, sentences, scorer, &cfg.backend.mask_token)?);
    }
    write_file(&cfg.output_dir.join(CORPUS_STATS_FILE), to_json(&stats))?;
    Ok(stats)
}

pub fn load_corpus_stats(path: &Path) -> Result<Vec<CorpusStats>> {
    read_json(path)
}

pub fn cmd_correlate(stats_path: &Path, results_path: &Path, out_dir: &Path) -> Result<Correlation> {
    let stats = load_corpus_stats(stats_path)?;
    let rel = report::read_results_csv(results_path)?;
    let c = corpus::correlate(&stats, &rel)?;
    if !c.excluded.is_empty() {
        log::warn!("excluded from correlation: {}", c.excluded.join(", "));
    }
    write_file(&out_dir.join(CORRELATION_FILE), to_json(&c))?;
    Ok(c)
}

/// One column of the robustness matrix: the base config with overrides.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Setup {
    pub name: String,
    pub classifier: Option<ClassifierConfig>,
    pub template_source: Option<ProbeSource>,
    pub backend: Option<BackendSpec>,
    pub templates: Option<Vec<PathBuf>>,
    pub lexicons: Option<Vec<PathBuf>>,
}

impl Setup {
    pub fn apply(&self, base: &AuditConfig) -> AuditConfig {
        let mut cfg = base.clone();
        if let Some(c) = &self.classifier {
            cfg.classifier = c.clone();
        }
        if let Some(s) = self.template_source {
            cfg.template_source = s;
        }
        if let Some(b) = &self.backend {
            cfg.backend = b.clone();
        }
        if let Some(t) = &self.templates {
            cfg.templates = t.clone();
        }
        if let Some(l) = &self.lexicons {
            cfg.lexicons = l.clone();
        }
        cfg
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobustnessConfig {
    /// Audit config shared by all setups.
    pub base: PathBuf,
    #[serde(rename = "setup")]
    pub setups: Vec<Setup>,
}

impl RobustnessConfig {
    /// Returns the loaded base config next to the setups, with setup paths
    /// resolved against the matrix file.
    pub fn load(path: &Path) -> Result<(AuditConfig, Vec<Setup>)> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        let rc: RobustnessConfig = toml::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let dir = path.parent().unwrap_or(Path::new(""));
        let base = AuditConfig::load(&dir.join(&rc.base))?;
        let fix = |p: &PathBuf| if p.is_relative() { dir.join(p) } else { p.clone() };
        let setups = rc
            .setups
            .into_iter()
            .map(|mut s| {
                s.templates = s.templates.map(|v| v.iter().map(fix).collect());
                s.lexicons = s.lexicons.map(|v| v.iter().map(fix).collect());
                if let Some(b) = s.backend.as_mut() {
                    b.path = b.path.as_ref().map(fix);
                }
                s
            })
            .collect();
        Ok((base, setups))
    }
}

pub fn run_robustness(base: &AuditConfig, setups: &[Setup]) -> Result<RobustnessMatrix> {
    if setups.len() < 2 {
        return Err(Error::invalid("robustness needs at least two setups"));
    }
    let mut names = BTreeSet::new();
    let mut sets = Vec::with_capacity(setups.len());
    for s in setups {
        if !names.insert(s.name.as_str()) {
            return Err(Error::invalid(format!("duplicate setup name `{}`", s.name)));
        }
        let cfg = s.apply(base);
        cfg.validate()?;
        log::info!("robustness setup `{}`", s.name);
        sets.push((s.name.clone(), run_audit(&cfg)?.results));
    }
    pipeline::robustness_matrix(&sets)
}

pub fn cmd_robustness(base: &AuditConfig, setups: &[Setup]) -> Result<RobustnessMatrix> {
    let m = run_robustness(base, setups)?;
    let mut csv = String::from("setup_a,setup_b,r,p_value,n\n");
    for c in &m.cells {
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            c.setup_a, c.setup_b, c.pearson.r, c.pearson.p_two_sided, c.pearson.n
        ));
    }
    write_file(&base.output_dir.join(ROBUSTNESS_CSV), csv)?;
    write_file(&base.output_dir.join(ROBUSTNESS_JSON), to_json(&m))?;
    Ok(m)
}

/// Markdown summary of whatever result files exist in `dir`.
pub fn cmd_report(dir: &Path) -> Result<String> {
    let summary: AuditSummary = read_json(&dir.join(RESULTS_JSON))?;
    let correlation: Option<Correlation> = optional_json(&dir.join(CORRELATION_FILE))?;
    let robustness: Option<RobustnessMatrix> = optional_json(&dir.join(ROBUSTNESS_JSON))?;
    let md = report::markdown(&summary.results, correlation.as_ref(), robustness.as_ref());
    let mut f = fs::File::create(dir.join(REPORT_FILE))
        .map_err(|e| Error::io(format!("creating {}", dir.join(REPORT_FILE).display()), e))?;
    f.write_all(md.as_bytes())
        .map_err(|e| Error::io("writing report", e))?;
    Ok(md)
}

fn optional_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Option<T>> {
    if path.exists() {
        read_json(path).map(Some)
    } else {
        Ok(None)
    }
}
