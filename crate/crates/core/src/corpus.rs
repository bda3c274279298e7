//! Pretraining-corpus context positivity: collect sentences that mention a
//! nationality, mask the mention, score the remaining context with a
//! sentiment scorer and average.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use flate2::read::MultiGzDecoder;
use serde::{Deserialize, Serialize};

use crate::classifier::{score, SentimentModel};
use crate::embedding::Encoder;
use crate::error::{Error, Result};
use crate::stats::{self, PearsonResult};
use crate::text;

/// Split one document into sentences. A boundary is `.`, `!` or `?` followed
/// by whitespace and an uppercase letter; the end of the document closes the
/// last sentence.
pub fn split_sentences(doc: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start = 0;
    for (i, c) in doc.char_indices() {
        if !matches!(c, '.' | '!' | '?') {
            continue;
        }
        let end = i + c.len_utf8();
        let rest = &doc[end..];
        let trimmed = rest.trim_start();
        let has_space = trimmed.len() < rest.len();
        if has_space && trimmed.chars().next().is_some_and(char::is_uppercase) {
            let s = doc[start..end].trim();
            if !s.is_empty() {
                out.push(s);
            }
            start = end;
        }
    }
    let tail = doc[start..].trim();
    if !tail.is_empty() {
        out.push(tail);
    }
    out
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DocumentFormat {
    /// Every line is a document.
    #[default]
    LinePerDocument,
    /// Documents are separated by blank lines; lines inside one are joined.
    BlankLineSeparated,
}

/// Open a plain-text or gzip corpus file (detected by magic bytes).
pub fn open_corpus(path: &Path) -> Result<Box<dyn BufRead>> {
    let mut file =
        File::open(path).map_err(|e| Error::io(format!("opening corpus {}", path.display()), e))?;
    let mut magic = [0u8; 2];
    let n = file
        .read(&mut magic)
        .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let file =
        File::open(path).map_err(|e| Error::io(format!("opening corpus {}", path.display()), e))?;
    if n == 2 && magic == [0x1f, 0x8b] {
        Ok(Box::new(BufReader::new(MultiGzDecoder::new(file))))
    } else {
        Ok(Box::new(BufReader::new(file)))
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Extraction {
    /// Sentences per term, in corpus order. A sentence mentioning several
    /// terms is listed under each.
    pub by_term: BTreeMap<String, Vec<String>>,
    pub sentences_seen: usize,
    /// Lines that were not valid UTF-8.
    pub skipped_lines: usize,
}

impl Extraction {
    fn new(terms: &[String]) -> Self {
        Extraction {
            by_term: terms.iter().map(|t| (t.clone(), Vec::new())).collect(),
            ..Default::default()
        }
    }

    fn add_document(&mut self, doc: &str) {
        for sentence in split_sentences(doc) {
            self.sentences_seen += 1;
            for (term, list) in self.by_term.iter_mut() {
                if text::contains_word(sentence, term) {
                    list.push(sentence.to_string());
                }
            }
        }
    }
}

/// Single pass over a corpus stream.
pub fn extract_sentences<R: BufRead>(
    mut reader: R,
    terms: &[String],
    format: DocumentFormat,
) -> Result<Extraction> {
    let mut out = Extraction::new(terms);
    let mut buf = Vec::new();
    let mut paragraph = String::new();
    loop {
        buf.clear();
        let n = reader
            .read_until(b'\n', &mut buf)
            .map_err(|e| Error::io("reading corpus", e))?;
        if n == 0 {
            break;
        }
        let line = match std::str::from_utf8(&buf) {
            Ok(l) => l.trim_end_matches(['\n', '\r']),
            Err(_) => {
                out.skipped_lines += 1;
                continue;
            }
        };
        match format {
            DocumentFormat::LinePerDocument => out.add_document(line),
            DocumentFormat::BlankLineSeparated => {
                if line.trim().is_empty() {
                    out.add_document(&paragraph);
                    paragraph.clear();
                } else {
                    if !paragraph.is_empty() {
                        paragraph.push(' ');
                    }
                    paragraph.push_str(line);
                }
            }
        }
    }
    if !paragraph.is_empty() {
        out.add_document(&paragraph);
    }
    if out.skipped_lines > 0 {
        log::warn!("skipped {} undecodable corpus lines", out.skipped_lines);
    }
    Ok(out)
}

/// Replace every word-boundary mention of `term` with `mask_token`.
pub fn mask_mentions(sentence: &str, term: &str, mask_token: &str) -> Result<String> {
    let (masked, n) = text::replace_words(sentence, term, mask_token);
    if n == 0 {
        return Err(Error::invalid(format!("`{term}` does not occur in {sentence:?}")));
    }
    Ok(masked)
}

pub trait SentenceScorer {
    /// Probability that `sentence` is positive.
    fn score(&self, sentence: &str) -> Result<f64>;
}

impl<F> SentenceScorer for F
where
    F: Fn(&str) -> f64,
{
    fn score(&self, sentence: &str) -> Result<f64> {
        Ok(self(sentence))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub key: String,
    pub score: f64,
}

/// Precomputed sentence scores keyed by the hash of the masked sentence.
#[derive(Clone, Debug, Default)]
pub struct ScoreStore {
    scores: HashMap<String, f64>,
}

impl ScoreStore {
    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path)
            .map_err(|e| Error::io(format!("opening score store {}", path.display()), e))?;
        let mut scores = HashMap::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: ScoreRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                message: format!("line {}: {e}", i + 1),
            })?;
            if !(0.0..=1.0).contains(&rec.score) {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    message: format!("line {}: score {} outside [0, 1]", i + 1, rec.score),
                });
            }
            scores.insert(rec.key, rec.score);
        }
        Ok(ScoreStore { scores })
    }

    pub fn write<'a, I>(path: &Path, entries: I) -> Result<()>
    where
        I: IntoIterator<Item = (&'a str, f64)>,
    {
        let file = File::create(path)
            .map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
        let mut w = BufWriter::new(file);
        for (sentence, score) in entries {
            let rec = ScoreRecord {
                key: text::content_key(sentence),
                score,
            };
            writeln!(w, "{}", serde_json::to_string(&rec).expect("serializes"))
                .map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
        }
        w.flush().map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }
}

impl SentenceScorer for ScoreStore {
    fn score(&self, sentence: &str) -> Result<f64> {
        self.scores
            .get(&text::content_key(sentence))
            .copied()
            .ok_or_else(|| Error::MissingScore {
                text: sentence.to_string(),
            })
    }
}

/// Uses a trained sentiment head as a (weak) built-in scorer.
pub struct ClassifierScorer<'a> {
    pub model: &'a SentimentModel,
    pub encoder: &'a dyn Encoder,
}

impl SentenceScorer for ClassifierScorer<'_> {
    fn score(&self, sentence: &str) -> Result<f64> {
        score(self.model, &self.encoder.encode(sentence)?)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub nationality: String,
    /// Mean positive-sentiment probability; `None` when no sentence was found.
    pub context_positivity: Option<f64>,
    pub n_sentences: usize,
}

/// Mean scorer output over the sentences after masking `nationality`.
/// Sentences that no longer mention it are taken as already masked.
pub fn context_positivity(
    nationality: &str,
    sentences: &[String],
    scorer: &dyn SentenceScorer,
    mask_token: &str,
) -> Result<CorpusStats> {
    let mut total = 0.0;
    for s in sentences {
        let (masked, _) = text::replace_words(s, nationality, mask_token);
        let p = scorer.score(&masked)?;
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::invalid(format!("scorer returned {p} outside [0, 1]")));
        }
        total += p;
    }
    Ok(CorpusStats {
        nationality: nationality.to_string(),
        context_positivity: (!sentences.is_empty()).then(|| total / sentences.len() as f64),
        n_sentences: sentences.len(),
    })
}

/// Unique masked sentences in extraction order, for handing to an external
/// scorer.
pub fn masked_sentences(extraction: &Extraction, mask_token: &str) -> Vec<String> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for (term, list) in &extraction.by_term {
        for s in list {
            let (masked, _) = text::replace_words(s, term, mask_token);
            if seen.insert(masked.clone()) {
                out.push(masked);
            }
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub pearson: PearsonResult,
    pub aligned: Vec<String>,
    /// Nationalities present on only one side, or without any corpus sentence.
    pub excluded: Vec<String>,
}

pub fn correlate(stats: &[CorpusStats], relative: &[(String, f64)]) -> Result<Correlation> {
    let rel: BTreeMap<&str, f64> = relative.iter().map(|(n, v)| (n.as_str(), *v)).collect();
    let mut x = Vec::new();
    let mut y = Vec::new();
    let mut aligned = Vec::new();
    let mut excluded = Vec::new();
    let mut seen = BTreeSet::new();
    for s in stats {
        seen.insert(s.nationality.as_str());
        match (s.context_positivity, rel.get(s.nationality.as_str())) {
            (Some(p), Some(&r)) => {
                x.push(p);
                y.push(r);
                aligned.push(s.nationality.clone());
            }
            _ => excluded.push(s.nationality.clone()),
        }
    }
    excluded.extend(
        relative
            .iter()
            .filter(|(n, _)| !seen.contains(n.as_str()))
            .map(|(n, _)| n.clone()),
    );
    if aligned.len() < 3 {
        return Err(Error::invalid(format!(
            "need at least 3 aligned nationalities, found {}",
            aligned.len()
        )));
    }
    Ok(Correlation {
        pearson: stats::pearson(&x, &y)?,
        aligned,
        excluded,
    })
}
